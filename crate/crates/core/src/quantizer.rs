//! Per-value quantize/reconstruct kernels for the ABS, REL and NOA bounds.
//!
//! Every kernel runs a fixed guard chain and then immediately reconstructs the
//! candidate bin and re-checks the bound ("double-checking"). Anything that
//! fails a guard or the re-check is kept losslessly as its raw bit pattern.

use std::fmt::Display;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::container::zigzag_encode;
use crate::numerics::{
    self, classify, det_log2, log2approx, pow2approx, pow2approx_in_domain, round_to_bin, Scalar,
    ValueKind,
};

pub const DEFAULT_BLOCK_SIZE: u32 = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Abs,
    Rel,
    Noa,
}

impl Mode {
    pub const fn code(self) -> u8 {
        match self {
            Mode::Abs => 0,
            Mode::Rel => 1,
            Mode::Noa => 2,
        }
    }

    pub const fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Mode::Abs),
            1 => Some(Mode::Rel),
            2 => Some(Mode::Noa),
            _ => None,
        }
    }
}

impl Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Abs => "abs",
            Mode::Rel => "rel",
            Mode::Noa => "noa",
        })
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "abs" => Ok(Mode::Abs),
            "rel" => Ok(Mode::Rel),
            "noa" => Ok(Mode::Noa),
            other => Err(format!("unknown mode `{other}` (expected abs, rel or noa)")),
        }
    }
}

/// Which log2/pow2 pair the REL kernel uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogImpl {
    /// Bit-manipulation approximations; bit-exact on every conforming build.
    #[default]
    Approx,
    /// Platform `log2`/`exp2`. Benchmark comparison only: results may differ
    /// between machines.
    Library,
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum ConfigError {
    #[error("error bound must be positive and finite, got {0}")]
    InvalidBound(f64),
    #[error("error bound {0} is not a positive finite value at the target width")]
    BoundNotRepresentable(f64),
    #[error("NOA range must be non-negative and finite, got {0}")]
    InvalidRange(f64),
    #[error("block size must be at least 1")]
    InvalidBlockSize,
}

/// User-facing quantization parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantConfig {
    pub mode: Mode,
    /// User error bound ε as binary64; these bits go into the stream header.
    pub eb: f64,
    pub block_size: u32,
    /// Skip the double-check. Benchmark use only; the bound is not guaranteed.
    pub unsafe_no_double_check: bool,
    pub log_impl: LogImpl,
}

impl QuantConfig {
    pub fn new(mode: Mode, eb: f64) -> Self {
        Self {
            mode,
            eb,
            block_size: DEFAULT_BLOCK_SIZE,
            unsafe_no_double_check: false,
            log_impl: LogImpl::Approx,
        }
    }

    pub fn with_block_size(mut self, block_size: u32) -> Self {
        self.block_size = block_size;
        self
    }

    pub fn without_double_check(mut self) -> Self {
        self.unsafe_no_double_check = true;
        self
    }

    pub fn with_log_impl(mut self, log_impl: LogImpl) -> Self {
        self.log_impl = log_impl;
        self
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.eb > 0.0) || !self.eb.is_finite() {
            return Err(ConfigError::InvalidBound(self.eb));
        }
        if self.block_size == 0 {
            return Err(ConfigError::InvalidBlockSize);
        }
        Ok(())
    }
}

/// Constants derived once per stream from `(mode, eb, width[, R])`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DerivedConstants<T> {
    /// ABS and NOA. For NOA `eb_eff = ε·R`.
    Abs { eb_eff: T, eb2: T, inv_eb2: T },
    /// `op_eps = 1 + ε`, `w = 2·log2(op_eps)` is the bin width in the log domain.
    Rel { op_eps: T, w: T },
}

impl<T: Scalar> DerivedConstants<T> {
    /// Derives the constants. `range` is required for NOA and ignored otherwise.
    pub fn derive(mode: Mode, eb: f64, range: Option<T>) -> Result<Self, ConfigError> {
        if !(eb > 0.0) || !eb.is_finite() {
            return Err(ConfigError::InvalidBound(eb));
        }
        let eb_t = T::from_f64_rounded(eb);
        if !(eb_t > T::zero()) || !eb_t.is_finite() {
            return Err(ConfigError::BoundNotRepresentable(eb));
        }
        match mode {
            Mode::Abs => Ok(Self::abs_from(eb_t)),
            Mode::Noa => {
                let r = range.unwrap_or_else(T::zero);
                if !(r >= T::zero()) {
                    return Err(ConfigError::InvalidRange(r.widen()));
                }
                Ok(Self::abs_from(eb_t * r))
            }
            Mode::Rel => {
                let op_eps = T::one() + eb_t;
                if !op_eps.is_finite() {
                    return Err(ConfigError::BoundNotRepresentable(eb));
                }
                // ε below half an ulp of 1 leaves op_eps == 1: a zero-width bin
                // sends every value down the lossless path
                let w = match det_log2(op_eps) {
                    Ok(l) => l + l,
                    Err(_) => T::zero(),
                };
                Ok(Self::Rel { op_eps, w })
            }
        }
    }

    fn abs_from(eb_eff: T) -> Self {
        let eb2 = eb_eff + eb_eff;
        Self::Abs {
            eb_eff,
            eb2,
            inv_eb2: T::one() / eb2,
        }
    }

    /// The constant the decompressor needs (`eb2` or `w`), as stored in the header.
    pub fn header_value(&self) -> T {
        match *self {
            Self::Abs { eb2, .. } => eb2,
            Self::Rel { w, .. } => w,
        }
    }
}

/// Per-value outcome of a kernel.
///
/// For REL, `negative` carries the sign of the original value; ABS/NOA bins
/// are signed already and always have `negative == false`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CodedValue {
    Quantized { bin: i64, negative: bool },
    /// Exact original bit pattern, zero-extended.
    Lossless { raw: u64 },
}

impl CodedValue {
    pub const fn is_lossless(&self) -> bool {
        matches!(self, CodedValue::Lossless { .. })
    }
}

/// Why a value was stored losslessly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LosslessReason {
    NaN = 0,
    Infinity,
    /// REL only: exponent field 0.
    ZeroOrDenormal,
    /// Bin magnitude or reconstruction-domain guard.
    Guard,
    /// Reconstruction failed the bound re-check.
    DoubleCheck,
}

impl LosslessReason {
    /// In discriminant order.
    pub const ALL: [Self; 5] = [Self::NaN, Self::Infinity, Self::ZeroOrDenormal, Self::Guard, Self::DoubleCheck];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Quantized,
    Lossless(LosslessReason),
}

/// A ready-to-run kernel: config plus derived constants at width `T`.
#[derive(Debug, Clone, Copy)]
pub struct Quantizer<T> {
    mode: Mode,
    derived: DerivedConstants<T>,
    bin_guard: T,
    double_check: bool,
    log_impl: LogImpl,
}

impl<T: Scalar> Quantizer<T> {
    pub fn new(cfg: &QuantConfig, range: Option<T>) -> Result<Self, ConfigError> {
        cfg.validate()?;
        let derived = DerivedConstants::derive(cfg.mode, cfg.eb, range)?;
        Ok(Self::from_parts(cfg.mode, derived, !cfg.unsafe_no_double_check, cfg.log_impl))
    }

    pub fn from_parts(
        mode: Mode,
        derived: DerivedConstants<T>,
        double_check: bool,
        log_impl: LogImpl,
    ) -> Self {
        Self {
            mode,
            derived,
            bin_guard: T::from_bin(T::MAX_BIN - 1),
            double_check,
            log_impl,
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn derived(&self) -> &DerivedConstants<T> {
        &self.derived
    }

    pub fn reconstructor(&self) -> Reconstructor<T> {
        Reconstructor {
            derived: self.derived.header_value(),
            rel: matches!(self.derived, DerivedConstants::Rel { .. }),
            log_impl: self.log_impl,
        }
    }

    #[inline]
    pub fn quantize(&self, x: T) -> CodedValue {
        self.quantize_traced(x).0
    }

    #[inline]
    pub fn quantize_traced(&self, x: T) -> (CodedValue, Outcome) {
        match self.derived {
            DerivedConstants::Abs { eb_eff, eb2, inv_eb2 } => {
                self.quantize_abs(x, eb_eff, eb2, inv_eb2)
            }
            DerivedConstants::Rel { op_eps, w } => self.quantize_rel(x, op_eps, w),
        }
    }

    #[inline]
    pub fn reconstruct(&self, c: CodedValue) -> T {
        self.reconstructor().reconstruct(c)
    }

    #[inline]
    fn bin_out_of_range(bin: i64) -> bool {
        // two comparisons: -bin / abs(bin) would overflow at i64::MIN
        bin >= T::MAX_BIN || bin <= -T::MAX_BIN
    }

    /// Branch-free ABS core: the rounded bin as a float, or NaN when the value
    /// must be stored losslessly (NaN/INF input, guard, or failed double-check).
    /// The pipeline maps this over whole blocks so it can be vectorized.
    #[inline(always)]
    pub fn abs_candidate(&self, x: T, eb_eff: T, eb2: T, inv_eb2: T) -> T {
        let t = x * inv_eb2;
        let r = t.round_half_even();
        let recon = r * eb2;
        // `err > eb_eff` written so that a NaN error also fails; the guard
        // also rejects t = ±INF and t = NaN (INF·0 when eb2 overflows)
        let accept = t.abs() < self.bin_guard && (!self.double_check || (x - recon).abs() <= eb_eff);
        if accept {
            r
        } else {
            T::nan()
        }
    }

    /// `abs_candidate` over a block, appended to `out`.
    pub fn abs_candidates(&self, xs: &[T], eb_eff: T, eb2: T, inv_eb2: T, out: &mut Vec<T>) {
        let guard = self.bin_guard;
        if self.double_check {
            out.extend(xs.iter().map(|&x| {
                let t = x * inv_eb2;
                let r = t.round_half_even();
                if (t.abs() < guard) & ((x - r * eb2).abs() <= eb_eff) { r } else { T::nan() }
            }));
        } else {
            out.extend(xs.iter().map(|&x| {
                let t = x * inv_eb2;
                let r = t.round_half_even();
                if t.abs() < guard { r } else { T::nan() }
            }));
        }
    }

    /// Finishes a value from its [`Self::abs_candidate`] result.
    #[inline]
    pub fn finish_abs(&self, x: T, candidate: T, inv_eb2: T) -> (CodedValue, Outcome) {
        let raw = x.to_bits64();
        if candidate.is_nan() {
            let reason = if x.is_nan() {
                LosslessReason::NaN
            } else if !((x * inv_eb2).abs() < self.bin_guard) {
                if x.is_infinite() {
                    LosslessReason::Infinity
                } else {
                    LosslessReason::Guard
                }
            } else {
                LosslessReason::DoubleCheck
            };
            return lossless(raw, reason);
        }
        // |candidate| < MAX_BIN - 1 is integral, so this conversion is exact
        let bin = candidate.to_bin();
        if Self::bin_out_of_range(bin) {
            return lossless(raw, LosslessReason::Guard);
        }
        (CodedValue::Quantized { bin, negative: false }, Outcome::Quantized)
    }

    /// [`finish_abs`](Self::finish_abs) as an ABS payload word plus an outcome
    /// class: 0 when quantized, else `1 + reason as usize`. Written with
    /// selects so the rare lossless values do not cost branch misses.
    #[inline(always)]
    pub fn finish_abs_word(&self, x: T, candidate: T, inv_eb2: T) -> (u64, usize) {
        let bin = candidate.to_bin();
        let dc = candidate.is_nan();
        let lossless = dc | Self::bin_out_of_range(bin);
        let guarded = !((x * inv_eb2).abs() < self.bin_guard);
        let inner = if dc { LosslessReason::DoubleCheck } else { LosslessReason::Guard } as usize;
        let outer = if x.is_infinite() { LosslessReason::Infinity } else { LosslessReason::Guard } as usize;
        let reason = if guarded { outer } else { inner };
        let reason = if x.is_nan() { LosslessReason::NaN as usize } else { reason };
        let word = if lossless { x.to_bits64() } else { zigzag_encode(bin) };
        (word, if lossless { reason + 1 } else { 0 })
    }

    #[inline]
    fn quantize_abs(&self, x: T, eb_eff: T, eb2: T, inv_eb2: T) -> (CodedValue, Outcome) {
        self.finish_abs(x, self.abs_candidate(x, eb_eff, eb2, inv_eb2), inv_eb2)
    }

    #[inline]
    fn quantize_rel(&self, x: T, op_eps: T, w: T) -> (CodedValue, Outcome) {
        let raw = x.to_bits64();
        match classify(x).kind {
            ValueKind::NaN => return lossless(raw, LosslessReason::NaN),
            ValueKind::Infinity => return lossless(raw, LosslessReason::Infinity),
            ValueKind::Zero | ValueKind::Denormal => {
                return lossless(raw, LosslessReason::ZeroOrDenormal)
            }
            ValueKind::Normal => {}
        }
        let negative = raw & T::sign_mask() != 0;
        let mag = T::from_bits64(raw & !T::sign_mask());

        let l = match self.log_impl {
            LogImpl::Approx => log2approx(mag),
            LogImpl::Library => mag.log2(),
        };
        let t = l / w;
        if !(t.abs() < self.bin_guard) {
            return lossless(raw, LosslessReason::Guard);
        }
        let bin = round_to_bin(t);
        if Self::bin_out_of_range(bin) {
            return lossless(raw, LosslessReason::Guard);
        }
        let p = T::from_bin(bin) * w;
        let recon_mag = match self.log_impl {
            LogImpl::Approx => {
                if !pow2approx_in_domain(p) {
                    return lossless(raw, LosslessReason::Guard);
                }
                pow2approx(p)
            }
            LogImpl::Library => p.exp2(),
        };
        if self.double_check {
            let q = recon_mag / mag;
            if !(q <= op_eps && q * op_eps >= T::one()) {
                return lossless(raw, LosslessReason::DoubleCheck);
            }
        }
        (CodedValue::Quantized { bin, negative }, Outcome::Quantized)
    }
}

#[inline]
fn lossless(raw: u64, reason: LosslessReason) -> (CodedValue, Outcome) {
    (CodedValue::Lossless { raw }, Outcome::Lossless(reason))
}

/// Decoder-side kernel: needs only the header constant (`eb2` or `w`).
#[derive(Debug, Clone, Copy)]
pub struct Reconstructor<T> {
    derived: T,
    rel: bool,
    log_impl: LogImpl,
}

impl<T: Scalar> Reconstructor<T> {
    pub fn new(mode: Mode, derived: T, log_impl: LogImpl) -> Self {
        Self {
            derived,
            rel: mode == Mode::Rel,
            log_impl,
        }
    }

    #[inline]
    pub fn reconstruct(&self, c: CodedValue) -> T {
        if self.rel {
            reconstruct_rel(c, self.derived, self.log_impl)
        } else {
            reconstruct_abs(c, self.derived)
        }
    }

    /// Whether a REL bin reconstructs to a normal value. Always true for ABS/NOA.
    #[inline]
    pub fn is_reconstructible(&self, c: CodedValue) -> bool {
        match c {
            CodedValue::Quantized { bin, .. } if self.rel && self.log_impl == LogImpl::Approx => {
                pow2approx_in_domain(T::from_bin(bin) * self.derived)
            }
            _ => true,
        }
    }
}

#[inline]
pub fn reconstruct_abs<T: Scalar>(c: CodedValue, eb2: T) -> T {
    match c {
        CodedValue::Quantized { bin, .. } => T::from_bin(bin) * eb2,
        CodedValue::Lossless { raw } => T::from_bits64(raw),
    }
}

#[inline]
pub fn reconstruct_rel<T: Scalar>(c: CodedValue, w: T, log_impl: LogImpl) -> T {
    match c {
        CodedValue::Quantized { bin, negative } => {
            let p = T::from_bin(bin) * w;
            let mag = match log_impl {
                LogImpl::Approx => pow2approx(p),
                LogImpl::Library => p.exp2(),
            };
            if negative {
                T::from_bits64(mag.to_bits64() | T::sign_mask())
            } else {
                mag
            }
        }
        CodedValue::Lossless { raw } => T::from_bits64(raw),
    }
}

/// Value range `max - min` over the finite values; NaN and ±INF are skipped.
///
/// Returns zero when there is no finite value.
pub fn compute_noa_range<T: Scalar>(values: &[T]) -> T {
    let (lo, hi) = finite_min_max(values);
    match (lo, hi) {
        // equal extremes (including -0 vs +0) give +0 regardless of order
        (Some(lo), Some(hi)) if hi != lo => hi - lo,
        _ => T::zero(),
    }
}

/// Min and max over finite values (order independent, so it can be reduced in parallel).
pub fn finite_min_max<T: Scalar>(values: &[T]) -> (Option<T>, Option<T>) {
    values
        .iter()
        .filter(|v| numerics::classify(**v).kind.is_finite())
        .fold((None, None), |acc, &v| merge_min_max(acc, (Some(v), Some(v))))
}

/// Combines two partial `(min, max)` results.
pub fn merge_min_max<T: Scalar>(
    a: (Option<T>, Option<T>),
    b: (Option<T>, Option<T>),
) -> (Option<T>, Option<T>) {
    let lo = match (a.0, b.0) {
        (Some(x), Some(y)) => Some(if y < x { y } else { x }),
        (x, y) => x.or(y),
    };
    let hi = match (a.1, b.1) {
        (Some(x), Some(y)) => Some(if y > x { y } else { x }),
        (x, y) => x.or(y),
    };
    (lo, hi)
}
