//! Bit-level IEEE-754 utilities.
//!
//! Everything here is written so that the exact sequence of IEEE operations is
//! fixed: no fused multiply-add, no platform `log`/`pow`, and every rounding
//! step is a single basic operation. Two conforming builds therefore produce
//! identical bits for identical inputs.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Element type of a raw array or stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub const fn width_bytes(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }

    pub const fn code(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
        }
    }

    pub const fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(DType::F32),
            1 => Some(DType::F64),
            _ => None,
        }
    }
}

impl Display for DType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DType::F32 => "f32",
            DType::F64 => "f64",
        })
    }
}

impl std::str::FromStr for DType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "f32" | "float" | "single" => Ok(DType::F32),
            "f64" | "double" => Ok(DType::F64),
            other => Err(format!("unknown dtype `{other}` (expected f32 or f64)")),
        }
    }
}

/// A binary floating-point scalar the quantizers can operate on.
///
/// Bit patterns travel as zero-extended `u64` so that the container and the
/// sweep harness can treat both widths uniformly.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    const DTYPE: DType;
    /// Stored mantissa bits (23 / 52).
    const MANTISSA_BITS: u32;
    /// Exponent field mask after shifting out the mantissa (0xff / 0x7ff).
    const EXPONENT_FIELD: u64;
    /// Exponent bias (127 / 1023).
    const EXPONENT_BIAS: i32;
    /// Exclusive bound on quantization bin magnitudes.
    const MAX_BIN: i64;

    fn to_bits64(self) -> u64;
    /// Reinterprets the low `width` bits of `bits`.
    fn from_bits64(bits: u64) -> Self;
    /// Round to nearest, ties to even. Equal to `round_ties_even` except that
    /// negative inputs that round to zero give `+0.0`.
    fn round_half_even(self) -> Self;
    /// Nearest-even conversion of a bin number.
    fn from_bin(bin: i64) -> Self;
    /// Conversion of an integral value already known to be in range.
    fn to_bin(self) -> i64;
    /// One correctly rounded narrowing (identity for f64).
    fn from_f64_rounded(v: f64) -> Self;
    /// Exact widening to binary64.
    fn widen(self) -> f64;
    fn from_small_int(v: i32) -> Self;
    fn read_le(bytes: &[u8]) -> Self;
    fn write_le(self, out: &mut Vec<u8>);

    #[inline]
    fn sign_mask() -> u64 {
        1u64 << (Self::MANTISSA_BITS + exponent_width::<Self>())
    }

    #[inline]
    fn mantissa_mask() -> u64 {
        (1u64 << Self::MANTISSA_BITS) - 1
    }
}

#[inline]
fn exponent_width<T: Scalar>() -> u32 {
    T::EXPONENT_FIELD.count_ones()
}

impl Scalar for f32 {
    const DTYPE: DType = DType::F32;
    const MANTISSA_BITS: u32 = 23;
    const EXPONENT_FIELD: u64 = 0xff;
    const EXPONENT_BIAS: i32 = 127;
    const MAX_BIN: i64 = 1 << 30;

    #[inline]
    fn to_bits64(self) -> u64 {
        u64::from(self.to_bits())
    }
    #[inline]
    fn from_bits64(bits: u64) -> Self {
        f32::from_bits(bits as u32)
    }
    #[inline]
    fn round_half_even(self) -> Self {
        // adding 2^23 pushes the fraction out under the current (nearest-even) mode
        const M: f32 = 8_388_608.0;
        if self.abs() < M {
            let c = M.copysign(self);
            (self + c) - c
        } else {
            self
        }
    }
    #[inline]
    fn from_bin(bin: i64) -> Self {
        bin as f32
    }
    #[inline]
    fn to_bin(self) -> i64 {
        self as i64
    }
    #[inline]
    fn from_f64_rounded(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn widen(self) -> f64 {
        f64::from(self)
    }
    #[inline]
    fn from_small_int(v: i32) -> Self {
        v as f32
    }
    #[inline]
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().expect("4 bytes"))
    }
    #[inline]
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
}

impl Scalar for f64 {
    const DTYPE: DType = DType::F64;
    const MANTISSA_BITS: u32 = 52;
    const EXPONENT_FIELD: u64 = 0x7ff;
    const EXPONENT_BIAS: i32 = 1023;
    const MAX_BIN: i64 = 1 << 62;

    #[inline]
    fn to_bits64(self) -> u64 {
        self.to_bits()
    }
    #[inline]
    fn from_bits64(bits: u64) -> Self {
        f64::from_bits(bits)
    }
    #[inline]
    fn round_half_even(self) -> Self {
        // adding 2^52 pushes the fraction out under the current (nearest-even) mode
        const M: f64 = 4_503_599_627_370_496.0;
        if self.abs() < M {
            let c = M.copysign(self);
            (self + c) - c
        } else {
            self
        }
    }
    #[inline]
    fn from_bin(bin: i64) -> Self {
        bin as f64
    }
    #[inline]
    fn to_bin(self) -> i64 {
        self as i64
    }
    #[inline]
    fn from_f64_rounded(v: f64) -> Self {
        v
    }
    #[inline]
    fn widen(self) -> f64 {
        self
    }
    #[inline]
    fn from_small_int(v: i32) -> Self {
        f64::from(v)
    }
    #[inline]
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"))
    }
    #[inline]
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
}

/// Coarse IEEE-754 category of a bit pattern.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueKind {
    Zero,
    Denormal,
    Normal,
    Infinity,
    NaN,
}

impl ValueKind {
    pub const ALL: [ValueKind; 5] = [
        ValueKind::Zero,
        ValueKind::Denormal,
        ValueKind::Normal,
        ValueKind::Infinity,
        ValueKind::NaN,
    ];

    pub const fn is_finite(self) -> bool {
        matches!(self, ValueKind::Zero | ValueKind::Denormal | ValueKind::Normal)
    }

    pub const fn is_special(self) -> bool {
        matches!(self, ValueKind::Infinity | ValueKind::NaN)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ValueClass {
    pub kind: ValueKind,
    pub negative: bool,
}

/// Classifies a bit pattern by decoding its exponent and mantissa fields.
#[inline]
pub fn classify_bits<T: Scalar>(bits: u64) -> ValueClass {
    let exponent = (bits >> T::MANTISSA_BITS) & T::EXPONENT_FIELD;
    let mantissa = bits & T::mantissa_mask();
    let kind = match (exponent, mantissa) {
        (e, 0) if e == T::EXPONENT_FIELD => ValueKind::Infinity,
        (e, _) if e == T::EXPONENT_FIELD => ValueKind::NaN,
        (0, 0) => ValueKind::Zero,
        (0, _) => ValueKind::Denormal,
        _ => ValueKind::Normal,
    };
    ValueClass {
        kind,
        negative: bits & T::sign_mask() != 0,
    }
}

#[inline]
pub fn classify<T: Scalar>(x: T) -> ValueClass {
    classify_bits::<T>(x.to_bits64())
}

/// Piecewise-linear base-2 logarithm.
///
/// Splits `x` into its biased exponent and a fraction rebuilt in `[1, 2)`, then
/// returns `fraction + (exponent - bias - 1)` as a single rounded addition.
/// `x` must be a positive normal value; callers route every other class
/// around this function.
#[inline]
pub fn log2approx<T: Scalar>(x: T) -> T {
    debug_assert!(
        classify(x).kind == ValueKind::Normal && !classify(x).negative,
        "log2approx requires a positive normal input, got {x:?}"
    );
    let bits = x.to_bits64();
    let expo = ((bits >> T::MANTISSA_BITS) & T::EXPONENT_FIELD) as i32;
    let frac_bits = ((T::EXPONENT_BIAS as u64) << T::MANTISSA_BITS) | (bits & T::mantissa_mask());
    let frac = T::from_bits64(frac_bits);
    frac + T::from_small_int(expo - (T::EXPONENT_BIAS + 1))
}

/// Inverse of [`log2approx`].
///
/// Re-biases `log`, truncates to get the exponent field, recovers the fraction
/// with one rounded subtraction and splices the two bit fields together.
/// Only defined when [`pow2approx_in_domain`] holds; outside of it the result
/// is an unspecified bit pattern (never a trap).
#[inline]
pub fn pow2approx<T: Scalar>(log: T) -> T {
    let biased = log + T::from_small_int(T::EXPONENT_BIAS);
    let expo = biased
        .to_i32()
        .unwrap_or(0)
        .clamp(0, T::EXPONENT_FIELD as i32);
    let frac = biased - T::from_small_int(expo - 1);
    let bits = ((expo as u64) << T::MANTISSA_BITS) | (frac.to_bits64() & T::mantissa_mask());
    T::from_bits64(bits)
}

/// True when [`pow2approx`] lands on a normal exponent field in `[1, max-1]`.
#[inline]
pub fn pow2approx_in_domain<T: Scalar>(log: T) -> bool {
    let biased = log + T::from_small_int(T::EXPONENT_BIAS);
    biased >= T::one() && biased < T::from_small_int(T::EXPONENT_FIELD as i32)
}

/// Round-to-nearest, ties-to-even conversion to a bin number.
///
/// The caller guarantees `|t|` is far enough from the integer range limits
/// that the conversion is exact.
#[inline]
pub fn round_to_bin<T: Scalar>(t: T) -> i64 {
    t.round_half_even().to_bin()
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum NumericsError {
    #[error("det_log2 requires a finite argument greater than 1, got {0}")]
    OutOfDomain(f64),
}

/// Number of fraction bits produced by [`det_log2`].
pub const DET_LOG2_BITS: u32 = 32;

/// Deterministic binary logarithm for `y > 1` by digit recurrence.
///
/// The integer part comes from the exponent field; each fraction bit comes
/// from one rounded binary64 squaring of the mantissa. The fixed-point result
/// is assembled exactly in binary64 and rounded once to `T`.
pub fn det_log2<T: Scalar>(y: T) -> Result<T, NumericsError> {
    let wide = y.widen();
    if !(wide > 1.0) || !wide.is_finite() {
        return Err(NumericsError::OutOfDomain(wide));
    }
    let bits = wide.to_bits();
    // y > 1 is normal, so the exponent is at least the bias
    let exponent = ((bits >> 52) & 0x7ff) as i64 - 1023;
    let mut m = f64::from_bits((1023u64 << 52) | (bits & f64::mantissa_mask()));

    let mut fraction: u64 = 0;
    for _ in 0..DET_LOG2_BITS {
        m = m * m;
        fraction <<= 1;
        if m >= 2.0 {
            fraction |= 1;
            m *= 0.5;
        }
    }

    // exponent < 2^10, so the fixed-point value has at most 42 significant bits
    let fixed = (exponent << DET_LOG2_BITS) + fraction as i64;
    let value = fixed as f64 / (1u64 << DET_LOG2_BITS) as f64;
    Ok(T::from_f64_rounded(value))
}
