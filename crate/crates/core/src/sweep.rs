//! Exhaustive (f32) and structured/sampled (f64) domain sweeps of the kernels.
//!
//! Each pattern goes through quantize, reconstruct and the verifier's
//! single-value check. Tallies are plain counters merged commutatively, so a
//! report does not depend on how the domain was chunked or scheduled.

use std::ops::Range;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{classify_bits, DType, Scalar, ValueKind};
use crate::quantizer::{CodedValue, ConfigError, Mode, QuantConfig, Quantizer, Reconstructor};
use crate::rng::SplitMix64;
use crate::verify::{check_value, Bound, Check, VerifyError};

/// log2 of the patterns per restartable f32 chunk.
pub const CHUNK_BITS: u32 = 24;
pub const F32_CHUNKS: u32 = 1 << (32 - CHUNK_BITS);
const SUB_CHUNK: u64 = 1 << 16;
const MAX_SAMPLES: usize = 16;

#[derive(Debug, Error)]
pub enum SweepError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Verify(#[from] VerifyError),
    #[error("no error bounds given")]
    EmptyBoundList,
    #[error("NOA sweeps need a synthetic range")]
    MissingRange,
    #[error("chunk range {0:?} outside 0..{F32_CHUNKS}")]
    ChunkRange(Range<u32>),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassTally {
    pub quantized: u64,
    pub lossless: u64,
    pub violations: u64,
}

impl ClassTally {
    fn merge(self, o: Self) -> Self {
        Self {
            quantized: self.quantized + o.quantized,
            lossless: self.lossless + o.lossless,
            violations: self.violations + o.violations,
        }
    }

    pub fn tested(&self) -> u64 {
        self.quantized + self.lossless
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassTallies {
    pub zero: ClassTally,
    pub denormal: ClassTally,
    pub normal: ClassTally,
    pub infinity: ClassTally,
    pub nan: ClassTally,
}

impl ClassTallies {
    pub fn get(&self, kind: ValueKind) -> &ClassTally {
        match kind {
            ValueKind::Zero => &self.zero,
            ValueKind::Denormal => &self.denormal,
            ValueKind::Normal => &self.normal,
            ValueKind::Infinity => &self.infinity,
            ValueKind::NaN => &self.nan,
        }
    }

    fn get_mut(&mut self, kind: ValueKind) -> &mut ClassTally {
        match kind {
            ValueKind::Zero => &mut self.zero,
            ValueKind::Denormal => &mut self.denormal,
            ValueKind::Normal => &mut self.normal,
            ValueKind::Infinity => &mut self.infinity,
            ValueKind::NaN => &mut self.nan,
        }
    }

    fn merge(self, o: Self) -> Self {
        Self {
            zero: self.zero.merge(o.zero),
            denormal: self.denormal.merge(o.denormal),
            normal: self.normal.merge(o.normal),
            infinity: self.infinity.merge(o.infinity),
            nan: self.nan.merge(o.nan),
        }
    }

    fn sum(&self) -> ClassTally {
        ValueKind::ALL
            .iter()
            .fold(ClassTally::default(), |acc, &k| acc.merge(*self.get(k)))
    }
}

#[derive(Debug, Clone, Default)]
struct Tally {
    classes: ClassTallies,
    samples: Vec<u64>,
}

impl Tally {
    fn merge(mut self, o: Self) -> Self {
        self.classes = self.classes.merge(o.classes);
        self.samples.extend(o.samples);
        self.samples.sort_unstable();
        self.samples.truncate(MAX_SAMPLES);
        self
    }
}

/// What to sweep: one mode and bound, plus the pinned range for NOA.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub mode: Mode,
    pub eb: f64,
    pub range: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub dtype: DType,
    pub mode: Mode,
    pub eb: f64,
    pub range: Option<f64>,
    pub patterns_tested: u64,
    pub violations: u64,
    pub per_class: ClassTallies,
    pub lossless_fraction: f64,
    pub elapsed_secs: f64,
    /// Smallest violating bit patterns (up to 16).
    pub violation_samples: Vec<u64>,
}

impl SweepReport {
    fn from_tally(dtype: DType, spec: SweepSpec, tally: Tally, elapsed_secs: f64) -> Self {
        let sum = tally.classes.sum();
        let tested = sum.tested();
        Self {
            dtype,
            mode: spec.mode,
            eb: spec.eb,
            range: spec.range,
            patterns_tested: tested,
            violations: sum.violations,
            per_class: tally.classes,
            lossless_fraction: if tested == 0 { 0.0 } else { sum.lossless as f64 / tested as f64 },
            elapsed_secs,
            violation_samples: tally.samples,
        }
    }

    /// Combines reports for disjoint pattern sets of the same spec.
    pub fn merge(&self, other: &SweepReport) -> SweepReport {
        let tally = Tally {
            classes: self.per_class,
            samples: self.violation_samples.clone(),
        }
        .merge(Tally {
            classes: other.per_class,
            samples: other.violation_samples.clone(),
        });
        let spec = SweepSpec { mode: self.mode, eb: self.eb, range: self.range };
        SweepReport::from_tally(self.dtype, spec, tally, self.elapsed_secs + other.elapsed_secs)
    }

    pub fn passed(&self) -> bool {
        self.violations == 0
    }

    pub fn summary(&self) -> String {
        let range = self.range.map(|r| format!(" R={r:e}")).unwrap_or_default();
        format!(
            "{} {} {} eb={:e}{} tested={} violations={} lossless={:.4}% ({:.1}s)",
            if self.passed() { "PASS" } else { "FAIL" },
            self.dtype,
            self.mode,
            self.eb,
            range,
            self.patterns_tested,
            self.violations,
            100.0 * self.lossless_fraction,
            self.elapsed_secs,
        )
    }
}

/// Prepared kernel + checker for one spec at width `T`.
struct Harness<T> {
    quantizer: Quantizer<T>,
    recon: Reconstructor<T>,
    bound: Bound<T>,
}

impl<T: Scalar> Harness<T> {
    fn new(spec: &SweepSpec) -> Result<Self, SweepError> {
        if spec.mode == Mode::Noa && spec.range.is_none() {
            return Err(SweepError::MissingRange);
        }
        let range = spec.range.map(T::from_f64_rounded);
        let quantizer = Quantizer::<T>::new(&QuantConfig::new(spec.mode, spec.eb), range)?;
        Ok(Self {
            recon: quantizer.reconstructor(),
            bound: Bound::new(spec.mode, spec.eb, spec.range)?,
            quantizer,
        })
    }

    #[inline]
    fn test(&self, bits: u64, tally: &mut Tally) {
        let x = T::from_bits64(bits);
        let kind = classify_bits::<T>(bits).kind;
        let coded = self.quantizer.quantize(x);
        let r = self.recon.reconstruct(coded);
        let class = tally.classes.get_mut(kind);
        let lossless = coded.is_lossless();
        if lossless {
            class.lossless += 1;
        } else {
            class.quantized += 1;
        }
        let bad = check_value(x, r, &self.bound) != Check::Ok
            || (kind.is_special() && !lossless)
            || matches!(coded, CodedValue::Quantized { bin, .. } if bin >= T::MAX_BIN || bin <= -T::MAX_BIN);
        if bad {
            class.violations += 1;
            if tally.samples.len() < MAX_SAMPLES {
                tally.samples.push(bits);
            }
        }
    }

    fn run_range(&self, range: Range<u64>) -> Tally {
        let mut tally = Tally::default();
        for bits in range {
            self.test(bits, &mut tally);
        }
        tally
    }
}

fn check_ebs(ebs: &[f64]) -> Result<(), SweepError> {
    if ebs.is_empty() {
        Err(SweepError::EmptyBoundList)
    } else {
        Ok(())
    }
}

/// Sweeps f32 chunks `chunks` (each [`CHUNK_BITS`] patterns wide).
pub fn sweep_f32_chunks(spec: &SweepSpec, chunks: Range<u32>) -> Result<SweepReport, SweepError> {
    if chunks.start > chunks.end || chunks.end > F32_CHUNKS {
        return Err(SweepError::ChunkRange(chunks));
    }
    let harness = Harness::<f32>::new(spec)?;
    let start = Instant::now();
    let lo = u64::from(chunks.start) << CHUNK_BITS;
    let hi = u64::from(chunks.end) << CHUNK_BITS;
    let tally = (lo / SUB_CHUNK..hi / SUB_CHUNK)
        .into_par_iter()
        .map(|s| harness.run_range(s * SUB_CHUNK..(s + 1) * SUB_CHUNK))
        .reduce(Tally::default, Tally::merge);
    Ok(SweepReport::from_tally(DType::F32, *spec, tally, start.elapsed().as_secs_f64()))
}

/// Every one of the 2^32 f32 patterns, once per bound in `ebs`.
pub fn sweep_f32(mode: Mode, ebs: &[f64], range: Option<f64>) -> Result<Vec<SweepReport>, SweepError> {
    check_ebs(ebs)?;
    ebs.iter()
        .map(|&eb| sweep_f32_chunks(&SweepSpec { mode, eb, range }, 0..F32_CHUNKS))
        .collect()
}

fn sweep_indexed<T: Scalar>(
    spec: &SweepSpec,
    fixed: &[u64],
    n_random: u64,
    seed: u64,
    mask: u64,
) -> Result<SweepReport, SweepError> {
    let harness = Harness::<T>::new(spec)?;
    let start = Instant::now();
    let fixed_tally = fixed
        .par_chunks(SUB_CHUNK as usize)
        .map(|c| {
            let mut t = Tally::default();
            for &bits in c {
                harness.test(bits, &mut t);
            }
            t
        })
        .reduce(Tally::default, Tally::merge);
    let random_tally = (0..n_random.div_ceil(SUB_CHUNK))
        .into_par_iter()
        .map(|s| {
            let mut t = Tally::default();
            for i in s * SUB_CHUNK..((s + 1) * SUB_CHUNK).min(n_random) {
                harness.test(SplitMix64::nth(seed, i) & mask, &mut t);
            }
            t
        })
        .reduce(Tally::default, Tally::merge);
    Ok(SweepReport::from_tally(
        T::DTYPE,
        *spec,
        fixed_tally.merge(random_tally),
        start.elapsed().as_secs_f64(),
    ))
}

/// `n` seeded random f32 patterns per bound.
pub fn sweep_f32_sampled(
    mode: Mode,
    ebs: &[f64],
    range: Option<f64>,
    n: u64,
    seed: u64,
) -> Result<Vec<SweepReport>, SweepError> {
    check_ebs(ebs)?;
    ebs.iter()
        .map(|&eb| sweep_indexed::<f32>(&SweepSpec { mode, eb, range }, &[], n, seed, u64::from(u32::MAX)))
        .collect()
}

/// Every exponent field × {zero, all-ones, 4 random} mantissas × both signs.
pub fn structured_f64_corpus(seed: u64) -> Vec<u64> {
    const RANDOM_PER_EXPONENT: u64 = 4;
    let mantissa_mask = f64::mantissa_mask();
    let mut out = Vec::with_capacity(2 * 2048 * (2 + RANDOM_PER_EXPONENT as usize));
    let mut counter = 0;
    for sign in [0u64, 1] {
        for exponent in 0..2048u64 {
            let head = (sign << 63) | (exponent << 52);
            out.push(head);
            out.push(head | mantissa_mask);
            for _ in 0..RANDOM_PER_EXPONENT {
                out.push(head | (SplitMix64::nth(seed, counter) & mantissa_mask));
                counter += 1;
            }
        }
    }
    out
}

/// Structured f64 corpus plus `n_random` seeded random patterns, per bound.
pub fn sweep_f64(
    mode: Mode,
    ebs: &[f64],
    range: Option<f64>,
    n_random: u64,
    seed: u64,
) -> Result<Vec<SweepReport>, SweepError> {
    check_ebs(ebs)?;
    // the structured mantissas use a different stream than the random patterns
    let structured = structured_f64_corpus(seed ^ 0x5157_5543_5455_5245);
    ebs.iter()
        .map(|&eb| sweep_indexed::<f64>(&SweepSpec { mode, eb, range }, &structured, n_random, seed, u64::MAX))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(mode: Mode, eb: f64) -> SweepSpec {
        SweepSpec { mode, eb, range: None }
    }

    #[test]
    fn special_patterns_are_lossless() {
        let h = Harness::<f32>::new(&spec(Mode::Abs, 1e-3)).unwrap();
        let mut t = Tally::default();
        for bits in [0x7F80_0000u64, 0xFF80_0000, 0x7FC0_0000, 0x7F80_0001, 0xFFFF_FFFF] {
            h.test(bits, &mut t);
        }
        assert_eq!(t.classes.infinity, ClassTally { quantized: 0, lossless: 2, violations: 0 });
        assert_eq!(t.classes.nan, ClassTally { quantized: 0, lossless: 3, violations: 0 });
        let h = Harness::<f64>::new(&spec(Mode::Abs, 1e-3)).unwrap();
        let mut t = Tally::default();
        h.test(0xFFF0_0000_0000_0000, &mut t);
        assert_eq!(t.classes.infinity.lossless, 1);
        assert!(t.samples.is_empty());
    }

    #[test]
    fn rel_exponent_zero_chunk_all_lossless() {
        // chunk 0 holds +0 and the positive denormals plus small normals
        let r = sweep_f32_chunks(&spec(Mode::Rel, 1e-3), 0..1).unwrap();
        assert_eq!(r.violations, 0);
        assert_eq!(r.per_class.zero.quantized + r.per_class.denormal.quantized, 0);
        assert_eq!(r.per_class.denormal.lossless, (1 << 23) - 1);
        assert_eq!(r.patterns_tested, 1 << CHUNK_BITS);
    }

    #[test]
    fn chunking_does_not_change_tallies() {
        let s = spec(Mode::Abs, 1e-1);
        let whole = sweep_f32_chunks(&s, 60..64).unwrap();
        let parts = sweep_f32_chunks(&s, 60..62)
            .unwrap()
            .merge(&sweep_f32_chunks(&s, 62..64).unwrap());
        assert_eq!(whole.per_class, parts.per_class);
        assert_eq!(whole.violation_samples, parts.violation_samples);
    }

    #[test]
    fn structured_corpus_shape() {
        let c = structured_f64_corpus(1);
        assert_eq!(c.len(), 24_576);
        assert!(c.contains(&0xFFF0_0000_0000_0000));
        assert!(c.contains(&0x7FF0_0000_0000_0000));
        assert!(c.contains(&0x8000_0000_0000_0000));
        assert_eq!(c, structured_f64_corpus(1));
    }

    #[test]
    fn f64_structured_abs_and_rel_clean() {
        for mode in [Mode::Abs, Mode::Rel] {
            let r = sweep_f64(mode, &[1e-3], None, 100_000, 99).unwrap();
            assert_eq!(r[0].violations, 0, "{}", r[0].summary());
            assert_eq!(r[0].patterns_tested, 24_576 + 100_000);
        }
    }

    #[test]
    fn sampled_reports_are_rerun_identical() {
        let a = sweep_f64(Mode::Rel, &[1e-2], None, 50_000, 5).unwrap();
        let b = sweep_f64(Mode::Rel, &[1e-2], None, 50_000, 5).unwrap();
        assert_eq!(a[0].per_class, b[0].per_class);
        let a = sweep_f32_sampled(Mode::Abs, &[1e-2], None, 50_000, 5).unwrap();
        assert_eq!(a[0].patterns_tested, 50_000);
    }

    #[test]
    fn argument_errors() {
        assert!(matches!(sweep_f32(Mode::Abs, &[], None), Err(SweepError::EmptyBoundList)));
        assert!(matches!(
            sweep_f32_chunks(&spec(Mode::Noa, 1e-3), 0..1),
            Err(SweepError::MissingRange)
        ));
        assert!(matches!(
            sweep_f32_chunks(&spec(Mode::Abs, 1e-3), 0..300),
            Err(SweepError::ChunkRange(_))
        ));
    }

    #[test]
    fn unchecked_kernel_would_be_caught() {
        // sanity check that the harness can see violations at all
        let q = Quantizer::<f32>::new(&QuantConfig::new(Mode::Abs, 1e-3).without_double_check(), None).unwrap();
        let h = Harness {
            recon: q.reconstructor(),
            bound: Bound::new(Mode::Abs, 1e-3, None).unwrap(),
            quantizer: q,
        };
        let t = h.run_range(0x4000_0000..0x4001_0000);
        assert!(t.classes.normal.violations > 0);
    }
}
