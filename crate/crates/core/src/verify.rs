//! Independent checker for the three point-wise bounds.
//!
//! The predicates are evaluated in IEEE arithmetic at the data width, the same
//! way the compressor's double-check evaluates them, so an accepted value can
//! never be reported as a violation here. Special values (NaN, ±INF) must come
//! back bit-identical.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{classify, Scalar};
use crate::quantizer::Mode;

/// Maximum number of special-value mismatches kept in a report.
pub const MAX_RECORDED_MISMATCHES: usize = 1024;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VerifyError {
    #[error("length mismatch: original has {original} values, reconstructed {reconstructed}")]
    LengthMismatch { original: usize, reconstructed: usize },
    #[error("invalid bound: {0}")]
    InvalidBound(String),
}

/// IEEE-evaluated bound predicate at width `T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bound<T> {
    /// ABS, and NOA with `eb_eff = ε·R`.
    Abs { eb_eff: T },
    Rel { op_eps: T },
}

impl<T: Scalar> Bound<T> {
    pub fn new(mode: Mode, eb: f64, range: Option<f64>) -> Result<Self, VerifyError> {
        if !(eb > 0.0) || !eb.is_finite() {
            return Err(VerifyError::InvalidBound(format!("error bound {eb}")));
        }
        let eb_t = T::from_f64_rounded(eb);
        match mode {
            Mode::Abs => Ok(Bound::Abs { eb_eff: eb_t }),
            Mode::Noa => {
                let r = range.ok_or_else(|| VerifyError::InvalidBound("NOA needs a range".into()))?;
                if !(r >= 0.0) {
                    return Err(VerifyError::InvalidBound(format!("range {r}")));
                }
                Ok(Bound::Abs {
                    eb_eff: eb_t * T::from_f64_rounded(r),
                })
            }
            Mode::Rel => Ok(Bound::Rel {
                op_eps: T::one() + eb_t,
            }),
        }
    }
}

/// Result of checking one value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Check {
    Ok,
    Violation,
    /// Original was NaN/INF and the reconstruction is not bit-identical.
    SpecialMismatch,
}

/// Checks a single (original, reconstructed) pair.
#[inline]
pub fn check_value<T: Scalar>(original: T, recon: T, bound: &Bound<T>) -> Check {
    let ob = original.to_bits64();
    let rb = recon.to_bits64();
    if ob == rb {
        return Check::Ok;
    }
    if classify(original).kind.is_special() {
        return Check::SpecialMismatch;
    }
    let ok = match *bound {
        Bound::Abs { eb_eff } => (original - recon).abs() <= eb_eff,
        Bound::Rel { op_eps } => {
            let same_sign = (ob ^ rb) & T::sign_mask() == 0;
            let q = recon.abs() / original.abs();
            same_sign && q <= op_eps && q * op_eps >= T::one()
        }
    };
    if ok {
        Check::Ok
    } else {
        Check::Violation
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecialMismatch {
    pub index: u64,
    pub orig_bits: u64,
    pub recon_bits: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub mode: Mode,
    pub eb: f64,
    pub range: Option<f64>,
    pub count: u64,
    pub max_abs_err: f64,
    /// max |1 - recon/orig| over non-special values.
    pub max_rel_ratio_deviation: f64,
    /// max e_abs / R (NOA only, else 0).
    pub max_noa_err: f64,
    pub violations: u64,
    pub first_violation_index: Option<u64>,
    pub special_mismatch_count: u64,
    /// First [`MAX_RECORDED_MISMATCHES`] mismatches by index.
    pub special_mismatches: Vec<SpecialMismatch>,
    pub passed: bool,
}

impl VerifyReport {
    pub fn summary(&self) -> String {
        format!(
            "{} mode={} eb={} count={} violations={} special_mismatches={} max_abs_err={:e} max_rel_dev={:e}{}",
            if self.passed { "PASS" } else { "FAIL" },
            self.mode,
            self.eb,
            self.count,
            self.violations,
            self.special_mismatch_count,
            self.max_abs_err,
            self.max_rel_ratio_deviation,
            self.first_violation_index
                .map(|i| format!(" first_violation={i}"))
                .unwrap_or_default(),
        )
    }
}

#[derive(Debug, Clone, Default)]
struct Partial {
    max_abs: f64,
    max_rel: f64,
    violations: u64,
    first_violation: Option<u64>,
    mismatch_count: u64,
    mismatches: Vec<SpecialMismatch>,
}

impl Partial {
    fn merge(mut self, o: Self) -> Self {
        self.max_abs = self.max_abs.max(o.max_abs);
        self.max_rel = self.max_rel.max(o.max_rel);
        self.violations += o.violations;
        self.first_violation = match (self.first_violation, o.first_violation) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        };
        self.mismatch_count += o.mismatch_count;
        self.mismatches.extend(o.mismatches);
        self.mismatches.sort_by_key(|m| m.index);
        self.mismatches.truncate(MAX_RECORDED_MISMATCHES);
        self
    }
}

const CHUNK: usize = 1 << 16;

/// Checks every element of `reconstructed` against `original`.
///
/// `range` is required for NOA.
pub fn verify<T: Scalar>(
    original: &[T],
    reconstructed: &[T],
    mode: Mode,
    eb: f64,
    range: Option<f64>,
) -> Result<VerifyReport, VerifyError> {
    if original.len() != reconstructed.len() {
        return Err(VerifyError::LengthMismatch {
            original: original.len(),
            reconstructed: reconstructed.len(),
        });
    }
    let bound = Bound::<T>::new(mode, eb, range)?;

    let total = original
        .par_chunks(CHUNK)
        .zip(reconstructed.par_chunks(CHUNK))
        .enumerate()
        .map(|(ci, (orig, recon))| {
            let base = (ci * CHUNK) as u64;
            let mut p = Partial::default();
            for (j, (&x, &r)) in orig.iter().zip(recon).enumerate() {
                let index = base + j as u64;
                match check_value(x, r, &bound) {
                    Check::SpecialMismatch => {
                        p.mismatch_count += 1;
                        if p.mismatches.len() < MAX_RECORDED_MISMATCHES {
                            p.mismatches.push(SpecialMismatch {
                                index,
                                orig_bits: x.to_bits64(),
                                recon_bits: r.to_bits64(),
                            });
                        }
                        continue;
                    }
                    Check::Violation => {
                        p.violations += 1;
                        p.first_violation.get_or_insert(index);
                    }
                    Check::Ok => {}
                }
                if classify(x).kind.is_special() {
                    continue;
                }
                let e = (x.widen() - r.widen()).abs();
                if e > p.max_abs || e.is_nan() {
                    p.max_abs = if e.is_nan() { f64::INFINITY } else { e };
                }
                if x != T::zero() {
                    let dev = (1.0 - r.widen() / x.widen()).abs();
                    if dev > p.max_rel || dev.is_nan() {
                        p.max_rel = if dev.is_nan() { f64::INFINITY } else { dev };
                    }
                }
            }
            p
        })
        .reduce(Partial::default, Partial::merge);

    let max_noa_err = match (mode, range) {
        (Mode::Noa, Some(r)) if r > 0.0 => total.max_abs / r,
        _ => 0.0,
    };
    let passed = total.violations == 0 && total.mismatch_count == 0;
    Ok(VerifyReport {
        mode,
        eb,
        range: if mode == Mode::Noa { range } else { None },
        count: original.len() as u64,
        max_abs_err: total.max_abs,
        max_rel_ratio_deviation: total.max_rel,
        max_noa_err,
        violations: total.violations,
        first_violation_index: total.first_violation,
        special_mismatch_count: total.mismatch_count,
        special_mismatches: total.mismatches,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_passes() {
        let r = verify(&[1.0f32], &[1.0], Mode::Abs, 1e-3, None).unwrap();
        assert!(r.passed);
        assert_eq!(r.max_abs_err, 0.0);
    }

    #[test]
    fn abs_threshold() {
        let r = verify(&[3.2f64], &[3.0], Mode::Abs, 0.5, None).unwrap();
        assert!(r.passed);
        let r = verify(&[3.2f64], &[3.0], Mode::Abs, 0.1, None).unwrap();
        assert!(!r.passed);
        assert_eq!(r.violations, 1);
        assert_eq!(r.first_violation_index, Some(0));
    }

    #[test]
    fn nan_payload_must_match() {
        let o = [f32::from_bits(0x7FC0_0000)];
        let r = [f32::from_bits(0x7FC0_0001)];
        let rep = verify(&o, &r, Mode::Abs, 1.0, None).unwrap();
        assert!(!rep.passed);
        assert_eq!(rep.violations, 0);
        assert_eq!(
            rep.special_mismatches,
            vec![SpecialMismatch { index: 0, orig_bits: 0x7FC0_0000, recon_bits: 0x7FC0_0001 }]
        );
    }

    #[test]
    fn infinity_must_match() {
        let rep = verify(&[f64::INFINITY], &[f64::MAX], Mode::Abs, 1e300, None).unwrap();
        assert!(!rep.passed);
        assert_eq!(rep.special_mismatch_count, 1);
    }

    #[test]
    fn rel_predicate() {
        // sign flip fails
        let rep = verify(&[2.0f32], &[-2.0], Mode::Rel, 0.5, None).unwrap();
        assert_eq!(rep.violations, 1);
        let rep = verify(&[2.0f32], &[2.9], Mode::Rel, 0.5, None).unwrap();
        assert!(rep.passed);
        let rep = verify(&[2.0f32], &[3.1], Mode::Rel, 0.5, None).unwrap();
        assert_eq!(rep.violations, 1);
        // lower edge: 2 / 1.5
        let rep = verify(&[2.0f32], &[1.34], Mode::Rel, 0.5, None).unwrap();
        assert!(rep.passed);
        let rep = verify(&[2.0f32], &[1.3], Mode::Rel, 0.5, None).unwrap();
        assert_eq!(rep.violations, 1);
        // zero must come back exactly
        let rep = verify(&[0.0f32], &[-0.0], Mode::Rel, 0.5, None).unwrap();
        assert_eq!(rep.violations, 1);
    }

    #[test]
    fn noa_scales_by_range() {
        let rep = verify(&[5.04f64], &[5.0], Mode::Noa, 0.01, Some(10.0)).unwrap();
        assert!(rep.passed);
        assert!((rep.max_noa_err - 0.004).abs() < 1e-12);
        let rep = verify(&[5.04f64], &[5.0], Mode::Noa, 0.001, Some(10.0)).unwrap();
        assert!(!rep.passed);
        assert!(verify(&[1.0f64], &[1.0], Mode::Noa, 0.1, None).is_err());
    }

    #[test]
    fn errors() {
        assert!(matches!(
            verify(&[1.0f32, 2.0], &[1.0], Mode::Abs, 1.0, None),
            Err(VerifyError::LengthMismatch { .. })
        ));
        assert!(matches!(
            verify(&[1.0f32], &[1.0], Mode::Abs, f64::NAN, None),
            Err(VerifyError::InvalidBound(_))
        ));
    }

    #[test]
    fn first_violation_is_minimum_index() {
        let n = 3 * CHUNK + 5;
        let orig = vec![0.0f32; n];
        let mut recon = orig.clone();
        for i in [n - 1, 2 * CHUNK + 1, CHUNK + 7] {
            recon[i] = 1.0;
        }
        let rep = verify(&orig, &recon, Mode::Abs, 0.5, None).unwrap();
        assert_eq!(rep.violations, 3);
        assert_eq!(rep.first_violation_index, Some((CHUNK + 7) as u64));
    }

    #[test]
    fn signaling_nan_payloads_do_not_crash() {
        let o: Vec<f32> = (0x7F80_0001u32..0x7F80_0100).map(f32::from_bits).collect();
        let rep = verify(&o, &o, Mode::Rel, 1e-3, None).unwrap();
        assert!(rep.passed);
    }

    #[test]
    fn report_serializes() {
        let rep = verify(&[1.0f32], &[1.0], Mode::Abs, 1e-3, None).unwrap();
        let json = serde_json::to_string(&rep).unwrap();
        assert!(json.contains("\"max_abs_err\""));
        assert!(json.contains("\"passed\":true"));
        assert!(rep.summary().starts_with("PASS"));
    }
}
