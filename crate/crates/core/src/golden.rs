//! Golden-vector determinism check.
//!
//! A fixed pseudo-random corpus is compressed under fixed configurations and
//! the stream bytes are hashed. The committed digests in `golden/golden.json`
//! were produced by this code; any build that disagrees is not bit-compatible.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::container::{StreamView, HEADER_LEN};
use crate::numerics::DType;
use crate::pipeline::{compress, PipelineError, PipelineOptions};
use crate::quantizer::{Mode, QuantConfig};
use crate::rng::SplitMix64;

pub const GOLDEN_SEED: u64 = 0x9E37_79B9_7F4A_7C15;
pub const GOLDEN_LEN: usize = 1 << 20;
pub const GOLDEN_BLOCK_SIZE: u32 = 1 << 16;

/// Digest committed with the source tree.
pub const COMMITTED_GOLDEN_JSON: &str = include_str!("../golden/golden.json");

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GoldenCase {
    pub name: &'static str,
    pub dtype: DType,
    pub mode: Mode,
    pub eb: f64,
}

pub const GOLDEN_CASES: [GoldenCase; 6] = [
    GoldenCase { name: "f32-abs-1e-3", dtype: DType::F32, mode: Mode::Abs, eb: 1e-3 },
    GoldenCase { name: "f32-rel-1e-3", dtype: DType::F32, mode: Mode::Rel, eb: 1e-3 },
    GoldenCase { name: "f32-noa-1e-3", dtype: DType::F32, mode: Mode::Noa, eb: 1e-3 },
    GoldenCase { name: "f64-abs-1e-3", dtype: DType::F64, mode: Mode::Abs, eb: 1e-3 },
    GoldenCase { name: "f64-rel-1e-3", dtype: DType::F64, mode: Mode::Rel, eb: 1e-3 },
    GoldenCase { name: "f64-noa-1e-3", dtype: DType::F64, mode: Mode::Noa, eb: 1e-3 },
];

/// Low 32 bits of the first [`GOLDEN_LEN`] SplitMix64 outputs, used unfiltered.
pub fn golden_corpus_f32() -> Vec<f32> {
    (0..GOLDEN_LEN as u64)
        .into_par_iter()
        .map(|i| f32::from_bits(SplitMix64::nth(GOLDEN_SEED, i) as u32))
        .collect()
}

pub fn golden_corpus_f64() -> Vec<f64> {
    (0..GOLDEN_LEN as u64)
        .into_par_iter()
        .map(|i| f64::from_bits(SplitMix64::nth(GOLDEN_SEED, i)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseDigest {
    pub name: String,
    pub stream_len: u64,
    pub sha256: String,
    /// Hash of the 48-byte header plus the block count.
    pub header_sha256: String,
    pub block_sha256: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldenDigest {
    pub corpus_seed: String,
    pub corpus_len: u64,
    pub block_size: u32,
    pub cases: Vec<CaseDigest>,
    /// Hash over the concatenated per-case digests.
    pub combined_sha256: String,
}

impl GoldenDigest {
    pub fn committed() -> Self {
        serde_json::from_str(COMMITTED_GOLDEN_JSON).expect("committed golden digest is valid JSON")
    }
}

fn sha_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn digest_stream(name: &str, bytes: &[u8]) -> CaseDigest {
    let view = StreamView::parse(bytes).expect("freshly encoded stream parses");
    let mut bounds = Vec::with_capacity(view.block_count() + 1);
    for i in 0..view.block_count() {
        bounds.push(u64::from_le_bytes(
            bytes[HEADER_LEN + 8 + 8 * i..HEADER_LEN + 16 + 8 * i].try_into().unwrap(),
        ) as usize);
    }
    bounds.push(bytes.len());
    CaseDigest {
        name: name.to_string(),
        stream_len: bytes.len() as u64,
        sha256: sha_hex(bytes),
        header_sha256: sha_hex(&bytes[..HEADER_LEN + 8]),
        block_sha256: bounds.windows(2).map(|w| sha_hex(&bytes[w[0]..w[1]])).collect(),
    }
}

/// Compresses one golden case and returns the stream.
pub fn golden_stream(case: &GoldenCase, opts: &PipelineOptions) -> Result<Vec<u8>, PipelineError> {
    let cfg = QuantConfig::new(case.mode, case.eb).with_block_size(GOLDEN_BLOCK_SIZE);
    Ok(match case.dtype {
        DType::F32 => compress(&golden_corpus_f32(), &cfg, opts)?.bytes,
        DType::F64 => compress(&golden_corpus_f64(), &cfg, opts)?.bytes,
    })
}

pub fn compute_golden(opts: &PipelineOptions) -> Result<GoldenDigest, PipelineError> {
    let f32s = golden_corpus_f32();
    let f64s = golden_corpus_f64();
    let mut cases = Vec::with_capacity(GOLDEN_CASES.len());
    for case in &GOLDEN_CASES {
        let cfg = QuantConfig::new(case.mode, case.eb).with_block_size(GOLDEN_BLOCK_SIZE);
        let bytes = match case.dtype {
            DType::F32 => compress(&f32s, &cfg, opts)?.bytes,
            DType::F64 => compress(&f64s, &cfg, opts)?.bytes,
        };
        cases.push(digest_stream(case.name, &bytes));
    }
    let combined = cases.iter().map(|c| c.sha256.as_str()).collect::<Vec<_>>().join("\n");
    Ok(GoldenDigest {
        corpus_seed: format!("{GOLDEN_SEED:#018x}"),
        corpus_len: GOLDEN_LEN as u64,
        block_size: GOLDEN_BLOCK_SIZE,
        cases,
        combined_sha256: sha_hex(combined.as_bytes()),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldenMismatch {
    pub case: String,
    /// `None` when the header/index already differ.
    pub first_differing_block: Option<usize>,
    pub expected_sha256: String,
    pub actual_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldenCheck {
    pub passed: bool,
    pub combined_sha256: String,
    pub mismatches: Vec<GoldenMismatch>,
}

/// Compares two digests case by case.
pub fn compare_golden(expected: &GoldenDigest, actual: &GoldenDigest) -> GoldenCheck {
    let mut mismatches = Vec::new();
    for exp in &expected.cases {
        let Some(act) = actual.cases.iter().find(|c| c.name == exp.name) else {
            mismatches.push(GoldenMismatch {
                case: exp.name.clone(),
                first_differing_block: None,
                expected_sha256: exp.sha256.clone(),
                actual_sha256: String::new(),
            });
            continue;
        };
        if exp.sha256 == act.sha256 {
            continue;
        }
        let first_differing_block = if exp.header_sha256 != act.header_sha256 {
            None
        } else {
            exp.block_sha256
                .iter()
                .zip(&act.block_sha256)
                .position(|(a, b)| a != b)
                .or(Some(exp.block_sha256.len().min(act.block_sha256.len())))
        };
        mismatches.push(GoldenMismatch {
            case: exp.name.clone(),
            first_differing_block,
            expected_sha256: exp.sha256.clone(),
            actual_sha256: act.sha256.clone(),
        });
    }
    GoldenCheck {
        passed: mismatches.is_empty() && expected.combined_sha256 == actual.combined_sha256,
        combined_sha256: actual.combined_sha256.clone(),
        mismatches,
    }
}

/// Recomputes the golden digest and compares it to `expected`.
pub fn check_golden(expected: &GoldenDigest, opts: &PipelineOptions) -> Result<GoldenCheck, PipelineError> {
    Ok(compare_golden(expected, &compute_golden(opts)?))
}
