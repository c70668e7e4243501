//! End-to-end compression and decompression.
//!
//! Phases: NOA range pass (when needed), constant derivation, per-block
//! quantize+encode in parallel, ordered assembly. Blocks never look at values
//! outside themselves, so the output bytes do not depend on the worker count.

use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::container::{self, ContainerError, StreamFlags, StreamHeader, StreamView};
use crate::numerics::{DType, Scalar};
use crate::quantizer::{
    merge_min_max, CodedValue, ConfigError, DerivedConstants, LogImpl, LosslessReason, Mode, Outcome, QuantConfig,
    Quantizer, Reconstructor,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid error bound: {0}")]
    InvalidBound(#[from] ConfigError),
    #[error("input length {len} is not a multiple of the {width}-byte value width")]
    LengthNotMultipleOfWidth { len: usize, width: usize },
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error("stream holds {found} values, caller expected {expected}")]
    DTypeMismatch { expected: DType, found: DType },
    #[error("value {index} reconstructs outside the representable range")]
    CorruptCode { index: u64 },
    #[error("failed to start worker pool: {0}")]
    ThreadPool(String),
}

/// Execution options that never affect the output bytes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PipelineOptions {
    /// Worker count; `None` uses the global rayon pool.
    pub threads: Option<usize>,
}

impl PipelineOptions {
    pub fn with_threads(threads: usize) -> Self {
        Self { threads: Some(threads) }
    }

    /// Runs `f` on a pool sized per these options.
    pub fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> Result<R, PipelineError> {
        match self.threads {
            None => Ok(f()),
            Some(n) => {
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(n.max(1))
                    .build()
                    .map_err(|e| PipelineError::ThreadPool(e.to_string()))?;
                Ok(pool.install(f))
            }
        }
    }
}

/// Per-trigger lossless tallies.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LosslessCounts {
    pub nan: u64,
    pub infinity: u64,
    pub zero_or_denormal: u64,
    pub guard: u64,
    pub double_check: u64,
}

impl LosslessCounts {
    #[inline]
    pub fn record(&mut self, reason: LosslessReason) {
        self.add(reason, 1);
    }

    #[inline]
    pub fn add(&mut self, reason: LosslessReason, n: u64) {
        match reason {
            LosslessReason::NaN => self.nan += n,
            LosslessReason::Infinity => self.infinity += n,
            LosslessReason::ZeroOrDenormal => self.zero_or_denormal += n,
            LosslessReason::Guard => self.guard += n,
            LosslessReason::DoubleCheck => self.double_check += n,
        }
    }

    pub fn total(&self) -> u64 {
        self.nan + self.infinity + self.zero_or_denormal + self.guard + self.double_check
    }

    pub fn merge(self, o: Self) -> Self {
        Self {
            nan: self.nan + o.nan,
            infinity: self.infinity + o.infinity,
            zero_or_denormal: self.zero_or_denormal + o.zero_or_denormal,
            guard: self.guard + o.guard,
            double_check: self.double_check + o.double_check,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimings {
    #[serde(with = "secs")]
    pub range_pass: Duration,
    #[serde(with = "secs")]
    pub quantize_encode: Duration,
    #[serde(with = "secs")]
    pub assemble: Duration,
}

impl PhaseTimings {
    pub fn total(&self) -> Duration {
        self.range_pass + self.quantize_encode + self.assemble
    }
}

mod secs {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_secs_f64(f64::deserialize(d)?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressStats {
    pub values_total: u64,
    pub values_lossless: u64,
    pub lossless_fraction: f64,
    pub lossless_by_reason: LosslessCounts,
    pub bytes_in: u64,
    pub bytes_out: u64,
    pub ratio: f64,
    pub timings: PhaseTimings,
}

impl CompressStats {
    /// Fraction of values demoted by the double-check alone.
    pub fn double_check_fraction(&self) -> f64 {
        fraction(self.lossless_by_reason.double_check, self.values_total)
    }
}

fn fraction(n: u64, total: u64) -> f64 {
    if total == 0 {
        0.0
    } else {
        n as f64 / total as f64
    }
}

#[derive(Debug, Clone)]
pub struct Compressed {
    pub bytes: Vec<u8>,
    pub stats: CompressStats,
}

/// Compresses `values` into a self-describing stream.
pub fn compress<T: Scalar>(
    values: &[T],
    cfg: &QuantConfig,
    opts: &PipelineOptions,
) -> Result<Compressed, PipelineError> {
    cfg.validate()?;
    opts.install(|| compress_in_pool(values, cfg))?
}

fn compress_in_pool<T: Scalar>(values: &[T], cfg: &QuantConfig) -> Result<Compressed, PipelineError> {
    let block = cfg.block_size as usize;

    let t0 = Instant::now();
    let range = (cfg.mode == Mode::Noa).then(|| noa_range_parallel(values, block));
    let range_pass = t0.elapsed();

    let quantizer = Quantizer::<T>::new(cfg, range)?;

    let t1 = Instant::now();
    let blocks: Vec<(Vec<u8>, LosslessCounts)> = values
        .par_chunks(block)
        .map_init(
            || (Vec::new(), Vec::new()),
            |(out, scratch), chunk| {
                let counts = quantize_block(&quantizer, chunk, scratch, out);
                // exact-size copy; `out` keeps its capacity for the next block
                (out.as_slice().to_vec(), counts)
            },
        )
        .collect();
    let quantize_encode = t1.elapsed();

    let t2 = Instant::now();
    let mut flags = 0;
    if cfg.unsafe_no_double_check {
        flags |= StreamFlags::DOUBLE_CHECK_DISABLED;
    }
    if cfg.mode == Mode::Rel && cfg.log_impl == LogImpl::Library {
        flags |= StreamFlags::LIBRARY_LOG;
    }
    let header = StreamHeader {
        dtype: T::DTYPE,
        mode: cfg.mode,
        flags: StreamFlags(flags),
        count: values.len() as u64,
        eb_bits: cfg.eb.to_bits(),
        range_bits: range.map_or(0, |r| r.widen().to_bits()),
        derived_bits: quantizer.derived().header_value().to_bits64(),
        block_size: cfg.block_size,
    };
    let counts = blocks
        .iter()
        .fold(LosslessCounts::default(), |acc, (_, c)| acc.merge(*c));
    let encoded: Vec<Vec<u8>> = blocks.into_iter().map(|(b, _)| b).collect();
    let bytes = container::assemble(&header, &encoded);
    let assemble = t2.elapsed();

    let values_total = values.len() as u64;
    let values_lossless = counts.total();
    let bytes_in = values_total * T::DTYPE.width_bytes() as u64;
    let bytes_out = bytes.len() as u64;
    let stats = CompressStats {
        values_total,
        values_lossless,
        lossless_fraction: fraction(values_lossless, values_total),
        lossless_by_reason: counts,
        bytes_in,
        bytes_out,
        ratio: bytes_in as f64 / bytes_out as f64,
        timings: PhaseTimings {
            range_pass,
            quantize_encode,
            assemble,
        },
    };
    Ok(Compressed { bytes, stats })
}

fn noa_range_parallel<T: Scalar>(values: &[T], block: usize) -> T {
    let (lo, hi) = values
        .par_chunks(block.max(1))
        .map(crate::quantizer::finite_min_max)
        .reduce(|| (None, None), merge_min_max);
    match (lo, hi) {
        (Some(lo), Some(hi)) if hi != lo => hi - lo,
        _ => T::zero(),
    }
}

/// Quantizes and encodes one block into `out`, tallying lossless reasons.
fn quantize_block<T: Scalar>(
    quantizer: &Quantizer<T>,
    chunk: &[T],
    scratch: &mut Vec<T>,
    out: &mut Vec<u8>,
) -> LosslessCounts {
    let mut counts = LosslessCounts::default();
    let mut tally = |(c, outcome): (CodedValue, Outcome)| {
        if let Outcome::Lossless(reason) = outcome {
            counts.record(reason);
        }
        c
    };
    let mode = quantizer.mode();
    match *quantizer.derived() {
        DerivedConstants::Abs { eb_eff, eb2, inv_eb2 } => {
            // arithmetic first as a separate branch-free pass, then the
            // data-dependent bookkeeping
            scratch.clear();
            quantizer.abs_candidates(chunk, eb_eff, eb2, inv_eb2, scratch);
            let mut classes = [0u64; 1 + LosslessReason::ALL.len()];
            let words = chunk.iter().zip(scratch.iter()).map(|(&x, &r)| {
                let (word, class) = quantizer.finish_abs_word(x, r, inv_eb2);
                classes[class] += 1;
                (word, class != 0)
            });
            container::encode_words_into(chunk.len(), words, out);
            for (reason, &n) in LosslessReason::ALL.iter().zip(&classes[1..]) {
                counts.add(*reason, n);
            }
        }
        DerivedConstants::Rel { .. } => {
            let coded = chunk.iter().map(|&x| tally(quantizer.quantize_traced(x)));
            container::encode_block_into(mode, chunk.len(), coded, out);
        }
    }
    counts
}

/// Parses headerless little-endian values.
pub fn values_from_le<T: Scalar>(bytes: &[u8]) -> Result<Vec<T>, PipelineError> {
    let width = T::DTYPE.width_bytes();
    if !bytes.len().is_multiple_of(width) {
        return Err(PipelineError::LengthNotMultipleOfWidth {
            len: bytes.len(),
            width,
        });
    }
    Ok(bytes.chunks_exact(width).map(T::read_le).collect())
}

pub fn values_to_le<T: Scalar>(values: &[T]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * T::DTYPE.width_bytes());
    for &v in values {
        v.write_le(&mut out);
    }
    out
}

/// Compresses a raw little-endian array of `dtype` values.
pub fn compress_raw(
    bytes: &[u8],
    dtype: DType,
    cfg: &QuantConfig,
    opts: &PipelineOptions,
) -> Result<Compressed, PipelineError> {
    match dtype {
        DType::F32 => compress(&values_from_le::<f32>(bytes)?, cfg, opts),
        DType::F64 => compress(&values_from_le::<f64>(bytes)?, cfg, opts),
    }
}

/// Decompresses a stream whose element type is known to be `T`.
pub fn decompress<T: Scalar>(stream: &[u8], opts: &PipelineOptions) -> Result<Vec<T>, PipelineError> {
    let view = StreamView::parse(stream)?;
    if view.header.dtype != T::DTYPE {
        return Err(PipelineError::DTypeMismatch {
            expected: T::DTYPE,
            found: view.header.dtype,
        });
    }
    opts.install(|| decompress_view::<T>(&view))?
}

fn decompress_view<T: Scalar>(view: &StreamView<'_>) -> Result<Vec<T>, PipelineError> {
    let header = view.header;
    let log_impl = if header.flags.library_log() {
        LogImpl::Library
    } else {
        LogImpl::Approx
    };
    // the compressor's constant is authoritative; never recomputed here
    let recon = Reconstructor::new(header.mode, T::from_bits64(header.derived_bits), log_impl);
    let block = header.block_size as usize;

    let mut out = vec![T::zero(); header.count as usize];
    out.par_chunks_mut(block)
        .enumerate()
        .try_for_each_init(Vec::new, |coded: &mut Vec<CodedValue>, (i, dst)| {
            view.decode_block_into(i, coded)?;
            for (j, (slot, &c)) in dst.iter_mut().zip(coded.iter()).enumerate() {
                if !recon.is_reconstructible(c) {
                    return Err(PipelineError::CorruptCode {
                        index: (i * block + j) as u64,
                    });
                }
                *slot = recon.reconstruct(c);
            }
            Ok(())
        })?;
    Ok(out)
}

/// Decompresses any stream to raw little-endian bytes.
pub fn decompress_raw(
    stream: &[u8],
    opts: &PipelineOptions,
) -> Result<(StreamHeader, Vec<u8>), PipelineError> {
    let header = StreamHeader::parse(stream)?;
    let bytes = match header.dtype {
        DType::F32 => values_to_le(&decompress::<f32>(stream, opts)?),
        DType::F64 => values_to_le(&decompress::<f64>(stream, opts)?),
    };
    Ok((header, bytes))
}
