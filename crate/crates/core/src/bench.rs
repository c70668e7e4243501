//! Dataset ingestion and the comparative benchmark matrix.
//!
//! Datasets are headerless little-endian arrays listed in a tab-separated
//! manifest. Timings cover compress and decompress only; reading files and
//! verifying results happen outside the timed region.

use std::fmt::{self, Display};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{DType, Scalar};
use crate::pipeline::{compress, decompress, values_from_le, PipelineError, PipelineOptions};
use crate::quantizer::{compute_noa_range, LogImpl, Mode, QuantConfig, DEFAULT_BLOCK_SIZE};
use crate::rng::SplitMix64;
use crate::verify::{verify, VerifyError};

pub const DEFAULT_REPS: usize = 9;
pub const CSV_HEADER: &str = "dataset,file,mode,eb,variant,reps,comp_MBps,decomp_MBps,ratio,lossless_pct";

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("cannot read {path}: {source}")]
    Unreadable { path: PathBuf, source: io::Error },
    #[error("{path}: {len} bytes is not a multiple of the {width}-byte value width")]
    SizeNotMultiple { path: PathBuf, len: u64, width: usize },
    #[error("{path}: holds {found} values, manifest dims give {expected}")]
    DimsMismatch { path: PathBuf, expected: u64, found: u64 },
    #[error("manifest line {line}: {detail}")]
    Manifest { line: usize, detail: String },
    #[error("variant {variant} is only valid for REL, not {mode}")]
    InvalidVariant { variant: Variant, mode: Mode },
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Verify(#[from] VerifyError),
    #[error("repetition count must be at least 1")]
    NoReps,
}

/// Reads a raw little-endian array of `T`.
pub fn ingest<T: Scalar>(path: &Path) -> Result<Vec<T>, BenchError> {
    let bytes = fs::read(path).map_err(|source| BenchError::Unreadable {
        path: path.to_path_buf(),
        source,
    })?;
    let width = T::DTYPE.width_bytes();
    if bytes.len() % width != 0 {
        return Err(BenchError::SizeNotMultiple {
            path: path.to_path_buf(),
            len: bytes.len() as u64,
            width,
        });
    }
    Ok(values_from_le(&bytes)?)
}

/// An ingested array of either width.
#[derive(Debug, Clone, PartialEq)]
pub enum Values {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl Values {
    pub fn len(&self) -> usize {
        match self {
            Values::F32(v) => v.len(),
            Values::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn ingest_dyn(path: &Path, dtype: DType) -> Result<Values, BenchError> {
    Ok(match dtype {
        DType::F32 => Values::F32(ingest(path)?),
        DType::F64 => Values::F64(ingest(path)?),
    })
}

/// One manifest line. `path` may name a file or a directory of files that
/// all share `dtype` and `dims`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub name: String,
    pub path: PathBuf,
    pub dtype: DType,
    pub dims: Vec<u64>,
}

impl DatasetEntry {
    pub fn element_count(&self) -> u64 {
        self.dims.iter().product()
    }

    /// The files this entry covers, sorted.
    pub fn files(&self) -> Result<Vec<PathBuf>, BenchError> {
        let unreadable = |source| BenchError::Unreadable {
            path: self.path.clone(),
            source,
        };
        if !self.path.is_dir() {
            return Ok(vec![self.path.clone()]);
        }
        let mut files = Vec::new();
        for entry in fs::read_dir(&self.path).map_err(unreadable)? {
            let entry = entry.map_err(unreadable)?;
            if entry.file_type().map_err(unreadable)?.is_file() {
                files.push(entry.path());
            }
        }
        files.sort();
        Ok(files)
    }

    /// Ingests one file of this entry and checks it against `dims`.
    pub fn load(&self, file: &Path) -> Result<Values, BenchError> {
        let values = ingest_dyn(file, self.dtype)?;
        if !self.dims.is_empty() && values.len() as u64 != self.element_count() {
            return Err(BenchError::DimsMismatch {
                path: file.to_path_buf(),
                expected: self.element_count(),
                found: values.len() as u64,
            });
        }
        Ok(values)
    }
}

fn parse_dims(s: &str) -> Option<Vec<u64>> {
    if s.is_empty() || s == "-" {
        return Some(Vec::new());
    }
    s.split(['×', 'x', 'X'])
        .map(|d| d.trim().parse::<u64>().ok().filter(|&d| d > 0))
        .collect()
}

/// Parses `name<TAB>path<TAB>dtype<TAB>dims` lines. Relative paths resolve
/// against `base`. Blank lines and `#` comments are skipped; dims may be
/// `-` to skip the size check.
pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<DatasetEntry>, BenchError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let err = |detail: String| BenchError::Manifest { line: line_no, detail };
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        if !(3..=4).contains(&fields.len()) {
            return Err(err(format!("expected 4 tab-separated fields, found {}", fields.len())));
        }
        let dtype = fields[2].parse::<DType>().map_err(|e| err(e.to_string()))?;
        let dims_field = fields.get(3).copied().unwrap_or("");
        let dims = parse_dims(dims_field).ok_or_else(|| err(format!("bad dims {dims_field:?}")))?;
        let path = Path::new(fields[1]);
        out.push(DatasetEntry {
            name: fields[0].to_string(),
            path: if path.is_absolute() { path.to_path_buf() } else { base.join(path) },
            dtype,
            dims,
        });
    }
    Ok(out)
}

pub fn load_manifest(path: &Path) -> Result<Vec<DatasetEntry>, BenchError> {
    let text = fs::read_to_string(path).map_err(|source| BenchError::Unreadable {
        path: path.to_path_buf(),
        source,
    })?;
    parse_manifest(&text, path.parent().unwrap_or(Path::new(".")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Protected,
    Unprotected,
    ApproxLog,
    /// Platform log2/exp2. Streams made this way are flagged and not portable.
    LibraryLog,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Protected,
        Variant::Unprotected,
        Variant::ApproxLog,
        Variant::LibraryLog,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Protected => "protected",
            Variant::Unprotected => "unprotected",
            Variant::ApproxLog => "approx_log",
            Variant::LibraryLog => "library_log",
        }
    }

    pub fn valid_for(self, mode: Mode) -> bool {
        !matches!(self, Variant::ApproxLog | Variant::LibraryLog) || mode == Mode::Rel
    }

    pub fn config(self, mode: Mode, eb: f64, block_size: u32) -> Result<QuantConfig, BenchError> {
        if !self.valid_for(mode) {
            return Err(BenchError::InvalidVariant { variant: self, mode });
        }
        let cfg = QuantConfig::new(mode, eb).with_block_size(block_size);
        Ok(match self {
            Variant::Protected | Variant::ApproxLog => cfg,
            Variant::Unprotected => cfg.without_double_check(),
            Variant::LibraryLog => cfg.with_log_impl(LogImpl::Library),
        })
    }
}

impl Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| format!("unknown variant {s:?}"))
    }
}

/// Median; the mean of the middle pair for even counts.
pub fn median(samples: &[f64]) -> f64 {
    assert!(!samples.is_empty(), "median of no samples");
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let mid = s.len() / 2;
    if s.len() % 2 == 1 {
        s[mid]
    } else {
        (s[mid - 1] + s[mid]) / 2.0
    }
}

/// Runs `f` `reps` times and returns the wall time of each run in seconds.
pub fn time_reps<R>(reps: usize, mut f: impl FnMut() -> R) -> Vec<f64> {
    (0..reps)
        .map(|_| {
            let t = Instant::now();
            std::hint::black_box(f());
            t.elapsed().as_secs_f64()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRun {
    pub dataset: String,
    pub file: String,
    pub mode: Mode,
    pub eb: f64,
    pub variant: Variant,
    pub reps: usize,
    /// Median throughput in input bytes per second.
    pub comp_bytes_per_sec: f64,
    pub decomp_bytes_per_sec: f64,
    pub comp_secs: Vec<f64>,
    pub decomp_secs: Vec<f64>,
    pub ratio: f64,
    pub lossless_fraction: f64,
    pub double_check_fraction: f64,
    pub violations: u64,
}

#[derive(Serialize)]
struct CsvRow<'a> {
    dataset: &'a str,
    file: &'a str,
    mode: Mode,
    eb: f64,
    variant: Variant,
    reps: usize,
    #[serde(rename = "comp_MBps")]
    comp_mbps: f64,
    #[serde(rename = "decomp_MBps")]
    decomp_mbps: f64,
    ratio: f64,
    lossless_pct: f64,
}

/// Writes runs as CSV with the [`CSV_HEADER`] columns.
pub fn write_csv<W: io::Write>(runs: &[BenchRun], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    if runs.is_empty() {
        w.write_record(CSV_HEADER.split(','))?;
    }
    for r in runs {
        w.serialize(CsvRow {
            dataset: &r.dataset,
            file: &r.file,
            mode: r.mode,
            eb: r.eb,
            variant: r.variant,
            reps: r.reps,
            comp_mbps: r.comp_bytes_per_sec / 1e6,
            decomp_mbps: r.decomp_bytes_per_sec / 1e6,
            ratio: r.ratio,
            lossless_pct: 100.0 * r.lossless_fraction,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Identifies a benchmark cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell<'a> {
    pub dataset: &'a str,
    pub file: &'a str,
    pub mode: Mode,
    pub eb: f64,
    pub variant: Variant,
}

/// Times `reps` compress and decompress runs of one cell, then verifies the
/// last reconstruction. Violations are recorded, not raised.
pub fn run_cell<T: Scalar>(
    cell: Cell<'_>,
    values: &[T],
    reps: usize,
    block_size: u32,
    opts: &PipelineOptions,
) -> Result<BenchRun, BenchError> {
    Ok(run_cells(&[cell], values, reps, block_size, opts)?.remove(0))
}

/// Like [`run_cell`] for several cells over the same values. Repetitions are
/// interleaved (rep 1 of every cell, then rep 2, ...) with the starting cell
/// rotating, after one untimed warm-up per cell. Only one run is in flight
/// at a time.
pub fn run_cells<T: Scalar>(
    cells: &[Cell<'_>],
    values: &[T],
    reps: usize,
    block_size: u32,
    opts: &PipelineOptions,
) -> Result<Vec<BenchRun>, BenchError> {
    if reps == 0 {
        return Err(BenchError::NoReps);
    }
    let cfgs = cells
        .iter()
        .map(|c| c.variant.config(c.mode, c.eb, block_size))
        .collect::<Result<Vec<_>, _>>()?;
    let mut comp_secs = vec![Vec::with_capacity(reps); cells.len()];
    let mut decomp_secs = vec![Vec::with_capacity(reps); cells.len()];
    let mut finished = vec![None; cells.len()];
    // one untimed pass per cell to fault in pages and warm caches
    for cfg in &cfgs {
        let c = compress(values, cfg, opts)?;
        decompress::<T>(&c.bytes, opts)?;
    }
    for rep in 0..reps {
        // rotate the starting cell so no variant always runs first
        for i in (0..cfgs.len()).map(|k| (k + rep) % cfgs.len()) {
            let cfg = &cfgs[i];
            let t = Instant::now();
            let c = compress(values, cfg, opts)?;
            comp_secs[i].push(t.elapsed().as_secs_f64());
            let t = Instant::now();
            let r = decompress::<T>(&c.bytes, opts)?;
            decomp_secs[i].push(t.elapsed().as_secs_f64());
            if rep + 1 == reps {
                let cell = &cells[i];
                let range = (cell.mode == Mode::Noa).then(|| compute_noa_range(values).widen());
                let report = verify(values, &r, cell.mode, cell.eb, range)?;
                finished[i] = Some((c.stats, report.violations + report.special_mismatch_count));
            }
        }
    }
    Ok(cells
        .iter()
        .zip(finished.into_iter().flatten())
        .zip(comp_secs.into_iter().zip(decomp_secs))
        .map(|((cell, (stats, violations)), (comp_secs, decomp_secs))| {
            let bytes = stats.bytes_in as f64;
            BenchRun {
                dataset: cell.dataset.to_string(),
                file: cell.file.to_string(),
                mode: cell.mode,
                eb: cell.eb,
                variant: cell.variant,
                reps,
                comp_bytes_per_sec: bytes / median(&comp_secs),
                decomp_bytes_per_sec: bytes / median(&decomp_secs),
                comp_secs,
                decomp_secs,
                ratio: stats.ratio,
                lossless_fraction: stats.lossless_fraction,
                double_check_fraction: stats.double_check_fraction(),
                violations,
            }
        })
        .collect())
}

pub fn run_cell_dyn(
    cell: Cell<'_>,
    values: &Values,
    reps: usize,
    block_size: u32,
    opts: &PipelineOptions,
) -> Result<BenchRun, BenchError> {
    Ok(run_cells_dyn(&[cell], values, reps, block_size, opts)?.remove(0))
}

pub fn run_cells_dyn(
    cells: &[Cell<'_>],
    values: &Values,
    reps: usize,
    block_size: u32,
    opts: &PipelineOptions,
) -> Result<Vec<BenchRun>, BenchError> {
    match values {
        Values::F32(v) => run_cells(cells, v, reps, block_size, opts),
        Values::F64(v) => run_cells(cells, v, reps, block_size, opts),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileError {
    pub dataset: String,
    pub file: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixReport {
    pub runs: Vec<BenchRun>,
    pub errors: Vec<FileError>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixSpec {
    pub modes: Vec<Mode>,
    pub ebs: Vec<f64>,
    pub variants: Vec<Variant>,
    pub reps: usize,
    pub block_size: u32,
}

impl Default for MatrixSpec {
    fn default() -> Self {
        Self {
            modes: vec![Mode::Abs],
            ebs: vec![1e-3],
            variants: vec![Variant::Protected, Variant::Unprotected],
            reps: DEFAULT_REPS,
            block_size: DEFAULT_BLOCK_SIZE,
        }
    }
}

/// Runs every (file, mode, eb, variant) cell one at a time. Variants that
/// do not apply to a mode are skipped; a file that fails to load or run is
/// recorded and the matrix moves on.
pub fn run_matrix(
    entries: &[DatasetEntry],
    spec: &MatrixSpec,
    opts: &PipelineOptions,
) -> Result<MatrixReport, BenchError> {
    if spec.reps == 0 {
        return Err(BenchError::NoReps);
    }
    // a variant that applies to none of the requested modes is a usage error
    for &variant in &spec.variants {
        if let Some(&mode) = spec.modes.first().filter(|_| !spec.modes.iter().any(|&m| variant.valid_for(m))) {
            return Err(BenchError::InvalidVariant { variant, mode });
        }
    }
    let mut report = MatrixReport { runs: Vec::new(), errors: Vec::new() };
    for_each_file(entries, &mut report.errors, |entry, file, values, errors| {
        for &mode in &spec.modes {
            for &eb in &spec.ebs {
                let cells: Vec<Cell> = spec
                    .variants
                    .iter()
                    .filter(|v| v.valid_for(mode))
                    .map(|&variant| Cell { dataset: &entry.name, file, mode, eb, variant })
                    .collect();
                match run_cells_dyn(&cells, values, spec.reps, spec.block_size, opts) {
                    Ok(runs) => report.runs.extend(runs),
                    Err(e) => errors.push(FileError {
                        dataset: entry.name.clone(),
                        file: file.to_string(),
                        error: e.to_string(),
                    }),
                }
            }
        }
    });
    Ok(report)
}

fn for_each_file(
    entries: &[DatasetEntry],
    errors: &mut Vec<FileError>,
    mut f: impl FnMut(&DatasetEntry, &str, &Values, &mut Vec<FileError>),
) {
    for entry in entries {
        let files = match entry.files() {
            Ok(files) => files,
            Err(e) => {
                errors.push(FileError {
                    dataset: entry.name.clone(),
                    file: entry.path.display().to_string(),
                    error: e.to_string(),
                });
                continue;
            }
        };
        for path in files {
            let file = path.display().to_string();
            match entry.load(&path) {
                Ok(values) => f(entry, &file, &values, errors),
                Err(e) => errors.push(FileError {
                    dataset: entry.name.clone(),
                    file,
                    error: e.to_string(),
                }),
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CensusFile {
    pub dataset: String,
    pub file: String,
    pub values: u64,
    pub double_check_fraction: f64,
    pub lossless_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteSummary {
    pub dataset: String,
    pub files: usize,
    pub avg_double_check_fraction: f64,
    pub max_double_check_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CensusReport {
    pub mode: Mode,
    pub eb: f64,
    pub files: Vec<CensusFile>,
    /// One entry per dataset name, in first-seen order.
    pub suites: Vec<SuiteSummary>,
    pub errors: Vec<FileError>,
}

/// Fraction of values per file that only the double-check sent to lossless.
pub fn outlier_census(
    entries: &[DatasetEntry],
    mode: Mode,
    eb: f64,
    opts: &PipelineOptions,
) -> Result<CensusReport, BenchError> {
    let cfg = Variant::Protected.config(mode, eb, DEFAULT_BLOCK_SIZE)?;
    cfg.validate().map_err(PipelineError::from)?;
    let mut files = Vec::new();
    let mut errors = Vec::new();
    for_each_file(entries, &mut errors, |entry, file, values, errors| {
        let stats = match values {
            Values::F32(v) => compress(v, &cfg, opts).map(|c| c.stats),
            Values::F64(v) => compress(v, &cfg, opts).map(|c| c.stats),
        };
        match stats {
            Ok(s) => files.push(CensusFile {
                dataset: entry.name.clone(),
                file: file.to_string(),
                values: s.values_total,
                double_check_fraction: s.double_check_fraction(),
                lossless_fraction: s.lossless_fraction,
            }),
            Err(e) => errors.push(FileError {
                dataset: entry.name.clone(),
                file: file.to_string(),
                error: e.to_string(),
            }),
        }
    });
    let mut suites: Vec<SuiteSummary> = Vec::new();
    for f in &files {
        match suites.iter_mut().find(|s| s.dataset == f.dataset) {
            Some(s) => {
                s.avg_double_check_fraction += f.double_check_fraction;
                s.max_double_check_fraction = s.max_double_check_fraction.max(f.double_check_fraction);
                s.files += 1;
            }
            None => suites.push(SuiteSummary {
                dataset: f.dataset.clone(),
                files: 1,
                avg_double_check_fraction: f.double_check_fraction,
                max_double_check_fraction: f.double_check_fraction,
            }),
        }
    }
    for s in &mut suites {
        s.avg_double_check_fraction /= s.files as f64;
    }
    Ok(CensusReport { mode, eb, files, suites, errors })
}

fn unit(seed: u64, i: u64) -> f64 {
    (SplitMix64::nth(seed, i) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Smooth field with mild noise, a stand-in for simulation output.
pub fn synthetic_smooth_f32(n: usize, seed: u64) -> Vec<f32> {
    use rayon::prelude::*;
    (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let x = i as f64;
            let v = 250.0 + 40.0 * (x * 1e-4).sin() + 7.0 * (x * 3.7e-3).cos() + 0.05 * (unit(seed, i) - 0.5);
            v as f32
        })
        .collect()
}

/// Magnitudes log-uniform in [2^lo_exp, 2^hi_exp) with random signs.
pub fn synthetic_log_uniform<T: Scalar>(n: usize, seed: u64, lo_exp: f64, hi_exp: f64) -> Vec<T> {
    use rayon::prelude::*;
    (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mag = (lo_exp + (hi_exp - lo_exp) * unit(seed, 2 * i)).exp2();
            let sign = if SplitMix64::nth(seed, 2 * i + 1) & 1 == 1 { -1.0 } else { 1.0 };
            T::from_f64_rounded(sign * mag)
        })
        .collect()
}

/// Values within 4 ulps of the ABS bin edges (k+0.5)·2ε for `n_edges`
/// random k in [-2^20, 2^20): nine values per edge.
pub fn bin_edge_corpus<T: Scalar>(n_edges: usize, eb: f64, seed: u64) -> Vec<T> {
    let eb2 = T::from_f64_rounded(eb) + T::from_f64_rounded(eb);
    let half = T::from_f64_rounded(0.5);
    let mut out = Vec::with_capacity(n_edges * 9);
    for i in 0..n_edges as u64 {
        let k = (SplitMix64::nth(seed, i) >> 43) as i64 - (1 << 20);
        let edge = (T::from_bin(k) + half) * eb2;
        let bits = edge.to_bits64() as i64;
        for d in -4..=4 {
            out.push(T::from_bits64((bits + d) as u64));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> PathBuf {
        let p = dir.join(name);
        fs::File::create(&p).unwrap().write_all(bytes).unwrap();
        p
    }

    #[test]
    fn ingest_sizes() {
        let dir = tempfile::tempdir().unwrap();
        let ok = write_file(dir.path(), "a.f32", &[0u8; 400]);
        assert_eq!(ingest::<f32>(&ok).unwrap().len(), 100);
        let bad = write_file(dir.path(), "b.f32", &[0u8; 401]);
        assert!(matches!(ingest::<f32>(&bad), Err(BenchError::SizeNotMultiple { len: 401, .. })));
        assert!(matches!(
            ingest::<f32>(&dir.path().join("missing")),
            Err(BenchError::Unreadable { .. })
        ));
    }

    #[test]
    fn manifest_parsing() {
        let text = "# comment\n\nCESM\tcesm/CLDHGH_1_26_1800_3600.f32\tf32\t26×1800×3600\nHACC\t/abs/x.f32\tf32\t280953867\nEXAALT\td\tf64\t-\n";
        let entries = parse_manifest(text, Path::new("/data")).unwrap();
        assert_eq!(entries.len(), 3);
        assert_eq!(entries[0].element_count(), 168_480_000);
        assert_eq!(entries[0].path, Path::new("/data/cesm/CLDHGH_1_26_1800_3600.f32"));
        assert_eq!(entries[1].path, Path::new("/abs/x.f32"));
        assert_eq!(entries[2].dtype, DType::F64);
        assert!(entries[2].dims.is_empty());
        assert_eq!(parse_dims("26x1800x3600").unwrap(), vec![26, 1800, 3600]);
        assert!(parse_manifest("a\tb\tf16\t1\n", Path::new(".")).is_err());
        assert!(matches!(
            parse_manifest("a\tb\tf32\t0×3\n", Path::new(".")),
            Err(BenchError::Manifest { line: 1, .. })
        ));
    }

    #[test]
    fn dims_are_checked() {
        let dir = tempfile::tempdir().unwrap();
        write_file(dir.path(), "a.f32", &[0u8; 40]);
        let entries = parse_manifest("x\ta.f32\tf32\t2×5\ny\ta.f32\tf32\t3×3\n", dir.path()).unwrap();
        assert_eq!(entries[0].load(&entries[0].path).unwrap().len(), 10);
        assert!(matches!(
            entries[1].load(&entries[1].path),
            Err(BenchError::DimsMismatch { expected: 9, found: 10, .. })
        ));
    }

    #[test]
    fn median_of_nine() {
        let s = [9.0, 1.0, 8.0, 2.0, 7.0, 3.0, 6.0, 4.0, 5.0];
        assert_eq!(median(&s), 5.0);
        assert_eq!(median(&[1.0, 4.0]), 2.5);
    }

    #[test]
    fn variants() {
        assert!(Variant::LibraryLog.config(Mode::Abs, 1e-3, 4096).is_err());
        let cfg = Variant::Unprotected.config(Mode::Abs, 1e-3, 4096).unwrap();
        assert!(cfg.unsafe_no_double_check);
        let cfg = Variant::LibraryLog.config(Mode::Rel, 1e-3, 4096).unwrap();
        assert_eq!(cfg.log_impl, LogImpl::Library);
        for v in Variant::ALL {
            assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
        }
    }

    #[test]
    fn cell_reports_median_and_is_rerun_stable() {
        let values = synthetic_smooth_f32(20_000, 3);
        let cell = Cell {
            dataset: "syn",
            file: "mem",
            mode: Mode::Abs,
            eb: 1e-3,
            variant: Variant::Protected,
        };
        let opts = PipelineOptions::default();
        let a = run_cell(cell, &values, 9, 4096, &opts).unwrap();
        let b = run_cell(cell, &values, 3, 4096, &opts).unwrap();
        assert_eq!(a.comp_secs.len(), 9);
        assert_eq!(a.comp_bytes_per_sec, 80_000.0 / median(&a.comp_secs));
        assert_eq!((a.ratio, a.lossless_fraction), (b.ratio, b.lossless_fraction));
        assert_eq!(a.violations, 0);
        assert!(a.ratio > 1.0);
    }

    #[test]
    fn unprotected_shows_violations_on_bin_edges() {
        let values = bin_edge_corpus::<f32>(20_000, 1e-3, 11);
        let opts = PipelineOptions::default();
        let mk = |variant| Cell { dataset: "edge", file: "mem", mode: Mode::Abs, eb: 1e-3, variant };
        let p = run_cell(mk(Variant::Protected), &values, 1, 4096, &opts).unwrap();
        let u = run_cell(mk(Variant::Unprotected), &values, 1, 4096, &opts).unwrap();
        assert_eq!(p.violations, 0);
        assert!(u.violations > 0);
    }

    #[test]
    fn matrix_and_census() {
        let dir = tempfile::tempdir().unwrap();
        let smooth = crate::pipeline::values_to_le(&synthetic_smooth_f32(10_000, 1));
        write_file(dir.path(), "smooth.f32", &smooth);
        write_file(dir.path(), "const.f32", &crate::pipeline::values_to_le(&[1.5f32; 1000]));
        write_file(dir.path(), "bad.f32", &[0u8; 7]);
        let text = "s\tsmooth.f32\tf32\t10000\nc\tconst.f32\tf32\t1000\nb\tbad.f32\tf32\t-\nm\tmissing.f32\tf32\t-\n";
        let entries = parse_manifest(text, dir.path()).unwrap();
        let spec = MatrixSpec {
            modes: vec![Mode::Abs, Mode::Rel],
            variants: vec![Variant::Protected, Variant::LibraryLog],
            reps: 1,
            ..MatrixSpec::default()
        };
        let opts = PipelineOptions::default();
        let m = run_matrix(&entries, &spec, &opts).unwrap();
        // 2 files × (abs: protected) + (rel: protected, library_log)
        assert_eq!(m.runs.len(), 6);
        assert_eq!(m.errors.len(), 2);

        let mut buf = Vec::new();
        write_csv(&m.runs, &mut buf).unwrap();
        let csv = String::from_utf8(buf).unwrap();
        assert_eq!(csv.lines().next().unwrap(), CSV_HEADER);
        assert_eq!(csv.lines().count(), 7);

        let c = outlier_census(&entries, Mode::Abs, 1e-3, &opts).unwrap();
        assert_eq!(c.files.len(), 2);
        let constant = c.files.iter().find(|f| f.dataset == "c").unwrap();
        assert_eq!(constant.double_check_fraction, 0.0);
        assert_eq!(c.suites.len(), 2);
    }

    #[test]
    fn empty_csv_still_has_header() {
        let mut buf = Vec::new();
        write_csv(&[], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().trim_end(), CSV_HEADER);
    }

    #[test]
    fn noop_timing_overhead_is_small() {
        let s = time_reps(9, || ());
        assert!(median(&s) < 1e-3);
    }

    #[test]
    fn bin_edge_corpus_hugs_edges() {
        let v = bin_edge_corpus::<f64>(100, 1e-3, 2);
        assert_eq!(v.len(), 900);
        for chunk in v.chunks(9) {
            let mid = chunk[4];
            let t = mid / 2e-3;
            assert!((t - t.floor() - 0.5).abs() < 1e-6, "{t}");
        }
    }
}
