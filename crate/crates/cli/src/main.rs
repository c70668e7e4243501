use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use gebq::bench::{self, MatrixSpec, Variant, DEFAULT_REPS};
use gebq::golden::{self, GoldenDigest};
use gebq::numerics::DType;
use gebq::pipeline::{compress_raw, decompress_raw, values_from_le, PipelineOptions};
use gebq::quantizer::{compute_noa_range, Mode, QuantConfig, DEFAULT_BLOCK_SIZE};
use gebq::sweep::{self, SweepReport, SweepSpec, F32_CHUNKS};
use gebq::verify::verify;
use gebq::Scalar;

const EXIT_FAILED: u8 = 1;
const EXIT_IO: u8 = 3;

#[derive(Parser)]
#[command(name = "gebq", version, about = "Error-bounded lossy compression of raw f32/f64 arrays")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "GEBQ_THREADS")]
    threads: Option<usize>,
    #[arg(long, global = true, value_enum, default_value_t = Report::Text)]
    report: Report,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Report {
    Text,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Compress a raw little-endian array.
    Compress(CompressArgs),
    /// Decompress a stream back to a raw little-endian array.
    Decompress(IoArgs),
    /// Check a reconstruction against the original element by element.
    Verify(VerifyArgs),
    /// Test the quantizer kernels over the bit-pattern domain.
    Sweep(SweepArgs),
    /// Recompute the golden digest and compare it with the committed one.
    Golden(GoldenArgs),
    /// Throughput, ratio and double-check census benchmarks.
    #[command(subcommand)]
    Bench(BenchCommand),
}

#[derive(Args)]
struct IoArgs {
    #[arg(short = 'i', long = "input")]
    input: PathBuf,
    #[arg(short = 'o', long = "output")]
    output: PathBuf,
}

#[derive(Args)]
struct CompressArgs {
    #[arg(long, value_parser = parse_mode)]
    mode: Mode,
    #[arg(long, value_parser = parse_eb, allow_hyphen_values = true)]
    eb: f64,
    #[arg(long, value_parser = parse_dtype)]
    dtype: DType,
    #[arg(long, default_value_t = DEFAULT_BLOCK_SIZE, value_parser = clap::value_parser!(u32).range(1..))]
    block: u32,
    /// Skip the reconstruction check (benchmarking only; the bound may be violated).
    #[arg(long)]
    unsafe_no_double_check: bool,
    #[command(flatten)]
    io: IoArgs,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, value_parser = parse_mode)]
    mode: Mode,
    #[arg(long, value_parser = parse_eb, allow_hyphen_values = true)]
    eb: f64,
    #[arg(long, value_parser = parse_dtype, default_value = "f32")]
    dtype: DType,
    #[arg(long)]
    original: PathBuf,
    #[arg(long)]
    reconstructed: PathBuf,
    /// NOA value range; computed from the original when omitted.
    #[arg(long, value_parser = parse_range)]
    range: Option<f64>,
}

#[derive(Args)]
#[command(group = clap::ArgGroup::new("domain").required(true).args(["exhaustive", "samples"]))]
struct SweepArgs {
    #[arg(long, value_parser = parse_mode)]
    mode: Mode,
    /// One or more bounds, comma separated.
    #[arg(long, value_parser = parse_eb, value_delimiter = ',', required = true, allow_hyphen_values = true)]
    eb: Vec<f64>,
    #[arg(long, value_parser = parse_dtype, default_value = "f32")]
    dtype: DType,
    /// Every f32 bit pattern.
    #[arg(long)]
    exhaustive: bool,
    /// Seeded random patterns (f64 also runs the structured corpus).
    #[arg(long)]
    samples: Option<u64>,
    #[arg(long, default_value_t = 0x5EED)]
    seed: u64,
    /// Synthetic value range for NOA sweeps.
    #[arg(long, value_parser = parse_range)]
    range: Option<f64>,
    /// First 2^24-pattern chunk (exhaustive f32 only).
    #[arg(long, default_value_t = 0)]
    start_chunk: u32,
    /// One past the last chunk.
    #[arg(long, default_value_t = F32_CHUNKS)]
    end_chunk: u32,
}

#[derive(Args)]
struct GoldenArgs {
    /// Write the computed digest here instead of comparing.
    #[arg(long)]
    write: Option<PathBuf>,
}

#[derive(Subcommand)]
enum BenchCommand {
    /// Time compress/decompress over a dataset manifest or a synthetic array.
    Run(BenchRunArgs),
    /// Per-file fraction of values caught by the double-check.
    Census(CensusArgs),
}

#[derive(Args)]
#[command(group = clap::ArgGroup::new("source").required(true).args(["manifest", "synthetic"]))]
struct BenchRunArgs {
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Benchmark an in-memory smooth f32 array of this many values.
    #[arg(long)]
    synthetic: Option<usize>,
    #[arg(long, value_parser = parse_mode, value_delimiter = ',', default_value = "abs")]
    mode: Vec<Mode>,
    #[arg(long, value_parser = parse_eb, value_delimiter = ',', default_value = "1e-3")]
    eb: Vec<f64>,
    #[arg(long, value_parser = parse_variant, value_delimiter = ',', default_value = "protected,unprotected")]
    variant: Vec<Variant>,
    #[arg(long, default_value_t = DEFAULT_REPS as u64, value_parser = clap::value_parser!(u64).range(1..))]
    reps: u64,
    #[arg(long, default_value_t = DEFAULT_BLOCK_SIZE, value_parser = clap::value_parser!(u32).range(1..))]
    block: u32,
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct CensusArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_parser = parse_mode, default_value = "abs")]
    mode: Mode,
    #[arg(long, value_parser = parse_eb, default_value = "1e-3")]
    eb: f64,
}

fn parse_eb(s: &str) -> Result<f64, String> {
    // std parsing is correctly rounded, so "1e-3" yields the same bits everywhere
    let v: f64 = s.trim().parse().map_err(|e| format!("`{s}` is not a number: {e}"))?;
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(format!("error bound must be positive and finite, got `{s}`"))
    }
}

fn parse_range(s: &str) -> Result<f64, String> {
    let v: f64 = s.trim().parse().map_err(|e| format!("`{s}` is not a number: {e}"))?;
    if v.is_finite() && v >= 0.0 {
        Ok(v)
    } else {
        Err(format!("range must be finite and non-negative, got `{s}`"))
    }
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse()
}

fn parse_dtype(s: &str) -> Result<DType, String> {
    s.parse()
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse()
}

/// A failure that maps to a nonzero exit code.
enum Failure {
    /// Verification or sweep found violations.
    Check,
    /// I/O, format or runtime error.
    Error(String),
}

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Error(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn read(path: &Path) -> Result<Vec<u8>, Failure> {
    fs::read(path).map_err(|e| Failure::Error(format!("cannot read {}: {e}", path.display())))
}

fn write(path: &Path, bytes: &[u8]) -> Outcome {
    fs::write(path, bytes).map_err(|e| Failure::Error(format!("cannot write {}: {e}", path.display())))
}

fn emit(report: Report, text: impl FnOnce() -> String, value: impl FnOnce() -> serde_json::Value) {
    let out = match report {
        Report::Text => text(),
        Report::Json => serde_json::to_string_pretty(&value()).expect("report serializes"),
    };
    let mut stdout = io::stdout().lock();
    // a closed stdout is not worth failing the command over
    let _ = writeln!(stdout, "{out}");
}

fn cmd_compress(a: &CompressArgs, opts: &PipelineOptions, report: Report) -> Outcome {
    let input = read(&a.io.input)?;
    let mut cfg = QuantConfig::new(a.mode, a.eb).with_block_size(a.block);
    if a.unsafe_no_double_check {
        eprintln!("warning: double-check disabled; the error bound is not guaranteed");
        cfg = cfg.without_double_check();
    }
    let c = compress_raw(&input, a.dtype, &cfg, opts)?;
    write(&a.io.output, &c.bytes)?;
    let s = &c.stats;
    emit(
        report,
        || {
            format!(
                "{} values -> {} bytes (ratio {:.4}), lossless {:.4}% (double-check {:.4}%)",
                s.values_total,
                s.bytes_out,
                s.ratio,
                100.0 * s.lossless_fraction,
                100.0 * s.double_check_fraction()
            )
        },
        || serde_json::to_value(s).expect("stats serialize"),
    );
    Ok(())
}

fn cmd_decompress(a: &IoArgs, opts: &PipelineOptions, report: Report) -> Outcome {
    let stream = read(&a.input)?;
    let (header, bytes) = decompress_raw(&stream, opts)?;
    write(&a.output, &bytes)?;
    emit(
        report,
        || format!("{} {} values ({}, eb={:e})", header.count, header.dtype, header.mode, header.eb()),
        || json!({"count": header.count, "dtype": header.dtype, "mode": header.mode, "eb": header.eb()}),
    );
    Ok(())
}

fn verify_typed<T: Scalar>(a: &VerifyArgs, report: Report) -> Outcome {
    let original = values_from_le::<T>(&read(&a.original)?)?;
    let recon = values_from_le::<T>(&read(&a.reconstructed)?)?;
    let range = match (a.mode, a.range) {
        (Mode::Noa, None) => Some(compute_noa_range(&original).widen()),
        (_, r) => r,
    };
    let r = verify(&original, &recon, a.mode, a.eb, range)?;
    emit(report, || r.summary(), || serde_json::to_value(&r).expect("report serializes"));
    if r.passed {
        Ok(())
    } else {
        Err(Failure::Check)
    }
}

fn print_sweep(reports: &[SweepReport], report: Report) -> Outcome {
    emit(
        report,
        || reports.iter().map(SweepReport::summary).collect::<Vec<_>>().join("\n"),
        || serde_json::to_value(reports).expect("reports serialize"),
    );
    if reports.iter().all(SweepReport::passed) {
        Ok(())
    } else {
        Err(Failure::Check)
    }
}

fn cmd_sweep(a: &SweepArgs, opts: &PipelineOptions, report: Report) -> Outcome {
    let reports = match (a.dtype, a.samples) {
        (DType::F32, None) => {
            if a.start_chunk >= a.end_chunk || a.end_chunk > F32_CHUNKS {
                return Err(Failure::Error(format!(
                    "chunk range {}..{} must be non-empty and within 0..{F32_CHUNKS}",
                    a.start_chunk, a.end_chunk
                )));
            }
            let mut out = Vec::with_capacity(a.eb.len());
            for &eb in &a.eb {
                let spec = SweepSpec { mode: a.mode, eb, range: a.range };
                let mut acc: Option<SweepReport> = None;
                for chunk in a.start_chunk..a.end_chunk {
                    let r = opts.install(|| sweep::sweep_f32_chunks(&spec, chunk..chunk + 1))??;
                    acc = Some(match acc {
                        Some(prev) => prev.merge(&r),
                        None => r,
                    });
                    let done = chunk + 1 - a.start_chunk;
                    if done.is_multiple_of(16) || chunk + 1 == a.end_chunk {
                        let acc = acc.as_ref().expect("set above");
                        eprintln!(
                            "{} eb={eb:e}: chunk {}/{} done, {} violations so far",
                            a.mode,
                            done,
                            a.end_chunk - a.start_chunk,
                            acc.violations
                        );
                    }
                }
                out.push(acc.expect("at least one chunk"));
            }
            out
        }
        (DType::F32, Some(n)) => opts.install(|| sweep::sweep_f32_sampled(a.mode, &a.eb, a.range, n, a.seed))??,
        (DType::F64, Some(n)) => opts.install(|| sweep::sweep_f64(a.mode, &a.eb, a.range, n, a.seed))??,
        (DType::F64, None) => {
            return Err(Failure::Error(
                "--exhaustive applies to f32 only; use --samples N for f64".into(),
            ))
        }
    };
    print_sweep(&reports, report)
}

fn cmd_golden(a: &GoldenArgs, opts: &PipelineOptions, report: Report) -> Outcome {
    if let Some(path) = &a.write {
        let digest = golden::compute_golden(opts)?;
        let mut text = serde_json::to_string_pretty(&digest)?;
        text.push('\n');
        write(path, text.as_bytes())?;
        emit(report, || digest.combined_sha256.clone(), || json!({"combined_sha256": digest.combined_sha256}));
        return Ok(());
    }
    let check = golden::check_golden(&GoldenDigest::committed(), opts)?;
    emit(
        report,
        || {
            let mut lines = vec![format!(
                "{} combined sha256 {}",
                if check.passed { "PASS" } else { "FAIL" },
                check.combined_sha256
            )];
            for m in &check.mismatches {
                lines.push(format!(
                    "  {}: first differing block {:?}, expected {}, got {}",
                    m.case, m.first_differing_block, m.expected_sha256, m.actual_sha256
                ));
            }
            lines.join("\n")
        },
        || serde_json::to_value(&check).expect("check serializes"),
    );
    if check.passed {
        Ok(())
    } else {
        Err(Failure::Check)
    }
}

fn cmd_bench_run(a: &BenchRunArgs, opts: &PipelineOptions, report: Report) -> Outcome {
    let spec = MatrixSpec {
        modes: a.mode.clone(),
        ebs: a.eb.clone(),
        variants: a.variant.clone(),
        reps: a.reps as usize,
        block_size: a.block,
    };
    let matrix = if let Some(manifest) = &a.manifest {
        bench::run_matrix(&bench::load_manifest(manifest)?, &spec, opts)?
    } else {
        let n = a.synthetic.expect("clap requires a source");
        let values = bench::Values::F32(bench::synthetic_smooth_f32(n, 1));
        let mut m = bench::MatrixReport { runs: Vec::new(), errors: Vec::new() };
        for &mode in &spec.modes {
            for &eb in &spec.ebs {
                let cells: Vec<bench::Cell> = spec
                    .variants
                    .iter()
                    .filter(|v| v.valid_for(mode))
                    .map(|&variant| bench::Cell { dataset: "synthetic", file: "smooth_f32", mode, eb, variant })
                    .collect();
                m.runs.extend(bench::run_cells_dyn(&cells, &values, spec.reps, spec.block_size, opts)?);
            }
        }
        m
    };
    if let Some(path) = &a.csv {
        let mut buf = Vec::new();
        bench::write_csv(&matrix.runs, &mut buf)?;
        write(path, &buf)?;
    }
    if let Some(path) = &a.json {
        write(path, serde_json::to_string_pretty(&matrix)?.as_bytes())?;
    }
    for e in &matrix.errors {
        eprintln!("error: {} {}: {}", e.dataset, e.file, e.error);
    }
    emit(
        report,
        || {
            let mut buf = Vec::new();
            bench::write_csv(&matrix.runs, &mut buf).expect("in-memory CSV");
            String::from_utf8(buf).expect("CSV is UTF-8").trim_end().to_string()
        },
        || serde_json::to_value(&matrix).expect("matrix serializes"),
    );
    Ok(())
}

fn cmd_census(a: &CensusArgs, opts: &PipelineOptions, report: Report) -> Outcome {
    let entries = bench::load_manifest(&a.manifest)?;
    let c = bench::outlier_census(&entries, a.mode, a.eb, opts)?;
    for e in &c.errors {
        eprintln!("error: {} {}: {}", e.dataset, e.file, e.error);
    }
    emit(
        report,
        || {
            let mut lines: Vec<String> = c
                .files
                .iter()
                .map(|f| format!("{}\t{}\t{:.4}%", f.dataset, f.file, 100.0 * f.double_check_fraction))
                .collect();
            for s in &c.suites {
                lines.push(format!(
                    "{}: {} files, avg {:.4}%, max {:.4}%",
                    s.dataset,
                    s.files,
                    100.0 * s.avg_double_check_fraction,
                    100.0 * s.max_double_check_fraction
                ));
            }
            lines.join("\n")
        },
        || serde_json::to_value(&c).expect("census serializes"),
    );
    Ok(())
}

fn run(cli: &Cli) -> Outcome {
    let opts = PipelineOptions { threads: cli.threads };
    match &cli.command {
        Command::Compress(a) => cmd_compress(a, &opts, cli.report),
        Command::Decompress(a) => cmd_decompress(a, &opts, cli.report),
        Command::Verify(a) => opts.install(|| match a.dtype {
            DType::F32 => verify_typed::<f32>(a, cli.report),
            DType::F64 => verify_typed::<f64>(a, cli.report),
        })?,
        Command::Sweep(a) => cmd_sweep(a, &opts, cli.report),
        Command::Golden(a) => cmd_golden(a, &opts, cli.report),
        Command::Bench(BenchCommand::Run(a)) => cmd_bench_run(a, &opts, cli.report),
        Command::Bench(BenchCommand::Census(a)) => cmd_census(a, &opts, cli.report),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check) => ExitCode::from(EXIT_FAILED),
        Err(Failure::Error(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_IO)
        }
    }
}
