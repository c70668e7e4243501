use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn gebq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gebq"))
        .args(args)
        .env_remove("GEBQ_THREADS")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn write_f32(path: &Path, values: &[f32]) {
    fs::write(path, values.iter().flat_map(|v| v.to_le_bytes()).collect::<Vec<_>>()).unwrap();
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn sample() -> Vec<f32> {
    let mut v: Vec<f32> = (0..10_000).map(|i| (i as f32 * 0.01).sin() * 50.0).collect();
    v.extend([f32::NAN, f32::INFINITY, -0.0, 1e-40]);
    v
}

#[test]
fn compress_decompress_verify_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let (input, stream, recon) = (dir.path().join("in.bin"), dir.path().join("out.gebq"), dir.path().join("r.bin"));
    write_f32(&input, &sample());
    for mode in ["abs", "rel", "noa"] {
        let o = gebq(&["compress", "--mode", mode, "--eb", "1e-3", "--dtype", "f32", "-i", p(&input), "-o", p(&stream)]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let o = gebq(&["decompress", "-i", p(&stream), "-o", p(&recon)]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let o = gebq(&[
            "verify", "--mode", mode, "--eb", "1e-3", "--original", p(&input), "--reconstructed", p(&recon),
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    }
}

#[test]
fn output_is_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.bin");
    write_f32(&input, &sample());
    let mut outs = Vec::new();
    for t in ["1", "3"] {
        let out = dir.path().join(format!("o{t}"));
        let o = gebq(&["--threads", t, "compress", "--mode", "rel", "--eb", "1e-2", "--dtype", "f32", "--block", "100",
            "-i", p(&input), "-o", p(&out)]);
        assert_eq!(code(&o), 0);
        outs.push(fs::read(out).unwrap());
    }
    assert_eq!(outs[0], outs[1]);
}

#[test]
fn verify_failure_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    write_f32(&a, &[1.0, 2.0]);
    write_f32(&b, &[1.0, 2.1]);
    let o = gebq(&["--report", "json", "verify", "--mode", "abs", "--eb", "1e-3", "--original", p(&a), "--reconstructed", p(&b)]);
    assert_eq!(code(&o), 1);
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["first_violation_index"], 1);
}

#[test]
fn usage_errors_exit_two() {
    for args in [
        &["compress", "--mode", "abs", "--eb", "-1", "--dtype", "f32", "-i", "x", "-o", "y"][..],
        &["compress", "--mode", "abs", "--eb", "0", "--dtype", "f32", "-i", "x", "-o", "y"],
        &["compress", "--mode", "abs", "--eb", "inf", "--dtype", "f32", "-i", "x", "-o", "y"],
        &["compress", "--mode", "lin", "--eb", "1e-3", "--dtype", "f32", "-i", "x", "-o", "y"],
        &["sweep", "--mode", "abs", "--eb", "1e-3", "--exhaustive", "--samples", "10"],
        &["sweep", "--mode", "abs", "--eb", "1e-3"],
    ] {
        let o = gebq(args);
        assert_eq!(code(&o), 2, "{args:?}");
        assert!(!o.stderr.is_empty());
    }
}

#[test]
fn io_and_format_errors_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing");
    let out = dir.path().join("out");
    let o = gebq(&["compress", "--mode", "abs", "--eb", "1e-3", "--dtype", "f32", "-i", p(&missing), "-o", p(&out)]);
    assert_eq!(code(&o), 3);
    let junk = dir.path().join("junk");
    fs::write(&junk, b"not a stream at all, not even close to one").unwrap();
    assert_eq!(code(&gebq(&["decompress", "-i", p(&junk), "-o", p(&out)])), 3);
    let odd = dir.path().join("odd");
    fs::write(&odd, [0u8; 5]).unwrap();
    let o = gebq(&["compress", "--mode", "abs", "--eb", "1e-3", "--dtype", "f32", "-i", p(&odd), "-o", p(&out)]);
    assert_eq!(code(&o), 3);
}

#[test]
fn sweep_chunks_and_samples() {
    let o = gebq(&["sweep", "--mode", "abs", "--eb", "1e-3,1e-1", "--exhaustive", "--start-chunk", "255", "--end-chunk", "256"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    assert_eq!(String::from_utf8_lossy(&o.stdout).lines().filter(|l| l.starts_with("PASS")).count(), 2);
    let o = gebq(&["--report", "json", "sweep", "--mode", "rel", "--eb", "1e-3", "--dtype", "f64", "--samples", "1000"]);
    assert_eq!(code(&o), 0);
    let r: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r[0]["patterns_tested"], 24_576 + 1000);
    let o = gebq(&["sweep", "--mode", "noa", "--eb", "1e-3", "--samples", "1000"]);
    assert_eq!(code(&o), 3, "NOA without --range");
    let o = gebq(&["sweep", "--mode", "noa", "--eb", "1e-3", "--range", "1e10", "--samples", "1000"]);
    assert_eq!(code(&o), 0);
}

#[test]
fn golden_matches_committed_digest() {
    let o = gebq(&["golden"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
}

#[test]
fn bench_synthetic_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("b.csv");
    let o = gebq(&["bench", "run", "--synthetic", "10000", "--reps", "3", "--csv", p(&csv)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "dataset,file,mode,eb,variant,reps,comp_MBps,decomp_MBps,ratio,lossless_pct");
    assert_eq!(lines.count(), 2);
}
