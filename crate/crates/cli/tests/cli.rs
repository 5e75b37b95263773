use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn sse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sse"))
        .args(args)
        .output()
        .expect("spawn sse")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).expect("utf8 stdout")
}

fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf8 path")
}

fn radix(dir: &TempDir, name: &str, vocab: usize, f: usize, dim: usize) -> PathBuf {
    let out = dir.path().join(name);
    let result = sse(&[
        "radix-assign",
        "--vocab-size",
        &vocab.to_string(),
        "--subspaces",
        &f.to_string(),
        "--dim",
        &dim.to_string(),
        "--out",
        path_str(&out),
    ]);
    assert!(
        result.status.success(),
        "{}",
        String::from_utf8_lossy(&result.stderr)
    );
    out
}

#[test]
fn radix_assign_reports_minimal_table_size() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("cb.sscb");
    let result = sse(&[
        "radix-assign",
        "--vocab-size",
        "50627",
        "--subspaces",
        "8",
        "--out",
        path_str(&out),
    ]);
    assert_eq!(result.status.code(), Some(0));
    assert!(stdout(&result).lines().any(|l| l == "Q=4"));
    assert!(out.exists());
}

#[test]
fn stats_match_golden_files() {
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    let dir = TempDir::new().unwrap();
    for (vocab, dim, f) in [
        (50265, 512, 2),
        (50265, 512, 3),
        (50265, 512, 8),
        (250002, 512, 3),
        (50627, 512, 8),
    ] {
        let cb = radix(&dir, "cb.sscb", vocab, f, dim);
        let result = sse(&["stats", "--codebook", path_str(&cb)]);
        assert_eq!(result.status.code(), Some(0));
        let expected = fs::read(golden.join(format!("stats_radix_{vocab}_{dim}_{f}.txt"))).unwrap();
        assert_eq!(result.stdout, expected, "stats for D={vocab} d={dim} f={f}");
    }
}

#[test]
fn stats_key_values_for_three_subspaces() {
    let dir = TempDir::new().unwrap();
    let cb = radix(&dir, "cb.sscb", 50265, 3, 512);
    let text = stdout(&sse(&["stats", "--codebook", path_str(&cb)]));
    assert!(text.lines().any(|l| l == "params=18944"));
    assert!(text.lines().any(|l| l == "reduction=99.93"));
}

#[test]
fn stats_honours_baseline_override() {
    let dir = TempDir::new().unwrap();
    let cb = radix(&dir, "cb.sscb", 100, 2, 8);
    let text = stdout(&sse(&[
        "stats",
        "--codebook",
        path_str(&cb),
        "--baseline-params",
        "1600",
    ]));
    assert!(text.lines().any(|l| l == "params=80"));
    assert!(text.lines().any(|l| l == "reduction=95.00"));
}

#[test]
fn verify_accepts_radix_and_rejects_collision() {
    let dir = TempDir::new().unwrap();
    let cb = radix(&dir, "cb.sscb", 100, 2, 8);
    let ok = sse(&["verify", "--codebook", path_str(&cb)]);
    assert_eq!(ok.status.code(), Some(0));

    let mut bytes = fs::read(&cb).unwrap();
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let codes = 16 + header_len;
    let f = 2;
    // Token 5 takes token 0's tuple.
    let first: Vec<u8> = bytes[codes..codes + 4 * f].to_vec();
    bytes[codes + 5 * 4 * f..codes + 6 * 4 * f].copy_from_slice(&first);
    let bad = dir.path().join("bad.sscb");
    fs::write(&bad, &bytes).unwrap();

    let result = sse(&["verify", "--codebook", path_str(&bad)]);
    assert_eq!(result.status.code(), Some(1));
    let text = stdout(&result);
    assert!(text.lines().any(|l| l == "unique=false"), "{text}");
    assert!(text.lines().any(|l| l == "collision=0,5"), "{text}");
}

#[test]
fn radix_assign_refuses_insufficient_table_size() {
    let dir = TempDir::new().unwrap();
    let cb = radix(&dir, "cb.sscb", 100, 2, 8);
    let result = sse(&[
        "radix-assign",
        "--vocab-size",
        "100",
        "--subspaces",
        "2",
        "--table-size",
        "9",
        "--dim",
        "8",
        "--out",
        path_str(&cb),
    ]);
    assert_eq!(result.status.code(), Some(3), "9^2 < 100 must be refused");
}

#[test]
fn reconstruct_then_distill_round_trip() {
    let dir = TempDir::new().unwrap();
    let cb = radix(&dir, "cb.sscb", 50, 2, 6);
    let target = dir.path().join("target.sse");
    let result = sse(&[
        "reconstruct",
        "--codebook",
        path_str(&cb),
        "--out",
        path_str(&target),
    ]);
    assert_eq!(result.status.code(), Some(0));
    // header plus 50 rows of 6 f32 values
    assert_eq!(fs::metadata(&target).unwrap().len(), 32 + 50 * 6 * 4);

    let subset = dir.path().join("subset.sse");
    let result = sse(&[
        "reconstruct",
        "--codebook",
        path_str(&cb),
        "--out",
        path_str(&subset),
        "--tokens",
        "3,1,4",
    ]);
    assert_eq!(result.status.code(), Some(0));
    let full = fs::read(&target).unwrap();
    let part = fs::read(&subset).unwrap();
    let row = |buf: &[u8], i: usize| buf[32 + i * 24..32 + (i + 1) * 24].to_vec();
    assert_eq!(row(&part, 0), row(&full, 3));
    assert_eq!(row(&part, 1), row(&full, 1));
    assert_eq!(row(&part, 2), row(&full, 4));

    // A fresh codebook with another seed distilled onto the first one's vectors.
    let other = dir.path().join("other.sscb");
    let result = sse(&[
        "radix-assign",
        "--vocab-size",
        "50",
        "--subspaces",
        "2",
        "--dim",
        "6",
        "--seed",
        "9",
        "--init-std",
        "1.0",
        "--out",
        path_str(&other),
    ]);
    assert!(result.status.success());
    let fitted = dir.path().join("fitted.sscb");
    let history = dir.path().join("mse.csv");
    let result = sse(&[
        "distill",
        "--target",
        path_str(&target),
        "--codebook",
        path_str(&other),
        "--steps",
        "200",
        "--lr",
        "0.05",
        "--batch-size",
        "50",
        "--out",
        path_str(&fitted),
        "--history",
        path_str(&history),
    ]);
    assert_eq!(
        result.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&result.stderr)
    );
    let csv = fs::read_to_string(&history).unwrap();
    let mse: Vec<f64> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(mse.len(), 201);
    assert!(mse[200] < 0.01 * mse[0], "{} -> {}", mse[0], mse[200]);
    assert!(fitted.exists());
}

#[test]
fn cluster_assign_prints_levels_and_similarity() {
    let dir = TempDir::new().unwrap();
    let cb = radix(&dir, "cb.sscb", 120, 2, 8);
    let pretrained = dir.path().join("pre.sse");
    assert!(sse(&[
        "reconstruct",
        "--codebook",
        path_str(&cb),
        "--out",
        path_str(&pretrained)
    ])
    .status
    .success());
    let out = dir.path().join("cluster.sscb");
    let result = sse(&[
        "cluster-assign",
        "--pretrained",
        path_str(&pretrained),
        "--subspaces",
        "2",
        "--table-size",
        "11",
        "--dim",
        "8",
        "--balanced",
        "--seed",
        "3",
        "--out",
        path_str(&out),
    ]);
    assert_eq!(
        result.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&result.stderr)
    );
    let text = stdout(&result);
    assert!(text.contains("level 2: 11 groups"), "{text}");
    assert!(text.contains("first code shared"), "{text}");
    let verify = sse(&["verify", "--codebook", path_str(&out)]);
    assert_eq!(verify.status.code(), Some(0));
    let stats = stdout(&sse(&["stats", "--codebook", path_str(&out)]));
    assert!(stats.lines().any(|l| l == "algorithm=cluster-balanced"));
}

#[test]
fn grad_check_exit_status() {
    let ok = sse(&["grad-check", "--dims", "10,8,2,3", "--seed", "4"]);
    assert_eq!(ok.status.code(), Some(0));
    assert!(stdout(&ok).lines().any(|l| l == "ok"));
    let bad = sse(&["grad-check", "--dims", "10,8,2"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn exit_codes_for_usage_and_bad_data() {
    assert_eq!(sse(&["stats"]).status.code(), Some(2));
    assert_eq!(sse(&["no-such-command"]).status.code(), Some(2));
    assert_eq!(sse(&["--help"]).status.code(), Some(0));

    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("missing.sscb");
    let result = sse(&["stats", "--codebook", path_str(&missing)]);
    assert_eq!(result.status.code(), Some(3));
    assert!(!result.stderr.is_empty());

    let junk = dir.path().join("junk.sscb");
    fs::write(&junk, b"not a codebook at all").unwrap();
    let result = sse(&["verify", "--codebook", path_str(&junk)]);
    assert_eq!(result.status.code(), Some(3));

    let cb = radix(&dir, "cb.sscb", 30, 2, 4);
    let mut bytes = fs::read(&cb).unwrap();
    bytes.truncate(bytes.len() - 3);
    fs::write(&cb, &bytes).unwrap();
    assert_eq!(
        sse(&["stats", "--codebook", path_str(&cb)]).status.code(),
        Some(3)
    );
}

#[test]
fn thread_count_env_is_validated() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("cb.sscb");
    let run = |threads: &str| {
        Command::new(env!("CARGO_BIN_EXE_sse"))
            .env("SSE_THREADS", threads)
            .args([
                "radix-assign",
                "--vocab-size",
                "10",
                "--subspaces",
                "2",
                "--out",
            ])
            .arg(&out)
            .output()
            .unwrap()
    };
    assert_eq!(run("2").status.code(), Some(0));
    assert_eq!(run("0").status.code(), Some(0));
    assert_eq!(run("many").status.code(), Some(2));
}
