use std::path::Path;
use std::sync::Arc;

use hgemm_cli::{run_from_args, Hooks, EXIT_FAIL, EXIT_PASS, EXIT_USAGE};
use hgemm_tune::kernel::{Accumulator, FnKernel};
use hgemm_tune::oracle::ref_f16_naive;
use hgemm_tune::store::{read_records, RecordKind};
use hgemm_tune::tensor::MatHalf;
use hgemm_tune::Half;

fn hgemm(args: &[&str]) -> i32 {
    hgemm_with(args, &Hooks::default())
}

fn hgemm_with(args: &[&str], hooks: &Hooks) -> i32 {
    run_from_args(std::iter::once("hgemm").chain(args.iter().copied()), hooks)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn gen_grid_writes_both_layouts_idempotently() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(hgemm(&["gen-grid", "--out-dir", s(dir.path())]), EXIT_PASS);
    let mut first = Vec::new();
    for name in ["grid_NN.csv", "grid_TN.csv"] {
        let text = std::fs::read_to_string(dir.path().join(name)).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "M,N,K,layout");
        assert_eq!(lines.len(), 1001);
        assert!(lines[1].starts_with("64,64,64,"));
        assert!(lines[1000].starts_with("16384,16384,16384,"));
        first.push(text);
    }
    assert_eq!(hgemm(&["gen-grid", "--out-dir", s(dir.path())]), EXIT_PASS);
    for (name, before) in ["grid_NN.csv", "grid_TN.csv"].iter().zip(first) {
        assert_eq!(std::fs::read_to_string(dir.path().join(name)).unwrap(), before);
    }
}

#[test]
fn verify_canonical_passes_and_records() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("verify.jsonl");
    let code = hgemm(&["verify", "--problem", "64,64,64", "--layout", "tn", "--store", s(&store)]);
    assert_eq!(code, EXIT_PASS);
    let recs = read_records(&store).unwrap();
    assert_eq!(recs.len(), 1);
    assert_eq!(recs[0].kind, RecordKind::Verify);
    assert!(recs[0].verify.as_ref().unwrap().passed());
}

#[test]
fn sabotaged_kernel_fails_verification() {
    let sabotage = FnKernel::new("sabotage", |a: &MatHalf, b: &MatHalf| {
        let mut c = ref_f16_naive(a, b, Accumulator::F32)?;
        let v = c.get(0, 0);
        c.set(0, 0, Half::from_f64(v.to_f64() + 1.0));
        Ok(c)
    });
    let hooks = Hooks {
        kernel: Some(Arc::new(sabotage)),
    };
    assert_eq!(hgemm_with(&["verify", "--problem", "64,64,64"], &hooks), EXIT_FAIL);
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(hgemm(&["verify"]), EXIT_USAGE);
    assert_eq!(hgemm(&["verify", "--problem", "64,64"]), EXIT_USAGE);
    assert_eq!(hgemm(&["verify", "--problem", "64,64,64", "--params", "bm=3"]), EXIT_USAGE);
    assert_eq!(hgemm(&["frobnicate"]), EXIT_USAGE);
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.csv");
    std::fs::write(&empty, "M,N,K,layout\n").unwrap();
    assert_eq!(hgemm(&["verify", "--problems-file", s(&empty)]), EXIT_USAGE);
}

#[test]
fn tune_smoke_finishes_quickly_and_feeds_analysis() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("tune.jsonl");
    let t0 = std::time::Instant::now();
    let code = hgemm(&[
        "tune",
        "--problem",
        "64,64,64",
        "--budget",
        "4",
        "--warmup-rounds",
        "5",
        "--measure-rounds",
        "10",
        "--seed",
        "3",
        "--store",
        s(&store),
    ]);
    assert_eq!(code, EXIT_PASS);
    assert!(t0.elapsed().as_secs() < 60);
    let recs = read_records(&store).unwrap();
    assert_eq!(recs.len(), 4);
    assert_eq!(recs.iter().filter(|r| r.winner).count(), 1);
    let w = recs.iter().find(|r| r.winner).unwrap();
    assert_eq!(w.round_times.len(), 10);
    assert!(w.verify.as_ref().unwrap().passed());

    let out = dir.path().join("tables");
    assert_eq!(hgemm(&["analyze", "--store", s(&store), "--out-dir", s(&out)]), EXIT_PASS);
    assert!(out.join("correlations.csv").exists());

    assert_eq!(
        hgemm(&["verify", "--params-store", s(&store), "--trials", "2"]),
        EXIT_PASS
    );
}

#[test]
fn bench_server_and_offline_record_identical_times() {
    let dir = tempfile::tempdir().unwrap();
    let common = [
        "bench",
        "--problem",
        "32,32,32",
        "--scripted-clock",
        "3000000,1500000",
        "--warmup-secs",
        "0.01",
        "--measure-secs",
        "0.05",
        "--seed",
        "4",
    ];
    let off = dir.path().join("off.jsonl");
    let srv = dir.path().join("srv.jsonl");
    let mut a: Vec<&str> = common.to_vec();
    a.extend(["--store", s(&off)]);
    assert_eq!(hgemm(&a), EXIT_PASS);
    let mut b: Vec<&str> = common.to_vec();
    b.extend(["--mode", "server", "--interval-ms", "50,50", "--store", s(&srv)]);
    assert_eq!(hgemm(&b), EXIT_PASS);
    let off = read_records(&off).unwrap();
    let srv = read_records(&srv).unwrap();
    assert_eq!(off[0].samples, srv[0].samples);
    assert!(!off[0].samples.is_empty());
    assert!(off[0].samples.iter().all(|x| x.t_ref == 3_000_000 && x.t_custom == 1_500_000));
    assert_eq!(srv[0].mode, "server");
    assert_eq!(off[0].speedup.unwrap().mean_s, 1.0);
}

#[test]
fn analyze_empty_store_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("empty.jsonl");
    std::fs::write(&store, "").unwrap();
    assert_eq!(
        hgemm(&["analyze", "--store", s(&store), "--out-dir", s(dir.path())]),
        EXIT_FAIL
    );
}

#[test]
fn analyze_rejects_malformed_store() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("bad.jsonl");
    std::fs::write(&store, "{\"schema_version\": 7}\n").unwrap();
    assert_eq!(hgemm(&["analyze", "--store", s(&store)]), EXIT_FAIL);
    std::fs::write(&store, "garbage\n").unwrap();
    assert_eq!(hgemm(&["analyze", "--store", s(&store)]), EXIT_FAIL);
}
