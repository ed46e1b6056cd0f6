//! The command-line interface: exit codes, determinism, and report files.

use std::path::Path;
use std::process::{Command, Output};

use lsk3d::harness::RunConfig;

fn lsk3d(args: &[&str], threads: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lsk3d")).args(args).env("LSK_THREADS", threads).output().expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Small dataset plus a fast config (K = 5) in `dir`.
fn setup(dir: &Path, iterations: u64, adapt_every: u64) -> std::path::PathBuf {
    ok(&lsk3d(&["gen-data", "--out", p(&dir.join("data")), "--count", "3", "--seed", "2", "--extent", "12"], "1"));
    let mut cfg = RunConfig::desk_default();
    cfg.train_data = "data/manifest.toml".into();
    cfg.output_dir = "run".into();
    cfg.network.kernel_size = 5;
    cfg.network.group_divisions = vec![2, 1, 2];
    cfg.schedule.iterations = iterations;
    cfg.schedule.sparsity.adapt_every = adapt_every;
    cfg.schedule.width.sort_every = adapt_every * 2;
    let path = dir.join("run.toml");
    std::fs::write(&path, cfg.to_toml().unwrap()).unwrap();
    path
}

#[test]
fn gen_data_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    for sub in ["a", "b"] {
        ok(&lsk3d(&["gen-data", "--out", p(&dir.path().join(sub)), "--count", "2", "--seed", "9"], "1"));
    }
    for f in ["scene_0000.bin", "scene_0001.bin", "manifest.toml"] {
        assert_eq!(std::fs::read(dir.path().join("a").join(f)).unwrap(), std::fs::read(dir.path().join("b").join(f)).unwrap());
    }
}

#[test]
fn train_writes_one_row_per_iteration_and_marks_events() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), 50, 10);
    ok(&lsk3d(&["train", "--config", p(&cfg)], "1"));
    let csv = std::fs::read_to_string(dir.path().join("run/metrics.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 50);
    let sds = rows.iter().filter(|r| r.split(',').rev().nth(1) == Some("1")).count();
    assert_eq!(sds, 5);
    assert!(dir.path().join("run/checkpoint.lskc").exists());
}

#[test]
fn training_is_independent_of_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), 30, 10);
    let a = ok(&lsk3d(&["train", "--config", p(&cfg), "--out", p(&dir.path().join("one"))], "1"));
    let b = ok(&lsk3d(&["train", "--config", p(&cfg), "--out", p(&dir.path().join("two"))], "3"));
    let hash = |s: &str| s.split_whitespace().last().unwrap().to_string();
    assert_eq!(hash(&a), hash(&b));
    assert_eq!(
        std::fs::read(dir.path().join("one/metrics.csv")).unwrap(),
        std::fs::read(dir.path().join("two/metrics.csv")).unwrap()
    );
}

#[test]
fn eval_erf_and_count_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), 20, 10);
    ok(&lsk3d(&["train", "--config", p(&cfg)], "1"));
    let ckpt = dir.path().join("run/checkpoint.lskc");
    let data = dir.path().join("data/manifest.toml");
    let out = ok(&lsk3d(&["eval", "--checkpoint", p(&ckpt), "--data", p(&data), "--out", p(&dir.path().join("eval"))], "1"));
    assert!(out.contains("mIoU"));
    assert!(dir.path().join("eval/iou.csv").exists());

    let scene = dir.path().join("data/scene_0000.bin");
    let stem = |n: &str| dir.path().join(n);
    let args = |n: &str| {
        vec!["erf".to_string(), "--checkpoint".into(), p(&ckpt).into(), "--scene".into(), p(&scene).into(), "--center".into(), "5,5,0".into(), "--out".into(), p(&stem(n)).into()]
    };
    let run = |a: Vec<String>| lsk3d(&a.iter().map(String::as_str).collect::<Vec<_>>(), "1");
    ok(&run(args("erf1")));
    ok(&run(args("erf2")));
    assert_eq!(std::fs::read(stem("erf1.svg")).unwrap(), std::fs::read(stem("erf2.svg")).unwrap());

    let mut absent = args("erf3");
    absent[6] = "500,0,0".into();
    let out = run(absent);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("center"));

    let out = ok(&lsk3d(&["count", "--checkpoint", p(&ckpt), "--scene", p(&scene), "--out", p(&stem("costs"))], "1"));
    assert!(out.contains("total"));
    let csv = std::fs::read_to_string(stem("costs.csv")).unwrap();
    assert!(csv.starts_with("layer,dense_params,nnz_params,flops\n"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    // usage error
    assert_eq!(lsk3d(&["train"], "1").status.code(), Some(1));
    // unparsable config
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "seed = [").unwrap();
    let out = lsk3d(&["train", "--config", p(&bad)], "1");
    assert_eq!(out.status.code(), Some(1));
    // empty dataset at run time
    ok(&lsk3d(&["gen-data", "--out", p(&dir.path().join("empty")), "--count", "0"], "1"));
    let cfg = setup(dir.path(), 20, 10);
    ok(&lsk3d(&["train", "--config", p(&cfg)], "1"));
    let out = lsk3d(
        &["eval", "--checkpoint", p(&dir.path().join("run/checkpoint.lskc")), "--data", p(&dir.path().join("empty/manifest.toml"))],
        "1",
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no scenes"));
    // truncated checkpoint
    let ck = dir.path().join("run/checkpoint.lskc");
    let bytes = std::fs::read(&ck).unwrap();
    std::fs::write(&ck, &bytes[..bytes.len() / 3]).unwrap();
    let out = lsk3d(&["count", "--checkpoint", p(&ck)], "1");
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("incompatible checkpoint"));
    // bad thread setting
    assert_eq!(lsk3d(&["count", "--checkpoint", p(&ck)], "zero").status.code(), Some(1));
}
