use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn spw(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spw")).args(args).output().unwrap()
}

const SMALL: &[&str] = &[
    "--task.size", "6",
    "--task.horizon", "20",
    "--data.segment_length", "5",
    "--data.n_behavior", "20",
    "--data.heldout", "30",
    "--model.hidden", "8",
    "--train.epochs", "3",
    "--eval.segments", "10",
    "--eval.episodes", "20",
];

fn run(sub: &str, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![sub, "--out", out.to_str().unwrap()];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(extra);
    let o = spw(&args);
    assert!(o.status.success(), "{sub} failed: {}", String::from_utf8_lossy(&o.stderr));
    o
}

fn lines(path: &Path) -> usize {
    fs::read_to_string(path).unwrap().lines().filter(|l| !l.starts_with('#')).count()
}

#[test]
fn generate_writes_requested_preferences() {
    let dir = tempfile::tempdir().unwrap();
    run("generate", dir.path(), &["--prefs", "40", "--seeds", "0..2"]);
    for k in 0..2 {
        let data = dir.path().join(format!("grid-nav/data/seed{k}"));
        assert_eq!(lines(&data.join("preferences.jsonl")), 40);
        assert!(data.join("expert.jsonl").exists() && data.join("behavior.jsonl").exists());
        let head = fs::read_to_string(data.join("preferences.jsonl")).unwrap();
        assert!(head.starts_with("# {\"config\":"));
        assert!(head.lines().next().unwrap().contains("\"version\":\"spw "));
    }
}

#[test]
fn pipeline_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for out in [a.path(), b.path()] {
        for sub in ["generate", "train", "evaluate"] {
            run(sub, out, &["--method", "rd", "--prefs", "30", "--seeds", "0,1"]);
        }
    }
    for f in ["metrics.csv", "summary.csv", "seed0/metrics.json", "seed1/credit.csv", "seed1/train_log.json"] {
        let x = fs::read(a.path().join("grid-nav/rd").join(f)).unwrap();
        let y = fs::read(b.path().join("grid-nav/rd").join(f)).unwrap();
        assert_eq!(x, y, "{f} differs");
    }
    let log = fs::read_to_string(a.path().join("grid-nav/rd/seed0/train_log.json")).unwrap();
    assert!(log.contains("\"rd_lambda\": 1.0"));
}

#[test]
fn summary_has_mean_and_std() {
    let dir = tempfile::tempdir().unwrap();
    let seeds = ["--seeds", "0..5", "--prefs", "30"];
    run("generate", dir.path(), &seeds);
    let trained = run("train", dir.path(), &seeds);
    assert_eq!(String::from_utf8_lossy(&trained.stdout).lines().count(), 5);
    run("evaluate", dir.path(), &seeds);
    let text = fs::read_to_string(dir.path().join("grid-nav/spw/summary.csv")).unwrap();
    let mut rows = text.lines().filter(|l| !l.starts_with('#'));
    assert_eq!(rows.next(), Some("task,method,metric,mean,std,n"));
    let success = rows.find(|r| r.contains(",success_rate,")).unwrap();
    assert!(success.ends_with(",5"));
}

#[test]
fn ablation_and_comparison_tables() {
    let dir = tempfile::tempdir().unwrap();
    let o = run("ablate-tau", dir.path(), &["--seeds", "0,1", "--prefs", "30"]);
    assert_eq!(String::from_utf8_lossy(&o.stdout).lines().count(), 5);
    let table = dir.path().join("grid-nav/ablate-tau/table.csv");
    assert_eq!(lines(&table), 1 + 5 * 2);
    let inf = fs::read(dir.path().join("grid-nav/spw-tauinf/seed1/train_log.json")).unwrap();

    run("compare", dir.path(), &["--seeds", "0,1", "--prefs", "30", "--compare.methods", "mr,seabo"]);
    let mr = fs::read(dir.path().join("grid-nav/mr/seed1/train_log.json")).unwrap();
    let strip = |b: Vec<u8>| String::from_utf8(b).unwrap().split_once("\"log\"").unwrap().1.to_string();
    assert_eq!(strip(inf), strip(mr));
    let credit = fs::read_to_string(dir.path().join("grid-nav/compare/credit_seed0.csv")).unwrap();
    assert!(credit.lines().any(|l| l == "step,gt,mr,seabo"));
    assert!(dir.path().join("grid-nav/compare/comparison.json").exists());
}

#[test]
fn errors_exit_nonzero_with_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    for args in [
        vec!["evaluate", "--out", out],
        vec!["train", "--out", out, "--method", "ppo"],
        vec!["generate", "--out", out, "--colour", "red"],
        vec!["generate", "--out", out, "--seeds", ""],
        vec!["generate", "--config", "/nonexistent/run.cfg"],
    ] {
        let o = spw(&args);
        assert!(!o.status.success(), "{args:?} succeeded");
        assert!(!o.stderr.is_empty());
    }
}

#[test]
fn config_file_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "tau = 2\ndata.n_preferences = 100\n").unwrap();
    let o = spw(&["config", "--config", cfg.to_str().unwrap(), "--tau", "0.5"]);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("tau = 0.5\n"));
    assert!(text.contains("data.n_preferences = 100\n"));
}
