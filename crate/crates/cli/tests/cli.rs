//! End-to-end runs of the `dualsig` binary on small synthetic worlds.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dualsig::io::{dump, identity_file, verdicts};
use dualsig::Channel;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_dualsig"));
    c.env_remove("DUALSIG_CONFIG");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const TINY: [&str; 8] = ["--iterations", "4", "-N", "20", "-k", "5", "-m", "20"];

fn simulate(dir: &Path, name: &str, stream: &str, count: &str, delta: &str) -> PathBuf {
    let out = dir.join(name);
    ok(&[
        "simulate", "--out-dir", p(&out), "--classes", "3", "--count", count, "--dim", "8", "--seed", "5",
        "--stream", stream, "--delta", delta,
    ]);
    out
}

/// Train, test, calibration and evaluation worlds plus an uncalibrated identity.
struct Setup {
    _tmp: tempfile::TempDir,
    dir: PathBuf,
    train: PathBuf,
    identity: PathBuf,
    cal: PathBuf,
    eval: PathBuf,
}

fn setup() -> Setup {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().to_path_buf();
    let train = simulate(&dir, "train", "1", "30", "0.5").join("clean.fsig");
    let test = simulate(&dir, "test", "2", "30", "0.5").join("clean.fsig");
    let cal = simulate(&dir, "cal", "3", "6", "0.5");
    let eval = simulate(&dir, "eval", "4", "6", "0.5");
    let identity = dir.join("id.toml");
    let mut args = vec!["build-identity", "--train", p(&train), "--test", p(&test), "--out", p(&identity)];
    args.extend(TINY);
    ok(&args);
    Setup {
        _tmp: tmp,
        dir,
        train,
        identity,
        cal,
        eval,
    }
}

fn calibrate(s: &Setup, extra: &[&str]) -> String {
    let cal = s.cal.join("clean.fsig");
    let mut args = vec!["calibrate", "--identity", p(&s.identity), "--train", p(&s.train), "--clean", p(&cal)];
    args.extend(TINY);
    args.extend(extra);
    ok(&args)
}

#[test]
fn simulate_writes_counted_dumps() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("w");
    ok(&["simulate", "--out-dir", p(&out), "--classes", "2", "--count", "10", "--dim", "4"]);
    for name in ["clean.fsig", "adversarial.fsig"] {
        let d = dump::read_dump(out.join(name)).unwrap();
        assert_eq!(d.records.len(), 2 * 10 * 2);
        assert_eq!(d.feature_dim, 4);
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["samples"].as_array().unwrap().len(), 20);
}

#[test]
fn simulate_is_reproducible_and_zero_delta_is_clean() {
    let tmp = tempfile::tempdir().unwrap();
    let a = simulate(tmp.path(), "a", "1", "5", "0");
    let b = simulate(tmp.path(), "b", "1", "5", "0");
    let read = |p: PathBuf| std::fs::read(p).unwrap();
    assert_eq!(read(a.join("clean.fsig")), read(b.join("clean.fsig")));
    assert_eq!(read(a.join("adversarial.fsig")), read(a.join("clean.fsig")));
}

#[test]
fn simulate_rejects_bad_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("w");
    let bad = run(&["simulate", "--out-dir", p(&out), "--classes", "1"]);
    assert_eq!(code(&bad), 2);
    let unknown = run(&["simulate", "--out-dir", p(&out), "--bogus"]);
    assert_eq!(code(&unknown), 2);
}

#[test]
fn build_is_reproducible_and_honours_iterations() {
    let s = setup();
    let store = identity_file::read_identity(&s.identity).unwrap();
    assert!(store.identities().all(|i| i.p_values().len() == 4));
    assert!(store.calibration.is_none());
    let again = s.dir.join("again.toml");
    let test = s.dir.join("test/clean.fsig");
    let mut args = vec!["build-identity", "--train", p(&s.train), "--test", p(&test), "--out", p(&again)];
    args.extend(TINY);
    args.extend(["--threads", "1"]);
    let summary = ok(&args);
    assert!(summary.contains("3 classes") && summary.contains("4 iterations"), "{summary}");
    assert_eq!(std::fs::read(&s.identity).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn build_defaults_to_fifty_iterations() {
    let s = setup();
    let out = s.dir.join("full.toml");
    let test = s.dir.join("test/clean.fsig");
    ok(&["build-identity", "--train", p(&s.train), "--test", p(&test), "--out", p(&out), "-N", "20", "-k", "5"]);
    let store = identity_file::read_identity(&out).unwrap();
    assert!(store.identities().all(|i| i.p_values().len() == 50));
}

#[test]
fn missing_channel_is_named() {
    let s = setup();
    let raw_only = s.dir.join("raw_only.fsig");
    let d = dump::read_dump(&s.train).unwrap();
    let recs: Vec<_> = d.records.into_iter().filter(|r| r.channel == Channel::Raw).collect();
    dump::write_dump(&raw_only, d.feature_dim, &recs).unwrap();
    let out = run(&[
        "build-identity", "--train", p(&raw_only), "--test", p(&s.train), "--out", p(&s.dir.join("x.toml")),
    ]);
    assert_eq!(code(&out), 2);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("denoised"), "{err}");
}

#[test]
fn missing_file_is_an_input_error() {
    let out = run(&["build-identity", "--train", "/nonexistent.fsig", "--test", "/nonexistent.fsig", "--out", "/tmp/x"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn uncalibrated_identity_is_refused() {
    let s = setup();
    let clean = s.eval.join("clean.fsig");
    let before = std::fs::read(&s.identity).unwrap();
    let out = run(&[
        "detect", "--identity", p(&s.identity), "--train", p(&s.train), "--dump", p(&clean), "--sample-id", "24",
    ]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("no threshold present"));
    let log = s.dir.join("v.jsonl");
    let adv = format!("a={}", p(&s.eval.join("adversarial.fsig")));
    let out = run(&[
        "evaluate", "--identity", p(&s.identity), "--train", p(&s.train), "--clean", p(&clean), "--condition", &adv,
        "--report", p(&s.dir.join("r.json")), "--log", p(&log),
    ]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("no threshold present"));
    assert_eq!(std::fs::read(&s.identity).unwrap(), before);
}

#[test]
fn zero_margin_threshold_is_the_largest_logged_score() {
    let s = setup();
    let log = s.dir.join("cal.jsonl");
    let summary = calibrate(&s, &["--margin", "0", "--log", p(&log)]);
    let store = identity_file::read_identity(&s.identity).unwrap();
    let cal = store.calibration.unwrap();
    let logged = verdicts::read_verdicts(&log).unwrap();
    assert_eq!(logged.len(), 18);
    let max = logged.iter().map(|v| v.verdict.p_a).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(cal.threshold, max);
    assert_eq!(cal.margin, 0.0);
    assert!(logged.iter().all(|v| !v.verdict.is_adversarial));
    assert!(summary.contains(&format!("max {max}")), "{summary}");
    assert!(cal.threshold.is_finite() && cal.threshold > 0.0);
}

#[test]
fn calibration_overlap_is_flagged() {
    let s = setup();
    let same = s.cal.join("clean.fsig");
    let summary = calibrate(&s, &["--eval-dump", p(&same)]);
    assert!(summary.contains("overlap with evaluation set: yes"), "{summary}");
    let summary = calibrate(&s, &["--eval-dump", p(&s.eval.join("clean.fsig"))]);
    assert!(summary.contains("overlap with evaluation set: no"), "{summary}");
}

#[test]
fn detect_prints_one_verdict() {
    let s = setup();
    calibrate(&s, &[]);
    let clean = s.eval.join("clean.fsig");
    let id = dump::read_dump(&clean).unwrap().records[0].sample_id.to_string();
    let mut args = vec!["detect", "--identity", p(&s.identity), "--train", p(&s.train), "--dump", p(&clean), "--sample-id", &id];
    args.extend(TINY);
    let out = ok(&args);
    assert_eq!(out.lines().count(), 1);
    let v: dualsig::SampleVerdict = serde_json::from_str(out.trim()).unwrap();
    assert_eq!(v.sample_id.to_string(), id);
    assert!(!v.verdict.is_adversarial, "{v:?}");
    let missing = run(&["detect", "--identity", p(&s.identity), "--train", p(&s.train), "--dump", p(&clean), "--sample-id", "999999"]);
    assert_eq!(code(&missing), 2);
}

fn evaluate(s: &Setup, threads: &str, tag: &str) -> (PathBuf, PathBuf) {
    let clean = s.eval.join("clean.fsig");
    let adv = format!("shift={}", p(&s.eval.join("adversarial.fsig")));
    let (report, log) = (s.dir.join(format!("r{tag}.json")), s.dir.join(format!("v{tag}.jsonl")));
    let mut args = vec![
        "evaluate", "--identity", p(&s.identity), "--train", p(&s.train), "--clean", p(&clean), "--condition", &adv,
        "--report", p(&report), "--log", p(&log), "--threads", threads,
    ];
    args.extend(TINY);
    ok(&args);
    (report, log)
}

#[test]
fn evaluate_report_matches_log_and_threads() {
    let s = setup();
    calibrate(&s, &[]);
    let (r1, l1) = evaluate(&s, "1", "1");
    let (r4, l4) = evaluate(&s, "4", "4");
    assert_eq!(std::fs::read(&r1).unwrap(), std::fs::read(&r4).unwrap());
    assert_eq!(std::fs::read(&l1).unwrap(), std::fs::read(&l4).unwrap());

    let report = verdicts::read_report(&r1).unwrap();
    let log = verdicts::read_verdicts(&l1).unwrap();
    assert_eq!(log.len(), 36);
    let count = |cond: &str| {
        let rows: Vec<_> = log.iter().filter(|v| v.condition == cond).collect();
        let flagged = rows.iter().filter(|v| v.verdict.is_adversarial).count();
        (rows.len(), flagged)
    };
    let (n, f) = count("clean");
    assert_eq!((report.clean.samples, report.clean.flagged), (n, f));
    assert_eq!(report.clean_fpr, f as f64 / n as f64);
    let (n, f) = count("shift");
    let shift = &report.per_condition["shift"];
    assert_eq!((shift.samples, shift.flagged), (n, f));
    assert_eq!(shift.detection_rate, f as f64 / n as f64);
    // original dump ids survive the internal renumbering
    let ids: Vec<u32> = dump::read_dump(s.eval.join("clean.fsig")).unwrap().records.iter().map(|r| r.sample_id).collect();
    assert!(log.iter().all(|v| ids.contains(&v.sample_id)));
}

#[test]
fn evaluate_without_conditions_is_a_usage_error() {
    let s = setup();
    calibrate(&s, &[]);
    let clean = s.eval.join("clean.fsig");
    let out = run(&[
        "evaluate", "--identity", p(&s.identity), "--train", p(&s.train), "--clean", p(&clean),
        "--report", p(&s.dir.join("r.json")), "--log", p(&s.dir.join("v.jsonl")),
    ]);
    assert_eq!(code(&out), 2);
    assert!(!s.dir.join("r.json").exists());
}

#[test]
fn config_file_from_environment_is_applied_and_logged() {
    let s = setup();
    let cfg = s.dir.join("cfg.toml");
    std::fs::write(&cfg, "iterations = 3\nsample_size = 20\nsubset_size = 5\n").unwrap();
    let out = s.dir.join("env.toml");
    let test = s.dir.join("test/clean.fsig");
    let res = bin()
        .env("DUALSIG_CONFIG", &cfg)
        .args(["build-identity", "--train", p(&s.train), "--test", p(&test), "--out", p(&out)])
        .output()
        .unwrap();
    assert!(res.status.success());
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("\"iterations\":3"), "{err}");
    let store = identity_file::read_identity(&out).unwrap();
    assert!(store.identities().all(|i| i.p_values().len() == 3));

    std::fs::write(&cfg, "nonsense = 1\n").unwrap();
    let res = bin()
        .env("DUALSIG_CONFIG", &cfg)
        .args(["build-identity", "--train", p(&s.train), "--test", p(&test), "--out", p(&out)])
        .output()
        .unwrap();
    assert_eq!(code(&res), 2);
}
