use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const SPEC: &str = "channels = 3\nlookback = 12\nhorizon = 4\nsigma = 1.0\ndiag = 0.7\ncoupling = 1 0 0.9\n";

fn dualpath(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dualpath")).args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// A small synthetic run config in a fresh directory.
fn setup(extra: &str) -> (TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("tiny.spec"), SPEC).unwrap();
    let conf = dir.path().join("run.conf");
    fs::write(
        &conf,
        format!(
            "data = synth:tiny.spec\nsynth_length = 400\nlookback = 12\nhorizon = 4\nd_model = 8\nheads = 2\n\
             layers = 1\nd_ff = 8\nbatch = 16\nepochs = 2\npatience = 2\nseed = 5\n{extra}"
        ),
    )
    .unwrap();
    (dir, conf)
}

fn run_in(dir: &Path, cmd: &str, conf: &Path, out: &str) -> Output {
    let out = dir.join(out);
    dualpath(&[cmd, "--config", conf.to_str().unwrap(), "--out", out.to_str().unwrap()])
}

#[test]
fn missing_data_file_exits_2_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("run.conf");
    fs::write(&conf, "data = nowhere/ETTh1.csv\n").unwrap();
    let o = run_in(dir.path(), "train", &conf, "out");
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("nowhere/ETTh1.csv"), "{}", stderr(&o));
}

#[test]
fn unknown_config_key_exits_1_and_names_it() {
    let (dir, conf) = setup("warmup = 3\n");
    let o = run_in(dir.path(), "train", &conf, "out");
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("warmup"), "{}", stderr(&o));
}

#[test]
fn missing_config_file_exits_1() {
    let o = dualpath(&["ablate", "--config", "/definitely/not/here.conf"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn malformed_spec_exits_1_with_line() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("bad.spec");
    fs::write(&spec, "channels = 2\nlookback = 4\nhorizon = 2\ndiag = lots\n").unwrap();
    let o = run_in(dir.path(), "synth-verify", &spec, "out");
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 4"), "{}", stderr(&o));
}

#[test]
fn synth_verify_on_shipped_spec_passes() {
    let dir = tempfile::tempdir().unwrap();
    let spec = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/bivariate.spec");
    let o = run_in(dir.path(), "synth-verify", &spec, "out");
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let csv = fs::read_to_string(dir.path().join("out/verdicts.csv")).unwrap();
    assert!(csv.starts_with("check,estimate,reference,std_error,verdict"));
    assert!(!csv.contains(",fail"));
}

#[test]
fn noiseless_spec_is_not_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("quiet.spec");
    fs::write(&spec, "channels = 2\nlookback = 4\nhorizon = 4\nsigma = 0\ndiag = 0.5\n").unwrap();
    let o = run_in(dir.path(), "synth-verify", &spec, "out");
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("out/verdicts.csv")).unwrap();
    assert!(!csv.contains("NaN"), "{csv}");
}

#[test]
fn training_twice_gives_identical_files() {
    let (dir, conf) = setup("");
    for out in ["a", "b"] {
        let o = run_in(dir.path(), "train", &conf, out);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    for file in ["checkpoint.txt", "metrics.csv", "manifest.txt"] {
        let a = fs::read(dir.path().join("a").join(file)).unwrap();
        let b = fs::read(dir.path().join("b").join(file)).unwrap();
        assert_eq!(a, b, "{file} differs");
    }
}

#[test]
fn seed_flag_changes_the_run() {
    let (dir, conf) = setup("");
    let c = conf.to_str().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    dualpath(&["train", "--config", c, "--out", a.to_str().unwrap()]);
    dualpath(&["train", "--config", c, "--out", b.to_str().unwrap(), "--seed", "6"]);
    let ca = fs::read(a.join("checkpoint.txt")).unwrap();
    let cb = fs::read(b.join("checkpoint.txt")).unwrap();
    assert_ne!(ca, cb);
    assert!(fs::read_to_string(b.join("manifest.txt")).unwrap().contains("seed = 6"));
}

#[test]
fn evaluate_reproduces_training_metrics() {
    let (dir, conf) = setup("");
    assert_eq!(run_in(dir.path(), "train", &conf, "out").status.code(), Some(0));
    let o = run_in(dir.path(), "evaluate", &conf, "out");
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let numbers = |file: &str| -> Vec<String> {
        let text = fs::read_to_string(dir.path().join("out").join(file)).unwrap();
        let row = text.lines().nth(1).unwrap().to_string();
        row.split(',').skip(3).map(str::to_string).collect()
    };
    assert_eq!(numbers("metrics.csv"), numbers("evaluation.csv"));
}

#[test]
fn evaluate_without_checkpoint_exits_2() {
    let (dir, conf) = setup("");
    let o = run_in(dir.path(), "evaluate", &conf, "empty");
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("checkpoint.txt"), "{}", stderr(&o));
}

#[test]
fn ablate_and_diagnose_write_paired_outputs() {
    let (dir, conf) = setup("");
    assert_eq!(run_in(dir.path(), "ablate", &conf, "out").status.code(), Some(0));
    let table = fs::read_to_string(dir.path().join("out/ablation.csv")).unwrap();
    assert_eq!(table.lines().count(), 3);
    assert!(table.contains("w/ AO") && table.contains("w/o AO"));

    assert_eq!(run_in(dir.path(), "diagnose-gradvar", &conf, "out").status.code(), Some(0));
    let summary = fs::read_to_string(dir.path().join("out/gradvar_summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 5, "{summary}");
    assert!(dir.path().join("out/gradvar_step.csv").exists());
}

#[test]
fn diverging_run_exits_3() {
    let (dir, conf) = setup("mode = joint\nlr_ar = 1e300\n");
    let o = run_in(dir.path(), "train", &conf, "out");
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}
