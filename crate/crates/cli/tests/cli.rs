//! Black-box tests of the `dynaguide` binary: help text, exit codes and the
//! single-step subcommand chain on the smoke preset.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_dynaguide");

fn dynaguide(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .current_dir(dir)
        .env_remove("DYNAGUIDE_CACHE")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

/// Compares against `tests/golden/<name>.txt`; with DYNAGUIDE_BLESS=1 the
/// file is rewritten instead.
fn assert_golden(name: &str, actual: &str) {
    let path = golden_dir().join(format!("{name}.txt"));
    if std::env::var_os("DYNAGUIDE_BLESS").is_some() {
        std::fs::create_dir_all(golden_dir()).unwrap();
        std::fs::write(&path, actual).unwrap();
        return;
    }
    let expected = std::fs::read_to_string(&path).unwrap_or_else(|_| panic!("missing golden file {}", path.display()));
    assert_eq!(actual, expected, "help text for {name} changed; rerun with DYNAGUIDE_BLESS=1 if intended");
}

#[test]
fn help_text_matches_golden_files() {
    let tmp = tempfile::tempdir().unwrap();
    let top = dynaguide(tmp.path(), &["--help"]);
    assert_eq!(code(&top), 0);
    assert_golden("help", &String::from_utf8(top.stdout).unwrap());
    for sub in ["simulate", "train-score", "train-disc", "sample", "forecast", "evaluate", "preset"] {
        let o = dynaguide(tmp.path(), &[sub, "--help"]);
        assert_eq!(code(&o), 0, "{sub}");
        assert_golden(&format!("help-{sub}"), &String::from_utf8(o.stdout).unwrap());
    }
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&dynaguide(tmp.path(), &["simulate", "--bogus", "--out", "x.stdg"])), 2);
    assert_eq!(code(&dynaguide(tmp.path(), &["frobnicate"])), 2);
    assert_eq!(code(&dynaguide(tmp.path(), &["preset", "smoke", "--out", "o", "--set", "novalue"])), 2);
}

#[test]
fn missing_input_file_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let o = dynaguide(tmp.path(), &["evaluate", "--truth", "nope.stdg", "--gen", "nope2.stdg", "--report", "r.json"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("nope.stdg"));
    let o = dynaguide(tmp.path(), &["simulate", "--config", "missing.cfg", "--out", "x.stdg"]);
    assert_eq!(code(&o), 3);
}

#[test]
fn invalid_configuration_exits_4() {
    let tmp = tempfile::tempdir().unwrap();
    let o = dynaguide(tmp.path(), &["simulate", "--preset", "smoke", "--set", "sim.grid=abc", "--out", "x.stdg"]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
    let o = dynaguide(tmp.path(), &["simulate", "--preset", "smoke", "--set", "sim.unknown=1", "--out", "x.stdg"]);
    assert_eq!(code(&o), 4);
    let o = dynaguide(tmp.path(), &["preset", "no-such-preset", "--out", "o"]);
    assert_eq!(code(&o), 4);
    std::fs::write(tmp.path().join("bad.cfg"), "sampler.steps = 0\n").unwrap();
    let o = dynaguide(tmp.path(), &["simulate", "--preset", "smoke", "--config", "bad.cfg", "--out", "x.stdg"]);
    assert_eq!(code(&o), 4);
    assert!(!tmp.path().join("x.stdg").exists());
}

#[test]
fn evaluate_rejects_mismatched_grids() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let a = dynaguide(d, &["-q", "simulate", "--preset", "smoke", "--out", "a.stdg"]);
    assert_eq!(code(&a), 0, "{}", stderr(&a));
    let b = dynaguide(d, &["-q", "simulate", "--preset", "smoke", "--set", "sim.grid=32", "--out", "b.stdg"]);
    assert_eq!(code(&b), 0, "{}", stderr(&b));
    let o = dynaguide(d, &["evaluate", "--preset", "smoke", "--truth", "a.stdg", "--gen", "b.stdg", "--report", "r.json"]);
    assert_eq!(code(&o), 4);
    let msg = stderr(&o);
    assert!(msg.contains("1x16x16") && msg.contains("1x32x32"), "{msg}");
    assert!(!d.join("r.json").exists());
}

#[test]
fn single_step_chain_on_smoke_preset() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let run = |args: &[&str]| {
        let mut full = vec!["-q"];
        full.extend_from_slice(args);
        full.extend_from_slice(&["--preset", "smoke"]);
        let o = dynaguide(d, &full);
        assert_eq!(code(&o), 0, "{args:?}: {}", stderr(&o));
        o
    };
    run(&["simulate", "--out", "work/data.stdg"]);
    run(&["train-score", "--mode", "uncond", "--data", "work/data.stdg", "--out", "work/score.stdg"]);
    run(&["train-score", "--mode", "cond", "--data", "work/data.stdg", "--out", "work/video.stdg"]);
    run(&["train-disc", "--m", "1", "--data", "work/data.stdg", "--out", "work/disc.stdg"]);
    run(&[
        "sample", "--score", "work/score.stdg", "--disc", "work/disc.stdg", "--data", "work/data.stdg", "--lambda", "14", "--steps", "5",
        "--out", "work/guided.stdg",
    ]);
    run(&["sample", "--score", "work/video.stdg", "--data", "work/data.stdg", "--guided", "off", "--out", "work/video-traj.stdg"]);
    run(&[
        "forecast", "--score", "work/score.stdg", "--disc", "work/disc.stdg", "--data", "work/data.stdg", "--forecasts", "2", "--members",
        "3", "--lead", "3", "--out", "work/ens.stdg",
    ]);
    run(&["evaluate", "--truth", "work/data.stdg", "--gen", "work/guided.stdg", "--report", "work/guided.json"]);
    run(&["evaluate", "--truth", "work/data.stdg", "--gen", "work/ens.stdg", "--report", "work/ens.txt"]);

    // Everything landed under the --out paths.
    let top: Vec<_> = std::fs::read_dir(d).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(top, vec![std::ffi::OsString::from("work")]);

    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("work/guided.json")).unwrap()).unwrap();
    let obj = report.as_object().unwrap();
    for key in ["provenance.config_hash", "provenance.input.gen", "provenance.input.truth", "report_hash", "acf.gen.lag1", "rmse.gen"] {
        assert!(obj.contains_key(key), "missing {key}");
    }
    let ens = std::fs::read_to_string(d.join("work/ens.txt")).unwrap();
    assert!(ens.contains("forecast.crps=["), "{ens}");
    assert!(d.join("work/guided-hovmoeller.stdg").exists());
    assert!(d.join("work/guided-bias.stdg").exists());

    // Guidance without a discriminator is a usage error.
    let o = dynaguide(d, &["sample", "--preset", "smoke", "--score", "work/score.stdg", "--data", "work/data.stdg", "--out", "work/x.stdg"]);
    assert_eq!(code(&o), 2);
}
