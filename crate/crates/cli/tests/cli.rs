use std::path::Path;
use std::process::{Command, Output};

fn esbsim(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_esbsim"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

const EXP: &str = "[sweep]\nseed = 1\nrounds = 2\nattempts = 40\n[config olcfg]\n[config crc8]\ncrc = 8\n";

#[test]
fn usage_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let o = esbsim(dir.path(), &["sweep", "--bogus"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    assert_eq!(code(&esbsim(dir.path(), &["teleport"])), 1);
    assert_eq!(code(&esbsim(dir.path(), &["sweep", "--workers", "0"])), 1);
    assert_eq!(code(&esbsim(dir.path(), &["sweep", "--interval", "d7d0"])), 1);
    assert_eq!(code(&esbsim(dir.path(), &["--help"])), 0);
    // nothing was written for rejected invocations
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn validation_and_io_errors() {
    let dir = tempfile::tempdir().unwrap();
    let o = esbsim(dir.path(), &["sweep", "--file", "missing.cfg"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing.cfg"));

    std::fs::write(dir.path().join("bad.cfg"), "[config a]\ncrc = 32\n").unwrap();
    let o = esbsim(dir.path(), &["sweep", "--file", "bad.cfg"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));

    assert_eq!(code(&esbsim(dir.path(), &["simulate", "--set", "sweep.nope=1"])), 1);
    assert_eq!(code(&esbsim(dir.path(), &["simulate", "--config", "nope"])), 1);
    assert_eq!(code(&esbsim(dir.path(), &["report", "--results", "nope.csv"])), 2);
    std::fs::write(dir.path().join("junk.csv"), "a,b\n1,2\n").unwrap();
    assert_eq!(code(&esbsim(dir.path(), &["report", "--results", "junk.csv"])), 1);
}

#[test]
fn calibrate_writes_pipeline_file() {
    let dir = tempfile::tempdir().unwrap();
    let o = esbsim(dir.path(), &["calibrate", "--targets", "486.30,293.07,185.86", "--out", "cal"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(dir.path().join("cal/pipeline.cfg")).unwrap();
    assert!(text.lines().any(|l| l == "radio_overhead = 149.36"), "{text}");
    assert!(String::from_utf8_lossy(&o.stdout).contains("149.36"));

    let o = esbsim(dir.path(), &["calibrate", "--targets", "100,200,300"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn report_reproduces_summary_exactly() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("exp.cfg"), EXP).unwrap();
    let o = esbsim(dir.path(), &["sweep", "--file", "exp.cfg", "--out", "run"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o = esbsim(dir.path(), &["report", "--results", "run/results.csv", "--out", "rep"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let read = |p: &str| std::fs::read(dir.path().join(p)).unwrap();
    assert_eq!(read("run/summary.json"), read("rep/summary.json"));
    assert_eq!(read("run/report.txt"), read("rep/report.txt"));
    let report = String::from_utf8(read("rep/report.txt")).unwrap();
    for label in ["D0-D7", "D2-D5", "D3-D4"] {
        assert!(report.lines().any(|l| l.starts_with(label)));
    }
}

#[test]
fn seed_flag_wins_and_runs_repeat() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("exp.cfg"), EXP).unwrap();
    let run = |out: &str, seed: &str| {
        let o = esbsim(dir.path(), &["sweep", "--file", "exp.cfg", "--seed", seed, "--out", out]);
        assert_eq!(code(&o), 0);
        std::fs::read_to_string(dir.path().join(out).join("results.csv")).unwrap()
    };
    let a = run("a", "42");
    let b = run("b", "42");
    let c = run("c", "43");
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert!(a.contains("# rng: chacha8, seed: 42\n"));
}

#[test]
fn simulate_and_compare_ble() {
    let dir = tempfile::tempdir().unwrap();
    let o = esbsim(dir.path(), &["simulate", "--attempts", "300", "--interval", "d2d5"]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("D2-D5"));
    assert!(dir.path().join("out/results.csv").exists());

    let o = esbsim(dir.path(), &["compare-ble", "--attempts", "2000", "--out", "cmp"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("cmp/compare.json")).unwrap()).unwrap();
    assert!(json["mean_ratio"].as_f64().unwrap() > 5.0);
    assert_eq!(json["esb"]["n"], json["ble"]["n"]);
}
