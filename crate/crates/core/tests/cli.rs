use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_evar-bai"))
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!("{e}: {}", String::from_utf8_lossy(&out.stdout));
    })
}

fn stderr_error(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().expect("diagnostic line");
    let v: Value = serde_json::from_str(line).unwrap();
    v["error"].clone()
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = TempDir::new().unwrap();
        write(dir.path(), "dist.json", "[[0.1, 0.5], [0.9, 0.5]]");
        write(
            dir.path(),
            "inst.json",
            r#"[{"bernoulli": 0.2}, {"bernoulli": 0.8}]"#,
        );
        write(
            dir.path(),
            "tie.json",
            r#"{"arms": [{"bernoulli": 0.4}, {"bernoulli": 0.4}]}"#,
        );
        Self { dir }
    }

    fn path(&self, name: &str) -> String {
        self.dir.path().join(name).to_str().unwrap().to_string()
    }
}

#[test]
fn evar_reports_value_regime_minimizer() {
    let f = Fixture::new();
    let out = run(&[
        "evar",
        "--dist",
        &f.path("dist.json"),
        "--alpha",
        "0.1",
        "--oracle",
    ]);
    assert!(out.status.success());
    let v = stdout_json(&out);
    assert_eq!(v["regime"], "interior");
    let value = v["value"].as_f64().unwrap();
    assert!(v["minimizer"].as_f64().unwrap() > 0.0);
    assert!((value - v["oracle"]["evar_grid"].as_f64().unwrap()).abs() < 1e-6);

    write(f.dir.path(), "point.json", "[[0.4, 1.0]]");
    let v = stdout_json(&run(&[
        "evar",
        "--dist",
        &f.path("point.json"),
        "--alpha",
        "0.5",
    ]));
    assert_eq!(v["regime"], "boundary");
    assert_eq!(v["minimizer"], "infinite");
    assert_eq!(v["value"].as_f64().unwrap(), 0.4);
}

#[test]
fn klinf_emits_value_dual_primal() {
    let f = Fixture::new();
    for (side, nu) in [("upper", "0.9"), ("lower", "0.3")] {
        let out = run(&[
            "klinf",
            "--side",
            side,
            "--dist",
            &f.path("dist.json"),
            "--nu",
            nu,
            "--alpha",
            "0.1",
        ]);
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        let v = stdout_json(&out);
        assert!(v["value"].as_f64().unwrap() > 0.0);
        assert!(v["dual"].is_object());
        let primal = v["primal"].as_array().unwrap();
        let total: f64 = primal.iter().map(|a| a[1].as_f64().unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-9);
    }
}

#[test]
fn oracle_reports_time_and_bound() {
    let f = Fixture::new();
    let out = run(&[
        "oracle",
        "--instance",
        &f.path("inst.json"),
        "--alpha",
        "0.2",
        "--delta",
        "0.1",
    ]);
    assert!(out.status.success());
    let v = stdout_json(&out);
    let t = v["T"].as_f64().unwrap();
    let w: Vec<f64> = v["weights"]
        .as_array()
        .unwrap()
        .iter()
        .map(|x| x.as_f64().unwrap())
        .collect();
    assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    let lb = v["lower_bound"].as_f64().unwrap();
    assert!((lb - (1.0f64 / 0.4).ln() / t).abs() < 1e-9);
    assert_eq!(v["per_alternative"].as_array().unwrap().len(), 1);
}

#[test]
fn config_errors_exit_two_and_name_the_key() {
    let f = Fixture::new();
    let out = run(&["evar", "--dist", &f.path("dist.json"), "--alpha", "1.2"]);
    assert_eq!(out.status.code(), Some(2));
    let e = stderr_error(&out);
    assert_eq!(e["kind"], "config");
    assert_eq!(e["key"], "alpha");

    let cfg = write(
        f.dir.path(),
        "bad.json",
        r#"{"instance": [{"bernoulli": 0.2}, {"bernoulli": 0.8}], "alpha": 0.2, "delta": 0.1, "trails": 3}"#,
    );
    let out = run(&["mc", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_error(&out)["message"]
        .as_str()
        .unwrap()
        .contains("trails"));

    let out = run(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_error(&out)["kind"], "usage");
}

#[test]
fn tied_instance_exits_three_for_oracle() {
    let f = Fixture::new();
    let out = run(&[
        "oracle",
        "--instance",
        &f.path("tie.json"),
        "--alpha",
        "0.2",
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(stderr_error(&out)["kind"], "degenerate_instance");
}

#[test]
fn horizon_cap_exits_four() {
    let f = Fixture::new();
    let cfg = write(
        f.dir.path(),
        "cap.json",
        r#"{"instance": [{"bernoulli": 0.4}, {"bernoulli": 0.4}], "alpha": 0.2, "delta": 0.1, "horizon_cap": 60}"#,
    );
    let out = run(&["run", "--config", cfg.to_str().unwrap(), "--seed", "3"]);
    assert_eq!(out.status.code(), Some(4));
    let v = stdout_json(&out);
    assert_eq!(v["tau"], 60);
    assert_eq!(v["trajectory_summary"]["stopped"], false);
    assert!(v["recommended"].is_null());
}

#[test]
fn run_matches_single_trial_mc() {
    let f = Fixture::new();
    let jsonl = f.path("trials.jsonl");
    let inst = f.path("inst.json");
    let out = run(&[
        "mc",
        "--instance",
        &inst,
        "--alpha",
        "0.2",
        "--delta",
        "0.1",
        "--trials",
        "1",
        "--seed",
        "9",
        "--out",
        &jsonl,
    ]);
    assert!(out.status.success());
    let line = std::fs::read_to_string(&jsonl).unwrap();
    let rec: Value = serde_json::from_str(line.trim()).unwrap();
    let seed = rec["seed"].as_u64().unwrap().to_string();
    let out = run(&[
        "run",
        "--instance",
        &inst,
        "--alpha",
        "0.2",
        "--delta",
        "0.1",
        "--seed",
        &seed,
    ]);
    assert!(out.status.success());
    let single = stdout_json(&out);
    assert_eq!(single["tau"], rec["tau"]);
    assert_eq!(single["recommended"], rec["recommended"]);
    assert_eq!(single["trajectory_summary"]["counts"], rec["counts"]);

    let csv = String::from_utf8(out_stdout(&[
        "mc",
        "--instance",
        &inst,
        "--alpha",
        "0.2",
        "--delta",
        "0.1",
        "--trials",
        "1",
        "--seed",
        "9",
    ]))
    .unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "delta,trials,errors,error_rate,mean_tau,std_tau,T,lower_bound,ratio"
    );
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row[4].parse::<f64>().unwrap(), rec["tau"].as_f64().unwrap());
}

fn out_stdout(args: &[&str]) -> Vec<u8> {
    let out = run(args);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out.stdout
}

#[test]
fn sweep_rejects_single_delta_and_emits_table() {
    let f = Fixture::new();
    let inst = f.path("inst.json");
    let out = run(&[
        "sweep",
        "--instance",
        &inst,
        "--alpha",
        "0.2",
        "--delta",
        "0.1",
        "--trials",
        "2",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_error(&out)["key"], "delta");

    let csv = String::from_utf8(out_stdout(&[
        "sweep",
        "--instance",
        &inst,
        "--alpha",
        "0.2",
        "--delta",
        "0.2,0.1",
        "--trials",
        "3",
        "--jobs",
        "2",
    ]))
    .unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "delta,mean_tau,lower_bound,ratio");
    assert_eq!(lines.len(), 3);
    for l in &lines[1..] {
        let ratio: f64 = l.rsplit(',').next().unwrap().parse().unwrap();
        assert!(ratio.is_finite() && ratio > 0.0);
    }
}

#[test]
fn help_exits_zero() {
    let out = run(&["--help"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    for sub in ["evar", "klinf", "oracle", "run", "mc", "sweep"] {
        assert!(text.contains(sub));
    }
}
