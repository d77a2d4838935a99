use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn rhostab(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rhostab"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn json_out(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).expect("stdout is JSON")
}

fn put(dir: &Path, name: &str, text: &str) {
    fs::write(dir.join(name), text).unwrap();
}

#[test]
fn certify_passivity_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    put(dir.path(), "h.json", r#"{"tf": {"num": [1, 0], "den": [1, -1]}}"#);
    let o = rhostab(&["certify", "h.json", "--rho", "1.1", "--kind", "passivity"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let doc = json_out(&o);
    assert!((doc["delta"].as_f64().unwrap() - 1.1 / 2.1).abs() < 1e-6);

    let o = rhostab(&["certify", "h.json", "--rho", "1"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(json_out(&o)["analytic"], Value::Bool(false));

    put(dir.path(), "bad.json", r#"{"tf": {"num": [1], "den": [0, 1]}}"#);
    let o = rhostab(&["certify", "bad.json"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(!o.stderr.is_empty());
}

#[test]
fn certify_other_kinds() {
    let dir = tempfile::tempdir().unwrap();
    put(dir.path(), "d.json", r#"{"ss": {"A": [[0]], "B": [[1]], "C": [[1]], "D": [[0]]}}"#);
    let o = rhostab(&["certify", "d.json", "--rho", "2", "--kind", "gain"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    assert!((json_out(&o)["gamma"].as_f64().unwrap() - 0.5).abs() < 1e-12);

    put(dir.path(), "k.json", r#"{"tf": {"num": [2], "den": [1]}}"#);
    let o = rhostab(&["certify", "k.json", "--kind", "output-passivity"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    assert!((json_out(&o)["delta"].as_f64().unwrap() - 0.5).abs() < 1e-9);

    let o = rhostab(&["certify", "k.json", "--kind", "spr", "--offset", "2.5"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn loop_zero_blocks_pass_inputs_through() {
    let dir = tempfile::tempdir().unwrap();
    put(
        dir.path(),
        "z.json",
        r#"{"h1": "zero", "h2": "zero", "rho": 1.0, "horizon": 32,
            "inputs": [{"u1": {"kind": "gaussian", "seed": 1}, "u2": {"kind": "gaussian", "seed": 2}}]}"#,
    );
    let o = rhostab(&["loop", "z.json", "--out", "res"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let doc = json_out(&o);
    assert_eq!(doc["verdict"], "s_stable");
    assert_eq!(doc["analysis"]["gain1"]["gamma"], 0.0);
    let trace = fs::read_to_string(dir.path().join("res/trace_0.csv")).unwrap();
    let u1 = rhostab::generators::InputSpec::Gaussian { seed: 1, std: 1.0, decay: 0.99 }
        .generate(0, 32, 1)
        .unwrap();
    for (line, v) in trace.lines().skip(1).zip(u1.as_slice()) {
        let e1: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert_eq!(e1, *v);
    }
    assert!(dir.path().join("res/manifest.json").exists());
}

#[test]
fn loop_small_gain_and_ill_posed() {
    let dir = tempfile::tempdir().unwrap();
    // γ1 = 1.5, γ2 = 0.5, product 0.75
    put(
        dir.path(),
        "sg.json",
        r#"{"h1": {"static": {"map": "linear", "gain": 1.5}},
            "h2": {"tf": {"num": [0.5], "den": [1]}},
            "rho": 1.0, "horizon": 128,
            "inputs": [{"u1": {"kind": "gaussian", "seed": 4}}]}"#,
    );
    let o = rhostab(&["loop", "sg.json"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let doc = json_out(&o);
    assert_eq!(doc["verdict"], "s_stable");
    assert_eq!(doc["analysis"]["small_gain"], "s_stable");
    assert!(dir.path().join("out/verdicts.json").exists());

    put(
        dir.path(),
        "ill.json",
        r#"{"h1": {"static": {"map": "tanh", "gain": 1}},
            "h2": {"static": {"map": "saturation", "level": 1}},
            "rho": 1.0, "inputs": [{"u1": {"kind": "impulse"}}]}"#,
    );
    let o = rhostab(&["loop", "ill.json"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("ill-posed algebraic loop"));
}

#[test]
fn loop_horizon_flag_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    put(
        dir.path(),
        "p.json",
        r#"{"h1": {"tf": {"num": [1, 0], "den": [1, -1]}},
            "h2": {"static": {"map": "saturation", "level": 1.0}},
            "rho": 1.1,
            "inputs": [{"u1": {"kind": "gaussian", "seed": 9}, "u2": {"kind": "step_decay"}}]}"#,
    );
    let a = rhostab(&["loop", "p.json", "--horizon", "300", "--out", "a"], dir.path());
    let b = rhostab(&["loop", "p.json", "--horizon", "300", "--out", "b"], dir.path());
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    for f in ["trace_0.csv", "verdicts.json", "manifest.json"] {
        let x = fs::read(dir.path().join("a").join(f)).unwrap();
        let y = fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(x, y, "{f}");
    }
    let trace = fs::read_to_string(dir.path().join("a/trace_0.csv")).unwrap();
    assert_eq!(trace.lines().count(), 301);
    assert_eq!(json_out(&a)["verdict"], "s_stable");
}

#[test]
fn identify_examples() {
    let dir = tempfile::tempdir().unwrap();
    put(
        dir.path(),
        "stable.json",
        r#"{"plant": {"a": [-0.5], "b": [1.0]}, "scheme": "equation_error", "steps": 500, "seed": 3}"#,
    );
    let o = rhostab(&["identify", "stable.json", "--out", "s"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let doc = json_out(&o);
    assert!(doc["final_error"].as_f64().unwrap() < 1e-6);
    assert_eq!(doc["theta_trajectory_ref"], "theta.csv");
    let csv = fs::read_to_string(dir.path().join("s/theta.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("t,a1,b1,error"));
    assert_eq!(csv.lines().count(), 501);

    put(
        dir.path(),
        "integ.json",
        r#"{"plant": {"a": [-1.0], "b": [1.0]}, "scheme": "equation_error", "rho": 1.05, "steps": 1000, "seed": 5}"#,
    );
    let o = rhostab(&["identify", "integ.json", "--out", "i"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let doc = json_out(&o);
    assert_eq!(doc["spr_gate"]["verdict"], true);
    assert_eq!(doc["overflow"], false);
    assert!(doc["max_abs_estimate"].as_f64().unwrap() < 10.0);

    put(
        dir.path(),
        "div.json",
        r#"{"plant": {"a": [-1.5], "b": [1.0]}, "scheme": "equation_error", "rho": 1.0, "steps": 4000, "seed": 5}"#,
    );
    let o = rhostab(&["identify", "div.json", "--out", "d"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let doc = json_out(&o);
    assert_eq!(doc["overflow"], true);
    let rows = fs::read_to_string(dir.path().join("d/theta.csv")).unwrap().lines().count() - 1;
    assert_eq!(rows as u64, doc["steps_completed"].as_u64().unwrap());
}

#[test]
fn identify_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    put(
        dir.path(),
        "n.json",
        r#"{"plant": {"a": [-1.2, 0.5], "b": [0.3], "d": 1}, "scheme": "output_error",
            "lambda2": 0.5, "rho": 1.0, "steps": 300, "noise_std": 0.01, "seed": 17}"#,
    );
    let a = rhostab(&["identify", "n.json", "--out", "a"], dir.path());
    let b = rhostab(&["identify", "n.json", "--out", "b"], dir.path());
    assert_eq!(a.stdout, b.stdout);
    let x = fs::read(dir.path().join("a/theta.csv")).unwrap();
    let y = fs::read(dir.path().join("b/theta.csv")).unwrap();
    assert_eq!(x, y);
}

#[test]
fn version_and_malformed_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let o = rhostab(&["version"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("rhostab "));
    put(dir.path(), "junk.json", "{not json");
    for cmd in ["certify", "loop", "identify"] {
        let o = rhostab(&[cmd, "junk.json"], dir.path());
        assert_eq!(o.status.code(), Some(1), "{cmd}");
    }
    let o = rhostab(&["certify", "missing.json"], dir.path());
    assert_eq!(o.status.code(), Some(1));
}
