use std::path::Path;
use std::process::Command;

use serde_json::Value;
use vvo_cli::{cmd_generate, GenerateConfig};

fn vvo(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_vvo")).args(args).output().expect("binary runs");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn data(dir: &Path) -> vvo_cli::GeneratedFiles {
    cmd_generate(&GenerateConfig { out: dir.to_path_buf(), days: 10, test_days: 2, seed: 5, tap_step: 0.02, ..Default::default() })
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn small_optimize<'a>(f: &'a vvo_cli::GeneratedFiles, out: &'a str) -> Vec<&'a str> {
    vec![
        "optimize", "--grid", s(&f.grid), "--loads", s(&f.loads), "--wind", s(&f.wind), "--horizon", "4",
        "--step-hours", "6", "--states", "2", "--equipment", "cap,ultc", "--gap", "1e-2", "--window", "10",
        "--out", out,
    ]
}

#[test]
fn missing_wind_file_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let f = data(dir.path());
    let (code, _, err) = vvo(&["optimize", "--grid", s(&f.grid), "--loads", s(&f.loads), "--wind", "/nonexistent/wind.csv"]);
    assert_eq!(code, 4);
    assert!(err.contains("file not found"), "{err}");
}

#[test]
fn odd_budget_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let f = data(dir.path());
    let out = dir.path().join("o");
    let (code, _, err) = vvo(&[
        "optimize", "--grid", s(&f.grid), "--loads", s(&f.loads), "--wind", s(&f.wind), "--budget", "3", "--out", s(&out),
    ]);
    assert_eq!(code, 4);
    assert!(err.contains("even number"), "{err}");
    assert!(!out.exists());
}

#[test]
fn bad_flags_exit_with_input_code() {
    assert_eq!(vvo(&["optimize", "--no-such-flag"]).0, 4);
    assert_eq!(vvo(&["--help"]).0, 0);
}

fn strip_timestamp(text: &str) -> Value {
    let mut v: Value = serde_json::from_str(text).unwrap();
    v.as_object_mut().unwrap().remove("timestamp");
    v
}

#[test]
fn optimize_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let f = data(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let (code, _, err) = vvo(&small_optimize(&f, s(&a)));
    assert_eq!(code, 0, "{err}");
    assert_eq!(vvo(&small_optimize(&f, s(&b))).0, 0);
    let read = |d: &Path, n: &str| std::fs::read_to_string(d.join(n)).unwrap();
    assert_eq!(read(&a, "schedule.json"), read(&b, "schedule.json"));
    let (ra, rb) = (strip_timestamp(&read(&a, "report.json")), strip_timestamp(&read(&b, "report.json")));
    let mut ra_cfg = ra.clone();
    let mut rb_cfg = rb.clone();
    ra_cfg["config"]["out"] = Value::Null;
    rb_cfg["config"]["out"] = Value::Null;
    assert_eq!(ra_cfg, rb_cfg);
    assert_eq!(ra["solve"]["status"], "optimal");
    let gap = ra["solve"]["gap"].as_f64().unwrap();
    assert!(gap <= 1e-2);
}

#[test]
fn evaluate_writes_metrics_and_beats_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let f = data(dir.path());
    let opt = dir.path().join("opt");
    let base = dir.path().join("base");
    assert_eq!(vvo(&small_optimize(&f, s(&opt))).0, 0);
    let mut args = small_optimize(&f, s(&base));
    let k = args.iter().position(|a| *a == "cap,ultc").unwrap();
    args[k] = "none";
    assert_eq!(vvo(&args).0, 0);

    let eval = |sched: &Path, out: &Path| {
        let (code, _, err) = vvo(&[
            "evaluate", "--grid", s(&f.grid), "--schedule", s(sched), "--loads", s(f.actual_loads.as_ref().unwrap()),
            "--wind", s(f.actual_wind.as_ref().unwrap()), "--out", s(out),
        ]);
        assert_eq!(code, 0, "{err}");
        let m: Value = serde_json::from_str(&std::fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
        let csv = std::fs::read_to_string(out.join("hourly.csv")).unwrap();
        assert!(csv.starts_with("day,hour,converged,loss_kw,vmin,vmax,spread"));
        assert_eq!(csv.lines().count(), 1 + 2 * 24);
        m["mean_loss_kw"].as_f64().unwrap()
    };
    let with = eval(&opt.join("schedule.json"), &dir.path().join("ev1"));
    let without = eval(&base.join("schedule.json"), &dir.path().join("ev2"));
    assert!(with < without, "{with} vs {without}");
}

#[test]
fn evaluate_rejects_too_many_modules() {
    let dir = tempfile::tempdir().unwrap();
    let f = data(dir.path());
    let opt = dir.path().join("opt");
    assert_eq!(vvo(&small_optimize(&f, s(&opt))).0, 0);
    let path = opt.join("schedule.json");
    let mut sched: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    sched["capacitor_modules"][0][0] = Value::from(9);
    std::fs::write(&path, sched.to_string()).unwrap();
    let (code, _, err) = vvo(&[
        "evaluate", "--grid", s(&f.grid), "--schedule", s(&path), "--loads", s(f.actual_loads.as_ref().unwrap()),
        "--wind", s(f.actual_wind.as_ref().unwrap()), "--out", s(&dir.path().join("ev")),
    ]);
    assert_eq!(code, 4);
    assert!(err.contains("invalid schedule"), "{err}");
}

#[test]
fn powerflow_reports_a_comparison() {
    let dir = tempfile::tempdir().unwrap();
    let f = data(dir.path());
    let out = dir.path().join("pf.json");
    let (code, _, err) = vvo(&["powerflow", "--grid", s(&f.grid), "--loads", s(&f.loads), "--day", "2", "--tap", "-1", "--out", s(&out)]);
    assert_eq!(code, 0, "{err}");
    let r: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    let mean = r["comparison"]["mean_abs_dv"].as_f64().unwrap();
    let max = r["comparison"]["max_abs_dv"].as_f64().unwrap();
    assert!(mean > 0.0 && mean <= max && max < 5e-3);
    assert!((r["tap_ratio"].as_f64().unwrap() - 0.98).abs() < 1e-12);
}

#[test]
fn wind_estimation_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let f = data(dir.path());
    let out = dir.path().join("m.json");
    assert_eq!(vvo(&["estimate-wind", "--wind", s(&f.wind), "--states", "10", "--out", s(&out)]).0, 0);
    let m: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    let levels: Vec<f64> = m["levels"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert_eq!(levels.len(), 10);
    assert!(levels.windows(2).all(|w| w[0] < w[1]));

    // A calm series that rarely changes bin gives a near-identity matrix.
    let calm = dir.path().join("calm.csv");
    let mut text = String::from("timestamp,power_kw\n");
    for h in 0..400 {
        let kw = if h < 200 { 150.0 } else { 650.0 };
        text.push_str(&format!("d{:03}h{:02},{kw}\n", h / 24 + 1, h % 24 + 1));
    }
    std::fs::write(&calm, text).unwrap();
    let out2 = dir.path().join("calm.json");
    let (code, _, err) = vvo(&["estimate-wind", "--wind", s(&calm), "--states", "4", "--out", s(&out2)]);
    assert_eq!(code, 0, "{err}");
    let m: Value = serde_json::from_str(&std::fs::read_to_string(&out2).unwrap()).unwrap();
    for i in [0usize, 2] {
        assert!(m["matrix"][i][i].as_f64().unwrap() > 0.99);
    }
}
