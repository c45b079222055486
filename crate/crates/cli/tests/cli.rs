use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use bladeperf_core::hwspec::{scd_blade, SystemSpec};
use serde_json::{json, Value};
use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_bladeperf");

fn bladeperf(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn write(dir: &Path, name: &str, doc: &Value) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string_pretty(doc).unwrap()).unwrap();
    p
}

fn scenario() -> Value {
    json!({
        "system": "scd-blade",
        "model": "llama2-7b",
        "workload": { "phase": "inference", "batch": 1, "seq_len": 128, "gen_tokens": 4 },
        "mapping": { "tp": 8, "pp": 8, "dp": 1 }
    })
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn malformed_json_exits_2_with_position() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{\n  \"system\": ,\n}").unwrap();
    let o = bladeperf(&["run", p(&bad)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bad.json:2:13"), "{}", stderr(&o));
}

#[test]
fn missing_file_exits_2() {
    let o = bladeperf(&["run", "/nonexistent/scenario.json"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn device_mismatch_exits_3_naming_device_count() {
    let dir = TempDir::new().unwrap();
    let mut doc = scenario();
    doc["mapping"]["tp"] = json!(4);
    let f = write(dir.path(), "s.json", &doc);
    let o = bladeperf(&["run", p(&f)]);
    assert_eq!(o.status.code(), Some(3));
    let err = stderr(&o);
    assert!(err.contains("s.json") && err.contains("device_count"), "{err}");
}

#[test]
fn unknown_override_exits_3() {
    let dir = TempDir::new().unwrap();
    let f = write(dir.path(), "s.json", &scenario());
    let o = bladeperf(&["run", p(&f), "--set", "system.device.warp_drive=1"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("warp_drive"), "{}", stderr(&o));
}

#[test]
fn invalid_system_value_exits_3() {
    let dir = TempDir::new().unwrap();
    let f = write(dir.path(), "s.json", &scenario());
    let o = bladeperf(&["run", p(&f), "--set", "system.device.utilization_ceiling=2"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(
        stderr(&o).contains("system.device.utilization_ceiling"),
        "{}",
        stderr(&o)
    );
}

#[test]
fn run_is_byte_identical_across_invocations() {
    let dir = TempDir::new().unwrap();
    let f = write(dir.path(), "s.json", &scenario());
    let a = bladeperf(&["run", p(&f)]);
    let b = bladeperf(&["run", p(&f)]);
    assert!(a.status.success(), "{}", stderr(&a));
    assert_eq!(a.stdout, b.stdout);
    let doc: Value = serde_json::from_slice(&a.stdout).unwrap();
    assert!(doc["report"]["total_time"].as_f64().unwrap() > 0.0);
}

#[test]
fn run_writes_json_and_csv() {
    let dir = TempDir::new().unwrap();
    let f = write(dir.path(), "s.json", &scenario());
    let out = dir.path().join("out");
    let o = bladeperf(&["run", p(&f), "--out", p(&out), "--summary"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("s.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(csv.starts_with("system,model,phase"));
    let doc: Value = serde_json::from_str(&fs::read_to_string(out.join("s.json")).unwrap()).unwrap();
    assert_eq!(doc["report"]["kernels"], json!([]));
}

#[test]
fn single_point_sweep_matches_run_row() {
    let dir = TempDir::new().unwrap();
    let f = write(dir.path(), "s.json", &scenario());
    let plan = write(
        dir.path(),
        "plan.json",
        &json!({ "kind": "sweep", "base": { "path": "s.json" }, "axis": "workload.batch", "values": [1] }),
    );
    let run = bladeperf(&["run", p(&f), "--format", "csv"]);
    let sweep = bladeperf(&["sweep", p(&plan)]);
    assert!(
        run.status.success() && sweep.status.success(),
        "{}",
        stderr(&sweep)
    );
    assert_eq!(stdout(&run), stdout(&sweep));
}

#[test]
fn flags_build_a_scenario_without_a_file() {
    let o = bladeperf(&[
        "run",
        "--system",
        "scd-blade",
        "--model",
        "llama2-7b",
        "--workload",
        r#"{"phase":"inference","batch":1,"seq_len":128,"gen_tokens":4}"#,
        "--mapping",
        r#"{"tp":8,"pp":8,"dp":1}"#,
        "--format",
        "csv",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("scd-blade,llama2-7b,inference"));
}

#[test]
fn dump_preset_round_trips_the_scd_system() {
    let o = bladeperf(&["dump-preset", "scd-blade"]);
    assert!(o.status.success());
    let back: SystemSpec<f64> = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(back, scd_blade::<f64>());
}

#[test]
fn dump_preset_h100_and_models() {
    let h100: Value = serde_json::from_slice(&bladeperf(&["dump-preset", "h100-node"]).stdout).unwrap();
    assert_eq!(h100["device"]["peak_flops"]["bf16"], json!(0.9895e15));
    let o = bladeperf(&["dump-preset", "gpt3-76b"]);
    assert!(o.status.success());
    let m: bladeperf_core::workload::ModelSpec = serde_json::from_slice(&o.stdout).unwrap();
    let params = bladeperf_core::workload::param_count(&m) as f64;
    assert!((params / 76e9 - 1.0).abs() < 0.05, "{params}");
}

#[test]
fn dump_preset_unknown_lists_names() {
    let o = bladeperf(&["dump-preset", "tpu-v9"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("scd-blade") && stderr(&o).contains("llama2-7b"));
}

#[test]
fn comparing_a_scenario_with_itself_is_unit_speedup() {
    let dir = TempDir::new().unwrap();
    let f = write(dir.path(), "s.json", &scenario());
    let o = bladeperf(&["compare", p(&f), p(&f), "--format", "json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(rows[0]["speedup"], json!(1.0));
}

#[test]
fn validate_accepts_scenarios_plans_and_systems() {
    let dir = TempDir::new().unwrap();
    let f = write(dir.path(), "s.json", &scenario());
    let sys: Value = serde_json::from_slice(&bladeperf(&["dump-preset", "h100-node"]).stdout).unwrap();
    let sys = write(dir.path(), "sys.json", &sys);
    let plan = write(
        dir.path(),
        "plan.json",
        &json!({ "kind": "sweep", "base": { "path": "s.json" }, "axis": "workload.batch", "values": [1, 2, 4] }),
    );
    for (file, needle) in [(&f, "valid"), (&sys, "valid"), (&plan, "3 points")] {
        let o = bladeperf(&["validate", p(file)]);
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(stdout(&o).contains(needle), "{}", stdout(&o));
    }
}

#[test]
fn kv_fit_on_a_scenario() {
    let dir = TempDir::new().unwrap();
    let f = write(dir.path(), "s.json", &scenario());
    let o = bladeperf(&["kv-fit", p(&f), "--format", "json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(rows[0]["model"], json!("llama2-7b"));
    assert_eq!(rows[0]["fits"], json!(true));
}

#[test]
fn figures_writes_selected_csv() {
    let dir = TempDir::new().unwrap();
    let o = bladeperf(&["figures", "--out", p(dir.path()), "--only", "kv_fit"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("kv_fit.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(!dir.path().join("fig4.csv").exists());
}
