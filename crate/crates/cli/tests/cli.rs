use std::fs;
use std::path::Path;

use lrb_cli::{run_cli, EXIT_CONFIG, EXIT_FAIL, EXIT_OK};
use serde_json::Value;

const SMALL: &str = r#"{
  "schema_version": 1,
  "scenarios": [
    {
      "id": "small",
      "design": { "n": 40, "p": 30, "kind": { "type": "iid_gaussian" } },
      "model": { "sparsity": 3, "magnitude": 1.0 },
      "noise": { "kind": "gaussian", "sigma": 0.5 },
      "lambda": { "rule": "universal_multiple", "multiple": 2.0 },
      "c_values": [3.0, 5.0],
      "replications": 60,
      "master_seed": 7
    }
  ]
}
"#;

struct Outcome {
    code: i32,
    stdout: String,
    stderr: String,
}

fn cli(args: &[&str]) -> Outcome {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("lrb").chain(args.iter().copied());
    let code = run_cli(argv, &mut out, &mut err);
    Outcome { code, stdout: String::from_utf8(out).unwrap(), stderr: String::from_utf8(err).unwrap() }
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn run_writes_records_and_summaries() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", SMALL);
    let out = tmp.path().join("out");
    let r = cli(&["run", "--config", &cfg, "--out-dir", out.to_str().unwrap()]);
    assert_eq!(r.code, EXIT_OK, "{}{}", r.stdout, r.stderr);
    assert!(r.stdout.contains("full_set"), "{}", r.stdout);
    assert!(out.join("small_records.csv").exists());
    assert!(out.join("small_summary.json").exists());
    let all = read_json(&out.join("summary.json"));
    assert_eq!(all.as_array().unwrap().len(), 1);
    assert_eq!(all[0]["scenario_id"], "small");
    assert_eq!(all[0]["per_c"].as_array().unwrap().len(), 2);
}

#[test]
fn c_at_two_with_containment_is_a_config_error_with_line() {
    let tmp = tempfile::tempdir().unwrap();
    let text = SMALL
        .replace("\"c_values\": [3.0, 5.0]", "\"c_values\": [2.0]")
        .replace("\"master_seed\": 7", "\"master_seed\": 7,\n      \"bounds\": [\"containment\"]");
    let cfg = write_config(tmp.path(), "c.json", &text);
    let r = cli(&["run", "--config", &cfg, "--out-dir", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(r.code, EXIT_CONFIG);
    assert!(r.stderr.contains("config error at line 5"), "{}", r.stderr);
    assert!(r.stderr.contains("c > 2"), "{}", r.stderr);
    assert!(!tmp.path().join("o").exists());
}

#[test]
fn malformed_json_reports_its_line() {
    let tmp = tempfile::tempdir().unwrap();
    let text = SMALL.replace("\"replications\": 60,", "\"replications\": 60");
    let cfg = write_config(tmp.path(), "c.json", &text);
    let r = cli(&["run", "--config", &cfg]);
    assert_eq!(r.code, EXIT_CONFIG);
    assert!(r.stderr.contains("config error at line 12"), "{}", r.stderr);
}

#[test]
fn output_is_identical_across_thread_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", SMALL);
    let mut files = Vec::new();
    for t in ["1", "4"] {
        let out = tmp.path().join(format!("t{t}"));
        let r = cli(&["run", "--config", &cfg, "--threads", t, "--out-dir", out.to_str().unwrap()]);
        assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
        files.push((fs::read(out.join("summary.json")).unwrap(), fs::read(out.join("small_records.csv")).unwrap()));
    }
    assert!(files[0] == files[1]);
}

#[test]
fn seed_override_changes_the_draws() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", SMALL);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert_eq!(cli(&["run", "--config", &cfg, "--out-dir", a.to_str().unwrap()]).code, EXIT_OK);
    assert_eq!(cli(&["run", "--config", &cfg, "--seed", "8", "--out-dir", b.to_str().unwrap()]).code, EXIT_OK);
    let (sa, sb) = (read_json(&a.join("summary.json")), read_json(&b.join("summary.json")));
    assert_eq!(sb[0]["master_seed"], 8);
    assert_ne!(sa[0]["per_c"][0]["dmse_hat"], sb[0]["per_c"][0]["dmse_hat"]);
}

#[test]
fn csv_and_json_records_agree_exactly() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", SMALL);
    let c = tmp.path().join("csv");
    let j = tmp.path().join("json");
    assert_eq!(cli(&["run", "--config", &cfg, "--out-dir", c.to_str().unwrap()]).code, EXIT_OK);
    let r = cli(&["run", "--config", &cfg, "--format", "json", "--out-dir", j.to_str().unwrap()]);
    assert_eq!(r.code, EXIT_OK);
    let records = read_json(&j.join("small_records.json"));
    let mut reader = csv::Reader::from_path(c.join("small_records.csv")).unwrap();
    let headers = reader.headers().unwrap().clone();
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    let (rep_i, c_i, h_i, gap_i) = (col("rep"), col("c"), col("H"), col("delta_gap"));
    let rows: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
    let certified: Vec<&Value> = records.as_array().unwrap().iter().filter(|r| r["certified"] == true).collect();
    assert_eq!(rows.len(), certified.len() * 2);
    for row in &rows {
        let rep: u64 = row[rep_i].parse().unwrap();
        let cval: f64 = row[c_i].parse().unwrap();
        let rec = certified.iter().find(|r| r["rep"] == rep).unwrap();
        let pc = rec["per_c"].as_array().unwrap().iter().find(|p| p["c"].as_f64() == Some(cval)).unwrap();
        assert_eq!(row[h_i].parse::<f64>().unwrap(), pc["h"].as_f64().unwrap());
        assert_eq!(row[gap_i].parse::<f64>().unwrap(), pc["delta_gap"].as_f64().unwrap());
    }
}

#[test]
fn single_point_sweep_matches_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", SMALL);
    let run_dir = tmp.path().join("run");
    let sweep_dir = tmp.path().join("sweep");
    assert_eq!(cli(&["run", "--config", &cfg, "--out-dir", run_dir.to_str().unwrap()]).code, EXIT_OK);
    let r = cli(&[
        "sweep",
        "--config",
        &cfg,
        "--lambda-grid",
        "2",
        "--c-grid",
        "3",
        "--format",
        "json",
        "--out-dir",
        sweep_dir.to_str().unwrap(),
    ]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    let rows = read_json(&sweep_dir.join("small_sweep.json"));
    let summary = read_json(&run_dir.join("summary.json"));
    assert_eq!(rows.as_array().unwrap().len(), 1);
    assert_eq!(rows[0]["dmse_hat"], summary[0]["per_c"][0]["dmse_hat"]);
    assert_eq!(rows[0]["lambda_l"], summary[0]["lambda_l"]);
    assert_eq!(rows[0]["universal"], false);
}

#[test]
fn sweep_marks_the_universal_rate() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", SMALL);
    let dir = tmp.path().join("s");
    let r =
        cli(&["sweep", "--config", &cfg, "--lambda-grid", "1,4", "--reps", "20", "--out-dir", dir.to_str().unwrap()]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    assert_eq!(r.stdout.matches("universal rate").count(), 1, "{}", r.stdout);
    let text = fs::read_to_string(dir.join("small_sweep.csv")).unwrap();
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn verify_single_suite_passes_and_writes_report() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("v");
    let r = cli(&["verify", "--only", "factors,closed-form", "--instances", "20", "--out-dir", dir.to_str().unwrap()]);
    assert_eq!(r.code, EXIT_OK, "{}{}", r.stdout, r.stderr);
    assert!(r.stdout.contains("factors") && r.stdout.contains("PASS"), "{}", r.stdout);
    let report = read_json(&dir.join("verify.json"));
    assert_eq!(report.as_array().unwrap().len(), 2);
}

#[test]
fn injected_fault_is_caught() {
    let r = cli(&["verify", "--only", "closed-form", "--instances", "20", "--inject-fault"]);
    assert_eq!(r.code, EXIT_FAIL, "{}", r.stdout);
    assert!(r.stdout.contains("FAIL"), "{}", r.stdout);
}

#[test]
fn bounds_command_evaluates_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    let inputs = r#"{
  "lambda_l": 0.2, "c": 3.0, "n": 200, "p": 500, "sigma": 0.1, "p_nonempty": 1.0,
  "exp_max_t0": 0.01, "sqrt_second_moment": 0.02, "p_not_contained": 0.0, "p_neq_s0": 0.0
}"#;
    let path = write_config(tmp.path(), "b.json", inputs);
    let dir = tmp.path().join("b");
    let r = cli(&["bounds", "--config", &path, "--out-dir", dir.to_str().unwrap()]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    let report: Value = serde_json::from_str(&r.stdout).unwrap();
    assert!(report["full_set_bound"].as_f64().is_some());
    assert!(report["containment_bound"].as_f64().is_some());
    assert!(dir.join("bounds.json").exists());

    let bad = write_config(tmp.path(), "bad.json", &inputs.replace("\"c\": 3.0", "\"c\": -1.0"));
    assert_eq!(cli(&["bounds", "--config", &bad]).code, EXIT_CONFIG);
}

#[test]
fn exit_codes() {
    assert_eq!(cli(&["--help"]).code, EXIT_OK);
    assert_eq!(cli(&["frobnicate"]).code, EXIT_CONFIG);
    assert_eq!(cli(&["run", "--config", "/nonexistent/config.json"]).code, EXIT_CONFIG);
    assert_eq!(cli(&["verify", "--only", "nope"]).code, EXIT_CONFIG);
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", SMALL);
    assert_eq!(cli(&["run", "--config", &cfg, "--only", "missing"]).code, EXIT_CONFIG);
    assert_eq!(cli(&["run", "--config", &cfg, "--threads", "0"]).code, EXIT_CONFIG);
}
