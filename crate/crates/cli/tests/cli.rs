use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn gncount(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gncount"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).expect("utf-8 stdout")
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).expect("utf-8 stderr")
}

fn json_of(args: &[&str]) -> (i32, Value) {
    let mut full = args.to_vec();
    full.extend(["--format", "json"]);
    let out = gncount(&full);
    let doc = serde_json::from_str(&stdout(&out))
        .unwrap_or_else(|e| panic!("stdout is not JSON ({e}): {}\n{}", stdout(&out), stderr(&out)));
    (code(&out), doc)
}

fn schema_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../schemas")
}

/// Validator for the JSON-Schema keywords used under `schemas/`:
/// type, enum, required, properties, additionalProperties (bool), items,
/// minItems, minimum and `$ref` to `#/$defs/..` or a sibling file.
mod schema {
    use super::*;

    pub fn validate(doc: &Value, schema_file: &str) -> Vec<String> {
        let root = load(schema_file);
        let mut errs = Vec::new();
        check(doc, &root, &root, "$", &mut errs);
        errs
    }

    fn load(name: &str) -> Value {
        let path = schema_dir().join(name);
        let text = fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        serde_json::from_str(&text).expect("schema is JSON")
    }

    fn type_ok(v: &Value, t: &str) -> bool {
        match t {
            "object" => v.is_object(),
            "array" => v.is_array(),
            "string" => v.is_string(),
            "number" => v.is_number(),
            "integer" => v.is_i64() || v.is_u64(),
            "boolean" => v.is_boolean(),
            "null" => v.is_null(),
            other => panic!("unsupported type {other}"),
        }
    }

    fn check(v: &Value, s: &Value, root: &Value, at: &str, errs: &mut Vec<String>) {
        if let Some(r) = s.get("$ref").and_then(Value::as_str) {
            match r.strip_prefix("#/$defs/") {
                Some(name) => check(v, &root["$defs"][name], root, at, errs),
                None => {
                    let other = load(r);
                    check(v, &other, &other, at, errs);
                }
            }
            return;
        }
        if let Some(t) = s.get("type") {
            let ok = match t {
                Value::String(t) => type_ok(v, t),
                Value::Array(ts) => ts.iter().any(|t| type_ok(v, t.as_str().unwrap())),
                _ => panic!("bad type keyword"),
            };
            if !ok {
                errs.push(format!("{at}: expected type {t}, got {v}"));
                return;
            }
        }
        if let Some(e) = s.get("enum").and_then(Value::as_array) {
            if !e.contains(v) {
                errs.push(format!("{at}: {v} not in {e:?}"));
            }
        }
        if let (Some(min), Some(x)) = (s.get("minimum").and_then(Value::as_f64), v.as_f64()) {
            if x < min {
                errs.push(format!("{at}: {x} < minimum {min}"));
            }
        }
        if let Some(obj) = v.as_object() {
            for req in s.get("required").and_then(Value::as_array).into_iter().flatten() {
                if !obj.contains_key(req.as_str().unwrap()) {
                    errs.push(format!("{at}: missing {req}"));
                }
            }
            let props = s.get("properties").and_then(Value::as_object);
            for (k, child) in obj {
                match props.and_then(|p| p.get(k)) {
                    Some(ps) => check(child, ps, root, &format!("{at}.{k}"), errs),
                    None if s.get("additionalProperties") == Some(&Value::Bool(false)) => {
                        errs.push(format!("{at}: unexpected property {k}"))
                    }
                    None => {}
                }
            }
        }
        if let Some(arr) = v.as_array() {
            if let Some(min) = s.get("minItems").and_then(Value::as_u64) {
                if (arr.len() as u64) < min {
                    errs.push(format!("{at}: {} items < minItems {min}", arr.len()));
                }
            }
            if let Some(items) = s.get("items") {
                for (i, child) in arr.iter().enumerate() {
                    check(child, items, root, &format!("{at}[{i}]"), errs);
                }
            }
        }
    }
}

fn assert_schema(doc: &Value, schema_file: &str) {
    let errs = schema::validate(doc, schema_file);
    assert!(errs.is_empty(), "{schema_file}: {errs:#?}");
}

#[test]
fn validator_rejects_bad_documents() {
    let (_, mut doc) = json_of(&["plan", "--layer", "784:512"]);
    assert_schema(&doc, "plan.schema.json");
    doc["layers"][0]["case_label"] = "case9".into();
    doc["manifest"]["tool"] = 5.into();
    doc["extra"] = Value::Null;
    let errs = schema::validate(&doc, "plan.schema.json");
    assert_eq!(errs.len(), 3, "{errs:#?}");
}

#[test]
fn plan_matches_worked_examples() {
    let (c, doc) = json_of(&["plan", "--layer", "784:512", "--layer", "512:10", "--layer", "128:128"]);
    assert_eq!(c, 0);
    assert_schema(&doc, "plan.schema.json");
    let layers = doc["layers"].as_array().unwrap();
    assert_eq!(layers[0]["g_practical"], 64);
    assert_eq!(layers[0]["case_label"], "case3_divisor_search");
    assert!((layers[0]["g_ideal"].as_f64().unwrap() - 68.0).abs() < 1e-12);
    assert_eq!(layers[1]["g_practical"], 10);
    assert_eq!(layers[1]["case_label"], "case2_upper_bound");
    assert_eq!(layers[2]["g_practical"], 1);
    assert_eq!(layers[2]["case_label"], "case1_lower_bound");
    assert!((layers[2]["k_at_practical"].as_f64().unwrap() - 1.03125).abs() < 1e-12);
    assert_eq!(doc["manifest"]["subcommand"], "plan");
}

#[test]
fn plan_reads_architecture_file_and_writes_out() {
    let dir = tempfile::tempdir().unwrap();
    let arch = dir.path().join("arch.txt");
    fs::write(&arch, "# mlp\n784 512\n512 10 relu\n").unwrap();
    let out_path = dir.path().join("plan.json");
    let out = gncount(&["plan", "--arch", arch.to_str().unwrap(), "--out", out_path.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("g_practical"), "table on stdout");
    let doc: Value = serde_json::from_str(&fs::read_to_string(&out_path).unwrap()).unwrap();
    assert_schema(&doc, "plan.schema.json");
    assert_eq!(doc["layers"].as_array().unwrap().len(), 2);
}

#[test]
fn plan_csv_starts_with_manifest_line() {
    let out = gncount(&["plan", "--layer", "784:512", "--format", "csv"]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    let mut lines = text.lines();
    let manifest: Value =
        serde_json::from_str(lines.next().unwrap().strip_prefix("# manifest: ").expect("comment line")).unwrap();
    assert_schema(&manifest, "manifest.schema.json");
    assert!(lines.next().unwrap().starts_with("layer,n_in,n_out"));
    assert!(lines.next().unwrap().contains(",64,"));
}

#[test]
fn plan_measures_gains_for_non_unit_activations() {
    let (c, doc) = json_of(&["plan", "--layer", "784:512:tanh", "--measure-gains", "--gain-samples", "20000"]);
    assert_eq!(c, 0);
    assert_schema(&doc, "plan.schema.json");
    let entry = &doc["gain_table"]["entries"]["tanh"];
    assert!(entry.is_array(), "{doc}");
    let g = doc["layers"][0]["g_ideal"].as_f64().unwrap();
    assert!((g - 38.4).abs() < 1.0, "tanh ideal groups {g}");
    assert_eq!(doc["manifest"]["seeds"], serde_json::json!([0]));
}

#[test]
fn plan_usage_and_format_errors() {
    assert_eq!(code(&gncount(&["plan"])), 2);
    assert_eq!(code(&gncount(&["plan", "--layer", "784"])), 2);
    assert_eq!(code(&gncount(&["plan", "--layer", "0:10"])), 2);
    assert_eq!(code(&gncount(&["no-such-command"])), 2);
    let out = gncount(&["plan", "--layer", "784:512:tanh"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("--measure-gains"));

    let dir = tempfile::tempdir().unwrap();
    let arch = dir.path().join("bad.json");
    fs::write(&arch, "{\"layers\": [{\"n_in\": \"x\"}]}").unwrap();
    assert_eq!(code(&gncount(&["plan", "--arch", arch.to_str().unwrap()])), 3);
    let missing = dir.path().join("missing.txt");
    assert_eq!(code(&gncount(&["plan", "--arch", missing.to_str().unwrap()])), 3);
}

#[test]
fn help_exits_zero() {
    let out = gncount(&["--help"]);
    assert_eq!(code(&out), 0);
    for sub in ["plan", "probe", "gains", "gradcheck", "train"] {
        assert!(stdout(&out).contains(sub));
    }
}

#[test]
fn probe_reports_all_ratios() {
    let (c, doc) = json_of(&["probe", "--n-in", "48", "--n-out", "32", "--groups", "8", "--trials", "2000", "--tol", "10"]);
    assert_eq!(c, 0);
    assert_schema(&doc, "probe.schema.json");
    let r = &doc["report"];
    assert_eq!(r["trials"], 2000);
    let theory = |k: &str| r[k]["theoretical"].as_f64().unwrap();
    assert!((theory("eq_a") - 32.0).abs() < 1e-12);
    assert!((theory("eq_b") - 2.0).abs() < 1e-12);
    assert!((theory("eq_c") - 0.5).abs() < 1e-12);
    assert!((r["eq_c"]["empirical"].as_f64().unwrap() - 0.5).abs() < 0.05);
    assert_eq!(doc["all_within_tol"], true);
}

#[test]
fn probe_is_deterministic_for_a_seed() {
    let args = ["probe", "--n-in", "16", "--n-out", "16", "--groups", "4", "--trials", "500", "--seed", "7", "--tol", "10"];
    let (_, a) = json_of(&args);
    let (_, b) = json_of(&args);
    assert_eq!(a["report"], b["report"]);
    assert_eq!(a["manifest"]["seeds"], serde_json::json!([7]));
}

#[test]
fn probe_literal_sampler_accepted() {
    let (c, doc) = json_of(&[
        "probe", "--n-in", "12", "--n-out", "8", "--groups", "2", "--trials", "300", "--sampler", "literal", "--tol", "10",
    ]);
    assert_eq!(c, 0);
    assert_eq!(doc["report"]["config"]["sampler"], "literal");
}

#[test]
fn probe_out_of_tolerance_exits_one() {
    let out = gncount(&["probe", "--n-in", "8", "--n-out", "8", "--groups", "2", "--trials", "200", "--tol", "0.0001"]);
    assert_eq!(code(&out), 1, "{}", stderr(&out));
}

#[test]
fn probe_rejects_non_divisor_groups() {
    let out = gncount(&["probe", "--n-in", "64", "--n-out", "64", "--groups", "7"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains('7'));
}

#[test]
fn gains_for_relu_are_one_half() {
    let (c, doc) = json_of(&["gains", "--activation", "relu", "--samples", "200000"]);
    assert_eq!(c, 0);
    assert_schema(&doc, "gains.schema.json");
    let g = &doc["gains"][0];
    assert!((g["forward_gain"].as_f64().unwrap() - 0.5).abs() < 0.01);
    assert!((g["backward_gain"].as_f64().unwrap() - 0.5).abs() < 0.01);
}

#[test]
fn gains_homogeneity_flags() {
    let (c, doc) = json_of(&[
        "gains", "--activation", "prelu:0.25", "--activation", "tanh", "--sigma", "0.5", "--sigma", "2",
        "--samples", "100000", "--check-homogeneity",
    ]);
    assert_eq!(c, 0);
    assert_schema(&doc, "gains.schema.json");
    let h = doc["homogeneity"].as_array().unwrap();
    assert_eq!(h[0]["homogeneous"], true);
    assert_eq!(h[1]["homogeneous"], false);
}

#[test]
fn gains_unknown_activation_lists_names() {
    let out = gncount(&["gains", "--activation", "bogus"]);
    assert_eq!(code(&out), 2);
    let err = stderr(&out);
    assert!(err.contains("relu") && err.contains("gelu"), "{err}");
}

#[test]
fn gradcheck_defaults_pass() {
    let (c, doc) = json_of(&["gradcheck"]);
    assert_eq!(c, 0);
    assert_schema(&doc, "gradcheck.schema.json");
    assert_eq!(doc["failed"], 0);
    assert_eq!(doc["manifest"]["params"]["h"], 1e-5);
    let statuses: Vec<&str> = doc["configs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["status"].as_str().unwrap())
        .collect();
    assert!(statuses.contains(&"pass"));
}

#[test]
fn gradcheck_skips_single_channel_groups() {
    let (c, doc) = json_of(&["gradcheck", "--n-in", "4", "--n-out", "6", "--groups", "6", "--activation", "relu"]);
    assert_eq!(c, 0);
    assert_schema(&doc, "gradcheck.schema.json");
    assert_eq!(doc["configs"][0]["status"], "skipped");
    assert!(!doc["configs"][0]["note"].as_str().unwrap().is_empty());
}

const SMALL_SYNTH: &str = "synth:classes=4,per_class=40,test_per_class=20,d=16,separation=4,seed=3";

#[test]
fn train_synthetic_writes_epoch_files() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let out = gncount(&[
        "train", "--data", SMALL_SYNTH, "--hidden", "16", "--groups", "4", "--epochs", "3", "--batch-size", "32",
        "--out-dir", out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let csv = fs::read_to_string(out_dir.join("epochs_g4_run0.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("# manifest: "));
    assert_eq!(lines.next(), Some("epoch,train_loss,test_error_pct"));
    assert_eq!(lines.count(), 3);
    let summary: Value = serde_json::from_str(&fs::read_to_string(out_dir.join("summary.json")).unwrap()).unwrap();
    assert_schema(&summary, "train.schema.json");
    assert_eq!(summary["manifest"]["seeds"], serde_json::json!([0, 3]));
}

#[test]
fn train_sweep_one_group_per_channel_is_near_chance() {
    let (c, doc) = json_of(&[
        "train", "--data", SMALL_SYNTH, "--hidden", "16", "--sweep", "4,16", "--epochs", "3", "--batch-size", "32",
        "--runs", "2",
    ]);
    assert_eq!(c, 0);
    assert_schema(&doc, "train.schema.json");
    let summary = doc["summary"].as_array().unwrap();
    assert_eq!(summary.len(), 2);
    let err = |i: usize| summary[i]["mean_final_test_error_pct"].as_f64().unwrap();
    assert!(err(0) < 20.0, "G=4 error {}", err(0));
    assert!((err(1) - 75.0).abs() < 10.0, "G=16 error {}", err(1));
    assert_eq!(doc["runs"][0]["reports"].as_array().unwrap().len(), 2);
}

#[test]
fn train_rejects_bad_groups_before_loading_data() {
    let out = gncount(&["train", "--data", "idx:/nonexistent/a,/nonexistent/b", "--test-data", "idx:/x,/y", "--groups", "100"]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
}

#[test]
fn train_missing_idx_files_exit_three() {
    let out = gncount(&["train", "--data", "idx:/nonexistent/a,/nonexistent/b", "--test-data", "idx:/x,/y"]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
}

fn write_idx(dir: &Path, name: &str, count: usize) -> String {
    let (rows, cols) = (4usize, 4usize);
    let mut img = vec![0, 0, 8, 3];
    for v in [count, rows, cols] {
        img.extend_from_slice(&(v as u32).to_be_bytes());
    }
    let mut lbl = vec![0, 0, 8, 1];
    lbl.extend_from_slice(&(count as u32).to_be_bytes());
    for i in 0..count {
        let class = (i % 2) as u8;
        // Class 0 lights the top half, class 1 the bottom half.
        for p in 0..rows * cols {
            let top = p < rows * cols / 2;
            img.push(if top == (class == 0) { 200 } else { 10 });
        }
        lbl.push(class);
    }
    let ip = dir.join(format!("{name}-images.idx"));
    let lp = dir.join(format!("{name}-labels.idx"));
    fs::write(&ip, img).unwrap();
    fs::write(&lp, lbl).unwrap();
    format!("idx:{},{}", ip.display(), lp.display())
}

#[test]
fn train_on_idx_files() {
    let dir = tempfile::tempdir().unwrap();
    let train = write_idx(dir.path(), "train", 64);
    let test = write_idx(dir.path(), "test", 16);
    let (c, doc) = json_of(&["train", "--data", &train, "--test-data", &test, "--hidden", "8", "--groups", "2", "--epochs", "5", "--batch-size", "16"]);
    assert_eq!(c, 0);
    assert_schema(&doc, "train.schema.json");
    let report = &doc["runs"][0]["reports"][0];
    assert_eq!(report["input_dim"], 16);
    assert_eq!(report["final_test_error_pct"], 0.0);
}

#[test]
fn train_malformed_idx_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let train = write_idx(dir.path(), "train", 8);
    let bad = dir.path().join("bad-images.idx");
    fs::write(&bad, [0u8, 0, 8, 3, 0, 0]).unwrap();
    let lp = dir.path().join("train-labels.idx");
    let spec = format!("idx:{},{}", bad.display(), lp.display());
    let out = gncount(&["train", "--data", &spec, "--test-data", &train, "--hidden", "8", "--groups", "2"]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
}
