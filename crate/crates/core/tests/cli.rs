use std::path::Path;
use std::process::{Command, Output};

use aurl::dataset::{Group, Manifest};
use aurl::embeddings::{save_checkpoint, EmbeddingState};
use aurl::Matrix;
use serde_json::Value;

fn aurl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aurl"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn prepared(dir: &Path) {
    let out = aurl(&["prepare", "--synthetic", "--out", s(dir), "--seed", "11"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

const FAST: [&str; 6] = ["--dim", "8", "--epochs-max", "2", "--batch-size", "4096"];

fn train(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--out", s(dir)];
    args.extend(FAST);
    args.extend(extra);
    aurl(&args)
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn prepare_is_byte_identical_across_runs() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    prepared(a.path());
    prepared(b.path());
    for name in ["train.tsv", "valid.tsv", "test.tsv", "manifest.json"] {
        let x = std::fs::read(a.path().join(name)).unwrap();
        let y = std::fs::read(b.path().join(name)).unwrap();
        assert!(x == y, "{name} differs");
    }
}

#[test]
fn manifest_group_sizes_follow_top_fraction() {
    let dir = tempfile::tempdir().unwrap();
    let out = aurl(&["prepare", "--synthetic", "--out", s(dir.path()), "--top-fraction", "0.3"]);
    assert_eq!(code(&out), 0);
    let m: Manifest = serde_json::from_value(read_json(&dir.path().join("manifest.json"))).unwrap();
    let popular = |g: &[Group]| g.iter().filter(|&&x| x == Group::Popular).count();
    assert_eq!(popular(&m.user_group), (0.3 * m.num_users as f64).round() as usize);
    assert_eq!(popular(&m.item_group), (0.3 * m.num_items as f64).round() as usize);
}

#[test]
fn missing_input_is_an_input_error_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("no_such_ratings.tsv");
    let out = aurl(&["prepare", "--input", s(&missing), "--out", s(dir.path())]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("no_such_ratings.tsv"));
}

#[test]
fn parse_errors_carry_file_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw.tsv");
    std::fs::write(&raw, "u1\ti1\nonly_one_field\n").unwrap();
    let out = aurl(&["prepare", "--input", s(&raw), "--out", s(dir.path())]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("raw.tsv:2"));
}

#[test]
fn training_log_and_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    prepared(dir.path());
    let out = train(dir.path(), &["--lambda1", "0", "--lambda2", "0"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let log = std::fs::read_to_string(dir.path().join("train_log.jsonl")).unwrap();
    let lines: Vec<Value> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 2);
    for l in &lines {
        assert_eq!(l["align"], 0.0);
        assert_eq!(l["uniform"], 0.0);
    }
    assert!(dir.path().join("model.ckpt").exists());
    assert!(dir.path().join("model.ckpt.meta.json").exists());
}

#[test]
fn divergent_training_exits_3_and_keeps_last_good_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    prepared(dir.path());
    assert_eq!(code(&train(dir.path(), &[])), 0);
    let ckpt = dir.path().join("model.ckpt");
    let before = std::fs::read(&ckpt).unwrap();
    let out = train(dir.path(), &["--lr", "1e300"]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
    let after = std::fs::read(&ckpt).unwrap();
    let state = aurl::embeddings::decode_checkpoint(&after).unwrap();
    assert!(state.all_finite());
    assert_eq!(before.len(), after.len());
}

#[test]
fn evaluate_reports_every_cutoff_and_matches_schema() {
    let dir = tempfile::tempdir().unwrap();
    prepared(dir.path());
    assert_eq!(code(&train(dir.path(), &[])), 0);
    let out = aurl(&["evaluate", "--out", s(dir.path()), "--k", "10,20"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report = read_json(&dir.path().join("metrics.json"));
    let ks: Vec<u64> = report["cutoffs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["k"].as_u64().unwrap())
        .collect();
    assert_eq!(ks, vec![10, 20]);
    let schema: Value = serde_json::from_str(include_str!("../schema/metric_report.schema.json")).unwrap();
    let errors = schema::validate(&schema, &schema, &report, "$");
    assert!(errors.is_empty(), "{errors:#?}");
}

#[test]
fn schema_checker_rejects_bad_reports() {
    let schema: Value = serde_json::from_str(include_str!("../schema/metric_report.schema.json")).unwrap();
    let bad = serde_json::json!({ "num_users": -1, "extra": true });
    assert!(!schema::validate(&schema, &schema, &bad, "$").is_empty());
}

#[test]
fn evaluate_rejects_mismatched_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    prepared(dir.path());
    let ckpt = dir.path().join("other.ckpt");
    save_checkpoint(&EmbeddingState::xavier(3, 4, 8, 1), &ckpt, None).unwrap();
    let out = aurl(&["evaluate", "--out", s(dir.path()), "--checkpoint", s(&ckpt)]);
    assert_eq!(code(&out), 4);
    std::fs::write(&ckpt, b"not a checkpoint").unwrap();
    let out = aurl(&["evaluate", "--out", s(dir.path()), "--checkpoint", s(&ckpt)]);
    assert_eq!(code(&out), 4);
}

#[test]
fn audit_without_two_dimensions_skips_angles() {
    let dir = tempfile::tempdir().unwrap();
    prepared(dir.path());
    assert_eq!(code(&train(dir.path(), &[])), 0);
    let out = aurl(&["audit", "--out", s(dir.path())]);
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));
    assert!(!dir.path().join("angular_density.csv").exists());
    let bundle = read_json(&dir.path().join("audit.json"));
    assert!(bundle["score_gap"].is_number());
    assert!(bundle["loss_gap"]["gap"].is_number());
    assert!(bundle["group_exposure"][0]["popular"].is_number());
    assert!(dir.path().join("exposure.csv").exists());
}

#[test]
fn audit_of_two_dimensional_model_writes_angle_csv() {
    let dir = tempfile::tempdir().unwrap();
    prepared(dir.path());
    let out = aurl(&["train", "--out", s(dir.path()), "--dim", "2", "--epochs-max", "1"]);
    assert_eq!(code(&out), 0);
    assert_eq!(code(&aurl(&["audit", "--out", s(dir.path())])), 0);
    let csv = std::fs::read_to_string(dir.path().join("angular_density.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("angle,density,group"));
    assert_eq!(lines.count(), 4 * aurl::eval::diagnostics::ANGLE_GRID_POINTS);
}

#[test]
fn identical_embeddings_have_zero_gaps() {
    let dir = tempfile::tempdir().unwrap();
    prepared(dir.path());
    let m: Manifest = serde_json::from_value(read_json(&dir.path().join("manifest.json"))).unwrap();
    let row = [0.3, -0.2, 0.5, 0.1];
    let fill = |n: usize| Matrix::from_rows(&vec![row.to_vec(); n]).unwrap();
    let state = EmbeddingState::new(fill(m.num_users), fill(m.num_items)).unwrap();
    let ckpt = dir.path().join("same.ckpt");
    save_checkpoint(&state, &ckpt, None).unwrap();
    let out = aurl(&["audit", "--out", s(dir.path()), "--checkpoint", s(&ckpt)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let bundle = read_json(&dir.path().join("audit.json"));
    assert!(bundle["score_gap"].as_f64().unwrap().abs() < 1e-12);
    assert!(bundle["loss_gap"]["gap"].as_f64().unwrap().abs() < 1e-12);
}

#[test]
fn config_file_drives_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    let out_dir = dir.path().join("run");
    std::fs::write(
        &cfg,
        format!(
            "synthetic = true\nout = {:?}\ndim = 4\nepochs_max = 1\nbackbone = \"lightgcn\"\nlayers = 1\nk = [5]\n",
            s(&out_dir)
        ),
    )
    .unwrap();
    for cmd in ["prepare", "train", "evaluate"] {
        let out = aurl(&[cmd, "--config", s(&cfg)]);
        assert_eq!(code(&out), 0, "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let report = read_json(&out_dir.join("metrics.json"));
    assert_eq!(report["cutoffs"][0]["k"], 5);
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "lamda = 1\n").unwrap();
    assert_eq!(code(&aurl(&["train", "--config", s(&bad)])), 2);
}

/// Checks the subset of JSON Schema used by the published report schema.
mod schema {
    use serde_json::Value;

    pub fn validate(root: &Value, schema: &Value, v: &Value, at: &str) -> Vec<String> {
        let mut errs = Vec::new();
        if let Some(r) = schema.get("$ref").and_then(Value::as_str) {
            let target = r
                .trim_start_matches("#/")
                .split('/')
                .fold(root, |node, key| &node[key]);
            return validate(root, target, v, at);
        }
        if let Some(options) = schema.get("oneOf").and_then(Value::as_array) {
            let ok = options.iter().filter(|o| validate(root, o, v, at).is_empty()).count();
            if ok != 1 {
                errs.push(format!("{at}: matches {ok} oneOf branches"));
            }
            return errs;
        }
        if let Some(t) = schema.get("type") {
            let types: Vec<&str> = match t {
                Value::String(s) => vec![s.as_str()],
                Value::Array(a) => a.iter().filter_map(Value::as_str).collect(),
                _ => vec![],
            };
            if !types.iter().any(|t| type_matches(t, v)) {
                errs.push(format!("{at}: expected {types:?}, got {v}"));
                return errs;
            }
        }
        if let Some(x) = v.as_f64() {
            if let Some(min) = schema.get("minimum").and_then(Value::as_f64) {
                if x < min {
                    errs.push(format!("{at}: {x} < {min}"));
                }
            }
            if let Some(max) = schema.get("maximum").and_then(Value::as_f64) {
                if x > max {
                    errs.push(format!("{at}: {x} > {max}"));
                }
            }
        }
        if let Value::Object(obj) = v {
            let props = schema.get("properties").and_then(Value::as_object);
            for key in schema.get("required").and_then(Value::as_array).into_iter().flatten() {
                if !obj.contains_key(key.as_str().unwrap()) {
                    errs.push(format!("{at}: missing `{key}`"));
                }
            }
            for (key, child) in obj {
                match props.and_then(|p| p.get(key)) {
                    Some(s) => errs.extend(validate(root, s, child, &format!("{at}.{key}"))),
                    None if schema.get("additionalProperties") == Some(&Value::Bool(false)) => {
                        errs.push(format!("{at}: unexpected `{key}`"))
                    }
                    None => {}
                }
            }
        }
        if let Value::Array(items) = v {
            if let Some(min) = schema.get("minItems").and_then(Value::as_u64) {
                if (items.len() as u64) < min {
                    errs.push(format!("{at}: fewer than {min} items"));
                }
            }
            if let Some(s) = schema.get("items") {
                for (i, item) in items.iter().enumerate() {
                    errs.extend(validate(root, s, item, &format!("{at}[{i}]")));
                }
            }
        }
        errs
    }

    fn type_matches(t: &str, v: &Value) -> bool {
        match t {
            "null" => v.is_null(),
            "object" => v.is_object(),
            "array" => v.is_array(),
            "string" => v.is_string(),
            "number" => v.is_number(),
            "integer" => v.is_i64() || v.is_u64(),
            "boolean" => v.is_boolean(),
            _ => false,
        }
    }
}
