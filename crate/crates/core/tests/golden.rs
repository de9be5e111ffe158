//! Golden-file comparison of structured CLI output with a float-aware
//! comparator (absolute 1e-9 or relative 1e-7).

use std::path::Path;

use reeblab::cli::{numeric_leaves, parse_scenario, run_scenario, Command};
use serde_json::Value;

fn strip_numbers(v: &Value) -> Value {
    match v {
        Value::Object(m) => Value::Object(m.iter().map(|(k, x)| (k.clone(), strip_numbers(x))).collect()),
        Value::Array(a) => Value::Array(a.iter().map(strip_numbers).collect()),
        Value::Number(_) => Value::Null,
        other => other.clone(),
    }
}

fn assert_close(actual: &Value, golden: &Value) {
    assert_eq!(strip_numbers(actual), strip_numbers(golden), "structure or text differs");
    let (a, g) = (numeric_leaves(actual), numeric_leaves(golden));
    assert_eq!(a.len(), g.len());
    for (path, x) in &a {
        let y = g[path];
        let ok = (x - y).abs() <= 1e-9 || (x - y).abs() <= 1e-7 * y.abs();
        assert!(ok, "{path}: {x} vs golden {y}");
    }
}

#[test]
fn cz_scenario_matches_golden_file() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR"));
    let text = std::fs::read_to_string(root.join("../../configs/cz.toml")).unwrap();
    let out = run_scenario(Command::Cz, &parse_scenario(&text).unwrap(), None, root).unwrap();
    // index formula 2k + 2⌊k/√2⌋ + 1, independent of the golden file
    let expected: Vec<i64> = (1..=5)
        .map(|k: i64| 2 * k + 2 * (k as f64 / 2f64.sqrt()).floor() as i64 + 1)
        .collect();
    assert_eq!(expected, vec![3, 7, 11, 13, 17]);
    let cz: Vec<i64> = out.record["result"]["rows"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["index"]["cz"]["value"].as_i64().unwrap())
        .collect();
    assert_eq!(cz, expected);
    let golden: Value =
        serde_json::from_str(&std::fs::read_to_string(root.join("tests/golden/cz.json")).unwrap()).unwrap();
    assert_close(&out.record, &golden);
}

#[test]
fn comparator_tolerates_only_small_differences() {
    let a = serde_json::json!({ "x": 1.0, "s": "t" });
    assert_close(&a, &serde_json::json!({ "x": 1.0 + 5e-8, "s": "t" }));
    let far = std::panic::catch_unwind(|| assert_close(&a, &serde_json::json!({ "x": 1.001, "s": "t" })));
    assert!(far.is_err());
}
