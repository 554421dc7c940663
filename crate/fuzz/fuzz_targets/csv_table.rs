#![no_main]

use formula_size::dataset::{parse_csv, prepare, Schema};
use libfuzzer_sys::fuzz_target;

const SCHEMA: &str = r#"{
  "target": "y",
  "drop": ["id"],
  "columns": [
    {"name": "id", "kind": "numeric"},
    {"name": "x", "kind": "numeric", "decimals": 2},
    {"name": "flag", "kind": "boolean"},
    {"name": "colour", "kind": "categorical"},
    {"name": "y", "kind": "boolean"}
  ]
}"#;

fuzz_target!(|data: &[u8]| {
    let schema = Schema::from_json_str(SCHEMA).unwrap();
    if let Ok(table) = parse_csv(data, &schema) {
        if let Ok(ds) = prepare(&table, &schema) {
            assert!(ds.len() <= table.len());
        }
    }
});
