//! Replays the fuzz corpus seeds through the same checks as the fuzz targets.

use std::path::PathBuf;

use kbstrip::config::parse_config;
use kbstrip::field_file::{parse_field, write_field_string};
use kbstrip::ledger::parse_ledger_csv;

fn seeds(target: &str) -> Vec<(PathBuf, String)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fuzz/corpus")
        .join(target);
    let mut out: Vec<(PathBuf, String)> = std::fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| {
            let text = std::fs::read_to_string(&p).unwrap();
            (p, text)
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds in {}", dir.display());
    out
}

#[test]
fn config_seeds() {
    let mut parsed = 0;
    for (path, text) in seeds("parse_config") {
        match parse_config(&text) {
            Ok(spec) => {
                assert_eq!(
                    parse_config(&spec.to_config_string()).unwrap(),
                    spec,
                    "{}",
                    path.display()
                );
                parsed += 1;
            }
            Err(e) => assert_eq!(e.exit_code(), 2, "{}: {e}", path.display()),
        }
    }
    assert!(parsed >= 6);
}

#[test]
fn field_seeds() {
    for (path, text) in seeds("parse_field") {
        if let Ok(u) = parse_field(&text) {
            assert_eq!(parse_field(&write_field_string(&u)).unwrap(), u, "{}", path.display());
        }
    }
}

#[test]
fn ledger_seeds() {
    let rows: usize = seeds("parse_ledger_csv")
        .iter()
        .filter_map(|(_, text)| parse_ledger_csv(text).ok())
        .map(|r| r.len())
        .sum();
    assert!(rows >= 3);
}
