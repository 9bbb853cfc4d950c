//! Runs the full acceptance suite twice and checks every criterion,
//! including byte-identical output between the two runs.

use std::collections::BTreeMap;
use std::path::Path;

use kbstrip::acceptance::run_all;

/// Every file under `root` except run manifests, which carry wall time.
fn artifacts(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().is_some_and(|n| n != "manifest.json") {
                let key = path.strip_prefix(root).unwrap().display().to_string();
                out.insert(key, std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

#[test]
fn acceptance_criteria() {
    let first = tempfile::tempdir().unwrap();
    let second = tempfile::tempdir().unwrap();
    let results = run_all(0, first.path(), true).unwrap();
    run_all(0, second.path(), true).unwrap();

    let a = artifacts(first.path());
    let b = artifacts(second.path());
    let differing: Vec<&String> = a.keys().filter(|k| b.get(*k) != a.get(*k)).collect();
    let deterministic = a.keys().eq(b.keys()) && differing.is_empty() && a.keys().any(|k| k.ends_with("ledger.csv"));

    for r in &results {
        println!("{}", r.line());
    }
    println!(
        "{} C11  determinism                  {} files compared, {} differ",
        if deterministic { "PASS" } else { "FAIL" },
        a.len(),
        differing.len()
    );

    let failed: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.id.as_str()).collect();
    assert!(deterministic, "outputs differ between runs: {differing:?}");
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
