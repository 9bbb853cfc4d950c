use std::path::Path;
use std::process::{Command, Output};

fn kbstrip(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kbstrip"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

const TINY: &str = "Nx = 64\nNy = 4\nL = 15\ndt = 0.001\nT = 0.05\nsample_every = 1\n";

#[test]
fn run_writes_ledger_report_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tiny.cfg"), TINY).unwrap();
    let out = kbstrip(&["run", "tiny.cfg", "--out", "result", "--quiet"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for file in ["ledger.csv", "report.json", "manifest.json"] {
        assert!(dir.path().join("result").join(file).exists(), "{file}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("result/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["exit_code"], 0);
}

#[test]
fn bad_config_is_a_positioned_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.cfg"), "Nx = 32\nb = 0.5\n").unwrap();
    let out = kbstrip(&["run", "bad.cfg"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 2"), "{err}");
    assert!(err.contains("6b"), "{err}");
    assert!(!dir.path().join("out").exists());
}

#[test]
fn unknown_preset_lists_the_presets() {
    let dir = tempfile::tempdir().unwrap();
    let out = kbstrip(&["preset", "nope"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sharp_energy"));
}

#[test]
fn sweep_gives_each_config_a_directory() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir(dir.path().join("cfg")).unwrap();
    std::fs::write(dir.path().join("cfg/a.cfg"), TINY).unwrap();
    std::fs::write(dir.path().join("cfg/b.cfg"), format!("{TINY}nonlinearity = off\n")).unwrap();
    let out = kbstrip(&["sweep", "cfg/*.cfg", "--out", "swept", "--quiet"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["a", "b"] {
        assert!(dir.path().join("swept").join(name).join("ledger.csv").exists());
    }
}

#[test]
fn help_documents_every_key() {
    let dir = tempfile::tempdir().unwrap();
    let out = kbstrip(&["--help"], dir.path());
    let text = String::from_utf8_lossy(&out.stdout);
    for key in ["buffer_frac", "initial_condition", "phi_taylor_radius", "perturbation"] {
        assert!(text.contains(key), "{key}");
    }
}
