use std::process::Command;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_grouppop")
}

fn config_path(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

#[test]
fn validate_reports_bounds_and_hash() {
    let out = Command::new(bin())
        .args(["validate"])
        .arg(config_path("reference.toml"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("config hash"));
    assert!(stdout.contains("rate bounds ok"));
    assert!(stdout.contains("kernel identities ok"));
}

#[test]
fn validate_rejects_a_broken_config() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    let text = std::fs::read_to_string(config_path("reference.toml"))
        .unwrap()
        .replace(
            "rungs = [{ n = 10, m = 50 }, { n = 20, m = 200 }, { n = 40, m = 800 }]",
            "rungs = [{ n = 20, m = 50 }, { n = 10, m = 200 }]",
        );
    std::fs::write(&bad, text).unwrap();
    let out = Command::new(bin()).args(["validate"]).arg(&bad).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("ladder"));
}

#[test]
fn solve_emits_densities_moments_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(bin())
        .args(["solve"])
        .arg(config_path("diagnostics_pde_smoke.toml"))
        .args(["--out-dir"])
        .arg(dir.path())
        .args(["--threads", "2"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("moments.csv").exists());
    assert!(dir.path().join("density_0.csv").exists());
    assert!(dir.path().join("manifest.json").exists());
}
