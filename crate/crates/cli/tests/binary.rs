use std::process::Command;

fn vitatlas(args: &[&str]) -> (bool, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_vitatlas"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .unwrap();
    (out.status.success(), String::from_utf8_lossy(&out.stderr).into_owned())
}

#[test]
fn config_errors_point_at_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.toml");
    std::fs::write(&path, "output_dir = \"out\"\n[dataset]\nkind = \"synthetic\"\ntextures = \"five\"\n[atlas]\ngrid_size = -2\n").unwrap();
    let (ok, stderr) = vitatlas(&["atlas", "--config", path.to_str().unwrap()]);
    assert!(!ok);
    assert!(stderr.contains("run.toml:6:"), "{stderr}");
}

#[test]
fn missing_stage_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.toml");
    std::fs::write(&path, "output_dir = \"out\"\n[dataset]\nkind = \"synthetic\"\ntextures = \"five\"\n").unwrap();
    let (ok, stderr) = vitatlas(&["cv", "--config", path.to_str().unwrap()]);
    assert!(!ok);
    assert!(stderr.contains("run `vitatlas train` first"), "{stderr}");
}
