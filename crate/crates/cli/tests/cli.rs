use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_frontlab"))
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

#[test]
fn list_shows_every_preset() {
    let tmp = tempfile::tempdir().unwrap();
    let o = bin().args(["list"]).env("FRONTLAB_OUTPUT_ROOT", tmp.path()).output().unwrap();
    assert!(o.status.success());
    let s = text(&o);
    for k in 1..=10 {
        assert!(s.lines().any(|l| l.starts_with(&format!("E{k} "))), "{s}");
    }
    assert!(s.contains("unknown"));
}

#[test]
fn run_verify_and_plot_a_config() {
    let tmp = tempfile::tempdir().unwrap();
    let o = bin().args(["run"]).arg(config("bistable_short.json")).env("FRONTLAB_OUTPUT_ROOT", tmp.path()).output().unwrap();
    assert!(o.status.success(), "{}", text(&o));
    assert!(text(&o).contains("PASS"));
    let dir = tmp.path().join("bistable_short");
    assert!(dir.join("metadata.json").exists());

    let o = bin().arg("verify").arg(&dir).output().unwrap();
    assert!(o.status.success(), "{}", text(&o));

    let o = bin().arg("plot").arg(&dir).arg("profile").output().unwrap();
    assert!(o.status.success(), "{}", text(&o));
    assert!(dir.join("plot_profile.csv").exists() && dir.join("plot_profile.py").exists());

    let o = bin().arg("plot").arg(&dir).arg("histogram").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o).contains("unknown plot kind"));

    let o = bin().arg("plot").arg(&dir).arg("flattening").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o).contains("missing observable"));
}

#[test]
fn unstable_config_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(config("bistable_short.json")).unwrap()).unwrap();
    cfg["solver"]["dt"] = serde_json::json!(0.5);
    let path = tmp.path().join("bad.json");
    std::fs::write(&path, cfg.to_string()).unwrap();
    let o = bin().arg("--out").arg(tmp.path()).arg("run").arg(&path).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o).contains("config rejected: stability"), "{}", text(&o));
}

#[test]
fn unknown_preset_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let o = bin().arg("--out").arg(tmp.path()).args(["preset", "E99"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o).contains("unknown preset"));
}
