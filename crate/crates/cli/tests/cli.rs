use std::process::Command;

fn atyvc() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_atyvc"));
    c.env("RUST_LOG", "warn");
    c
}

#[test]
fn selftest_passes_on_a_fresh_checkout() {
    let out = atyvc().arg("selftest").output().unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{stdout}");
    assert!(stdout.contains("PASS gradient/ge2e"));
    assert!(!stdout.contains("FAIL"));
}

#[test]
fn convert_without_checkpoints_reports_the_missing_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let out = atyvc().args(["convert", "--out"]).arg(dir.path()).output().unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("missing artifact"), "{stderr}");
    assert!(stderr.contains("run `finetune-speech-encoder` first"), "{stderr}");
    let marker = std::fs::read_to_string(dir.path().join("manifests/convert.incomplete")).unwrap();
    assert!(marker.starts_with("failed:"));
}

#[test]
fn unknown_command_and_bad_config_exit_nonzero() {
    let out = atyvc().arg("train-everything").output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unrecognized subcommand"));
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[corpus]\ntypical_speakers = 1\n").unwrap();
    let out = atyvc().args(["show-config", "--config"]).arg(&cfg).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("invalid config"));
}

#[test]
fn workspace_defaults_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = atyvc().arg("adapt").env("ATYVC_WORKSPACE", dir.path()).output().unwrap();
    assert!(!out.status.success());
    assert!(dir.path().join("manifests/adapt.incomplete").exists());
}

#[test]
fn paper_scale_profile_resolves() {
    let out = atyvc().args(["show-config", "--profile", "paper-scale", "--seed", "3"]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("profile = \"paper-scale\""));
    assert!(text.contains("seed = 3"));
}
