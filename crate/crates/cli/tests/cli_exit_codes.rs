use std::process::Command;

fn pttrust(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_pttrust"))
        .args(args)
        .env_remove("PTTRUST_CONFIG")
        .output()
        .unwrap();
    (out.status.code().unwrap(), String::from_utf8_lossy(&out.stderr).to_string())
}

#[test]
fn missing_config_is_a_config_error() {
    let (code, err) = pttrust(&["mutate", "--config", "/nonexistent/pttrust.toml"]);
    assert_eq!(code, 2, "{err}");
}

#[test]
fn bad_config_values_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "[metrics]\nk_values = []\n").unwrap();
    assert_eq!(pttrust(&["eval", "--config", cfg.to_str().unwrap()]).0, 2);
}

#[test]
fn missing_corpus_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "").unwrap();
    let (code, err) = pttrust(&["mutate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code, 3, "{err}");
    assert!(err.contains("corpus.jsonl"));
}

#[test]
fn corrupt_model_is_a_model_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "[paths]\ntrain_snippets = \"t.jsonl\"\n").unwrap();
    std::fs::write(dir.path().join("t.jsonl"), "").unwrap();
    std::fs::create_dir_all(dir.path().join("models")).unwrap();
    std::fs::write(dir.path().join("models/sae.ptsm"), b"garbage!garbage!").unwrap();
    let (code, err) = pttrust(&["bind", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code, 4, "{err}");
}

#[test]
fn env_var_supplies_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_pttrust"))
        .arg("mutate")
        .env("PTTRUST_CONFIG", &cfg)
        .output()
        .unwrap();
    // config found, corpus missing
    assert_eq!(out.status.code(), Some(3));
}
