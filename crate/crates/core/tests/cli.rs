mod common;

use common::{fixture_path, run_pipeline, stdgs};
use stdgs::dataio::{fixtures, SceneScript};

#[test]
fn help_lists_all_subcommands() {
    let out = stdgs(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    for cmd in ["simulate", "disentangle", "track", "train", "render", "eval"] {
        assert!(text.contains(cmd), "missing {cmd} in:\n{text}");
    }
}

#[test]
fn train_without_data_names_the_flag() {
    let out = stdgs(&["train", "--decomp", "d", "--tracks", "t", "--out", "o"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--data"));
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let out = stdgs(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());
}

#[test]
fn missing_data_directory_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope");
    let out = stdgs(&["disentangle", "--data", missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn malformed_script_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let script = dir.path().join("bad.json");
    std::fs::write(&script, "{ not json").unwrap();
    let out = stdgs(&[
        "simulate",
        "--script",
        script.to_str().unwrap(),
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn bundled_fixture_matches_generator() {
    let text = std::fs::read_to_string(fixture_path()).unwrap();
    let script: SceneScript = serde_json::from_str(&text).unwrap();
    assert_eq!(script, fixtures::moving_sprite(64));
}

#[test]
fn full_pipeline_produces_documented_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    for (stage, code, err) in run_pipeline(root, 1) {
        assert_eq!(code, 0, "{stage} failed: {err}");
    }
    for rel in [
        "data/manifest.json",
        "data/events.txt",
        "data/manifest_blur.json",
        "data/script.json",
        "data/run_manifest.json",
        "decomp/run_manifest.json",
        "tracks/run_manifest.json",
        "model/scene.json",
        "model/overlap.json",
        "model/report.jsonl",
        "model/train_config.json",
        "model/run_manifest.json",
        "model/metrics.json",
        "model/metrics.run_manifest.json",
        "view.png",
        "view.run_manifest.json",
    ] {
        assert!(root.join(rel).is_file(), "missing {rel}");
    }
    let tracks: Vec<_> = std::fs::read_dir(root.join("tracks"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with("trajectory_"))
        .collect();
    assert!(!tracks.is_empty());
    let m: serde_json::Value = serde_json::from_slice(&std::fs::read(root.join("model/run_manifest.json")).unwrap()).unwrap();
    assert_eq!(m["stage"], "train");
    assert_eq!(m["schema_version"], 1);
    assert!(m["wall_clock_s"].as_f64().unwrap() >= 0.0);

    // A divergence factor of zero trips the guard on the first check.
    let cfg = root.join("diverge.json");
    std::fs::write(
        &cfg,
        r#"{"divergence_factor": 0.0, "divergence_patience": 3, "phase1_iters": 20, "phase2_iters": 0}"#,
    )
    .unwrap();
    let p = |s: &str| root.join(s).to_str().unwrap().to_string();
    let out = stdgs(&[
        "train",
        "--data",
        &p("data"),
        "--decomp",
        &p("decomp"),
        "--tracks",
        &p("tracks"),
        "--config",
        &p("diverge.json"),
        "--out",
        &p("diverged"),
    ]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!root.join("diverged/scene.json").exists());
}
