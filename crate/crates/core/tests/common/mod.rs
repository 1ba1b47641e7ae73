//! Helpers shared by the integration tests that drive the `stdgs` binary.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use stdgs::cli::Pose;
use stdgs::dataio::fixtures;

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_stdgs")
}

pub fn fixture_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/sprite64.json")
}

pub fn stdgs(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

/// Runs every stage on the bundled 64×64 fixture under `root` and returns
/// the exit codes in stage order.
pub fn run_pipeline(root: &Path, threads: usize) -> Vec<(&'static str, i32, String)> {
    let t = threads.to_string();
    let data = root.join("data");
    let decomp = root.join("decomp");
    let tracks = root.join("tracks");
    let model = root.join("model");
    let pose = root.join("pose.json");
    let view = root.join("view.png");
    let layers = root.join("layers");
    let script = fixtures::moving_sprite(64);
    let p = Pose {
        width: 64,
        height: 64,
        camera: script.camera_at(50_000.0),
    };
    std::fs::write(&pose, serde_json::to_vec_pretty(&p).unwrap()).unwrap();
    let fixture = fixture_path();
    let stages: Vec<(&'static str, Vec<&str>)> = vec![
        ("simulate", vec!["simulate", "--script", s(&fixture), "--out", s(&data)]),
        ("disentangle", vec!["disentangle", "--data", s(&data), "--out", s(&decomp)]),
        (
            "track",
            vec!["track", "--data", s(&data), "--decomp", s(&decomp), "--out", s(&tracks)],
        ),
        (
            "train",
            vec![
                "train",
                "--data",
                s(&data),
                "--decomp",
                s(&decomp),
                "--tracks",
                s(&tracks),
                "--out",
                s(&model),
                "--phase1-iters",
                "60",
                "--phase2-iters",
                "20",
            ],
        ),
        (
            "render",
            vec![
                "render",
                "--scene",
                s(&model),
                "--pose",
                s(&pose),
                "--time-us",
                "50000",
                "--out",
                s(&view),
                "--dump-layers",
                s(&layers),
            ],
        ),
        ("eval", vec!["eval", "--data", s(&data), "--model", s(&model)]),
    ];
    stages
        .into_iter()
        .map(|(name, mut args)| {
            args.extend(["--threads", t.as_str()]);
            let out = stdgs(&args);
            (
                name,
                out.status.code().unwrap_or(-1),
                String::from_utf8_lossy(&out.stderr).into_owned(),
            )
        })
        .collect()
}

/// Every output file under `root` by relative path. Run manifests and the
/// report summary line carry wall-clock times and are left out.
pub fn snapshot(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
                continue;
            }
            let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
            if rel.ends_with("run_manifest.json") {
                continue;
            }
            let mut bytes = std::fs::read(&p).unwrap();
            if rel.ends_with(".jsonl") {
                let text = String::from_utf8(bytes).unwrap();
                bytes = text
                    .lines()
                    .filter(|l| !l.contains("\"summary\""))
                    .collect::<Vec<_>>()
                    .join("\n")
                    .into_bytes();
            }
            files.insert(rel, bytes);
        }
    }
    files
}
