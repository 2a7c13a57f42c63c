#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const BIN: &str = env!("CARGO_BIN_EXE_popcorn");

/// A config small enough to train in well under a second.
pub fn tiny_config(seed: u64, n_labeled: i64, n_unlabeled: i64, n_test: i64) -> String {
    format!(
        r#"seed = {seed}
data_dir = "data"
out_dir = "run"

[synth]
n_labeled = {n_labeled}
n_unlabeled = {n_unlabeled}
n_test = {n_test}
image_size = [16, 16]
lesion_radius = [1.5, 2.5]

[model]
base_filters = 4
depth = 2
patch_size = [16, 16]

[trainer]
k = 2
n = 1
initial_epochs = 3
patience = 0
batch_size = 2
lr = 0.001
"#
    )
}

pub fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("config.toml");
    fs::write(&path, text).unwrap();
    path
}

pub fn popcorn(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("POPCORN_SEED")
        .output()
        .expect("binary runs")
}

pub fn ok(args: &[&str]) -> Output {
    let out = popcorn(args);
    assert!(
        out.status.success(),
        "popcorn {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Sorted relative paths of every file under `dir`.
pub fn files(dir: &Path) -> Vec<String> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(dir).unwrap().to_string_lossy().into_owned());
            }
        }
    }
    out.sort();
    out
}
