#![allow(dead_code)]

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

/// Writes `json` as `config.json` under `dir` and returns its path.
pub fn write_config(dir: &Path, json: &str) -> PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, json).unwrap();
    path
}

/// A fast harmonic-task config: one narrow hidden layer, short training.
pub fn small_harmonic(total_steps: u64, output_dir: &Path) -> String {
    format!(
        r#"{{
  "task": {{"kind": {{"type": "ode_harmonic", "dim": 1, "endpoint_noise_std": 0.01}}, "seed": 3}},
  "field": {{"input_dim": 1, "hidden_widths": [8], "time_embed_dim": 4, "base_frequency": 10.0, "seed": 1}},
  "train": {{"total_steps": {total_steps}, "batch_size": 16, "lr0": 0.001,
            "schedule": {{"kind": "warmup", "warmup_steps": 4}}, "seed": 2}},
  "eval": {{"n_samples": 64, "few_step_ns": [1, 2, 4], "path_steps": 8}},
  "output_dir": {:?},
  "diagnose": {{"samples": 200, "dim": 2, "min_gap": 0.001, "seed": 5}},
  "ablation": {{"seeds": [0, 1], "variance_window": 4}}
}}"#,
        output_dir.display().to_string()
    )
}

pub fn sha256_file(path: &Path) -> String {
    let bytes = std::fs::read(path).unwrap();
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Every file below `root`, as `/`-separated relative paths.
pub fn list_files(root: &Path) -> Vec<String> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<String>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).unwrap();
                let parts: Vec<String> = rel.iter().map(|c| c.to_string_lossy().into_owned()).collect();
                out.push(parts.join("/"));
            }
        }
    }
    let mut out = Vec::new();
    walk(root, root, &mut out);
    out.sort();
    out
}
