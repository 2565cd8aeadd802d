#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

pub fn celladapt(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_celladapt"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn celladapt")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

/// Flags shared by every pipeline command, small enough to run quickly.
pub const PIPELINE: &[&str] = &[
    "--data", "data/data.csv",
    "--store", "store",
    "--report-dir", "reports",
    "--run-id", "r1",
    "--seed", "3",
    "--k", "1,2",
    "--variants", "uni,all",
    "--holdout", "cell005",
    "--set", "training.epochs=3",
    "--set", "predictor.hidden=3",
    "--set", "kmeans.n_init=2",
    "--set", "eval.baseline_cells=cell000",
    "--set", "ood.buffer_min_segments=1",
    "--set", "ood.quantile=0.5",
];

/// Runs synth and every pipeline command in `dir`, asserting success.
pub fn run_pipeline(dir: &Path) {
    let out = celladapt(dir, &["synth", "--out", "data", "--cells", "6", "--weeks", "2", "--seed", "7"]);
    assert_eq!(code(&out), 0, "synth: {}", String::from_utf8_lossy(&out.stderr));
    for cmd in ["cluster", "train", "eval", "report", "ood-recluster"] {
        let mut args = vec![cmd];
        args.extend_from_slice(PIPELINE);
        let out = celladapt(dir, &args);
        assert_eq!(code(&out), 0, "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

/// Every JSON and CSV file under `dir`, keyed by relative path.
pub fn artifacts(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else if matches!(path.extension().and_then(|e| e.to_str()), Some("json" | "csv")) {
                let rel = path.strip_prefix(root).unwrap().display().to_string();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}
