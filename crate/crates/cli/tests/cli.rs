mod common;

use common::{artifacts, celladapt, code, run_pipeline, PIPELINE};

#[test]
fn pipeline_reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    run_pipeline(dir.path());
    let first = artifacts(dir.path());
    for expected in [
        "data/data.csv",
        "data/labels.csv",
        "store/r1/cluster_k2.json",
        "store/r1/uni/predictor_k2_c0.json",
        "store/r1/manifest.json",
        "store/r1/cluster_k2_ood.json",
        "reports/summary.json",
        "reports/report.csv",
        "reports/trace_k2_all.csv",
    ] {
        assert!(first.contains_key(expected), "missing {expected}: {:?}", first.keys());
    }
    run_pipeline(dir.path());
    assert_eq!(first, artifacts(dir.path()));
}

#[test]
fn user_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&celladapt(d, &["synth", "--out", "x", "--cells", "0"])), 2);
    assert_eq!(code(&celladapt(d, &["synth", "--out", "x", "--profiles", "6"])), 2);
    assert_eq!(code(&celladapt(d, &["frobnicate"])), 2);
    assert_eq!(code(&celladapt(d, &["cluster"])), 2);
    assert_eq!(code(&celladapt(d, &["synth", "--out", "data", "--cells", "6", "--weeks", "2"])), 0);

    let with = |extra: &[&str]| {
        let mut args = extra[..1].to_vec();
        args.extend_from_slice(PIPELINE);
        args.extend_from_slice(&extra[1..]);
        celladapt(d, &args)
    };
    let out = with(&["cluster", "--k", "99"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("exceeds"));
    assert_eq!(code(&with(&["cluster", "--set", "kmeans.bogus=1"])), 2);
    assert_eq!(code(&with(&["cluster", "--set", "seed=abc"])), 2);
    assert_eq!(code(&with(&["cluster", "--holdout", "cell077"])), 2);
    assert_eq!(code(&with(&["cluster", "--data", "nope.csv"])), 2);

    let out = with(&["train", "--run-id", "fresh"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("celladapt cluster"));
    assert_eq!(code(&with(&["report", "--report-dir", "nowhere"])), 2);
}

#[test]
fn config_file_and_flags_combine() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&celladapt(d, &["synth", "--out", "data", "--cells", "4", "--weeks", "2"])), 0);
    std::fs::write(
        d.join("run.toml"),
        "run_id = \"fromfile\"\n[paths]\ndata = \"data/data.csv\"\n[kmeans]\nk = [2]\nn_init = 1\n",
    )
    .unwrap();
    assert_eq!(code(&celladapt(d, &["cluster", "--config", "run.toml", "--set", "kmeans.k=1,2"])), 0);
    assert!(d.join("store/fromfile/cluster_k1.json").exists());
    assert!(d.join("store/fromfile/cluster_k2.json").exists());
    assert_eq!(code(&celladapt(d, &["cluster", "--config", "missing.toml"])), 2);
}
