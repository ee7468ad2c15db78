use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn tubekit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tubekit")).args(args).output().unwrap()
}

fn ok(args: &[&str]) {
    let out = tubekit(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn golden(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/data/golden")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn files(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    v.sort();
    v
}

#[test]
fn evaluate_matches_the_golden_metrics() {
    let dir = tempfile::tempdir().unwrap();
    ok(&[
        "evaluate",
        "--scored",
        &golden("scored.jsonl"),
        "--groundtruth",
        &golden("groundtruth.jsonl"),
        "--taus",
        "0.5,0.6,0.7",
        "--out",
        &s(dir.path()),
    ]);
    let got = std::fs::read_to_string(dir.path().join("metrics.json")).unwrap();
    assert_eq!(got, std::fs::read_to_string(golden("metrics.json")).unwrap());
    assert!(dir.path().join("pr_waving_0.7.csv").exists());
    assert!(dir.path().join("evaluate.manifest.json").exists());
}

#[test]
fn synth_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        ok(&[
            "synth",
            "--preset",
            "visible",
            "--videos",
            "4",
            "--seed",
            "7",
            "--out",
            &s(d.path()),
        ]);
    }
    let (fa, fb) = (files(a.path()), files(b.path()));
    assert_eq!(fa.len(), 11);
    for (x, y) in fa.iter().zip(&fb) {
        assert_eq!(x.file_name(), y.file_name());
        assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap(), "{x:?}");
    }
}

#[test]
fn missing_detections_exit_2_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let out = tubekit(&[
        "build-tubes",
        "--detections",
        &s(&dir.path().join("nope.jsonl")),
        "--out",
        &s(&out_dir),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out_dir.exists());
    let out = tubekit(&["build-tubes", "--out", &s(&out_dir)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out_dir.exists());
}

#[test]
fn bad_configs_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"k": 0}"#).unwrap();
    let out = tubekit(&[
        "--config",
        &s(&cfg),
        "synth",
        "--videos",
        "2",
        "--out",
        &s(&dir.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    std::fs::write(&cfg, r#"{"kk": 3}"#).unwrap();
    let out = tubekit(&["--config", &s(&cfg), "synth", "--out", &s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(tubekit(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(
        tubekit(&["synth", "--preset", "nope", "--out", &s(dir.path())])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn failed_runs_leave_nothing_behind() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("c");
    ok(&["synth", "--preset", "visible", "--videos", "2", "--out", &s(&corpus)]);
    // stored detections carry no full-body boxes and no regressor is given
    let out_dir = dir.path().join("tubes");
    let out = tubekit(&[
        "build-tubes",
        "--detections",
        &s(&corpus.join("detections.jsonl")),
        "--out",
        &s(&out_dir),
    ]);
    assert!(!out.status.success());
    assert!(files(&out_dir).is_empty());
}

#[test]
fn config_file_drives_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    let out_dir = dir.path().join("o");
    std::fs::write(
        &cfg,
        format!(
            r#"{{"paths": {{"scored": "{}", "groundtruth": "{}", "out": "{}"}}, "taus": [0.5, 0.6, 0.7]}}"#,
            golden("scored.jsonl"),
            golden("groundtruth.jsonl"),
            s(&out_dir)
        ),
    )
    .unwrap();
    ok(&["--config", &s(&cfg), "evaluate"]);
    assert_eq!(
        std::fs::read_to_string(out_dir.join("metrics.json")).unwrap(),
        std::fs::read_to_string(golden("metrics.json")).unwrap()
    );
}

#[test]
fn replay_reproduces_and_checks_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("c");
    ok(&[
        "synth",
        "--preset",
        "occlusion",
        "--videos",
        "4",
        "--seed",
        "3",
        "--out",
        &s(&corpus),
    ]);
    let work = dir.path().join("w");
    ok(&[
        "label-proposals",
        "--training",
        &s(&corpus.join("training.jsonl")),
        "--model",
        &s(&corpus.join("detector_model.json")),
        "--out",
        &s(&work),
    ]);
    let manifest = work.join("label-proposals.manifest.json");
    let again = dir.path().join("again");
    ok(&["replay", "--manifest", &s(&manifest), "--out", &s(&again)]);
    assert_eq!(
        std::fs::read(&manifest).unwrap(),
        std::fs::read(again.join("label-proposals.manifest.json")).unwrap()
    );
    assert_eq!(
        std::fs::read(work.join("labeled.jsonl")).unwrap(),
        std::fs::read(again.join("labeled.jsonl")).unwrap()
    );

    let synth_again = dir.path().join("synth");
    ok(&[
        "replay",
        "--manifest",
        &s(&corpus.join("synth.manifest.json")),
        "--out",
        &s(&synth_again),
    ]);
    assert_eq!(
        std::fs::read(corpus.join("detections.jsonl")).unwrap(),
        std::fs::read(synth_again.join("detections.jsonl")).unwrap()
    );

    std::fs::write(corpus.join("training.jsonl"), "").unwrap();
    let out = tubekit(&[
        "replay",
        "--manifest",
        &s(&manifest),
        "--out",
        &s(&dir.path().join("x")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn stage_chain_produces_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let c = dir.path().join("c");
    let w = dir.path().join("w");
    let cp = |n: &str| s(&c.join(n));
    let wp = |n: &str| s(&w.join(n));
    ok(&[
        "synth",
        "--preset",
        "visible",
        "--videos",
        "4",
        "--seed",
        "2",
        "--out",
        &s(&c),
    ]);
    ok(&[
        "cluster-parts",
        "--training",
        &cp("training.jsonl"),
        "--skeleton",
        &cp("skeleton.json"),
        "--k",
        "8",
        "--out",
        &s(&w),
    ]);
    ok(&[
        "complete-pose",
        "--library",
        &cp("pose_library.jsonl"),
        "--queries",
        &cp("eval_poses.jsonl"),
        "--out",
        &s(&w),
    ]);
    ok(&[
        "keypoint-ablation",
        "--library",
        &cp("pose_library.jsonl"),
        "--eval-poses",
        &cp("eval_poses.jsonl"),
        "--directions",
        "lowest,highest",
        "--out",
        &s(&w),
    ]);
    ok(&["ablate", "--corpus", &s(&c), "--parts", "1,2", "--out", &s(&w)]);
    for f in [
        "part_model.json",
        "clusters.json",
        "completions.jsonl",
        "removal_curve.csv",
        "ablation_parts.json",
        "ablation_target.txt",
        "ablate.manifest.json",
    ] {
        assert!(w.join(f).exists(), "{f}");
    }
    let csv = std::fs::read_to_string(wp("removal_curve.csv")).unwrap();
    assert!(csv.starts_with("direction,visible,mean_iou\nlowest,13,"));
    assert_eq!(csv.lines().count(), 1 + 2 * 12);
}
