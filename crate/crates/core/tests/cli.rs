mod common;

use common::{dualdet_in, run_cli_pipeline, snapshot, write_coco_fixture};

fn code(dir: &std::path::Path, args: &[&str]) -> Option<i32> {
    dualdet_in(dir, args).status.code()
}

#[test]
fn every_command_is_byte_reproducible() {
    let a = run_cli_pipeline().unwrap();
    let b = run_cli_pipeline().unwrap();
    let names: Vec<_> = a.keys().map(|p| p.display().to_string()).collect();
    for expected in [
        "semi/history.csv",
        "semi/checkpoint_teacher.json",
        "sup/checkpoint_final.json",
        "eval_ckpt/metrics.json",
        "eval_coco/metrics.csv",
        "sweeps/sweep_tau.csv",
        "sweeps/sweep_queries.csv",
        "sweeps/sweep_strategy.csv",
    ] {
        assert!(names.iter().any(|n| n == expected), "missing {expected} in {names:?}");
    }
    assert!(!b.contains_key(std::path::Path::new("sup/checkpoint_teacher.json")));
    assert_eq!(a, b);
}

#[test]
fn outputs_carry_the_config() {
    let files = run_cli_pipeline().unwrap();
    let history = String::from_utf8(files[std::path::Path::new("semi/history.csv")].clone()).unwrap();
    assert!(history.starts_with("# mode=semi"), "{history}");
    assert!(history.contains("\n# tau=0.7 N=30 T=400 K=6 "), "{history}");
    assert!(history.contains("# config: {"));
    let tau = String::from_utf8(files[std::path::Path::new("sweeps/sweep_tau.csv")].clone()).unwrap();
    assert!(tau.contains("# kind=tau"));
    let metrics: serde_json::Value =
        serde_json::from_slice(&files[std::path::Path::new("eval_ckpt/metrics.json")]).unwrap();
    assert!(metrics.get("config").is_some());
    assert!(metrics["map"].as_f64().unwrap() >= 0.0);
}

#[test]
fn coco_evaluation_matches_hand_value() {
    let dir = tempfile::tempdir().unwrap();
    write_coco_fixture(dir.path());
    let out = dualdet_in(
        dir.path(),
        &[
            "eval",
            "--annotations",
            "ann.json",
            "--results",
            "res.json",
            "--out-dir",
            "m",
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let metrics: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("m/metrics.json")).unwrap()).unwrap();
    assert!((metrics["map"].as_f64().unwrap() - 0.8350).abs() < 5e-5, "{metrics}");
}

#[test]
fn full_threshold_equals_supervised_run() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(
        code(d, &["gen", "--seed", "2", "--count", "20", "--out", "s.jsonl"]),
        Some(0)
    );
    let common = [
        "--seed",
        "2",
        "--data",
        "s.jsonl",
        "--labeled-fraction",
        "0.3",
        "--epochs",
        "5",
        "--burn-in-epochs",
        "1",
    ];
    let sup: Vec<&str> = ["train", "--mode", "sup", "--out-dir", "sup"]
        .iter()
        .chain(&common)
        .copied()
        .collect();
    let semi: Vec<&str> = ["train", "--mode", "semi", "--tau", "1.0", "--out-dir", "semi"]
        .iter()
        .chain(&common)
        .copied()
        .collect();
    assert_eq!(code(d, &sup), Some(0));
    assert_eq!(code(d, &semi), Some(0));
    let weights = |p: &str| {
        let mut v: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join(p)).unwrap()).unwrap();
        v.as_object_mut().unwrap().remove("config");
        v
    };
    assert_eq!(
        weights("sup/checkpoint_final.json"),
        weights("semi/checkpoint_final.json")
    );
}

#[test]
fn exit_codes_follow_the_contract() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(d, &["--help"]), Some(0));
    assert_eq!(code(d, &["frobnicate"]), Some(2));
    assert_eq!(code(d, &["gen", "--count", "0", "--out", "x.jsonl"]), Some(2));
    assert_eq!(
        code(d, &["train", "--data", "missing.jsonl", "--out-dir", "o"]),
        Some(2)
    );
    assert_eq!(code(d, &["sweep", "--kind", "bogus"]), Some(2));
    assert_eq!(
        code(d, &["gen", "--count", "12", "--seed", "1", "--out", "s.jsonl"]),
        Some(0)
    );
    assert_eq!(
        code(
            d,
            &[
                "train",
                "--data",
                "s.jsonl",
                "--out-dir",
                "o",
                "--labeled-fraction",
                "1.5"
            ]
        ),
        Some(2)
    );
    // a learning rate at the edge of f64 overflows the parameters on the first step
    assert_eq!(
        code(
            d,
            &[
                "train",
                "--data",
                "s.jsonl",
                "--out-dir",
                "o",
                "--epochs",
                "2",
                "--burn-in-epochs",
                "1",
                "--lr",
                "1.79e308",
                "--box-lr-scale",
                "1"
            ]
        ),
        Some(3)
    );
    std::fs::write(d.join("bad.json"), "{\"epochs\": 3, \"bogus\": 1}").unwrap();
    assert_eq!(
        code(
            d,
            &["--config", "bad.json", "train", "--data", "s.jsonl", "--out-dir", "o"]
        ),
        Some(2)
    );
    let before = snapshot(d);
    assert_eq!(
        code(
            d,
            &[
                "eval",
                "--annotations",
                "nope.json",
                "--results",
                "nope.json",
                "--out-dir",
                "e"
            ]
        ),
        Some(2)
    );
    assert_eq!(before, snapshot(d));
}
