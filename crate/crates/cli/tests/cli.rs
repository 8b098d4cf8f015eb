use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn satpt(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_satpt"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

fn ok(args: &[&str], cwd: &Path) -> Output {
    let o = satpt(args, cwd);
    assert!(o.status.success(), "{args:?} failed: {}", text(&o));
    o
}

const SMALL: [&str; 14] = [
    "--set", "steps=6",
    "--set", "batch_size=4",
    "--set", "utterance_length=3200",
    "--set", "encoder.model_dim=16",
    "--set", "encoder.num_heads=2",
    "--set", "encoder.num_classes=6",
    "--set", "losses.num_negatives=8",
];

fn corpus(dir: &Path) {
    ok(&["synth", "--out", "c", "--speakers", "3", "--utterances", "3", "--duration", "0.2", "--seed", "4"], dir);
}

#[test]
fn no_arguments_prints_usage_and_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = satpt(&[], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o).contains("Usage"));
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = satpt(&["frobnicate"], dir.path());
    assert_ne!(o.status.code(), Some(0));
    assert!(text(&o).contains("Usage"));
}

#[test]
fn invalid_config_key_is_named() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path());
    let o = satpt(&["pretrain", "--manifest", "c/manifest.jsonl", "--out", "p", "--set", "encoder.bogus=3"], dir.path());
    assert!(!o.status.success());
    assert!(text(&o).contains("encoder.bogus"), "{}", text(&o));
}

#[test]
fn gradcheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = ok(&["gradcheck", "--seed", "1", "--out", "g"], dir.path());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["max_rel_error"].as_f64().unwrap() < 1e-4);
    assert!(v["coordinates"].as_u64().unwrap() >= 200);
    assert!(dir.path().join("g/gradcheck.json").exists());
    assert!(dir.path().join("g/run.json").exists());
}

#[test]
fn full_pipeline_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    corpus(d);
    assert_eq!(fs::read_to_string(d.join("c/manifest.jsonl")).unwrap().lines().count(), 9);
    ok(&["mfcc", "--manifest", "c/manifest.jsonl", "--out", "f"], d);
    ok(&["cluster", "--manifest", "c/manifest.jsonl", "--features", "f", "--out", "l", "--k", "6"], d);
    ok(&["mix", "--manifest", "c/manifest.jsonl", "--out", "m", "--batches", "2", "--set", "batch_size=4", "--set", "utterance_length=3200", "--set", "mix.probability=1.0"], d);
    assert_eq!(fs::read_to_string(d.join("m/specs.jsonl")).unwrap().lines().count(), 2);
    assert_eq!(fs::read_dir(d.join("m/mixed")).unwrap().count(), 8);

    let mut args = vec!["pretrain", "--manifest", "c/manifest.jsonl", "--labels", "l/labels.jsonl", "--out", "p", "--seed", "3"];
    args.extend(SMALL);
    ok(&args, d);
    assert_eq!(fs::read_to_string(d.join("p/metrics.jsonl")).unwrap().lines().count(), 6);
    assert!(d.join("p/checkpoint/checkpoint.json").exists());

    ok(&["recluster", "--checkpoint", "p/checkpoint", "--manifest", "c/manifest.jsonl", "--out", "r"], d);
    let first = fs::read_to_string(d.join("r/labels.jsonl")).unwrap();
    assert!(first.contains("embedding:layer2"));

    let o = ok(&["probe", "--checkpoint", "p/checkpoint", "--manifest", "c/manifest.jsonl", "--steps", "50", "--out", "pr"], d);
    assert!(String::from_utf8_lossy(&o.stdout).contains("layer  0 |"));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("pr/probe.json")).unwrap()).unwrap();
    let total: f64 = report["weights"].as_object().unwrap().values().map(|v| v.as_f64().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-8);

    ok(&["probe", "--checkpoint", "p/checkpoint", "--manifest", "c/manifest.jsonl", "--target", "labels", "--labels", "r/labels.jsonl", "--steps", "20"], d);

    for sub in ["c", "f", "l", "m", "p", "r", "pr"] {
        let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join(sub).join("run.json")).unwrap()).unwrap();
        assert_eq!(m["config_hash"].as_str().unwrap().len(), 64, "{sub}");
        assert!(m["wall_time_secs"].as_f64().is_some());
    }
}

#[test]
fn pretrain_is_reproducible_and_resumable() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    corpus(d);
    let run = |out: &str, extra: &[&str]| {
        let mut args = vec!["pretrain", "--manifest", "c/manifest.jsonl", "--out", out, "--seed", "8"];
        args.extend(SMALL);
        args.extend(extra);
        ok(&args, d);
    };
    run("a", &[]);
    run("b", &[]);
    run("c", &["--stop-at", "3"]);
    ok(&["pretrain", "--manifest", "c/manifest.jsonl", "--out", "c", "--resume", "c/checkpoint"], d);
    let read = |p: &str| fs::read(d.join(p)).unwrap();
    assert_eq!(read("a/metrics.jsonl"), read("b/metrics.jsonl"));
    assert_eq!(read("a/metrics.jsonl"), read("c/metrics.jsonl"));
    assert_eq!(read("a/checkpoint/params.f64"), read("c/checkpoint/params.f64"));
}

#[test]
fn config_file_and_set_flags_hash_alike() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    corpus(d);
    fs::write(d.join("cfg.json"), r#"{"mix": {"probability": 0.5}}"#).unwrap();
    ok(&["mix", "--manifest", "c/manifest.jsonl", "--out", "x", "--config", "cfg.json", "--set", "batch_size=4", "--set", "utterance_length=3200"], d);
    ok(&["mix", "--manifest", "c/manifest.jsonl", "--out", "y", "--set", "mix.probability=0.5", "--set", "batch_size=4", "--set", "utterance_length=3200"], d);
    let hash = |p: &str| {
        let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join(p).join("run.json")).unwrap()).unwrap();
        v["config_hash"].as_str().unwrap().to_string()
    };
    assert_eq!(hash("x"), hash("y"));
    assert_eq!(fs::read(d.join("x/specs.jsonl")).unwrap(), fs::read(d.join("y/specs.jsonl")).unwrap());
}

#[test]
fn named_seed_flags_change_only_their_stream() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    corpus(d);
    let mix = |out: &str, extra: &[&str]| {
        let mut args = vec!["mix", "--manifest", "c/manifest.jsonl", "--out", out, "--set", "batch_size=4", "--set", "utterance_length=3200", "--set", "mix.probability=1.0"];
        args.extend(extra);
        ok(&args, d);
        fs::read_to_string(d.join(out).join("specs.jsonl")).unwrap()
    };
    let a = mix("a", &["--seed-mixing", "1"]);
    let b = mix("b", &["--seed-mixing", "2"]);
    let c = mix("c", &["--seed-mixing", "1"]);
    assert_ne!(a, b);
    assert_eq!(a, c);
}

#[test]
fn sweep_mix_reports_one_row_per_ratio() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["sweep-mix", "--out", "s", "--seeds", "1", "--speakers", "2", "--utterances", "4", "--duration", "0.2"];
    args.extend(SMALL);
    let o = ok(&args, dir.path());
    let rows: Vec<serde_json::Value> = fs::read_to_string(dir.path().join("s/sweep.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let ps: Vec<f64> = rows.iter().map(|r| r["mix_probability"].as_f64().unwrap()).collect();
    assert_eq!(ps, vec![0.0, 0.2, 0.5]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("mean"));
}
