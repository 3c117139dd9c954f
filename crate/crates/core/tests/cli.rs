use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn dgcf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dgcf"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = dgcf(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn read(path: &Path) -> String {
    fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn manifest(dir: &Path) -> HashMap<String, String> {
    read(&dir.join("manifest.txt"))
        .lines()
        .filter_map(|l| l.split_once(" = "))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

/// Train log without the wall-clock column.
fn losses(dir: &Path) -> Vec<String> {
    read(&dir.join("train_log.csv"))
        .lines()
        .map(|l| l.rsplit_once(',').unwrap().0.to_string())
        .collect()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn training_is_deterministic_and_replayable() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    let args = ["train", "--dataset", "toy", "--K", "4", "--L", "1", "--T", "2", "--epochs", "30", "--seed", "7"];
    for out in [&a, &b] {
        let mut full = args.to_vec();
        full.extend(["--out", s(out)]);
        ok(&full);
    }
    assert_eq!(losses(&a).len(), 31);
    assert_eq!(losses(&a), losses(&b));
    assert_eq!(read(&a.join("eval_log.csv")), read(&b.join("eval_log.csv")));
    assert_eq!(read(&a.join("metrics.csv")), read(&b.join("metrics.csv")));
    assert_eq!(fs::read(a.join("checkpoint.bin")).unwrap(), fs::read(b.join("checkpoint.bin")).unwrap());

    // re-running from the manifest alone reproduces the run
    ok(&["train", "--config", s(&a.join("manifest.txt")), "--out", s(&c)]);
    assert_eq!(losses(&a), losses(&c));
    assert_eq!(fs::read(a.join("checkpoint.bin")).unwrap(), fs::read(c.join("checkpoint.bin")).unwrap());

    let m = manifest(&a);
    assert_eq!(m["K"], "4");
    assert_eq!(m["seed"], "7");
    assert_eq!(m["threads"], "1");
    assert_eq!(m["dataset"], "toy");
    assert_eq!(m["manifest.users"], "200");
    assert!(m.contains_key("manifest.engine-version"));
    assert!(m["manifest.artifact.checkpoint"].ends_with("checkpoint.bin"));
}

#[test]
fn indivisible_dimension_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = dgcf(&["train", "--dataset", "toy", "--K", "3", "--d", "64", "--out", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("d"), "{err}");
    assert!(!tmp.path().join("checkpoint.bin").exists());
}

#[test]
fn degenerate_run_is_labelled() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&["train", "--dataset", "toy", "--L", "0", "--K", "1", "--cor-weight", "0", "--epochs", "1", "--out", s(tmp.path())]);
    assert_eq!(manifest(tmp.path())["manifest.label"], "MF-equivalent");
}

#[test]
fn flags_override_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.cfg");
    fs::write(&cfg, "K = 2\nd = 8\nepochs = 1\nlr = 0.5\ndataset = toy\n").unwrap();
    let out = tmp.path().join("out");
    ok(&["train", "--config", s(&cfg), "--lr", "0.01", "--out", s(&out)]);
    let m = manifest(&out);
    assert_eq!(m["K"], "2");
    assert_eq!(m["d"], "8");
    assert_eq!(m["lr"], "0.01");
    // unspecified keys are materialized with their defaults
    assert_eq!(m["batch-size"], "1024");
    assert_eq!(m["affinity"], "both");
}

#[test]
fn unknown_config_key_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.cfg");
    fs::write(&cfg, "K = 2\nlearning-rate = 0.1\n").unwrap();
    let out = dgcf(&["train", "--dataset", "toy", "--config", s(&cfg), "--out", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning-rate"));
}

#[test]
fn missing_dataset_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = dgcf(&["stats", "--dataset-dir", s(&tmp.path().join("nope"))]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn numeric_blowup_exits_4_and_keeps_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let out = dgcf(&["train", "--dataset", "toy", "--K", "2", "--d", "8", "--lr", "1e300", "--epochs", "5", "--out", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(tmp.path().join("checkpoint.bin").exists());
    assert!(tmp.path().join("manifest.txt").exists());
}

#[test]
fn synth_stats_and_model_commands() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let run = tmp.path().join("run");
    ok(&["synth", "--out", s(&data)]);
    let stats = ok(&["stats", "--dataset-dir", s(&data)]);
    let mut lines = stats.lines();
    assert_eq!(lines.next(), Some("users,items,interactions,density"));
    assert!(lines.next().unwrap().starts_with("200,300,6000,"));

    ok(&["train", "--dataset-dir", s(&data), "--K", "2", "--d", "16", "--epochs", "4", "--eval-every", "2", "--lr", "0.01", "--out", s(&run)]);
    let ck = run.join("checkpoint.bin");

    // evaluate right after training matches the in-training evaluation
    let eval_dir = tmp.path().join("eval");
    ok(&["evaluate", "--checkpoint", s(&ck), "--out", s(&eval_dir)]);
    assert_eq!(read(&eval_dir.join("metrics.csv")), read(&run.join("metrics.csv")));
    assert_eq!(manifest(&eval_dir)["dataset-dir"], s(&data));

    // tau = 1 row equals plain evaluation
    let probe_dir = tmp.path().join("probe");
    let probe = ok(&["probe", "--checkpoint", s(&ck), "--tau", "1,1e4,1e10", "--out", s(&probe_dir)]);
    let metrics = read(&eval_dir.join("metrics.csv"));
    let plain: Vec<&str> = metrics.lines().nth(1).unwrap().split(',').collect();
    let first: Vec<&str> = probe.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(&first[1..], &plain[1..3]);
    assert_eq!(read(&probe_dir.join("probe.csv")).lines().count(), 4);

    let default_probe = ok(&["probe", "--checkpoint", s(&ck), "--out", s(&probe_dir)]);
    assert_eq!(default_probe.lines().count(), 12);

    // dcor with a fixed seed is reproducible
    let d1 = ok(&["dcor", "--checkpoint", s(&ck), "--sample-size", "100", "--seed", "3", "--out", s(&tmp.path().join("d1"))]);
    let d2 = ok(&["dcor", "--checkpoint", s(&ck), "--sample-size", "100", "--seed", "3", "--out", s(&tmp.path().join("d2"))]);
    assert_eq!(d1, d2);
    assert!(d1.starts_with("sample_size,seed,mean_dcor\n100,3,"));
}

#[test]
fn exported_intents_are_complete_and_normalized() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let run = tmp.path().join("run");
    ok(&["synth", "--out", s(&data)]);
    ok(&["train", "--dataset-dir", s(&data), "--K", "4", "--d", "16", "--L", "2", "--epochs", "1", "--out", s(&run)]);
    let ck = run.join("checkpoint.bin");
    let exp = tmp.path().join("exp");
    // user 999 does not exist and is skipped
    let out = dgcf(&["export-intents", "--checkpoint", s(&ck), "--users", "0,5,999", "--layer", "2", "--out", s(&exp)]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("999"));

    let train = read(&data.join("train.txt"));
    let degree = |u: usize| train.lines().nth(u).unwrap().split_whitespace().count() - 1;
    let csv = read(&exp.join("intents.csv"));
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("layer,user,item,intent,weight"));
    let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').map(str::to_string).collect()).collect();
    assert_eq!(rows.len(), (degree(0) + degree(5)) * 4);

    let mut sums: HashMap<(String, String), f64> = HashMap::new();
    for r in &rows {
        assert_eq!(r[0], "2");
        *sums.entry((r[1].clone(), r[2].clone())).or_default() += r[4].parse::<f64>().unwrap();
    }
    for (edge, total) in sums {
        assert!((total - 1.0).abs() < 1e-6, "{edge:?} sums to {total}");
    }
}

#[test]
fn single_intent_checkpoints_are_refused_by_diagnostics() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    ok(&["train", "--dataset", "toy", "--K", "1", "--d", "8", "--epochs", "1", "--out", s(&run)]);
    let ck = run.join("checkpoint.bin");
    for cmd in ["probe", "dcor"] {
        let out = dgcf(&[cmd, "--checkpoint", s(&ck), "--out", s(&tmp.path().join(cmd))]);
        assert_eq!(out.status.code(), Some(2), "{cmd}");
        assert!(String::from_utf8_lossy(&out.stderr).contains("intent"));
    }
    // K = 1 export carries weight 1 everywhere
    let exp = tmp.path().join("exp");
    ok(&["export-intents", "--checkpoint", s(&ck), "--users", "3", "--out", s(&exp)]);
    for line in read(&exp.join("intents.csv")).lines().skip(1) {
        assert_eq!(line.rsplit(',').next().unwrap().parse::<f64>().unwrap(), 1.0);
    }
}

#[test]
fn checkpoint_dataset_mismatch_is_explicit() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    ok(&["train", "--dataset", "toy", "--K", "2", "--d", "8", "--epochs", "1", "--out", s(&run)]);
    let small = tmp.path().join("small");
    fs::create_dir_all(&small).unwrap();
    fs::write(small.join("train.txt"), "0 0 1\n1 1\n").unwrap();
    fs::write(small.join("test.txt"), "0 2\n").unwrap();
    let out = dgcf(&["evaluate", "--checkpoint", s(&run.join("checkpoint.bin")), "--dataset-dir", s(&small), "--out", s(&tmp.path().join("e"))]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("users"));
}
