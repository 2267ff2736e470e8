use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use oncode::graph_data::{experiment_groups, DataPaths, Dataset};
use oncode::hetero_encoder::VgaeModel;
use oncode::model::{load_checkpoint, Model, ModelConfig, MANIFEST_FILE};
use oncode::numkit::ParamSet;
use oncode::response::grouped_kfold;
use rand::SeedableRng;
use serde_json::Value;

fn oncode(args: &[&str]) -> Output {
    oncode_env(args, &[])
}

fn oncode_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_oncode"));
    cmd.args(args).env_remove("ONCODE_THREADS");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn ok(args: &[&str]) {
    let out = oncode(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn simulate(dir: &Path, extra: &[&str]) -> PathBuf {
    let d = dir.join("data");
    let mut args = vec!["simulate", "--seed", "7", "--out", s(&d)];
    args.extend(extra);
    ok(&args);
    d
}

fn report(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

fn losses(dir: &Path) -> Vec<f64> {
    fs::read_to_string(dir.join("loss_curve.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect()
}

fn read_all(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = walk(dir)
        .into_iter()
        .map(|p| {
            (
                p.strip_prefix(dir).unwrap().display().to_string(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

fn walk(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

#[test]
fn simulate_is_deterministic() {
    let t = tempfile::tempdir().unwrap();
    let a = t.path().join("a");
    let b = t.path().join("b");
    ok(&["simulate", "--seed", "7", "--out", s(&a)]);
    ok(&["simulate", "--seed", "7", "--out", s(&b)]);
    assert_eq!(read_all(&a), read_all(&b));
    let loaded = Dataset::load(&DataPaths::in_dir(&a), "synthetic").unwrap();
    assert_eq!(loaded.experiments.len(), 200);
}

#[test]
fn usage_errors_exit_2() {
    let out = oncode(&["simulate", "--seed", "7"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--out"));
    assert_eq!(oncode(&["frobnicate"]).status.code(), Some(2));
    let t = tempfile::tempdir().unwrap();
    let out = oncode(&["simulate", "--out", s(t.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed"));
    assert_eq!(
        oncode(&["evaluate", "--window", "-3", "--checkpoint", "x"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn data_errors_exit_3_with_location() {
    let t = tempfile::tempdir().unwrap();
    let d = simulate(t.path(), &["--experiments", "10"]);
    let v = d.join("volumes.csv");
    let mut text = fs::read_to_string(&v).unwrap();
    text.push_str("T00,D0,5,-1\n");
    fs::write(&v, text).unwrap();
    let n = fs::read_to_string(&v).unwrap().lines().count();
    let out = oncode(&[
        "fit-tgi",
        "--seed",
        "1",
        "--data",
        s(&d),
        "--out",
        s(&t.path().join("f")),
    ]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains(&format!("volumes.csv:{n}")), "{err}");
}

#[test]
fn config_file_drives_run_and_flags_override() {
    let t = tempfile::tempdir().unwrap();
    let cfg = t.path().join("run.toml");
    let out_dir = t.path().join("sim");
    fs::write(
        &cfg,
        format!(
            "seed = 3\nout = {:?}\n\n[synth]\nexperiments = 12\ntumors = 6\n",
            s(&out_dir)
        ),
    )
    .unwrap();
    ok(&["--config", s(&cfg), "simulate"]);
    let a = Dataset::load(&DataPaths::in_dir(&out_dir), "synthetic").unwrap();
    assert_eq!(a.experiments.len(), 12);
    let other = t.path().join("sim2");
    ok(&[
        "--config",
        s(&cfg),
        "--seed",
        "4",
        "--out",
        s(&other),
        "simulate",
    ]);
    let b = Dataset::load(&DataPaths::in_dir(&other), "synthetic").unwrap();
    assert_ne!(a, b);
    fs::write(&cfg, "seed = 3\nbogus = 1\n").unwrap();
    assert_eq!(
        oncode(&["--config", s(&cfg), "simulate"]).status.code(),
        Some(2)
    );
}

fn vgae_init(data: &Path, seed: u64) -> ParamSet {
    let ds = Dataset::load(&DataPaths::in_dir(data), "synthetic").unwrap();
    let model = Model::new(ModelConfig::default(), &ds).unwrap();
    let vgae = VgaeModel::new(model.encoder().clone(), &ds.gene_graph).unwrap();
    let mut p = ParamSet::new();
    vgae.init(&mut p, &mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
    p
}

#[test]
fn pretrain_zero_epochs_writes_initialization() {
    let t = tempfile::tempdir().unwrap();
    let d = simulate(t.path(), &["--experiments", "20"]);
    let out = t.path().join("p");
    ok(&[
        "pretrain",
        "--seed",
        "5",
        "--epochs",
        "0",
        "--data",
        s(&d),
        "--out",
        s(&out),
    ]);
    let ck = load_checkpoint(&out.join("checkpoint")).unwrap();
    assert_eq!(ck.params, vgae_init(&d, 5));
    assert!(losses(&out).is_empty());
}

#[test]
fn pretrain_lowers_loss_and_repeats_exactly() {
    let t = tempfile::tempdir().unwrap();
    let d = simulate(t.path(), &[]);
    let a = t.path().join("a");
    let b = t.path().join("b");
    for o in [&a, &b] {
        ok(&[
            "pretrain",
            "--seed",
            "2",
            "--epochs",
            "50",
            "--data",
            s(&d),
            "--out",
            s(o),
        ]);
    }
    let l = losses(&a);
    assert_eq!(l.len(), 50);
    assert!(l[49] < l[0], "{} -> {}", l[0], l[49]);
    assert_eq!(read_all(&a), read_all(&b));
}

#[test]
fn train_without_graph_encoder_has_no_encoder_tensors() {
    let t = tempfile::tempdir().unwrap();
    let d = simulate(t.path(), &["--experiments", "20"]);
    let out = t.path().join("t");
    ok(&[
        "train",
        "--seed",
        "1",
        "--epochs",
        "2",
        "--no-graph-encoder",
        "--data",
        s(&d),
        "--out",
        s(&out),
    ]);
    let ck = load_checkpoint(&out.join("checkpoint")).unwrap();
    assert!(ck.params.names().all(|n| !n.starts_with("enc.")));
    assert!(ck.params.names().any(|n| n.starts_with("vol.")));
    let r = report(&out);
    assert_eq!(r["provenance"]["model"]["use_graph_encoder"], false);
    assert!(r["provenance"]["model"].get("encoder").is_none());
    assert!(r["provenance"]["model"].get("pretrained_trunk").is_none());
    let ev = t.path().join("e");
    ok(&[
        "evaluate",
        "--checkpoint",
        s(&out),
        "--window",
        "14",
        "--data",
        s(&d),
        "--out",
        s(&ev),
    ]);
    assert!(report(&ev)["provenance"]["model"].get("encoder").is_none());
}

#[test]
fn tiny_cohort_training_halves_the_loss() {
    let t = tempfile::tempdir().unwrap();
    let d = simulate(t.path(), &["--experiments", "5"]);
    let cfg = t.path().join("run.toml");
    fs::write(&cfg, "[cv]\ntrain_on_all = true\n").unwrap();
    let out = t.path().join("t");
    ok(&[
        "--config",
        s(&cfg),
        "train",
        "--seed",
        "0",
        "--epochs",
        "200",
        "--data",
        s(&d),
        "--out",
        s(&out),
    ]);
    let l = losses(&out);
    assert_eq!(l.len(), 200);
    assert!(l[199] <= 0.5 * l[0], "{} -> {}", l[0], l[199]);
    assert!(report(&out)["fold"].is_null());
}

#[test]
fn training_is_reproducible_across_thread_counts() {
    let t = tempfile::tempdir().unwrap();
    let d = simulate(t.path(), &["--experiments", "30"]);
    let mut outs = Vec::new();
    for threads in ["1", "1", "3"] {
        let out = t.path().join(format!("t{}", outs.len()));
        let args = [
            "train",
            "--seed",
            "4",
            "--epochs",
            "3",
            "--data",
            s(&d),
            "--out",
            s(&out),
        ];
        let o = oncode_env(&args, &[("ONCODE_THREADS", threads)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        outs.push(read_all(&out));
    }
    assert_eq!(outs[0], outs[1]);
    assert_eq!(outs[0], outs[2]);
}

#[test]
fn test_fold_volumes_never_reach_training() {
    let t = tempfile::tempdir().unwrap();
    let d = simulate(t.path(), &["--experiments", "30"]);
    let train = |name: &str| {
        let out = t.path().join(name);
        ok(&[
            "train",
            "--seed",
            "6",
            "--epochs",
            "3",
            "--data",
            s(&d),
            "--out",
            s(&out),
        ]);
        (
            losses(&out),
            fs::read(out.join("checkpoint/tensors.bin")).unwrap(),
        )
    };
    let clean = train("clean");
    let ds = Dataset::load(&DataPaths::in_dir(&d), "synthetic").unwrap();
    let split = grouped_kfold(&experiment_groups(&ds.experiments), 5, 6).unwrap();
    let held: Vec<String> = split
        .test_indices(0)
        .iter()
        .map(|&i| ds.experiments[i].model_id.clone())
        .collect();
    assert!(!held.is_empty());
    let v = d.join("volumes.csv");
    let poisoned: String = fs::read_to_string(&v)
        .unwrap()
        .lines()
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            if held.iter().any(|m| m == f[0]) {
                format!("{},{},{},1e9\n", f[0], f[1], f[2])
            } else {
                format!("{l}\n")
            }
        })
        .collect();
    fs::write(&v, poisoned).unwrap();
    assert_eq!(clean, train("poisoned"));
}

#[test]
fn pretrained_trunk_is_loaded_and_checked() {
    let t = tempfile::tempdir().unwrap();
    let d = simulate(t.path(), &["--experiments", "20"]);
    let p = t.path().join("p");
    ok(&[
        "pretrain",
        "--seed",
        "3",
        "--epochs",
        "5",
        "--data",
        s(&d),
        "--out",
        s(&p),
    ]);
    let out = t.path().join("c");
    ok(&[
        "train",
        "--head",
        "classifier",
        "--seed",
        "3",
        "--epochs",
        "2",
        "--pretrained",
        s(&p),
        "--data",
        s(&d),
        "--out",
        s(&out),
    ]);
    let pre = load_checkpoint(&p.join("checkpoint")).unwrap();
    let ck = load_checkpoint(&out.join("checkpoint")).unwrap();
    assert_eq!(
        ck.params
            .names()
            .filter(|n| n.starts_with("enc.gcn."))
            .count(),
        pre.params
            .names()
            .filter(|n| n.starts_with("enc.gcn."))
            .count()
    );
    assert!(report(&out)["provenance"]["model"]["pretrained_trunk"].is_string());
    let missing = oncode(&[
        "train",
        "--seed",
        "3",
        "--pretrained",
        s(&t.path().join("nope")),
        "--data",
        s(&d),
        "--out",
        s(&out),
    ]);
    assert_eq!(missing.status.code(), Some(3));
    let other_fold = oncode(&[
        "train",
        "--seed",
        "3",
        "--fold",
        "1",
        "--epochs",
        "1",
        "--pretrained",
        s(&p),
        "--data",
        s(&d),
        "--out",
        s(&out),
    ]);
    assert_eq!(other_fold.status.code(), Some(3));
    let cfg = t.path().join("run.toml");
    fs::write(&cfg, "use_pretraining = true\n").unwrap();
    let unset = oncode(&[
        "--config",
        s(&cfg),
        "train",
        "--seed",
        "3",
        "--data",
        s(&d),
        "--out",
        s(&out),
    ]);
    assert_eq!(unset.status.code(), Some(2));
}

#[test]
fn evaluate_report_follows_schema() {
    let t = tempfile::tempdir().unwrap();
    let d = simulate(t.path(), &["--experiments", "30"]);
    let mut cks = Vec::new();
    for fold in ["0", "1"] {
        let out = t.path().join(format!("t{fold}"));
        ok(&[
            "train",
            "--seed",
            "2",
            "--fold",
            fold,
            "--epochs",
            "2",
            "--data",
            s(&d),
            "--out",
            s(&out),
        ]);
        cks.push(out);
    }
    let ev = t.path().join("e");
    ok(&[
        "evaluate",
        "--checkpoint",
        s(&cks[0]),
        "--checkpoint",
        s(&cks[1]),
        "--data",
        s(&d),
        "--out",
        s(&ev),
    ]);
    let r = report(&ev);
    assert_eq!(r["command"], "evaluate");
    assert_eq!(r["head"], "dynamics");
    for k in ["config_hash", "seed", "version", "checkpoints_sha256"] {
        assert!(r["provenance"].get(k).is_some(), "{k}");
    }
    let folds = r["folds"].as_array().unwrap();
    assert_eq!(folds.len(), 2);
    for f in folds {
        let windows: Vec<f64> = f["windows"]
            .as_array()
            .unwrap()
            .iter()
            .map(|w| w["window"].as_f64().unwrap())
            .collect();
        assert_eq!(windows, [7.0, 14.0, 21.0, 28.0]);
        for w in f["windows"].as_array().unwrap() {
            for k in ["r2", "spearman", "bal_acc", "auroc", "f1", "counts"] {
                assert!(w["metrics"].get(k).is_some(), "{k}");
            }
        }
    }
    assert_eq!(r["pooled"].as_array().unwrap().len(), 4);
    let n: u64 = folds
        .iter()
        .map(|f| f["experiments"].as_u64().unwrap())
        .sum();
    let exps = r["experiments"].as_array().unwrap();
    assert_eq!(exps.len() as u64, 4 * n);
    let csv = ev.join(exps[0]["trajectory_csv"].as_str().unwrap());
    let text = fs::read_to_string(csv).unwrap();
    assert!(text.starts_with("time,observed,predicted,tgi_predicted\n"));
    let metrics = fs::read_to_string(ev.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 1 + 2 * 4 + 4);

    let again = t.path().join("e2");
    ok(&[
        "evaluate",
        "--checkpoint",
        s(&cks[0]),
        "--checkpoint",
        s(&cks[1]),
        "--data",
        s(&d),
        "--out",
        s(&again),
    ]);
    assert_eq!(read_all(&ev), read_all(&again));
}

#[test]
fn classifier_evaluation_reports_cross_entropy() {
    let t = tempfile::tempdir().unwrap();
    let d = simulate(t.path(), &["--experiments", "30"]);
    let out = t.path().join("c");
    ok(&[
        "train",
        "--head",
        "classifier",
        "--seed",
        "1",
        "--epochs",
        "3",
        "--data",
        s(&d),
        "--out",
        s(&out),
    ]);
    let ev = t.path().join("e");
    ok(&[
        "evaluate",
        "--checkpoint",
        s(&out),
        "--data",
        s(&d),
        "--out",
        s(&ev),
    ]);
    let r = report(&ev);
    assert_eq!(r["head"], "classifier");
    assert!(r["folds"][0]["cross_entropy"].as_f64().unwrap() > 0.0);
    let pr = t.path().join("p");
    ok(&[
        "predict",
        "--checkpoint",
        s(&out),
        "--data",
        s(&d),
        "--out",
        s(&pr),
    ]);
    let text = fs::read_to_string(pr.join("predictions.csv")).unwrap();
    assert!(text.starts_with("model_id,treatment,probability\n"));
    assert_eq!(
        text.lines().count() as u64,
        1 + r["folds"][0]["experiments"].as_u64().unwrap()
    );
}

#[test]
fn checkpoint_for_another_cohort_is_refused() {
    let t = tempfile::tempdir().unwrap();
    let d = simulate(t.path(), &["--experiments", "20"]);
    let other = t.path().join("other");
    let cfg = t.path().join("genes.toml");
    fs::write(&cfg, "[synth]\ngenes = 30\nexperiments = 20\n").unwrap();
    ok(&[
        "--config",
        s(&cfg),
        "simulate",
        "--seed",
        "7",
        "--out",
        s(&other),
    ]);
    let out = t.path().join("t");
    ok(&[
        "train",
        "--seed",
        "1",
        "--epochs",
        "1",
        "--data",
        s(&d),
        "--out",
        s(&out),
    ]);
    let bad = oncode(&[
        "evaluate",
        "--checkpoint",
        s(&out),
        "--data",
        s(&other),
        "--out",
        s(&t.path().join("e")),
    ]);
    assert_eq!(bad.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("gene vocabulary"));

    let manifest = out.join("checkpoint").join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest)
        .unwrap()
        .replacen("v1", "v9", 1);
    fs::write(&manifest, text).unwrap();
    let old = oncode(&[
        "predict",
        "--checkpoint",
        s(&out),
        "--data",
        s(&d),
        "--out",
        s(&t.path().join("p")),
    ]);
    assert_eq!(old.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&old.stderr).contains("incompatible"));
}

#[test]
fn fit_tgi_on_noiseless_cohort() {
    let t = tempfile::tempdir().unwrap();
    let d = simulate(t.path(), &["--noise", "0", "--experiments", "40"]);
    let a = t.path().join("a");
    let b = t.path().join("b");
    ok(&["fit-tgi", "--seed", "1", "--data", s(&d), "--out", s(&a)]);
    ok(&["fit-tgi", "--seed", "1", "--data", s(&d), "--out", s(&b)]);
    let r = report(&a);
    assert!(r["metrics"]["r2"].as_f64().unwrap() >= 0.999);
    let rows = fs::read_to_string(a.join("tgi_fits.csv"))
        .unwrap()
        .lines()
        .count();
    assert_eq!(rows as u64, 1 + r["fitted"].as_u64().unwrap());
    assert_eq!(
        r["fitted"].as_u64().unwrap() + r["skipped"].as_array().unwrap().len() as u64,
        40
    );
    assert_eq!(read_all(&a), read_all(&b));
    let w = t.path().join("w");
    ok(&[
        "fit-tgi",
        "--seed",
        "1",
        "--window",
        "3",
        "--data",
        s(&d),
        "--out",
        s(&w),
    ]);
    let r = report(&w);
    assert_eq!(r["fitted"], 0);
    assert_eq!(r["skipped"].as_array().unwrap().len(), 40);
}

#[test]
fn evaluating_training_data_with_full_window_fits_well() {
    let t = tempfile::tempdir().unwrap();
    let d = simulate(t.path(), &[]);
    let cfg = t.path().join("run.toml");
    fs::write(&cfg, "[cv]\ntrain_on_all = true\n\n[train]\nepochs = 150\n").unwrap();
    let out = t.path().join("t");
    ok(&[
        "--config",
        s(&cfg),
        "train",
        "--seed",
        "0",
        "--data",
        s(&d),
        "--out",
        s(&out),
    ]);
    let ev = t.path().join("e");
    ok(&[
        "evaluate",
        "--split",
        "train",
        "--window",
        "full",
        "--checkpoint",
        s(&out),
        "--data",
        s(&d),
        "--out",
        s(&ev),
    ]);
    let r2 = report(&ev)["pooled"][0]["metrics"]["r2"].as_f64().unwrap();
    assert!(r2 > 0.9, "r2 {r2}");
}
