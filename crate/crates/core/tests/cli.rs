use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use paeff_core::data::{read_id_list, Dataset};
use paeff_core::manifest::RunManifest;

fn paeff(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_paeff"));
    c.args(args);
    for (k, _) in std::env::vars() {
        if k.starts_with("PAEFF_") {
            c.env_remove(k);
        }
    }
    for (k, v) in env {
        c.env(k, v);
    }
    c.output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, extra: &[&str]) -> PathBuf {
    let out = dir.join("data");
    let mut args = vec![
        "synth", "--out-dir", s(&out), "--num-identities", "8", "--samples-per-id", "6", "--face-dim", "12",
        "--voice-dim", "10", "--n-val", "2", "--n-test", "3", "--seed", "4",
    ];
    args.extend_from_slice(extra);
    let o = paeff(&args, &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    out
}

fn train(data: &Path, out: &Path, extra: &[&str]) -> Output {
    let files = [data.join("dataset.fve"), data.join("train.txt"), data.join("val.txt"), data.join("test.txt")];
    let mut args = vec![
        "train", "--dataset", s(&files[0]), "--train-split", s(&files[1]), "--val-split", s(&files[2]),
        "--test-split", s(&files[3]), "--out-dir", s(out), "--proj-dim", "8", "--lr0", "1e-2", "--val-trials", "40",
    ];
    args.extend_from_slice(extra);
    paeff(&args, &[])
}

fn eval(run: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["eval", "--run-dir", s(run), "--out-dir", s(out), "--max-trials", "40", "--matching-trials", "30"];
    args.extend_from_slice(extra);
    paeff(&args, &[])
}

#[test]
fn synth_is_deterministic_echoes_parameters_and_loads() {
    let t = tempfile::tempdir().unwrap();
    let a = synth(&t.path().join("a"), &["--demographics"]);
    let b = synth(&t.path().join("b"), &["--demographics"]);
    for f in ["dataset.fve", "train.txt", "val.txt", "test.txt"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let m = RunManifest::load(&a.join("manifest.json")).unwrap();
    let p = m.synth.unwrap();
    assert_eq!((p.num_identities, p.samples_per_id, p.face_dim, p.voice_dim, p.seed), (8, 6, 12, 10, 4));
    assert!(p.demographics);
    assert_eq!(m.settings["n_test"], "3");
    let ds = Dataset::load(&a.join("dataset.fve")).unwrap();
    assert_eq!(ds.len(), 8 * 6 * 2);
    assert_eq!(read_id_list(&a.join("test.txt")).unwrap().len(), 3);
    assert_eq!(m.outputs["dataset"].sha256, paeff_core::manifest::sha256_hex(&std::fs::read(a.join("dataset.fve")).unwrap()));
}

#[test]
fn train_then_eval_writes_reproducible_artifacts() {
    let t = tempfile::tempdir().unwrap();
    let data = synth(t.path(), &["--demographics"]);
    let run = t.path().join("run");
    let o = train(&data, &run, &["--epochs", "2"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["checkpoint.paef", "last.paef", "train_log.jsonl", "identities.txt", "resolved.conf", "manifest.json"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let log = std::fs::read_to_string(run.join("train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);
    let m = RunManifest::load(&run.join("manifest.json")).unwrap();
    assert_eq!(m.command, "train");
    assert_eq!(m.model.as_ref().unwrap().face_dim, 12);
    assert!(m.inputs.contains_key("dataset") && m.inputs.contains_key("val_split"));

    let e1 = t.path().join("e1");
    let e2 = t.path().join("e2");
    assert_eq!(code(&eval(&run, &e1, &[])), 0);
    assert_eq!(code(&eval(&run, &e2, &[])), 0);
    for f in ["verification.csv", "matching.csv", "roc.csv", "report.json"] {
        assert_eq!(std::fs::read(e1.join(f)).unwrap(), std::fs::read(e2.join(f)).unwrap(), "{f}");
    }
    let v = std::fs::read_to_string(e1.join("verification.csv")).unwrap();
    assert!(v.lines().nth(1).unwrap().starts_with("test,random,40,"));
    // strata without qualifying non-match trials are absent rather than zero
    for line in v.lines().skip(2) {
        let stratum = line.split(',').nth(1).unwrap();
        assert!(["G", "N", "A", "GNA"].contains(&stratum), "{line}");
    }
    let matching = std::fs::read_to_string(e1.join("matching.csv")).unwrap();
    let sizes: Vec<&str> = matching.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(sizes, ["2", "4", "6", "8", "10"]);

    // the same run trained again reproduces log and checkpoint bytes
    let run2 = t.path().join("run2");
    assert_eq!(code(&train(&data, &run2, &["--epochs", "2"])), 0);
    assert_eq!(log, std::fs::read_to_string(run2.join("train_log.jsonl")).unwrap());
    assert_eq!(std::fs::read(run.join("checkpoint.paef")).unwrap(), std::fs::read(run2.join("checkpoint.paef")).unwrap());
}

#[test]
fn ablation_is_recorded_in_manifest() {
    let t = tempfile::tempdir().unwrap();
    let data = synth(t.path(), &[]);
    let run = t.path().join("run");
    let o = train(&data, &run, &["--epochs", "1", "--ablation", "no_fa"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let m = RunManifest::load(&run.join("manifest.json")).unwrap();
    assert_eq!(m.settings["ablation"], "no_fa");
    assert_eq!(m.results["ablation"], "no_fa");
    assert_eq!(m.train.unwrap().ablation.as_str(), "no_fa");
    assert!(!m.model.unwrap().use_hyperbolic);
    assert_eq!(m.results["effective_loss_weights"]["alpha1"], 0.0);
}

#[test]
fn invalid_split_files_exit_with_data_error() {
    let t = tempfile::tempdir().unwrap();
    let data = synth(t.path(), &[]);
    std::fs::write(data.join("test.txt"), "id0000\nnobody\n").unwrap();
    let o = train(&data, &t.path().join("run"), &["--epochs", "1"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    std::fs::remove_file(data.join("test.txt")).unwrap();
    let o = train(&data, &t.path().join("run"), &["--epochs", "1"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("test.txt"));
}

#[test]
fn eval_options_gallery_override_trial_list_and_missing_demographics() {
    let t = tempfile::tempdir().unwrap();
    let data = synth(t.path(), &[]);
    let run = t.path().join("run");
    assert_eq!(code(&train(&data, &run, &["--epochs", "1"])), 0);

    let out = t.path().join("g");
    let o = eval(&run, &out, &["--gallery-sizes", "3,5"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let matching = std::fs::read_to_string(out.join("matching.csv")).unwrap();
    assert!(matching.lines().nth(1).unwrap().starts_with("3,30,"));
    assert!(matching.lines().nth(2).unwrap().starts_with("5,30,"));
    assert_eq!(matching.lines().count(), 3);

    let test_ids = read_id_list(&data.join("test.txt")).unwrap();
    let mut ids = test_ids.iter();
    let (a, b) = (ids.next().unwrap(), ids.next().unwrap());
    let list = format!("{a}_c000\t{a}_c001\t1\n{a}_c000\t{b}_c001\t0\n{b}_c002\t{b}_c002\t1\n");
    std::fs::write(t.path().join("trials.tsv"), list).unwrap();
    let out = t.path().join("tl");
    let o = eval(&run, &out, &["--trial-list", s(&t.path().join("trials.tsv"))]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v = std::fs::read_to_string(out.join("verification.csv")).unwrap();
    assert!(v.lines().nth(1).unwrap().starts_with("test,random,3,"), "{v}");
    let m = RunManifest::load(&out.join("manifest.json")).unwrap();
    assert!(m.inputs.contains_key("trial_list"));

    let o = eval(&run, &t.path().join("st"), &["--strata", "random,N"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("N"), "{}", stderr(&o));
}

#[test]
fn settings_precedence_flag_env_file_default() {
    let t = tempfile::tempdir().unwrap();
    let data = synth(t.path(), &[]);
    let conf = t.path().join("train.conf");
    std::fs::write(&conf, "# three epochs unless overridden\nepochs = 3\nseed = 11\n").unwrap();
    let lines = |run: &Path| std::fs::read_to_string(run.join("train_log.jsonl")).unwrap().lines().count();

    let r1 = t.path().join("r1");
    assert_eq!(code(&train(&data, &r1, &["--config", s(&conf)])), 0);
    assert_eq!(lines(&r1), 3);
    let m = RunManifest::load(&r1.join("manifest.json")).unwrap();
    assert_eq!(m.seed, 11);
    assert_eq!(m.settings["weight_decay"], "0.01");

    let args = |run: &Path, extra: &[&str]| {
        let mut v: Vec<String> = vec![
            "train".into(),
            "--dataset".into(),
            s(&data.join("dataset.fve")).into(),
            "--train-split".into(),
            s(&data.join("train.txt")).into(),
            "--test-split".into(),
            s(&data.join("test.txt")).into(),
            "--out-dir".into(),
            s(run).into(),
            "--config".into(),
            s(&conf).into(),
            "--proj-dim".into(),
            "8".into(),
        ];
        v.extend(extra.iter().map(|x| x.to_string()));
        v
    };
    let r2 = t.path().join("r2");
    let a2 = args(&r2, &[]);
    let o = paeff(&a2.iter().map(String::as_str).collect::<Vec<_>>(), &[("PAEFF_EPOCHS", "2")]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(lines(&r2), 2);

    let r3 = t.path().join("r3");
    let a3 = args(&r3, &["--epochs", "1"]);
    let o = paeff(&a3.iter().map(String::as_str).collect::<Vec<_>>(), &[("PAEFF_EPOCHS", "2")]);
    assert_eq!(code(&o), 0);
    assert_eq!(lines(&r3), 1);

    // PAEFF_CONFIG names the config file when --config is absent
    let r4 = t.path().join("r4");
    let a4: Vec<String> = args(&r4, &[]).into_iter().take(9).collect();
    let o = paeff(&a4.iter().map(String::as_str).collect::<Vec<_>>(), &[("PAEFF_CONFIG", s(&conf))]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(lines(&r4), 3);
}

#[test]
fn usage_and_config_errors_exit_one() {
    assert_eq!(code(&paeff(&["train", "--no-such-flag"], &[])), 1);
    assert_eq!(code(&paeff(&[], &[])), 1);
    assert_eq!(code(&paeff(&["--help"], &[])), 0);
    assert_eq!(code(&paeff(&["--version"], &[])), 0);
    let o = paeff(&["train", "--epochs", "zero"], &[]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("epochs"));
    let t = tempfile::tempdir().unwrap();
    let conf = t.path().join("bad.conf");
    std::fs::write(&conf, "learning_rate = 1\n").unwrap();
    let o = paeff(&["selfcheck", "--config", s(&conf)], &[]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("learning_rate"));
}

#[test]
fn selfcheck_lists_invariants_and_fails_on_injected_bug() {
    let o = paeff(&["selfcheck"], &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let out = String::from_utf8_lossy(&o.stdout);
    for name in [
        "grad.exp_map_origin",
        "grad.egff_concatenation",
        "grad.total_objective_end_to_end",
        "hyperbolic.triangle_inequality",
        "hyperbolic.ball_invariant",
        "metrics.eer_matches_threshold_sweep",
        "metrics.auc_matches_trapezoid",
    ] {
        assert!(out.contains(name), "{name}");
    }
    let o = paeff(&["selfcheck", "--inject-gradient-bug"], &[]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("grad.mobius_add"));
    let o = paeff(&["selfcheck"], &[("PAEFF_INJECT_GRADIENT_BUG", "true")]);
    assert_eq!(code(&o), 3);
}
