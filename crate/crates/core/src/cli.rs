//! The `paeff` command line: `train`, `eval`, `synth` and `selfcheck`.
//!
//! Every setting in [`crate::config`] is a flag of the subcommands that use it.
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numeric failure or failed invariant.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Arg, ArgAction, ArgMatches, Command};

use crate::checkpoint;
use crate::config::{self, flag_name, read_config, Settings};
use crate::data::{self, Dataset, Part, SplitMode, SplitSpec};
use crate::error::{Error, Result};
use crate::eval::{self, EvalConfig};
use crate::manifest::{RunManifest, FILE_NAME};
use crate::model::{Model, ModelConfig};
use crate::selfcheck;
use crate::trainer;

pub const CHECKPOINT_FILE: &str = "checkpoint.paef";
pub const LAST_CHECKPOINT_FILE: &str = "last.paef";
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";
pub const IDENTITIES_FILE: &str = "identities.txt";
pub const RESOLVED_CONFIG_FILE: &str = "resolved.conf";
pub const DATASET_FILE: &str = "dataset.fve";

const ABOUT: &str = "Face-voice association with hyperbolic alignment and gated fusion";
const PRECEDENCE: &str = "Settings resolve as: flag > PAEFF_<KEY> environment variable > --config file > default.";

fn subcommand(name: &'static str, about: &'static str) -> Command {
    let mut cmd = Command::new(name).about(about).after_help(PRECEDENCE).arg(
        Arg::new("config")
            .long("config")
            .value_name("FILE")
            .help("config file of `key = value` lines (env PAEFF_CONFIG)"),
    );
    for k in config::keys_for(name) {
        let mut arg = Arg::new(k.name)
            .long(flag_name(k.name))
            .value_name("VALUE")
            .action(ArgAction::Set)
            .help(if k.default.is_empty() {
                k.help.to_string()
            } else {
                format!("{} [default: {}]", k.help, k.default)
            });
        if k.default == "true" || k.default == "false" {
            arg = arg.num_args(0..=1).default_missing_value("true");
        }
        cmd = cmd.arg(arg);
    }
    cmd
}

pub fn command() -> Command {
    Command::new("paeff")
        .version(crate::manifest::VERSION)
        .about(ABOUT)
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(subcommand("train", "Train a model and write checkpoint, log and manifest"))
        .subcommand(subcommand("eval", "Evaluate a trained run: verification, strata and matching"))
        .subcommand(subcommand("synth", "Generate a synthetic #fve v1 dataset with split files"))
        .subcommand(subcommand("selfcheck", "Run gradient checks, hyperbolic identities and metric oracles"))
}

fn settings_from(name: &str, m: &ArgMatches, env: &dyn Fn(&str) -> Option<String>) -> Result<Settings> {
    let file = match m.get_one::<String>("config").cloned().or_else(|| env("PAEFF_CONFIG")) {
        Some(p) => read_config(Path::new(&p))?,
        None => BTreeMap::new(),
    };
    let mut flags = BTreeMap::new();
    for k in config::keys_for(name) {
        if let Some(v) = m.get_one::<String>(k.name) {
            flags.insert(k.name.to_string(), v.clone());
        }
    }
    Settings::resolve(name, &file, env, &flags)
}

/// Parses `args` (including the program name), runs the subcommand and returns the exit code.
pub fn run<I, T>(args: I, env: &dyn Fn(&str) -> Option<String>) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let (name, sub) = matches.subcommand().expect("subcommand required");
    let result = settings_from(name, sub, env).and_then(|s| match name {
        "train" => cmd_train(&s),
        "eval" => cmd_eval(&s),
        "synth" => cmd_synth(&s),
        "selfcheck" => cmd_selfcheck(&s),
        _ => unreachable!("clap rejects unknown subcommands"),
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("paeff {name}: {e}");
            e.exit_code()
        }
    }
}

fn out_dir(s: &Settings) -> Result<PathBuf> {
    let dir = s.required_path("out_dir")?;
    std::fs::create_dir_all(&dir).map_err(|e| Error::data(format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir)
}

fn load_split(s: &Settings, mode: SplitMode) -> Result<(SplitSpec, Vec<(&'static str, PathBuf)>)> {
    let train = s.required_path("train_split")?;
    let test = s.required_path("test_split")?;
    let val = s.path("val_split")?;
    let split = SplitSpec::load(mode, &train, val.as_deref(), &test)?;
    let mut files = vec![("train_split", train), ("test_split", test)];
    if let Some(v) = val {
        files.push(("val_split", v));
    }
    Ok((split, files))
}

pub fn cmd_synth(s: &Settings) -> Result<()> {
    let params = s.synth_params()?;
    let mode = s.split_mode()?;
    let n_val: usize = s.get("n_val")?;
    let n_test: usize = s.get("n_test")?;
    let dir = out_dir(s)?;
    let ds = data::synth_generate(&params)?;
    let split = SplitSpec::random(&ds, mode, n_val, n_test, params.seed)?;
    split.validate(&ds)?;

    let mut m = RunManifest::new("synth", params.seed, s.values());
    let files = [
        ("dataset", DATASET_FILE, None),
        ("train_split", "train.txt", Some(&split.train)),
        ("val_split", "val.txt", Some(&split.val)),
        ("test_split", "test.txt", Some(&split.test)),
    ];
    for (name, file, ids) in files {
        let path = dir.join(file);
        match ids {
            None => ds.save(&path)?,
            Some(ids) => data::write_id_list(&path, ids)?,
        }
        m.add_output(name, &path)?;
    }
    m.synth = Some(params);
    m.results.insert("records".into(), ds.len().into());
    m.write(&dir)?;
    println!("wrote {} records and split files to {}", ds.len(), dir.display());
    Ok(())
}

pub fn cmd_train(s: &Settings) -> Result<()> {
    let model_cfg = s.model_config()?;
    let train_cfg = s.train_config()?;
    let dataset = s.required_path("dataset")?;
    let ds = Dataset::load(&dataset)?;
    let (split, split_files) = load_split(s, s.split_mode()?)?;
    split.validate(&ds)?;
    let dir = out_dir(s)?;

    let log_path = dir.join(TRAIN_LOG_FILE);
    let mut log = std::fs::File::create(&log_path)?;
    let mut write_err = None;
    let outcome = trainer::train_with(&ds, &split, &model_cfg, &train_cfg, |e| {
        let line = e.to_json_line().expect("log entries serialize");
        if let Err(err) = log.write_all(line.as_bytes()) {
            write_err.get_or_insert(err);
        }
        let val = match (e.val_eer, e.val_auc) {
            (Some(eer), Some(auc)) => format!(" val_eer {eer:.4} val_auc {auc:.4}"),
            _ => String::new(),
        };
        eprintln!("epoch {:>3} total {:.6} lr {:.3e}{val}", e.epoch, e.total, e.lr);
    })?;
    if let Some(e) = write_err {
        return Err(e.into());
    }
    drop(log);

    let best_path = dir.join(CHECKPOINT_FILE);
    let last_path = dir.join(LAST_CHECKPOINT_FILE);
    let ids_path = dir.join(IDENTITIES_FILE);
    let conf_path = dir.join(RESOLVED_CONFIG_FILE);
    checkpoint::save(&best_path, &outcome.best.params)?;
    checkpoint::save(&last_path, &outcome.last.params)?;
    std::fs::write(&ids_path, outcome.identities.join("\n") + "\n")?;
    std::fs::write(&conf_path, s.to_config_file())?;

    let mut m = RunManifest::new("train", train_cfg.seed, s.values());
    m.model = Some(outcome.best.config.clone());
    m.train = Some(train_cfg.clone());
    m.add_input("dataset", &dataset)?;
    for (name, path) in &split_files {
        m.add_input(name, path)?;
    }
    for (name, path) in [
        ("checkpoint", &best_path),
        ("last_checkpoint", &last_path),
        ("train_log", &log_path),
        ("identities", &ids_path),
        ("resolved_config", &conf_path),
    ] {
        m.add_output(name, path)?;
    }
    m.results.insert("ablation".into(), train_cfg.ablation.as_str().into());
    m.results.insert("best_epoch".into(), outcome.best_epoch.into());
    m.results.insert("optimizer".into(), trainer::OPTIMIZER.into());
    m.results.insert("lr_schedule".into(), trainer::LR_SCHEDULE.into());
    m.results.insert("batch_size".into(), outcome.batch_size.into());
    m.results.insert("effective_loss_weights".into(), serde_json::to_value(outcome.loss_weights)?);
    m.write(&dir)?;
    println!(
        "trained {} epochs ({}), best epoch {}; outputs in {}",
        outcome.log.len(),
        train_cfg.ablation.as_str(),
        outcome.best_epoch,
        dir.display()
    );
    Ok(())
}

/// A setting from `s` when given, otherwise the path recorded in the run manifest.
fn path_or_recorded(s: &Settings, key: &str, run: &RunManifest) -> Result<Option<PathBuf>> {
    if let Some(p) = s.path(key)? {
        return Ok(Some(p));
    }
    Ok(run.inputs.get(key).map(|r| PathBuf::from(&r.path)))
}

pub fn cmd_eval(s: &Settings) -> Result<()> {
    let cfg: EvalConfig = s.eval_config()?;
    let part: Part = match s.raw("part")?.trim() {
        "train" => Part::Train,
        "val" => Part::Val,
        "test" => Part::Test,
        other => return Err(Error::Config(format!("invalid value `{other}` for `part`: expected train, val or test"))),
    };
    let run_dir = s.required_path("run_dir")?;
    let run = RunManifest::load(&run_dir.join(FILE_NAME))?;
    let model_cfg: ModelConfig = run
        .model
        .clone()
        .ok_or_else(|| Error::data(format!("{} does not describe a training run", run_dir.join(FILE_NAME).display())))?;
    let ckpt = run_dir.join(CHECKPOINT_FILE);
    let model = Model {
        params: checkpoint::load(&ckpt, &model_cfg)?,
        config: model_cfg,
    };

    let missing = |k: &str| Error::Config(format!("`{k}` is neither set nor recorded in the run manifest"));
    let dataset = path_or_recorded(s, "dataset", &run)?.ok_or_else(|| missing("dataset"))?;
    let train = path_or_recorded(s, "train_split", &run)?.ok_or_else(|| missing("train_split"))?;
    let test = path_or_recorded(s, "test_split", &run)?.ok_or_else(|| missing("test_split"))?;
    let val = path_or_recorded(s, "val_split", &run)?;
    let mode = if s.source("split_mode") == Some(config::Source::Default) {
        run.settings.get("split_mode").map(|m| m.parse()).transpose()?.unwrap_or(SplitMode::UnseenUnheard)
    } else {
        s.split_mode()?
    };
    let ds = Dataset::load(&dataset)?;
    let split = SplitSpec::load(mode, &train, val.as_deref(), &test)?;
    split.validate(&ds)?;
    if ds.face_dim != model.config.face_dim || ds.voice_dim != model.config.voice_dim {
        return Err(Error::data(format!(
            "dataset widths face={} voice={} do not match the model's face={} voice={}",
            ds.face_dim, ds.voice_dim, model.config.face_dim, model.config.voice_dim
        )));
    }
    let trial_list = s.path("trial_list")?;
    let pairs = match &trial_list {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::data(format!("cannot read trial list {}: {e}", p.display())))?;
            Some(eval::parse_trial_list(&text, &ds)?)
        }
        None => None,
    };
    let report = eval::evaluate(&model, &ds, &split, part, &cfg, pairs.as_deref())?;
    let dir = out_dir(s)?;
    report.write(&dir)?;

    let mut m = RunManifest::new("eval", cfg.seed, s.values());
    m.model = Some(model.config.clone());
    m.eval = Some(cfg);
    m.add_input("run_manifest", &run_dir.join(FILE_NAME))?;
    m.add_input("checkpoint", &ckpt)?;
    m.add_input("dataset", &dataset)?;
    m.add_input("train_split", &train)?;
    m.add_input("test_split", &test)?;
    if let Some(v) = &val {
        m.add_input("val_split", v)?;
    }
    if let Some(t) = &trial_list {
        m.add_input("trial_list", t)?;
    }
    for f in ["verification.csv", "matching.csv", "roc.csv", "report.json"] {
        m.add_output(f.split('.').next().unwrap_or(f), &dir.join(f))?;
    }
    m.write(&dir)?;
    print!("{}", report.verification_csv());
    print!("{}", report.matching_csv());
    Ok(())
}

pub fn cmd_selfcheck(s: &Settings) -> Result<()> {
    let opts = selfcheck::Options {
        seed: s.get("seed")?,
        inject_gradient_bug: s.bool("inject_gradient_bug")?,
    };
    let checks = selfcheck::run(&opts);
    print!("{}", selfcheck::report(&checks));
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Invariant(failed.join(", ")))
    }
}
