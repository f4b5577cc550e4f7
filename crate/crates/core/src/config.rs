//! Layered settings shared by every subcommand.
//!
//! Each setting is a flat key such as `lr0`. The same key is accepted as a
//! command-line flag (`--lr0`), an environment variable (`PAEFF_LR0`) and a
//! line of the config file (`lr0 = 2e-5`). Resolution order, highest first:
//! flag, environment, config file, built-in default.
//!
//! Config file format: one `key = value` per line; blank lines and lines
//! starting with `#` are ignored, as is anything after ` #` on a line. Values
//! may be wrapped in double quotes. Lists are comma-separated and may be
//! wrapped in square brackets (`gallery_sizes = [2, 4, 6]`). `[section]`
//! headers are accepted and ignored, so keys stay flat.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

use crate::data::{SplitMode, SynthParams};
use crate::error::{Error, Result};
use crate::eval::{EvalConfig, Stratum};
use crate::hyperbolic::BallConfig;
use crate::losses::{LossWeights, Similarity};
use crate::model::{AttentionCombine, FusionKind, GateActivation, ModelConfig, ScoreSpace};
use crate::trainer::{Ablation, TrainConfig};

pub const ENV_PREFIX: &str = "PAEFF_";

/// One setting. An empty default means the setting is unset unless provided.
#[derive(Debug, Clone, Copy)]
pub struct Key {
    pub name: &'static str,
    pub default: &'static str,
    pub help: &'static str,
}

const fn key(name: &'static str, default: &'static str, help: &'static str) -> Key {
    Key { name, default, help }
}

pub const MODEL_KEYS: &[Key] = &[
    key("proj_dim", "128", "width of the shared projection space"),
    key("gate_activation", "tanh", "gate nonlinearity: tanh or relu"),
    key("attention_combine", "multiplication", "gate input combination: multiplication, addition or concatenation"),
    key("fusion", "egff", "fusion block: egff or linear"),
    key("use_hyperbolic", "true", "lift projections into the Poincare ball before alignment"),
    key("tangent_clip", "2", "largest tangent norm before the exp map, or `none`"),
    key("similarity", "neg_hyperbolic_distance", "alignment similarity: neg_hyperbolic_distance or cosine"),
    key("curvature", "1", "ball curvature c"),
    key("boundary_eps", "1e-5", "points are kept within norm (1 - boundary_eps)/sqrt(c)"),
];

pub const TRAIN_KEYS: &[Key] = &[
    key("epochs", "50", "training epochs"),
    key("batch_size", "auto", "pairs per batch; auto is 64 below 5000 training pairs, else 1024"),
    key("lr0", "2e-5", "initial learning rate"),
    key("lr_min", "0", "final learning rate of the cosine schedule"),
    key("weight_decay", "0.01", "decoupled weight decay"),
    key("adam_beta1", "0.9", "first-moment decay"),
    key("adam_beta2", "0.999", "second-moment decay"),
    key("adam_eps", "1e-8", "optimizer denominator offset"),
    key("seed", "0", "root seed for initialisation, batching and validation trials"),
    key("alpha1", "0.3", "weight of the alignment loss"),
    key("alpha2", "0.35", "weight of the orthogonal projection loss"),
    key("alpha3", "0.35", "weight of the identity cross-entropy"),
    key("op_inter_weight", "1", "weight of the cross-identity term of the orthogonal projection loss"),
    key("ablation", "full", "arm: full, no_hyperbolic, no_fa or linear_fusion"),
    key("val_trials", "2000", "verification trials scored on the validation part each epoch"),
];

pub const SPLIT_KEYS: &[Key] = &[
    key("dataset", "", "dataset in #fve v1 format"),
    key("split_mode", "unseen_unheard", "split semantics: unseen_unheard or seen_heard"),
    key("train_split", "", "file of training identity (or clip) ids"),
    key("val_split", "", "file of validation ids; optional"),
    key("test_split", "", "file of test ids"),
];

pub const EVAL_KEYS: &[Key] = &[
    key("run_dir", "", "output directory of a training run"),
    key("part", "test", "split part to evaluate: train, val or test"),
    key("trial_list", "", "external trial list (face clip, voice clip, 0/1); replaces sampled trials"),
    key("max_trials", "10000", "sampled verification trials"),
    key("gallery_sizes", "2,4,6,8,10", "matching gallery sizes"),
    key("matching_trials", "1000", "matching trials per gallery size"),
    key("strata", "auto", "verification strata, e.g. random,G,N,A,GNA; auto uses all the data supports"),
    key("score_space", "aligned", "verification representation: aligned or fused"),
    key("seed", "0", "seed for trial sampling"),
];

pub const SYNTH_KEYS: &[Key] = &[
    key("num_identities", "32", "identities to generate"),
    key("samples_per_id", "20", "face/voice clip pairs per identity"),
    key("face_dim", "96", "face vector width"),
    key("voice_dim", "80", "voice vector width"),
    key("coupling", "1", "share of the identity latent in voice vectors, 0 to 1"),
    key("noise", "0.1", "per-clip noise standard deviation"),
    key("latent_dim", "16", "width of the identity latent"),
    key("demographics", "false", "attach gender, nationality and age tags"),
    key("seed", "0", "seed for vectors and the split"),
    key("split_mode", "unseen_unheard", "split semantics: unseen_unheard or seen_heard"),
    key("n_val", "4", "validation identities (clips per identity when seen_heard)"),
    key("n_test", "8", "test identities (clips per identity when seen_heard)"),
];

pub const SELFCHECK_KEYS: &[Key] = &[
    key("seed", "0", "seed for the random check instances"),
    key("inject_gradient_bug", "false", "perturb analytic gradients so every gradient check must fail"),
];

pub const OUT_KEY: Key = key("out_dir", "", "directory for outputs");

/// The key set of a subcommand.
pub fn keys_for(command: &str) -> Vec<Key> {
    let mut out: Vec<Key> = match command {
        "train" => [SPLIT_KEYS, MODEL_KEYS, TRAIN_KEYS].concat(),
        "eval" => [SPLIT_KEYS, EVAL_KEYS].concat(),
        "synth" => SYNTH_KEYS.to_vec(),
        "selfcheck" => SELFCHECK_KEYS.to_vec(),
        _ => Vec::new(),
    };
    if command != "selfcheck" && !out.is_empty() {
        out.push(OUT_KEY);
    }
    // eval reads dataset and split paths from the run manifest unless overridden
    if command == "eval" {
        for k in out.iter_mut().filter(|k| SPLIT_KEYS.iter().any(|s| s.name == k.name)) {
            k.default = "";
        }
    }
    out
}

pub fn env_name(key: &str) -> String {
    format!("{ENV_PREFIX}{}", key.to_ascii_uppercase())
}

pub fn flag_name(key: &str) -> String {
    key.replace('_', "-")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Default,
    File,
    Env,
    Flag,
}

/// Parses config-file text into key/value pairs.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || (line.starts_with('[') && line.ends_with(']') && !line.contains('=')) {
            continue;
        }
        let line = match line.find(" #") {
            Some(p) => line[..p].trim_end(),
            None => line,
        };
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: i + 1,
            message: format!("expected `key = value`, got `{line}`"),
        })?;
        let k = k.trim();
        if k.is_empty() || !k.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("invalid key `{k}`"),
            });
        }
        let mut v = v.trim();
        if v.len() >= 2 && v.starts_with('"') && v.ends_with('"') {
            v = &v[1..v.len() - 1];
        }
        if out.insert(k.to_string(), v.to_string()).is_some() {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("duplicate key `{k}`"),
            });
        }
    }
    Ok(out)
}

/// Resolved settings of one subcommand, with the layer each value came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    command: String,
    values: BTreeMap<String, (String, Source)>,
}

impl Settings {
    /// Layers `flags` over `env` over `file` over the defaults of `command`.
    /// Keys in `file` or `flags` that the command does not know are config errors.
    pub fn resolve(
        command: &str,
        file: &BTreeMap<String, String>,
        env: impl Fn(&str) -> Option<String>,
        flags: &BTreeMap<String, String>,
    ) -> Result<Self> {
        let keys = keys_for(command);
        if keys.is_empty() && command != "selfcheck" {
            return Err(Error::Config(format!("unknown command `{command}`")));
        }
        for (layer, map) in [("config file", file), ("flags", flags)] {
            if let Some(k) = map.keys().find(|k| !keys.iter().any(|key| key.name == k.as_str())) {
                return Err(Error::Config(format!("unknown setting `{k}` in {layer} for `{command}`")));
            }
        }
        let mut values = BTreeMap::new();
        for k in &keys {
            let v = if let Some(v) = flags.get(k.name) {
                (v.clone(), Source::Flag)
            } else if let Some(v) = env(&env_name(k.name)) {
                (v, Source::Env)
            } else if let Some(v) = file.get(k.name) {
                (v.clone(), Source::File)
            } else {
                (k.default.to_string(), Source::Default)
            };
            values.insert(k.name.to_string(), v);
        }
        Ok(Settings {
            command: command.to_string(),
            values,
        })
    }

    /// Defaults only; convenient for tests and library callers.
    pub fn defaults(command: &str) -> Result<Self> {
        Self::resolve(command, &BTreeMap::new(), |_| None, &BTreeMap::new())
    }

    pub fn raw(&self, key: &str) -> Result<&str> {
        self.values
            .get(key)
            .map(|(v, _)| v.as_str())
            .ok_or_else(|| Error::Config(format!("`{key}` is not a setting of `{}`", self.command)))
    }

    pub fn source(&self, key: &str) -> Option<Source> {
        self.values.get(key).map(|(_, s)| *s)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<()> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = (value.into(), Source::Flag);
                Ok(())
            }
            None => Err(Error::Config(format!("`{key}` is not a setting of `{}`", self.command))),
        }
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let v = self.raw(key)?;
        v.trim().parse().map_err(|e| self.bad(key, v, e))
    }

    /// `None` when the setting is empty.
    pub fn opt<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        if self.raw(key)?.trim().is_empty() {
            Ok(None)
        } else {
            self.get(key).map(Some)
        }
    }

    pub fn path(&self, key: &str) -> Result<Option<PathBuf>> {
        let v = self.raw(key)?.trim();
        Ok((!v.is_empty()).then(|| PathBuf::from(v)))
    }

    pub fn required_path(&self, key: &str) -> Result<PathBuf> {
        self.path(key)?.ok_or_else(|| {
            Error::Config(format!(
                "missing required setting `{key}` (flag --{}, env {}, or config key {key})",
                flag_name(key),
                env_name(key)
            ))
        })
    }

    pub fn bool(&self, key: &str) -> Result<bool> {
        let v = self.raw(key)?;
        match v.trim().to_ascii_lowercase().as_str() {
            "true" | "1" | "yes" | "on" => Ok(true),
            "false" | "0" | "no" | "off" => Ok(false),
            _ => Err(self.bad(key, v, "expected true or false")),
        }
    }

    pub fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>>
    where
        T::Err: std::fmt::Display,
    {
        let v = self.raw(key)?;
        let inner = v.trim().trim_start_matches('[').trim_end_matches(']');
        inner
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|e| self.bad(key, v, e)))
            .collect()
    }

    fn bad(&self, key: &str, value: &str, why: impl std::fmt::Display) -> Error {
        Error::Config(format!("invalid value `{value}` for `{key}`: {why}"))
    }

    /// Every resolved value, for manifests.
    pub fn values(&self) -> BTreeMap<String, String> {
        self.values.iter().map(|(k, (v, _))| (k.clone(), v.clone())).collect()
    }

    /// The resolved values as a config file that reproduces them.
    pub fn to_config_file(&self) -> String {
        let mut s = format!("# resolved settings for `paeff {}`\n", self.command);
        for (k, (v, _)) in &self.values {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }

    /// Model configuration; data-dependent widths are filled in by the trainer.
    pub fn model_config(&self) -> Result<ModelConfig> {
        let mut c = ModelConfig::new(1, 1, 2);
        c.proj_dim = self.get("proj_dim")?;
        c.gate_activation = self.get::<GateActivation>("gate_activation")?;
        c.attention_combine = self.get::<AttentionCombine>("attention_combine")?;
        c.fusion = self.get::<FusionKind>("fusion")?;
        c.use_hyperbolic = self.bool("use_hyperbolic")?;
        c.tangent_clip = match self.raw("tangent_clip")?.trim() {
            "none" | "" => None,
            _ => Some(self.get("tangent_clip")?),
        };
        c.similarity = self.get::<Similarity>("similarity")?;
        c.ball = BallConfig {
            curvature: self.get("curvature")?,
            boundary_eps: self.get("boundary_eps")?,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let batch_size = match self.raw("batch_size")?.trim() {
            "auto" | "" => None,
            _ => Some(self.get("batch_size")?),
        };
        let c = TrainConfig {
            epochs: self.get("epochs")?,
            batch_size,
            lr0: self.get("lr0")?,
            lr_min: self.get("lr_min")?,
            weight_decay: self.get("weight_decay")?,
            adam_beta1: self.get("adam_beta1")?,
            adam_beta2: self.get("adam_beta2")?,
            adam_eps: self.get("adam_eps")?,
            seed: self.get("seed")?,
            loss_weights: LossWeights {
                alpha1: self.get("alpha1")?,
                alpha2: self.get("alpha2")?,
                alpha3: self.get("alpha3")?,
            },
            op_inter_weight: self.get("op_inter_weight")?,
            ablation: self.get::<Ablation>("ablation")?,
            val_trials: self.get("val_trials")?,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn eval_config(&self) -> Result<EvalConfig> {
        let strata = match self.raw("strata")?.trim() {
            "auto" | "" => None,
            _ => Some(self.list::<Stratum>("strata")?),
        };
        let gallery_sizes: Vec<usize> = self.list("gallery_sizes")?;
        if gallery_sizes.iter().any(|&n| n < 2) {
            return Err(Error::Config("gallery sizes must be at least 2".into()));
        }
        Ok(EvalConfig {
            max_trials: self.get("max_trials")?,
            gallery_sizes,
            matching_trials: self.get("matching_trials")?,
            strata,
            score_space: self.get::<ScoreSpace>("score_space")?,
            seed: self.get("seed")?,
        })
    }

    pub fn split_mode(&self) -> Result<SplitMode> {
        self.get("split_mode")
    }

    pub fn synth_params(&self) -> Result<SynthParams> {
        Ok(SynthParams {
            num_identities: self.get("num_identities")?,
            samples_per_id: self.get("samples_per_id")?,
            face_dim: self.get("face_dim")?,
            voice_dim: self.get("voice_dim")?,
            coupling: self.get("coupling")?,
            noise: self.get("noise")?,
            latent_dim: self.get("latent_dim")?,
            demographics: self.bool("demographics")?,
            seed: self.get("seed")?,
        })
    }
}

/// Reads a config file.
pub fn read_config(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config file {}: {e}", path.display())))?;
    parse_config(&text)
}
