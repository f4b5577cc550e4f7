//! AdamW with a cosine learning-rate schedule over matched-pair batches.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::data::{BatchSampler, Dataset, PairBatch, Part, SplitSpec};
use crate::error::{Error, Result};
use crate::eval;
use crate::losses::{self, LossBreakdown, LossWeights, Similarity};
use crate::model::{self, FusionKind, Model, ModelConfig, ModelParams, MAX_LOGIT_SCALE};

/// Which components are switched on; arms other than `Full` are Euclidean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    Full,
    /// Euclidean alignment with gated fusion.
    NoHyperbolic,
    /// Gated fusion without the alignment loss.
    NoFa,
    /// Concatenation fusion without the alignment loss.
    LinearFusion,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [Ablation::Full, Ablation::NoHyperbolic, Ablation::NoFa, Ablation::LinearFusion];

    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoHyperbolic => "no_hyperbolic",
            Ablation::NoFa => "no_fa",
            Ablation::LinearFusion => "linear_fusion",
        }
    }

    /// Model configuration and loss weights for this arm.
    pub fn apply(self, cfg: &ModelConfig, w: &LossWeights) -> (ModelConfig, LossWeights) {
        let mut cfg = cfg.clone();
        let mut w = *w;
        if self != Ablation::Full {
            cfg.use_hyperbolic = false;
            cfg.similarity = Similarity::Cosine;
        }
        if matches!(self, Ablation::NoFa | Ablation::LinearFusion) {
            w.alpha1 = 0.0;
        }
        if self == Ablation::LinearFusion {
            cfg.fusion = FusionKind::Linear;
        }
        (cfg, w)
    }
}

impl std::str::FromStr for Ablation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation `{s}` (full, no_hyperbolic, no_fa, linear_fusion)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    /// `None` resolves to 1024, or 64 when the train part holds fewer than 5000 pairs.
    pub batch_size: Option<usize>,
    pub lr0: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub loss_weights: LossWeights,
    /// Multiplier on the cross-identity term of the orthogonal projection loss.
    pub op_inter_weight: f64,
    pub ablation: Ablation,
    /// Verification trials drawn from the validation part each epoch.
    pub val_trials: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: None,
            lr0: 2e-5,
            lr_min: 0.0,
            weight_decay: 1e-2,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            loss_weights: LossWeights::default(),
            op_inter_weight: 1.0,
            ablation: Ablation::Full,
            val_trials: 2000,
        }
    }
}

pub const DEFAULT_BATCH: usize = 1024;
pub const DESK_BATCH: usize = 64;
pub const DESK_PAIR_LIMIT: usize = 5000;
pub const OPTIMIZER: &str = "adamw";
pub const LR_SCHEDULE: &str = "cosine";

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return bad(format!("lr0 must be > 0, got {}", self.lr0));
        }
        if !(self.lr_min >= 0.0 && self.lr_min <= self.lr0) {
            return bad(format!("lr_min must be in [0, lr0], got {}", self.lr_min));
        }
        if let Some(b) = self.batch_size {
            if b < 2 {
                return bad(format!("batch_size must be >= 2, got {b}"));
            }
        }
        if !(self.weight_decay >= 0.0) {
            return bad(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        for (n, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{n} must be in [0, 1), got {b}"));
            }
        }
        if !(self.adam_eps > 0.0) {
            return bad(format!("adam_eps must be > 0, got {}", self.adam_eps));
        }
        if !(self.op_inter_weight >= 0.0) {
            return bad(format!("op_inter_weight must be >= 0, got {}", self.op_inter_weight));
        }
        self.loss_weights.validate()
    }

    pub fn resolved_batch_size(&self, train_pairs: usize) -> usize {
        self.batch_size.unwrap_or(if train_pairs < DESK_PAIR_LIMIT {
            DESK_BATCH
        } else {
            DEFAULT_BATCH
        })
    }
}

/// `lr_min + (lr0 - lr_min) (1 + cos(pi t / T)) / 2`.
pub fn cosine_lr(t: usize, total: usize, lr0: f64, lr_min: f64) -> Result<f64> {
    if t > total || total == 0 {
        return Err(Error::contract(format!("cosine_lr needs 0 <= t <= T with T > 0, got t={t}, T={total}")));
    }
    Ok(lr_min + 0.5 * (lr0 - lr_min) * (1.0 + (PI * t as f64 / total as f64).cos()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamW {
    pub fn from_config(c: &TrainConfig) -> Self {
        AdamW {
            beta1: c.adam_beta1,
            beta2: c.adam_beta2,
            eps: c.adam_eps,
            weight_decay: c.weight_decay,
        }
    }
}

/// First and second moments for each parameter, plus the step count.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(sizes: &[usize]) -> Self {
        AdamState {
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }
}

/// One decoupled-decay step: `p <- p - lr m_hat / (sqrt(v_hat) + eps) - lr wd p`.
pub fn adamw_step(params: &mut [&mut [f64]], grads: &[&[f64]], state: &mut AdamState, lr: f64, opt: &AdamW) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::dim(format!(
            "adamw: {} params, {} grads, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() || p.len() != state.m[i].len() {
            return Err(Error::dim(format!(
                "adamw: parameter {i} has {} values, gradient {}, state {}",
                p.len(),
                g.len(),
                state.m[i].len()
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - opt.beta1.powi(t);
    let c2 = 1.0 - opt.beta2.powi(t);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for j in 0..p.len() {
            m[j] = opt.beta1 * m[j] + (1.0 - opt.beta1) * g[j];
            v[j] = opt.beta2 * v[j] + (1.0 - opt.beta2) * g[j] * g[j];
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            p[j] -= lr * (m_hat / (v_hat.sqrt() + opt.eps)) + lr * opt.weight_decay * p[j];
        }
    }
    Ok(())
}

/// Forward pass and loss components for one batch; returns the graph and its total.
pub fn batch_loss(
    params: &ModelParams,
    cfg: &ModelConfig,
    batch: &PairBatch,
    weights: &LossWeights,
    op_inter_weight: f64,
) -> Result<(Graph, model::ParamVars, crate::autodiff::Var, LossBreakdown)> {
    let mut g = Graph::new();
    let p = params.register(&mut g, true);
    let faces = g.constant(batch.faces.clone());
    let voices = g.constant(batch.voices.clone());
    let fw = model::forward(&mut g, faces, voices, &p, cfg)?;
    let la = losses::alignment_loss(&mut g, fw.align_face, fw.align_voice, p.logit_scale, cfg.similarity, cfg.ball)?;
    let lo = losses::orthogonal_projection_loss(&mut g, fw.embedding, &batch.labels, op_inter_weight)?;
    let lc = losses::cross_entropy_loss(&mut g, fw.logits, &batch.labels)?;
    let total = losses::weighted_total(&mut g, la, lo, lc, weights)?;
    let breakdown = LossBreakdown {
        l_align: g.scalar_value(la),
        l_op: g.scalar_value(lo),
        l_ce: g.scalar_value(lc),
        total: g.scalar_value(total),
    };
    Ok((g, p, total, breakdown))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub l_align: f64,
    pub l_op: f64,
    pub l_ce: f64,
    pub total: f64,
    pub val_eer: Option<f64>,
    pub val_auc: Option<f64>,
    pub lr: f64,
}

impl EpochLog {
    pub fn to_json_line(&self) -> Result<String> {
        Ok(serde_json::to_string(self)? + "\n")
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the lowest validation EER, ties broken by higher AUC and then
    /// the later epoch; the last epoch when there is no validation data.
    pub best: Model,
    pub last: Model,
    pub best_epoch: usize,
    pub log: Vec<EpochLog>,
    /// Label `i` of the classifier refers to `identities[i]`.
    pub identities: Vec<String>,
    pub batch_size: usize,
    pub loss_weights: LossWeights,
}

/// Sub-seeds for independent random streams under one root seed.
pub fn derive_seed(root: u64, stream: u64) -> u64 {
    root ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

pub fn train(ds: &Dataset, split: &SplitSpec, model_cfg: &ModelConfig, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(ds, split, model_cfg, cfg, |_| {})
}

/// As [`train`], calling `on_epoch` after each epoch's log entry is complete.
pub fn train_with(
    ds: &Dataset,
    split: &SplitSpec,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    split.validate(ds)?;
    let train_pairs = split
        .records(ds, Part::Train)
        .iter()
        .filter(|r| r.modality == model::Modality::Face)
        .count();
    let batch_size = cfg.resolved_batch_size(train_pairs);
    let mut sampler = BatchSampler::new(ds, split, Part::Train, batch_size, derive_seed(cfg.seed, 1))?;
    let (mut mcfg, weights) = cfg.ablation.apply(model_cfg, &cfg.loss_weights);
    mcfg.face_dim = ds.face_dim;
    mcfg.voice_dim = ds.voice_dim;
    mcfg.num_identities = sampler.identities().len();
    mcfg.validate()?;

    let mut params = ModelParams::init(&mcfg, derive_seed(cfg.seed, 0))?;
    let sizes: Vec<usize> = params.named().iter().map(|(_, t)| t.numel()).collect();
    let mut state = AdamState::new(&sizes);
    let opt = AdamW::from_config(cfg);
    let total_steps = cfg.epochs * sampler.steps_per_epoch();
    let has_val = !split.val.is_empty();

    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<((f64, f64), usize, ModelParams)> = None;
    let mut step = 0usize;
    for epoch in 1..=cfg.epochs {
        let mut sums = LossBreakdown::default();
        let mut lr = cfg.lr0;
        let batches = sampler.next_epoch();
        let n_batches = batches.len() as f64;
        for batch in &batches {
            let (mut g, pv, total, b) = batch_loss(&params, &mcfg, batch, &weights, cfg.op_inter_weight)?;
            if !b.total.is_finite() {
                return Err(Error::numeric(format!(
                    "training diverged at step {step} (epoch {epoch}): l_align={}, l_op={}, l_ce={}, total={}",
                    b.l_align, b.l_op, b.l_ce, b.total
                )));
            }
            g.backward(total)?;
            // parameters the arm leaves unused (the gate under linear fusion) get zero gradients
            let grads: Vec<Vec<f64>> = pv
                .ordered()
                .into_iter()
                .zip(&sizes)
                .map(|(v, &n)| g.grad(v).map_or_else(|| vec![0.0; n], <[f64]>::to_vec))
                .collect();
            if let Some(i) = grads.iter().position(|gr| gr.iter().any(|x| !x.is_finite())) {
                return Err(Error::numeric(format!(
                    "training diverged at step {step} (epoch {epoch}): non-finite gradient for `{}`; \
                     l_align={}, l_op={}, l_ce={}",
                    params.named()[i].0,
                    b.l_align,
                    b.l_op,
                    b.l_ce
                )));
            }
            lr = cosine_lr(step, total_steps, cfg.lr0, cfg.lr_min)?;
            {
                let mut slots: Vec<&mut [f64]> = params.named_mut().into_iter().map(|(_, t)| t.data_mut()).collect();
                let grad_refs: Vec<&[f64]> = grads.iter().map(Vec::as_slice).collect();
                adamw_step(&mut slots, &grad_refs, &mut state, lr, &opt)?;
            }
            let ls = &mut params.logit_scale.data_mut()[0];
            *ls = ls.min(MAX_LOGIT_SCALE);
            sums.l_align += b.l_align;
            sums.l_op += b.l_op;
            sums.l_ce += b.l_ce;
            sums.total += b.total;
            step += 1;
        }
        let (val_eer, val_auc) = if has_val {
            let m = Model {
                config: mcfg.clone(),
                params: params.clone(),
            };
            let (e, a) = eval::quick_verification(&m, ds, split, Part::Val, cfg.val_trials, derive_seed(cfg.seed, 2))?;
            (Some(e), Some(a))
        } else {
            (None, None)
        };
        let entry = EpochLog {
            epoch,
            l_align: sums.l_align / n_batches,
            l_op: sums.l_op / n_batches,
            l_ce: sums.l_ce / n_batches,
            total: sums.total / n_batches,
            val_eer,
            val_auc,
            lr,
        };
        on_epoch(&entry);
        log.push(entry);
        // lowest EER, then highest AUC; exact ties go to the later epoch
        let key = (val_eer.unwrap_or(0.0), -val_auc.unwrap_or(0.0));
        if best.as_ref().is_none_or(|(k, _, _)| key <= *k) {
            best = Some((key, epoch, params.clone()));
        }
    }
    let (_, best_epoch, best_params) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        best: Model {
            config: mcfg.clone(),
            params: best_params,
        },
        last: Model { config: mcfg, params },
        best_epoch,
        log,
        identities: sampler.identities().to_vec(),
        batch_size,
        loss_weights: weights,
    })
}

/// Weighted total for a flat list of parameter tensors, used by gradient checks of the full objective.
pub fn objective_for_check<'a>(
    cfg: &'a ModelConfig,
    batch: &'a PairBatch,
    weights: &LossWeights,
    op_inter_weight: f64,
) -> impl Fn(&mut Graph, &[crate::autodiff::Var]) -> Result<crate::autodiff::Var> + 'a {
    let weights = *weights;
    move |g, vars| {
        let p = model::ParamVars::from_ordered(vars, cfg)?;
        let faces = g.constant(batch.faces.clone());
        let voices = g.constant(batch.voices.clone());
        let fw = model::forward(g, faces, voices, &p, cfg)?;
        let la = losses::alignment_loss(g, fw.align_face, fw.align_voice, p.logit_scale, cfg.similarity, cfg.ball)?;
        let lo = losses::orthogonal_projection_loss(g, fw.embedding, &batch.labels, op_inter_weight)?;
        let lc = losses::cross_entropy_loss(g, fw.logits, &batch.labels)?;
        losses::weighted_total(g, la, lo, lc, &weights)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, SplitMode, SynthParams};
    use crate::gradcheck;

    #[test]
    fn cosine_schedule_points() {
        assert_eq!(cosine_lr(0, 100, 2e-5, 0.0).unwrap(), 2e-5);
        assert!(cosine_lr(100, 100, 2e-5, 1e-7).unwrap() - 1e-7 < 1e-20);
        assert!((cosine_lr(50, 100, 2e-5, 1e-6).unwrap() - 1.05e-5).abs() < 1e-18);
        assert!(matches!(cosine_lr(101, 100, 1.0, 0.0), Err(Error::Contract(_))));
        let lrs: Vec<f64> = (0..=37).map(|t| cosine_lr(t, 37, 1.0, 0.1).unwrap()).collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    }

    fn opt(wd: f64) -> AdamW {
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: wd,
        }
    }

    #[test]
    fn adamw_single_step_on_square() {
        // f(x) = x^2 at x = 1: g = 2, m = 0.2, v = 0.004, m_hat = 2, v_hat = 4
        let mut x = [1.0];
        let mut st = AdamState::new(&[1]);
        let lr = 0.1;
        adamw_step(&mut [&mut x[..]], &[&[2.0][..]], &mut st, lr, &opt(0.01)).unwrap();
        let expected = 1.0 - lr * (2.0 / (2.0 + 1e-8)) - lr * 0.01 * 1.0;
        assert!((x[0] - expected).abs() < 1e-15);
        assert!((st.m[0][0] - 0.2).abs() < 1e-15);
        assert!((st.v[0][0] - 0.004).abs() < 1e-15);
    }

    #[test]
    fn adamw_zero_gradient_cases() {
        let mut x = vec![0.5, -2.0];
        let mut st = AdamState::new(&[2]);
        adamw_step(&mut [&mut x[..]], &[&[0.0, 0.0][..]], &mut st, 0.1, &opt(0.0)).unwrap();
        assert_eq!(x, vec![0.5, -2.0]);
        adamw_step(&mut [&mut x[..]], &[&[0.0, 0.0][..]], &mut st, 0.1, &opt(0.2)).unwrap();
        assert_eq!(x, vec![0.5 * (1.0 - 0.02), -2.0 * (1.0 - 0.02)]);
        assert!(matches!(
            adamw_step(&mut [&mut x[..]], &[&[0.0][..]], &mut st, 0.1, &opt(0.0)),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn defaults_follow_recipe() {
        let c = TrainConfig::default();
        assert_eq!((c.epochs, c.lr0, c.weight_decay), (50, 2e-5, 1e-2));
        assert_eq!(c.loss_weights, LossWeights::new(0.3, 0.35, 0.35).unwrap());
        assert_eq!(c.resolved_batch_size(4999), 64);
        assert_eq!(c.resolved_batch_size(5000), 1024);
        assert!(TrainConfig { epochs: 0, ..c.clone() }.validate().is_err());
        assert!(TrainConfig { lr0: 0.0, ..c.clone() }.validate().is_err());
        assert!(TrainConfig { batch_size: Some(1), ..c }.validate().is_err());
    }

    #[test]
    fn ablation_arms() {
        let base = ModelConfig::new(4, 3, 2);
        let w = LossWeights::default();
        let (c, ww) = Ablation::Full.apply(&base, &w);
        assert!(c.use_hyperbolic && ww == w);
        let (c, ww) = Ablation::NoHyperbolic.apply(&base, &w);
        assert!(!c.use_hyperbolic && c.similarity == Similarity::Cosine && ww.alpha1 == 0.3);
        let (c, ww) = Ablation::NoFa.apply(&base, &w);
        assert!(!c.use_hyperbolic && c.fusion == FusionKind::Egff && ww.alpha1 == 0.0);
        let (c, ww) = Ablation::LinearFusion.apply(&base, &w);
        assert!(c.fusion == FusionKind::Linear && ww.alpha1 == 0.0 && ww.alpha3 == 0.35);
        assert_eq!("no_fa".parse::<Ablation>().unwrap(), Ablation::NoFa);
    }

    fn tiny(seed: u64, ids: usize, coupling: f64) -> (Dataset, SplitSpec) {
        let ds = synth_generate(&SynthParams {
            num_identities: ids,
            samples_per_id: 6,
            face_dim: 6,
            voice_dim: 5,
            latent_dim: 4,
            coupling,
            seed,
            ..Default::default()
        })
        .unwrap();
        let split = SplitSpec::random(&ds, SplitMode::UnseenUnheard, 2, 2, seed).unwrap();
        (ds, split)
    }

    fn small_model() -> ModelConfig {
        let mut m = ModelConfig::new(6, 5, 0);
        m.proj_dim = 8;
        m
    }

    #[test]
    fn every_arm_trains() {
        let (ds, split) = tiny(3, 8, 1.0);
        for arm in Ablation::ALL {
            let cfg = TrainConfig {
                epochs: 2,
                batch_size: Some(4),
                lr0: 1e-3,
                ablation: arm,
                ..Default::default()
            };
            let out = train(&ds, &split, &small_model(), &cfg).unwrap();
            assert_eq!(out.log.len(), 2, "{}", arm.as_str());
        }
    }

    #[test]
    fn one_epoch_logs_once_and_repeats_exactly() {
        let (ds, split) = tiny(1, 8, 1.0);
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: Some(4),
            lr0: 1e-3,
            ..Default::default()
        };
        let a = train(&ds, &split, &small_model(), &cfg).unwrap();
        assert_eq!(a.log.len(), 1);
        let b = train(&ds, &split, &small_model(), &cfg).unwrap();
        let lines = |o: &TrainOutcome| o.log.iter().map(|e| e.to_json_line().unwrap()).collect::<String>();
        assert_eq!(lines(&a), lines(&b));
        assert_eq!(a.best.params, b.best.params);
        assert!(a.best.params.logit_scale.data()[0] <= MAX_LOGIT_SCALE);
    }

    #[test]
    fn first_batch_total_is_weighted_sum() {
        let (ds, split) = tiny(2, 6, 1.0);
        let mut sampler = BatchSampler::new(&ds, &split, Part::Train, 4, 3).unwrap();
        let batch = sampler.next_epoch().remove(0);
        let mut cfg = small_model();
        cfg.num_identities = sampler.identities().len();
        let params = ModelParams::init(&cfg, 5).unwrap();
        let w = LossWeights::default();
        let (_, _, _, b) = batch_loss(&params, &cfg, &batch, &w, 1.0).unwrap();
        let independent = losses::total_loss(b.l_align, b.l_op, b.l_ce, &w).unwrap();
        assert!((b.total - independent.total).abs() <= 1e-12);
    }

    #[test]
    fn classifier_only_run_reduces_loss() {
        let (ds, split) = tiny(4, 6, 1.0);
        let cfg = TrainConfig {
            epochs: 15,
            batch_size: Some(8),
            lr0: 1e-2,
            loss_weights: LossWeights::new(0.0, 0.0, 1.0).unwrap(),
            ..Default::default()
        };
        let out = train(&ds, &split, &small_model(), &cfg).unwrap();
        assert!(out.log.last().unwrap().l_ce < out.log[0].l_ce);
    }

    #[test]
    fn full_objective_gradient() {
        let (ds, split) = tiny(6, 6, 1.0);
        let mut sampler = BatchSampler::new(&ds, &split, Part::Train, 3, 0).unwrap();
        let batch = sampler.next_epoch().remove(0);
        let mut cfg = small_model();
        cfg.proj_dim = 4;
        cfg.num_identities = sampler.identities().len();
        let params = ModelParams::init(&cfg, 11).unwrap();
        let inputs: Vec<crate::autodiff::Tensor> = params.named().into_iter().map(|(_, t)| t.clone()).collect();
        let f = objective_for_check(&cfg, &batch, &LossWeights::default(), 1.0);
        let r = gradcheck::check(f, &inputs, gradcheck::DEFAULT_STEP).unwrap();
        assert!(r.passes(gradcheck::DEFAULT_TOLERANCE), "{r:?}");
    }
}
