//! Built-in verification suite behind `paeff selfcheck`: gradient checks of every
//! differentiable operation, hyperbolic identities, and metric oracles.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::Result;
use crate::eval::{self, VerificationTrial};
use crate::gradcheck::{self, DEFAULT_STEP, DEFAULT_TOLERANCE};
use crate::hyperbolic::{self, plain, BallConfig, PoincarePoint};
use crate::losses::{self, LossWeights, Similarity};
use crate::model::{self, AttentionCombine, FusionKind, GateActivation, ModelConfig, ModelParams, ParamVars};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Default)]
pub struct Options {
    pub seed: u64,
    /// Perturbs each analytic gradient before comparison; every gradient check must then fail.
    pub inject_gradient_bug: bool,
}

pub fn run(opts: &Options) -> Vec<Check> {
    let mut out = gradient_suite(opts.seed, opts.inject_gradient_bug);
    out.extend(hyperbolic_suite(opts.seed));
    out.extend(metric_suite(opts.seed, 200));
    out
}

pub fn report(checks: &[Check]) -> String {
    let mut s = String::new();
    for c in checks {
        let tag = if c.passed { "ok  " } else { "FAIL" };
        s.push_str(&format!("{tag} {}: {}\n", c.name, c.detail));
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    s.push_str(&format!("{} checks, {failed} failed\n", checks.len()));
    s
}

fn outcome(name: &str, r: Result<(bool, String)>) -> Check {
    match r {
        Ok((passed, detail)) => Check {
            name: name.to_string(),
            passed,
            detail,
        },
        Err(e) => Check {
            name: name.to_string(),
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-scale..scale)).collect()).expect("shape")
}

/// `sum(v * w)` with fixed random weights, so every output element matters.
fn contract(g: &mut Graph, v: Var, w: &Tensor) -> Result<Var> {
    let c = g.constant(w.clone());
    let m = g.mul(v, c)?;
    g.sum(m, None)
}

type Objective = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>;

fn grad_case(name: &str, f: Objective, inputs: Vec<Tensor>, inject: bool) -> Check {
    outcome(name, (|| {
        let mut a = gradcheck::analytic(&f, &inputs)?;
        if inject {
            // scale the largest gradient entry by 1%
            let (mut bi, mut bj, mut best) = (0, 0, -1.0);
            for (i, row) in a.iter().enumerate() {
                for (j, x) in row.iter().enumerate() {
                    if x.abs() > best {
                        (bi, bj, best) = (i, j, x.abs());
                    }
                }
            }
            a[bi][bj] *= 1.01;
        }
        let n = gradcheck::numeric(&f, &inputs, DEFAULT_STEP)?;
        let r = gradcheck::compare(a, n);
        Ok((
            r.passes(DEFAULT_TOLERANCE),
            format!("max relative error {:.3e} (tolerance {DEFAULT_TOLERANCE:.0e})", r.max_rel_error),
        ))
    })())
}

fn small_model(rng: &mut ChaCha8Rng) -> ModelConfig {
    let mut cfg = ModelConfig::new(rng.random_range(2..=5), rng.random_range(2..=5), rng.random_range(2..=3));
    cfg.proj_dim = rng.random_range(2..=8);
    cfg
}

/// Random small instances (B <= 4, D <= 8) of every differentiable operation.
pub fn gradient_suite(seed: u64, inject: bool) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = rng.random_range(2..=4);
    let d = rng.random_range(2..=8);
    let ball = BallConfig::default();
    let mut out = Vec::new();

    let w = rand_tensor(&mut rng, &[b, d], 1.0);
    {
        let w = w.clone();
        let din = rng.random_range(2..=6);
        out.push(grad_case(
            "grad.affine_projection",
            Box::new(move |g, v| {
                let y = model::affine(g, v[0], v[1], v[2])?;
                contract(g, y, &w)
            }),
            vec![rand_tensor(&mut rng, &[b, din], 1.0), rand_tensor(&mut rng, &[din, d], 1.0), rand_tensor(&mut rng, &[d], 1.0)],
            inject,
        ));
    }
    {
        let w = w.clone();
        out.push(grad_case(
            "grad.exp_map_origin",
            Box::new(move |g, v| {
                let p = hyperbolic::exp_map_origin(g, v[0], ball)?;
                contract(g, p.vector, &w)
            }),
            vec![rand_tensor(&mut rng, &[b, d], 1.0)],
            inject,
        ));
    }
    {
        let w = w.clone();
        out.push(grad_case(
            "grad.log_map_origin",
            Box::new(move |g, v| {
                let p = PoincarePoint { vector: v[0], config: ball };
                let y = hyperbolic::log_map_origin(g, &p)?;
                contract(g, y, &w)
            }),
            vec![rand_tensor(&mut rng, &[b, d], 0.9 / (d as f64).sqrt())],
            inject,
        ));
    }
    {
        let wv = rand_tensor(&mut rng, &[d], 1.0);
        let r = 0.8 / (d as f64).sqrt();
        out.push(grad_case(
            "grad.mobius_add",
            Box::new(move |g, v| {
                let x = PoincarePoint { vector: v[0], config: ball };
                let y = PoincarePoint { vector: v[1], config: ball };
                let z = hyperbolic::mobius_add(g, &x, &y)?;
                contract(g, z.vector, &wv)
            }),
            vec![rand_tensor(&mut rng, &[d], r), rand_tensor(&mut rng, &[d], r)],
            inject,
        ));
        out.push(grad_case(
            "grad.poincare_distance",
            Box::new(move |g, v| {
                let x = PoincarePoint { vector: v[0], config: ball };
                let y = PoincarePoint { vector: v[1], config: ball };
                hyperbolic::poincare_distance(g, &x, &y)
            }),
            vec![rand_tensor(&mut rng, &[d], r), rand_tensor(&mut rng, &[d], r)],
            inject,
        ));
        let wm = rand_tensor(&mut rng, &[b, b], 1.0);
        out.push(grad_case(
            "grad.pairwise_distance",
            Box::new(move |g, v| {
                let x = PoincarePoint { vector: v[0], config: ball };
                let y = PoincarePoint { vector: v[1], config: ball };
                let m = hyperbolic::pairwise_distance(g, &x, &y)?;
                contract(g, m, &wm)
            }),
            vec![rand_tensor(&mut rng, &[b, d], r), rand_tensor(&mut rng, &[b, d], r)],
            inject,
        ));
    }

    let fusion_variants = [
        ("grad.egff_multiplication", GateActivation::Tanh, AttentionCombine::Multiplication, FusionKind::Egff),
        ("grad.egff_addition", GateActivation::Tanh, AttentionCombine::Addition, FusionKind::Egff),
        ("grad.egff_concatenation", GateActivation::Tanh, AttentionCombine::Concatenation, FusionKind::Egff),
        ("grad.egff_relu", GateActivation::Relu, AttentionCombine::Multiplication, FusionKind::Egff),
        ("grad.linear_fusion", GateActivation::Tanh, AttentionCombine::Multiplication, FusionKind::Linear),
    ];
    for (name, act, combine, fusion) in fusion_variants {
        let mut cfg = small_model(&mut rng);
        cfg.gate_activation = act;
        cfg.attention_combine = combine;
        cfg.fusion = fusion;
        let dd = cfg.proj_dim;
        let params = match ModelParams::init(&cfg, rng.random()) {
            Ok(p) => p,
            Err(e) => {
                out.push(outcome(name, Err(e)));
                continue;
            }
        };
        let mut inputs: Vec<Tensor> = params.named().into_iter().map(|(_, t)| t.clone()).collect();
        // random gate parameters so the gate is not stuck at 1/2
        inputs[4] = rand_tensor(&mut rng, &[dd], 1.0);
        inputs[5] = rand_tensor(&mut rng, &[dd], 1.0);
        let n_params = inputs.len();
        inputs.push(rand_tensor(&mut rng, &[b, dd], 1.0));
        inputs.push(rand_tensor(&mut rng, &[b, dd], 1.0));
        let wf = rand_tensor(&mut rng, &[b, dd], 1.0);
        out.push(grad_case(
            name,
            Box::new(move |g, v| {
                let p = ParamVars::from_ordered(&v[..n_params], &cfg)?;
                let f = model::egff_fuse(g, v[n_params], v[n_params + 1], &p, &cfg)?;
                contract(g, f.fused, &wf)
            }),
            inputs,
            inject,
        ));
    }

    for (name, mode) in [
        ("grad.alignment_loss_hyperbolic", Similarity::NegHyperbolicDistance),
        ("grad.alignment_loss_cosine", Similarity::Cosine),
    ] {
        let r = 0.8 / (d as f64).sqrt();
        out.push(grad_case(
            name,
            Box::new(move |g, v| losses::alignment_loss(g, v[0], v[1], v[2], mode, ball)),
            vec![rand_tensor(&mut rng, &[b, d], r), rand_tensor(&mut rng, &[b, d], r), Tensor::scalar(rng.random_range(0.0..2.0))],
            inject,
        ));
    }
    let labels: Vec<usize> = (0..b).map(|i| i % 2).collect();
    {
        let labels = labels.clone();
        out.push(grad_case(
            "grad.orthogonal_projection_loss",
            Box::new(move |g, v| losses::orthogonal_projection_loss(g, v[0], &labels, 1.0)),
            vec![rand_tensor(&mut rng, &[b, d], 1.0)],
            inject,
        ));
    }
    {
        let labels = labels.clone();
        out.push(grad_case(
            "grad.cross_entropy_loss",
            Box::new(move |g, v| losses::cross_entropy_loss(g, v[0], &labels)),
            vec![rand_tensor(&mut rng, &[b, 3], 2.0)],
            inject,
        ));
    }
    {
        let w = LossWeights::default();
        out.push(grad_case(
            "grad.weighted_total",
            Box::new(move |g, v| losses::weighted_total(g, v[0], v[1], v[2], &w)),
            vec![Tensor::scalar(rng.random()), Tensor::scalar(rng.random()), Tensor::scalar(rng.random())],
            inject,
        ));
    }
    {
        let mut cfg = small_model(&mut rng);
        cfg.proj_dim = d.min(4);
        let batch = crate::data::PairBatch {
            faces: rand_tensor(&mut rng, &[b, cfg.face_dim], 1.0),
            voices: rand_tensor(&mut rng, &[b, cfg.voice_dim], 1.0),
            labels: (0..b).map(|i| i % cfg.num_identities).collect(),
        };
        match ModelParams::init(&cfg, rng.random()) {
            Ok(params) => {
                let inputs: Vec<Tensor> = params.named().into_iter().map(|(_, t)| t.clone()).collect();
                let w = LossWeights::default();
                out.push(grad_case(
                    "grad.total_objective_end_to_end",
                    Box::new(move |g, v| crate::trainer::objective_for_check(&cfg, &batch, &w, 1.0)(g, v)),
                    inputs,
                    inject,
                ));
            }
            Err(e) => out.push(outcome("grad.total_objective_end_to_end", Err(e))),
        }
    }
    out
}

fn random_ball_point(rng: &mut ChaCha8Rng, d: usize, max_norm: f64) -> Vec<f64> {
    let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    let r = max_norm * rng.random::<f64>();
    v.iter().map(|x| x * r / n).collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Exp/log inverse, Mobius identity and inverse, symmetry, triangle inequality, ball invariant.
pub fn hyperbolic_suite(seed: u64) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x4859);
    let cfg = BallConfig::default();
    let mut out = Vec::new();

    out.push(outcome("hyperbolic.exp_log_inverse", (|| {
        let mut worst: f64 = 0.0;
        for _ in 0..200 {
            let d = rng.random_range(1..=8);
            let mut v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let target = rng.random_range(0.0..3.0) / norm(&v).max(1e-12);
            v.iter_mut().for_each(|x| *x *= target);
            let mut g = Graph::new();
            let x = g.constant(Tensor::vector(v.clone()));
            let p = hyperbolic::exp_map_origin(&mut g, x, cfg)?;
            let back = hyperbolic::log_map_origin(&mut g, &p)?;
            for (a, b) in g.value(back).iter().zip(&v) {
                worst = worst.max((a - b).abs());
            }
        }
        Ok((worst <= 1e-9, format!("max |log(exp(v)) - v| = {worst:.2e} (tolerance 1e-9)")))
    })()));

    out.push(outcome("hyperbolic.mobius_identity_and_inverse", {
        let mut worst: f64 = 0.0;
        for _ in 0..200 {
            let x = random_ball_point(&mut rng, 6, 0.95);
            let zero = vec![0.0; 6];
            let id = plain::mobius_add(&x, &zero, &cfg);
            let id_left = plain::mobius_add(&zero, &x, &cfg);
            let neg: Vec<f64> = x.iter().map(|a| -a).collect();
            let inv = plain::mobius_add(&neg, &x, &cfg);
            for i in 0..6 {
                worst = worst.max((id[i] - x[i]).abs()).max((id_left[i] - x[i]).abs()).max(inv[i].abs());
            }
        }
        Ok((worst <= 1e-9, format!("max deviation {worst:.2e} (tolerance 1e-9)")))
    }));

    out.push(outcome("hyperbolic.distance_symmetry", {
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            let x = random_ball_point(&mut rng, 5, 0.99);
            let y = random_ball_point(&mut rng, 5, 0.99);
            worst = worst.max((plain::distance(&x, &y, &cfg) - plain::distance(&y, &x, &cfg)).abs());
        }
        Ok((worst <= 1e-12, format!("max |d(x,y) - d(y,x)| = {worst:.2e} (tolerance 1e-12)")))
    }));

    out.push(outcome("hyperbolic.triangle_inequality", {
        let mut violations = 0;
        let mut worst = f64::NEG_INFINITY;
        for _ in 0..10_000 {
            let x = random_ball_point(&mut rng, 4, 0.99);
            let y = random_ball_point(&mut rng, 4, 0.99);
            let z = random_ball_point(&mut rng, 4, 0.99);
            let slack = plain::distance(&x, &z, &cfg) - plain::distance(&x, &y, &cfg) - plain::distance(&y, &z, &cfg);
            worst = worst.max(slack);
            if slack > 1e-9 {
                violations += 1;
            }
        }
        Ok((violations == 0, format!("10000 triples, {violations} violations, max slack {worst:.2e}")))
    }));

    out.push(outcome("hyperbolic.ball_invariant", (|| {
        let limit = cfg.max_norm();
        let mut worst: f64 = 0.0;
        for _ in 0..500 {
            let scale = 10f64.powf(rng.random_range(-3.0..3.0));
            let v: Vec<f64> = (0..6).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
            let p = plain::exp_map_origin(&v, &cfg);
            let q = plain::mobius_add(&p, &random_ball_point(&mut rng, 6, limit), &cfg);
            let mut g = Graph::new();
            let x = g.constant(Tensor::vector(v));
            let pp = hyperbolic::exp_map_origin(&mut g, x, cfg)?;
            let clipped = hyperbolic::project_to_ball(&mut g, pp.vector, cfg)?;
            worst = worst.max(norm(&p)).max(norm(&q)).max(norm(g.value(clipped.vector)));
        }
        Ok((worst <= limit, format!("largest norm {worst:.12} (limit {limit:.12})")))
    })()));
    out
}

/// Independent threshold sweep used as the EER oracle.
pub fn brute_force_eer(trials: &[VerificationTrial]) -> f64 {
    let mut th: Vec<f64> = trials.iter().map(|t| t.score).collect();
    th.sort_by(f64::total_cmp);
    th.dedup();
    th.push(f64::INFINITY);
    let p = trials.iter().filter(|t| t.is_match).count() as f64;
    let n = trials.len() as f64 - p;
    let rates = |t: f64| {
        let fa = trials.iter().filter(|x| !x.is_match && x.score >= t).count() as f64 / n;
        let fr = trials.iter().filter(|x| x.is_match && x.score < t).count() as f64 / p;
        (fa, fr)
    };
    let mut prev = rates(th[0]);
    for &t in &th[1..] {
        let cur = rates(t);
        let d = cur.0 - cur.1;
        if d <= 0.0 {
            if d == 0.0 {
                return cur.0;
            }
            let dp = prev.0 - prev.1;
            let lambda = dp / (dp - d);
            return prev.0 + lambda * (cur.0 - prev.0);
        }
        prev = cur;
    }
    f64::NAN
}

/// Concordant-pair count used as the AUC oracle.
pub fn concordant_pair_auc(trials: &[VerificationTrial]) -> f64 {
    let (mut c, mut ties, mut total) = (0u64, 0u64, 0u64);
    for a in trials.iter().filter(|t| t.is_match) {
        for b in trials.iter().filter(|t| !t.is_match) {
            total += 1;
            if a.score > b.score {
                c += 1;
            } else if a.score == b.score {
                ties += 1;
            }
        }
    }
    (c as f64 + 0.5 * ties as f64) / total as f64
}

fn random_trials(rng: &mut ChaCha8Rng, max_len: usize, tie_free: bool) -> Vec<VerificationTrial> {
    loop {
        let n = rng.random_range(2..=max_len);
        let grid = rng.random_range(2..20);
        let ts: Vec<VerificationTrial> = (0..n)
            .map(|_| {
                let s = if tie_free {
                    rng.random::<f64>()
                } else {
                    rng.random_range(0..grid) as f64 / grid as f64
                };
                VerificationTrial::new(s, rng.random_bool(0.5))
            })
            .collect();
        if ts.iter().any(|t| t.is_match) && ts.iter().any(|t| !t.is_match) {
            return ts;
        }
    }
}

/// EER and AUC against their oracles on `sets` random trial sets (ties included).
pub fn metric_suite(seed: u64, sets: usize) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x4d45);
    let mut eer_bad = 0;
    let mut auc_bad = 0;
    let mut trap_worst: f64 = 0.0;
    let mut errors = Vec::new();
    for _ in 0..sets {
        let ts = random_trials(&mut rng, 200, false);
        match (eval::compute_eer(&ts), eval::compute_auc(&ts)) {
            (Ok(e), Ok(a)) => {
                eer_bad += (e.eer != brute_force_eer(&ts)) as usize;
                auc_bad += (a != concordant_pair_auc(&ts)) as usize;
            }
            (Err(e), _) | (_, Err(e)) => errors.push(e.to_string()),
        }
        let tf = random_trials(&mut rng, 200, true);
        if let (Ok(a), Ok(t)) = (eval::compute_auc(&tf), eval::trapezoid_auc(&tf)) {
            trap_worst = trap_worst.max((a - t).abs());
        }
    }
    let err_note = errors.first().map(|e| format!("; first error: {e}")).unwrap_or_default();
    vec![
        Check {
            name: "metrics.eer_matches_threshold_sweep".into(),
            passed: eer_bad == 0 && errors.is_empty(),
            detail: format!("{sets} random sets, {eer_bad} mismatches{err_note}"),
        },
        Check {
            name: "metrics.auc_matches_pair_count".into(),
            passed: auc_bad == 0 && errors.is_empty(),
            detail: format!("{sets} random sets, {auc_bad} mismatches{err_note}"),
        },
        Check {
            name: "metrics.auc_matches_trapezoid".into(),
            passed: trap_worst <= 1e-12,
            detail: format!("{sets} tie-free sets, max difference {trap_worst:.2e} (tolerance 1e-12)"),
        },
    ]
}
