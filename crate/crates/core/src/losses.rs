//! Training objectives: symmetric cross-entropy alignment, orthogonal
//! projection on fused embeddings, identity cross-entropy, and their
//! weighted total.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::hyperbolic::{self, BallConfig, PoincarePoint};

/// How matched face/voice embeddings are compared during alignment and scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Similarity {
    NegHyperbolicDistance,
    Cosine,
}

impl std::str::FromStr for Similarity {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "neg_hyperbolic_distance" => Ok(Similarity::NegHyperbolicDistance),
            "cosine" => Ok(Similarity::Cosine),
            other => Err(Error::Config(format!("unknown similarity mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha1: 0.3,
            alpha2: 0.35,
            alpha3: 0.35,
        }
    }
}

impl LossWeights {
    pub fn new(alpha1: f64, alpha2: f64, alpha3: f64) -> Result<Self> {
        let w = LossWeights {
            alpha1,
            alpha2,
            alpha3,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.alpha1, self.alpha2, self.alpha3];
        if all.iter().any(|a| !(*a >= 0.0) || !a.is_finite()) {
            return Err(Error::Config(format!("loss weights must be finite and >= 0: {all:?}")));
        }
        if all.iter().all(|a| *a == 0.0) {
            return Err(Error::Config("at least one loss weight must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_align: f64,
    pub l_op: f64,
    pub l_ce: f64,
    pub total: f64,
}

/// `[B x M]` similarity matrix between the rows of `face` and `voice`.
pub fn similarity_matrix(
    g: &mut Graph,
    face: Var,
    voice: Var,
    mode: Similarity,
    ball: BallConfig,
) -> Result<Var> {
    match mode {
        Similarity::NegHyperbolicDistance => {
            let f = PoincarePoint { vector: face, config: ball };
            let v = PoincarePoint { vector: voice, config: ball };
            let d = hyperbolic::pairwise_distance(g, &f, &v)?;
            Ok(g.neg(d))
        }
        Similarity::Cosine => {
            let f = normalize_rows(g, face)?;
            let v = normalize_rows(g, voice)?;
            let vt = g.transpose(v)?;
            g.matmul(f, vt)
        }
    }
}

pub(crate) fn normalize_rows(g: &mut Graph, x: Var) -> Result<Var> {
    let d = match g.shape(x) {
        [_, d] => *d,
        s => return Err(Error::dim(format!("expected a matrix, got {s:?}"))),
    };
    let n = g.norm2(x, Some(1))?;
    let n = g.clamp_min(n, crate::autodiff::ZERO_GUARD);
    let n = g.broadcast_cols(n, d)?;
    g.div(x, n)
}

/// `0.5 * (CE(S, diag) + CE(S^T, diag))` over a square logit matrix.
pub fn symmetric_cross_entropy(g: &mut Graph, logits: Var) -> Result<Var> {
    let b = match g.shape(logits) {
        [r, c] if r == c => *r,
        s => return Err(Error::dim(format!("symmetric CE needs a square matrix, got {s:?}"))),
    };
    if b < 2 {
        return Err(Error::contract("alignment needs at least 2 pairs for in-batch negatives"));
    }
    let diag: Vec<usize> = (0..b).collect();
    let rows = g.log_softmax_nll(logits, &diag)?;
    let t = g.transpose(logits)?;
    let cols = g.log_softmax_nll(t, &diag)?;
    let s = g.add(rows, cols)?;
    Ok(g.scale(s, 0.5))
}

/// Symmetric in-batch alignment loss; row `i` of `face` and `voice` is a matched pair.
pub fn alignment_loss(
    g: &mut Graph,
    face: Var,
    voice: Var,
    logit_scale: Var,
    mode: Similarity,
    ball: BallConfig,
) -> Result<Var> {
    if g.shape(face) != g.shape(voice) {
        return Err(Error::dim(format!(
            "alignment_loss: face {:?} vs voice {:?}",
            g.shape(face),
            g.shape(voice)
        )));
    }
    if g.shape(face).first().copied().unwrap_or(0) < 2 {
        return Err(Error::contract("alignment needs at least 2 pairs for in-batch negatives"));
    }
    let sim = similarity_matrix(g, face, voice, mode, ball)?;
    let scale = g.exp(logit_scale);
    let logits = g.scalar_mul(scale, sim)?;
    symmetric_cross_entropy(g, logits)
}

/// `(1 - mean same-label cosine) + inter_weight * mean |cross-label cosine|`, self-pairs excluded.
///
/// A term whose pair set is empty in this batch is dropped.
pub fn orthogonal_projection_loss(
    g: &mut Graph,
    fused: Var,
    labels: &[usize],
    inter_weight: f64,
) -> Result<Var> {
    let b = match g.shape(fused) {
        [r, _] => *r,
        s => return Err(Error::dim(format!("expected a matrix, got {s:?}"))),
    };
    if labels.len() != b {
        return Err(Error::dim(format!("{} labels for {b} rows", labels.len())));
    }
    if b < 2 {
        return Err(Error::contract("orthogonal projection loss needs at least 2 rows"));
    }
    let mut same = vec![0.0; b * b];
    let mut diff = vec![0.0; b * b];
    let (mut n_same, mut n_diff) = (0usize, 0usize);
    for i in 0..b {
        for j in 0..b {
            if i == j {
                continue;
            }
            if labels[i] == labels[j] {
                same[i * b + j] = 1.0;
                n_same += 1;
            } else {
                diff[i * b + j] = 1.0;
                n_diff += 1;
            }
        }
    }
    let unit = normalize_rows(g, fused)?;
    let ut = g.transpose(unit)?;
    let gram = g.matmul(unit, ut)?;

    let mut terms = Vec::with_capacity(2);
    if n_same > 0 {
        let mask = g.constant(Tensor::matrix(b, b, same)?);
        let m = g.mul(gram, mask)?;
        let s = g.sum(m, None)?;
        let s_hat = g.scale(s, -1.0 / n_same as f64);
        terms.push(g.add_scalar(s_hat, 1.0));
    }
    if n_diff > 0 {
        let mask = g.constant(Tensor::matrix(b, b, diff)?);
        let a = g.abs(gram);
        let m = g.mul(a, mask)?;
        let s = g.sum(m, None)?;
        terms.push(g.scale(s, inter_weight / n_diff as f64));
    }
    let mut total = terms[0];
    for t in &terms[1..] {
        total = g.add(total, *t)?;
    }
    Ok(total)
}

pub fn cross_entropy_loss(g: &mut Graph, logits: Var, labels: &[usize]) -> Result<Var> {
    g.log_softmax_nll(logits, labels)
}

/// Weighted total on the tape.
pub fn weighted_total(g: &mut Graph, l_align: Var, l_op: Var, l_ce: Var, w: &LossWeights) -> Result<Var> {
    let a = g.scale(l_align, w.alpha1);
    let o = g.scale(l_op, w.alpha2);
    let c = g.scale(l_ce, w.alpha3);
    let s = g.add(a, o)?;
    g.add(s, c)
}

/// `alpha1 * l_align + alpha2 * l_op + alpha3 * l_ce`.
pub fn total_loss(l_align: f64, l_op: f64, l_ce: f64, w: &LossWeights) -> Result<LossBreakdown> {
    for (name, v) in [("l_align", l_align), ("l_op", l_op), ("l_ce", l_ce)] {
        if !v.is_finite() {
            return Err(Error::numeric(format!("{name} is not finite ({v})")));
        }
    }
    Ok(LossBreakdown {
        l_align,
        l_op,
        l_ce,
        total: w.alpha1 * l_align + w.alpha2 * l_op + w.alpha3 * l_ce,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, s: f64) -> Tensor {
        Tensor::matrix(r, c, (0..r * c).map(|_| rng.random_range(-s..s)).collect()).unwrap()
    }

    /// Naive softmax cross-entropy, summing terms in index order.
    fn ce_oracle(rows: &[Vec<f64>]) -> f64 {
        let b = rows.len();
        let mut total = 0.0;
        for (i, row) in rows.iter().enumerate() {
            let z: f64 = row.iter().map(|v| v.exp()).sum();
            total += -(row[i].exp() / z).ln();
        }
        total / b as f64
    }

    #[test]
    fn perfectly_aligned_logits_give_zero() {
        let mut g = Graph::new();
        let s = g.constant(Tensor::matrix(2, 2, vec![10.0, -10.0, -10.0, 10.0]).unwrap());
        let l = symmetric_cross_entropy(&mut g, s).unwrap();
        assert!(g.scalar_value(l) <= 1e-8);
    }

    #[test]
    fn uniform_similarity_gives_ln_b() {
        for b in [2usize, 3, 7] {
            let mut g = Graph::new();
            let s = g.constant(Tensor::filled(vec![b, b], -1.7));
            let l = symmetric_cross_entropy(&mut g, s).unwrap();
            assert!((g.scalar_value(l) - (b as f64).ln()).abs() < 1e-14);
        }
    }

    #[test]
    fn alignment_matches_naive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ball = BallConfig::default();
        for mode in [Similarity::NegHyperbolicDistance, Similarity::Cosine] {
            let f = rand_matrix(&mut rng, 4, 3, 0.5);
            let v = rand_matrix(&mut rng, 4, 3, 0.5);
            let scale = 1.3f64;
            let mut g = Graph::new();
            let fv = g.constant(f.clone());
            let vv = g.constant(v.clone());
            let ls = g.constant(Tensor::scalar(scale));
            let l = alignment_loss(&mut g, fv, vv, ls, mode, ball).unwrap();

            let sim = |a: &[f64], b: &[f64]| match mode {
                Similarity::NegHyperbolicDistance => -hyperbolic::plain::distance(a, b, &ball),
                Similarity::Cosine => {
                    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
                    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
                    dot / (na * nb)
                }
            };
            let rows: Vec<Vec<f64>> = (0..4)
                .map(|i| (0..4).map(|j| scale.exp() * sim(f.row(i), v.row(j))).collect())
                .collect();
            let cols: Vec<Vec<f64>> = (0..4)
                .map(|j| (0..4).map(|i| rows[i][j]).collect())
                .collect();
            let oracle = 0.5 * (ce_oracle(&rows) + ce_oracle(&cols));
            assert!((g.scalar_value(l) - oracle).abs() <= 1e-12, "{mode:?}");
        }
    }

    #[test]
    fn alignment_rejects_single_pair() {
        let mut g = Graph::new();
        let f = g.constant(Tensor::zeros(vec![1, 3]));
        let ls = g.constant(Tensor::scalar(0.0));
        let r = alignment_loss(&mut g, f, f, ls, Similarity::Cosine, BallConfig::default());
        assert!(matches!(r, Err(Error::Contract(_))));
    }

    /// O(B^2) pairwise enumeration.
    fn opl_oracle(rows: &[Vec<f64>], labels: &[usize]) -> f64 {
        let cos = |a: &[f64], b: &[f64]| {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            dot / (a.iter().map(|x| x * x).sum::<f64>().sqrt() * b.iter().map(|x| x * x).sum::<f64>().sqrt())
        };
        let (mut s, mut ns, mut d, mut nd) = (0.0, 0, 0.0, 0);
        for i in 0..rows.len() {
            for j in 0..rows.len() {
                if i == j {
                    continue;
                }
                if labels[i] == labels[j] {
                    s += cos(&rows[i], &rows[j]);
                    ns += 1;
                } else {
                    d += cos(&rows[i], &rows[j]).abs();
                    nd += 1;
                }
            }
        }
        let mut out = 0.0;
        if ns > 0 {
            out += 1.0 - s / ns as f64;
        }
        if nd > 0 {
            out += d / nd as f64;
        }
        out
    }

    #[test]
    fn opl_degenerate_cases() {
        let mut g = Graph::new();
        let same = g.constant(Tensor::matrix(2, 2, vec![0.6, 0.8, 0.6, 0.8]).unwrap());
        let l = orthogonal_projection_loss(&mut g, same, &[3, 3], 1.0).unwrap();
        assert!(g.scalar_value(l).abs() < 1e-15);
        let ortho = g.constant(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 2.0]).unwrap());
        let l = orthogonal_projection_loss(&mut g, ortho, &[0, 1], 1.0).unwrap();
        assert_eq!(g.scalar_value(l), 0.0);
    }

    #[test]
    fn opl_matches_pairwise_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let t = rand_matrix(&mut rng, 4, 5, 1.0);
        let labels = [0, 1, 0, 2];
        let mut g = Graph::new();
        let x = g.constant(t.clone());
        let l = orthogonal_projection_loss(&mut g, x, &labels, 1.0).unwrap();
        let rows: Vec<Vec<f64>> = (0..4).map(|i| t.row(i).to_vec()).collect();
        let oracle = opl_oracle(&rows, &labels);
        assert!((g.scalar_value(l) - oracle).abs() <= 1e-12);
        assert!((0.0..=3.0).contains(&g.scalar_value(l)));
    }

    #[test]
    fn opl_invariant_to_row_rescaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let t = rand_matrix(&mut rng, 5, 3, 1.0);
        let mut scaled = t.clone();
        for v in &mut scaled.data_mut()[6..9] {
            *v *= 7.5;
        }
        let labels = [0, 0, 1, 1, 2];
        let mut g = Graph::new();
        let a = g.constant(t);
        let b = g.constant(scaled);
        let la = orthogonal_projection_loss(&mut g, a, &labels, 1.0).unwrap();
        let lb = orthogonal_projection_loss(&mut g, b, &labels, 1.0).unwrap();
        assert!((g.scalar_value(la) - g.scalar_value(lb)).abs() < 1e-12);
    }

    #[test]
    fn total_loss_arithmetic() {
        let w = LossWeights::default();
        let b = total_loss(1.0, 1.0, 1.0, &w).unwrap();
        assert!((b.total - 1.0).abs() < 1e-12);
        let b = total_loss(2.0, 4.0, 6.0, &w).unwrap();
        assert!((b.total - 4.1).abs() < 1e-12);
        let only = LossWeights::new(1.0, 0.0, 0.0).unwrap();
        assert_eq!(total_loss(0.37, 9.0, 9.0, &only).unwrap().total, 0.37);
    }

    #[test]
    fn total_loss_names_bad_component() {
        let err = total_loss(1.0, f64::NAN, 1.0, &LossWeights::default()).unwrap_err();
        assert!(err.to_string().contains("l_op"));
    }

    #[test]
    fn weights_validation() {
        assert!(LossWeights::new(0.0, 0.0, 0.0).is_err());
        assert!(LossWeights::new(-0.1, 0.5, 0.5).is_err());
    }

    #[test]
    fn alignment_symmetry_and_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let ball = BallConfig::default();
        let f = rand_matrix(&mut rng, 4, 3, 0.4);
        let v = rand_matrix(&mut rng, 4, 3, 0.4);
        let perm = [2usize, 0, 3, 1];
        let permute = |t: &Tensor| {
            let data: Vec<f64> = perm.iter().flat_map(|&i| t.row(i).to_vec()).collect();
            Tensor::matrix(4, 3, data).unwrap()
        };
        let run = |a: &Tensor, b: &Tensor| {
            let mut g = Graph::new();
            let x = g.constant(a.clone());
            let y = g.constant(b.clone());
            let s = g.constant(Tensor::scalar(0.9));
            let l = alignment_loss(&mut g, x, y, s, Similarity::NegHyperbolicDistance, ball).unwrap();
            g.scalar_value(l)
        };
        let base = run(&f, &v);
        assert!((base - run(&v, &f)).abs() < 1e-12);
        assert!((base - run(&permute(&f), &permute(&v))).abs() < 1e-12);
        assert!(base >= 0.0);
    }

    #[test]
    fn loss_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let ball = BallConfig::default();
        for mode in [Similarity::NegHyperbolicDistance, Similarity::Cosine] {
            let inputs = [
                rand_matrix(&mut rng, 3, 4, 0.5),
                rand_matrix(&mut rng, 3, 4, 0.5),
                Tensor::scalar(0.4),
            ];
            let r = gradcheck::check(
                |g, v| alignment_loss(g, v[0], v[1], v[2], mode, ball),
                &inputs,
                gradcheck::DEFAULT_STEP,
            )
            .unwrap();
            assert!(r.passes(gradcheck::DEFAULT_TOLERANCE), "{mode:?}: {}", r.max_rel_error);
        }
        let x = [rand_matrix(&mut rng, 3, 4, 1.0)];
        let r = gradcheck::check(
            |g, v| orthogonal_projection_loss(g, v[0], &[1, 1, 0], 1.0),
            &x,
            gradcheck::DEFAULT_STEP,
        )
        .unwrap();
        assert!(r.passes(gradcheck::DEFAULT_TOLERANCE), "opl {}", r.max_rel_error);
        let logits = [rand_matrix(&mut rng, 3, 4, 2.0)];
        let r = gradcheck::check(|g, v| cross_entropy_loss(g, v[0], &[0, 3, 1]), &logits, gradcheck::DEFAULT_STEP).unwrap();
        assert!(r.passes(gradcheck::DEFAULT_TOLERANCE), "ce {}", r.max_rel_error);
    }

    #[test]
    fn backward_is_linear_in_losses() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let x = rand_matrix(&mut rng, 3, 4, 1.0);
        let grad_of = |which: u8| {
            let mut g = Graph::new();
            let mut t = x.clone();
            t.set_requires_grad(true);
            let v = g.leaf(t);
            let a = orthogonal_projection_loss(&mut g, v, &[0, 0, 1], 1.0).unwrap();
            let xt = g.transpose(v).unwrap();
            let b = cross_entropy_loss(&mut g, xt, &[0, 2, 1, 1]).unwrap();
            let root = match which {
                0 => a,
                1 => b,
                _ => g.add(a, b).unwrap(),
            };
            g.backward(root).unwrap();
            g.grad(v).unwrap().to_vec()
        };
        let (ga, gb, gs) = (grad_of(0), grad_of(1), grad_of(2));
        for i in 0..ga.len() {
            assert!((ga[i] + gb[i] - gs[i]).abs() < 1e-14);
        }
    }
}
