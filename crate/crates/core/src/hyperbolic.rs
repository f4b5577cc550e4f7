//! Poincaré-ball geometry on the autodiff tape.
//!
//! Points live in the open ball of radius `1/sqrt(c)`. Every operation that
//! produces a point re-projects it so that `sqrt(c) * |x| <= 1 - boundary_eps`.
//! Rank-1 inputs are single points; rank-2 inputs are treated row by row for
//! the maps, and as point sets for [`pairwise_distance`].

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BallConfig {
    pub curvature: f64,
    pub boundary_eps: f64,
}

impl Default for BallConfig {
    fn default() -> Self {
        BallConfig {
            curvature: 1.0,
            boundary_eps: 1e-5,
        }
    }
}

impl BallConfig {
    pub fn new(curvature: f64, boundary_eps: f64) -> Result<Self> {
        let cfg = BallConfig {
            curvature,
            boundary_eps,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.curvature > 0.0 && self.curvature.is_finite()) {
            return Err(Error::contract(format!(
                "curvature must be positive, got {}",
                self.curvature
            )));
        }
        if !(self.boundary_eps > 0.0 && self.boundary_eps < 1.0) {
            return Err(Error::contract(format!(
                "boundary_eps must lie in (0, 1), got {}",
                self.boundary_eps
            )));
        }
        Ok(())
    }

    fn sqrt_c(&self) -> f64 {
        self.curvature.sqrt()
    }

    /// Largest Euclidean norm a point may have.
    pub fn max_norm(&self) -> f64 {
        (1.0 - self.boundary_eps) / self.sqrt_c()
    }
}

/// A point (or a batch of row points) known to satisfy the ball invariant.
#[derive(Debug, Clone, Copy)]
pub struct PoincarePoint {
    pub vector: Var,
    pub config: BallConfig,
}

fn ensure_finite(g: &Graph, v: Var, what: &str) -> Result<()> {
    if g.value(v).iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::numeric(format!("{what}: input contains non-finite values")))
    }
}

fn same_config(x: &PoincarePoint, y: &PoincarePoint) -> Result<BallConfig> {
    if x.config != y.config {
        return Err(Error::contract(format!(
            "ball configs differ: {:?} vs {:?}",
            x.config, y.config
        )));
    }
    Ok(x.config)
}

/// Norm of each row (rank 2) or of the vector (rank 1).
fn row_norms(g: &mut Graph, v: Var) -> Result<Var> {
    let axis = g.shape(v).len() - 1;
    g.norm2(v, Some(axis))
}

/// Multiplies each row of `v` by the matching entry of `factors`.
fn scale_rows(g: &mut Graph, v: Var, factors: Var) -> Result<Var> {
    match g.shape(v).to_vec().as_slice() {
        [_] => g.scalar_mul(factors, v),
        [_, d] => {
            let f = g.broadcast_cols(factors, *d)?;
            g.mul(f, v)
        }
        s => Err(Error::dim(format!("expected rank 1 or 2, got {s:?}"))),
    }
}

pub fn project_to_ball(g: &mut Graph, v: Var, cfg: BallConfig) -> Result<PoincarePoint> {
    ensure_finite(g, v, "project_to_ball")?;
    let vector = g.row_clip(v, cfg.max_norm())?;
    Ok(PoincarePoint {
        vector,
        config: cfg,
    })
}

/// `exp_0(v) = tanh(sqrt(c)|v|) v / (sqrt(c)|v|)`, followed by the boundary projection.
pub fn exp_map_origin(g: &mut Graph, v: Var, cfg: BallConfig) -> Result<PoincarePoint> {
    ensure_finite(g, v, "exp_map_origin")?;
    let n = row_norms(g, v)?;
    let u = g.scale(n, cfg.sqrt_c());
    let f = g.unary(u, crate::autodiff::Unary::TanhRatio);
    let mapped = scale_rows(g, v, f)?;
    project_to_ball(g, mapped, cfg)
}

/// `log_0(p) = artanh(sqrt(c)|p|) p / (sqrt(c)|p|)`.
pub fn log_map_origin(g: &mut Graph, p: &PoincarePoint) -> Result<Var> {
    let cfg = p.config;
    let n = row_norms(g, p.vector)?;
    if g.value(n).iter().any(|x| !(cfg.sqrt_c() * x < 1.0)) {
        return Err(Error::numeric("log_map_origin: point on or outside the ball boundary"));
    }
    let u = g.scale(n, cfg.sqrt_c());
    let f = g.unary(u, crate::autodiff::Unary::ArtanhRatio);
    scale_rows(g, p.vector, f)
}

/// Möbius addition of two single points.
pub fn mobius_add(g: &mut Graph, x: &PoincarePoint, y: &PoincarePoint) -> Result<PoincarePoint> {
    let cfg = same_config(x, y)?;
    let c = cfg.curvature;
    let (xv, yv) = (x.vector, y.vector);
    if g.shape(xv).len() != 1 || g.shape(xv) != g.shape(yv) {
        return Err(Error::dim(format!(
            "mobius_add expects two vectors of equal length, got {:?} and {:?}",
            g.shape(xv),
            g.shape(yv)
        )));
    }
    let xy = g.mul(xv, yv)?;
    let xy = g.sum(xy, None)?;
    let xx = g.mul(xv, xv)?;
    let xx = g.sum(xx, None)?;
    let yy = g.mul(yv, yv)?;
    let yy = g.sum(yy, None)?;

    // a = 1 + 2c<x,y> + c|y|^2
    let two_c_xy = g.scale(xy, 2.0 * c);
    let c_yy = g.scale(yy, c);
    let a = g.add(two_c_xy, c_yy)?;
    let a = g.add_scalar(a, 1.0);
    // b = 1 - c|x|^2
    let b = g.scale(xx, -c);
    let b = g.add_scalar(b, 1.0);
    // den = 1 + 2c<x,y> + c^2 |x|^2 |y|^2
    let xxyy = g.mul(xx, yy)?;
    let xxyy = g.scale(xxyy, c * c);
    let den = g.add(two_c_xy, xxyy)?;
    let den = g.add_scalar(den, 1.0);

    let ax = g.scalar_mul(a, xv)?;
    let by = g.scalar_mul(b, yv)?;
    let num = g.add(ax, by)?;
    let one = g.constant(crate::autodiff::Tensor::scalar(1.0));
    let inv = g.div(one, den)?;
    let out = g.scalar_mul(inv, num)?;
    project_to_ball(g, out, cfg)
}

/// `d(x, y) = (2/sqrt(c)) artanh(sqrt(c) |(-x) (+) y|)` for two single points.
pub fn poincare_distance(g: &mut Graph, x: &PoincarePoint, y: &PoincarePoint) -> Result<Var> {
    let cfg = same_config(x, y)?;
    let neg = g.neg(x.vector);
    let neg_x = PoincarePoint {
        vector: neg,
        config: cfg,
    };
    let m = mobius_add(g, &neg_x, y)?;
    let n = g.norm2(m.vector, None)?;
    let u = g.scale(n, cfg.sqrt_c());
    let at = g.artanh(u);
    Ok(g.scale(at, 2.0 / cfg.sqrt_c()))
}

/// All-pairs distances between the rows of `x` `[B x D]` and `y` `[M x D]`.
///
/// Uses the closed form of the Möbius norm, with `p = <x,y>`, `a = |x|^2`, `b = |y|^2`:
/// `|(-x)(+)y|^2 = (A^2 a - 2 A B' p + B'^2 b) / den^2` where
/// `A = 1 - 2cp + cb`, `B' = 1 - ca`, `den = 1 - 2cp + c^2 ab`.
pub fn pairwise_distance(g: &mut Graph, x: &PoincarePoint, y: &PoincarePoint) -> Result<Var> {
    let cfg = same_config(x, y)?;
    let c = cfg.curvature;
    let (b_rows, d) = match g.shape(x.vector) {
        [r, d] => (*r, *d),
        s => return Err(Error::dim(format!("pairwise_distance expects matrices, got {s:?}"))),
    };
    let m_rows = match g.shape(y.vector) {
        [r, dy] if *dy == d => *r,
        s => {
            return Err(Error::dim(format!(
                "pairwise_distance: [{b_rows}x{d}] against {s:?}"
            )))
        }
    };
    let yt = g.transpose(y.vector)?;
    let p = g.matmul(x.vector, yt)?;
    let xx = g.mul(x.vector, x.vector)?;
    let xx = g.sum(xx, Some(1))?;
    let a = g.broadcast_cols(xx, m_rows)?;
    let yy = g.mul(y.vector, y.vector)?;
    let yy = g.sum(yy, Some(1))?;
    let b = g.broadcast_rows(yy, b_rows)?;

    let m2cp = g.scale(p, -2.0 * c);
    let cb = g.scale(b, c);
    let big_a = g.add(m2cp, cb)?;
    let big_a = g.add_scalar(big_a, 1.0);
    let big_b = g.scale(a, -c);
    let big_b = g.add_scalar(big_b, 1.0);
    let ab = g.mul(a, b)?;
    let ab = g.scale(ab, c * c);
    let den = g.add(m2cp, ab)?;
    let den = g.add_scalar(den, 1.0);

    let aa = g.mul(big_a, big_a)?;
    let t1 = g.mul(aa, a)?;
    let abp = g.mul(big_a, big_b)?;
    let abp = g.mul(abp, p)?;
    let t2 = g.scale(abp, -2.0);
    let bb = g.mul(big_b, big_b)?;
    let t3 = g.mul(bb, b)?;
    let num2 = g.add(t1, t2)?;
    let num2 = g.add(num2, t3)?;
    let num = g.sqrt(num2);
    let r = g.div(num, den)?;
    let u = g.scale(r, cfg.sqrt_c());
    let u = g.clamp_max(u, 1.0 - cfg.boundary_eps);
    let at = g.artanh(u);
    Ok(g.scale(at, 2.0 / cfg.sqrt_c()))
}

/// Tape-free versions used when scoring frozen embeddings.
pub mod plain {
    use super::BallConfig;

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    fn clip(mut v: Vec<f64>, cfg: &BallConfig) -> Vec<f64> {
        let n = dot(&v, &v).sqrt();
        if n > cfg.max_norm() {
            crate::autodiff::clip_row_to(&mut v, n, cfg.max_norm());
        }
        v
    }

    pub fn exp_map_origin(v: &[f64], cfg: &BallConfig) -> Vec<f64> {
        let u = cfg.curvature.sqrt() * dot(v, v).sqrt();
        let f = if u < 1e-6 { 1.0 - u * u / 3.0 } else { u.tanh() / u };
        clip(v.iter().map(|x| f * x).collect(), cfg)
    }

    pub fn mobius_add(x: &[f64], y: &[f64], cfg: &BallConfig) -> Vec<f64> {
        let c = cfg.curvature;
        let (xy, xx, yy) = (dot(x, y), dot(x, x), dot(y, y));
        let a = 1.0 + 2.0 * c * xy + c * yy;
        let b = 1.0 - c * xx;
        let den = 1.0 + 2.0 * c * xy + c * c * xx * yy;
        clip(
            x.iter().zip(y).map(|(p, q)| (a * p + b * q) / den).collect(),
            cfg,
        )
    }

    pub fn distance(x: &[f64], y: &[f64], cfg: &BallConfig) -> f64 {
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        let m = mobius_add(&neg, y, cfg);
        let sc = cfg.curvature.sqrt();
        2.0 / sc * (sc * dot(&m, &m).sqrt()).atanh()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use crate::gradcheck;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> BallConfig {
        BallConfig::default()
    }

    fn point(g: &mut Graph, v: Vec<f64>) -> PoincarePoint {
        let t = g.constant(Tensor::vector(v));
        project_to_ball(g, t, cfg()).unwrap()
    }

    fn norm(v: &[f64]) -> f64 {
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    #[test]
    fn config_validation() {
        assert!(BallConfig::new(0.0, 1e-5).is_err());
        assert!(BallConfig::new(1.0, 1.0).is_err());
        assert!(BallConfig::new(2.0, 1e-3).is_ok());
    }

    #[test]
    fn projection_cases() {
        let mut g = Graph::new();
        let z = point(&mut g, vec![0.0, 0.0]);
        assert_eq!(g.value(z.vector), &[0.0, 0.0]);

        let inside = point(&mut g, vec![0.3, 0.4]);
        assert_eq!(g.value(inside.vector), &[0.3, 0.4]);

        let outside = point(&mut g, vec![1.2, 1.6]);
        assert!((norm(g.value(outside.vector)) - (1.0 - 1e-5)).abs() < 1e-15);
    }

    #[test]
    fn projection_rejects_nan() {
        let mut g = Graph::new();
        let t = g.constant(Tensor::vector(vec![f64::NAN, 0.0]));
        assert!(matches!(project_to_ball(&mut g, t, cfg()), Err(Error::Numeric(_))));
    }

    #[test]
    fn exp_map_values() {
        let mut g = Graph::new();
        let zero = g.constant(Tensor::vector(vec![0.0, 0.0, 0.0]));
        let p = exp_map_origin(&mut g, zero, cfg()).unwrap();
        assert_eq!(g.value(p.vector), &[0.0, 0.0, 0.0]);

        let v = g.constant(Tensor::vector(vec![0.5, 0.0]));
        let p = exp_map_origin(&mut g, v, cfg()).unwrap();
        assert!((g.value(p.vector)[0] - 0.5f64.tanh()).abs() < 1e-15);
        assert!((g.value(p.vector)[0] - 0.4621171573).abs() < 1e-10);
        assert_eq!(g.value(p.vector)[1], 0.0);
    }

    #[test]
    fn distance_from_origin_closed_form() {
        let mut g = Graph::new();
        let x = point(&mut g, vec![0.0, 0.0]);
        let y = point(&mut g, vec![0.5, 0.0]);
        let d = poincare_distance(&mut g, &x, &y).unwrap();
        let oracle = 2.0 * 0.5f64.atanh();
        assert!((g.scalar_value(d) - oracle).abs() < 1e-14);
        assert!((g.scalar_value(d) - 1.0986122887).abs() < 1e-10);
        let self_d = poincare_distance(&mut g, &y, &y).unwrap();
        assert_eq!(g.scalar_value(self_d), 0.0);
    }

    #[test]
    fn small_distance_limit() {
        let mut g = Graph::new();
        let x = point(&mut g, vec![4e-4, -3e-4, 1e-4]);
        let y = point(&mut g, vec![-2e-4, 5e-4, 7e-4]);
        let d = poincare_distance(&mut g, &x, &y).unwrap();
        let e = 2.0 * norm(&[6e-4, -8e-4, -6e-4]);
        assert!(((g.scalar_value(d) - e) / e).abs() < 1e-3);
    }

    #[test]
    fn mobius_identity_and_inverse() {
        let mut g = Graph::new();
        let x = point(&mut g, vec![0.2, -0.5, 0.1]);
        let z = point(&mut g, vec![0.0, 0.0, 0.0]);
        let s = mobius_add(&mut g, &x, &z).unwrap();
        assert_eq!(g.value(s.vector), g.value(x.vector));
        let nx = point(&mut g, vec![-0.2, 0.5, -0.1]);
        let s = mobius_add(&mut g, &nx, &x).unwrap();
        assert!(norm(g.value(s.vector)) < 1e-12);
    }

    #[test]
    fn config_mismatch_is_contract_error() {
        let mut g = Graph::new();
        let x = point(&mut g, vec![0.1, 0.1]);
        let t = g.constant(Tensor::vector(vec![0.1, 0.2]));
        let y = project_to_ball(&mut g, t, BallConfig::new(2.0, 1e-5).unwrap()).unwrap();
        assert!(matches!(mobius_add(&mut g, &x, &y), Err(Error::Contract(_))));
        assert!(matches!(poincare_distance(&mut g, &x, &y), Err(Error::Contract(_))));
    }

    #[test]
    fn log_map_rejects_boundary_points() {
        let mut g = Graph::new();
        let v = g.constant(Tensor::vector(vec![1.0, 0.0]));
        let p = PoincarePoint {
            vector: v,
            config: cfg(),
        };
        assert!(matches!(log_map_origin(&mut g, &p), Err(Error::Numeric(_))));
    }

    #[test]
    fn pairwise_matches_single_pair_route() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &c in &[1.0, 0.5, 2.0] {
            let bc = BallConfig::new(c, 1e-5).unwrap();
            let (b, m, d) = (4, 5, 6);
            let xs: Vec<f64> = (0..b * d).map(|_| rng.random_range(-0.6..0.6)).collect();
            let ys: Vec<f64> = (0..m * d).map(|_| rng.random_range(-0.6..0.6)).collect();
            let mut g = Graph::new();
            let xv = g.constant(Tensor::matrix(b, d, xs.clone()).unwrap());
            let yv = g.constant(Tensor::matrix(m, d, ys.clone()).unwrap());
            let xp = exp_map_origin(&mut g, xv, bc).unwrap();
            let yp = exp_map_origin(&mut g, yv, bc).unwrap();
            let pw = pairwise_distance(&mut g, &xp, &yp).unwrap();
            let xrows = g.tensor(xp.vector);
            let yrows = g.tensor(yp.vector);
            let pwv = g.value(pw).to_vec();
            for i in 0..b {
                for j in 0..m {
                    let xi = g.constant(Tensor::vector(xrows.row(i).to_vec()));
                    let yj = g.constant(Tensor::vector(yrows.row(j).to_vec()));
                    let xi = PoincarePoint { vector: xi, config: bc };
                    let yj = PoincarePoint { vector: yj, config: bc };
                    let dij = poincare_distance(&mut g, &xi, &yj).unwrap();
                    let single = g.scalar_value(dij);
                    assert!((pwv[i * m + j] - single).abs() < 1e-10 * (1.0 + single));
                    let plain = plain::distance(xrows.row(i), yrows.row(j), &bc);
                    assert!((plain - single).abs() < 1e-12 * (1.0 + single));
                }
            }
        }
    }

    #[test]
    fn gradients_of_maps_and_distance() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut rand_vec = |n: usize, s: f64| -> Vec<f64> { (0..n).map(|_| rng.random_range(-s..s)).collect() };
        let bc = cfg();

        let v = Tensor::vector(rand_vec(5, 0.8));
        let exp = gradcheck::check(
            |g, vs| {
                let p = exp_map_origin(g, vs[0], bc)?;
                let w = g.constant(Tensor::vector(vec![0.3, -1.0, 0.5, 2.0, -0.7]));
                let s = g.mul(p.vector, w)?;
                g.sum(s, None)
            },
            &[v],
            gradcheck::DEFAULT_STEP,
        )
        .unwrap();
        assert!(exp.passes(gradcheck::DEFAULT_TOLERANCE), "exp {}", exp.max_rel_error);

        let p = Tensor::vector(rand_vec(4, 0.4));
        let log = gradcheck::check(
            |g, vs| {
                let pt = PoincarePoint { vector: vs[0], config: bc };
                let l = log_map_origin(g, &pt)?;
                let sq = g.mul(l, l)?;
                g.sum(sq, None)
            },
            &[p],
            gradcheck::DEFAULT_STEP,
        )
        .unwrap();
        assert!(log.passes(gradcheck::DEFAULT_TOLERANCE), "log {}", log.max_rel_error);

        let x = Tensor::vector(rand_vec(4, 0.4));
        let y = Tensor::vector(rand_vec(4, 0.4));
        let dist = gradcheck::check(
            |g, vs| {
                let a = PoincarePoint { vector: vs[0], config: bc };
                let b = PoincarePoint { vector: vs[1], config: bc };
                poincare_distance(g, &a, &b)
            },
            &[x, y],
            gradcheck::DEFAULT_STEP,
        )
        .unwrap();
        assert!(dist.passes(gradcheck::DEFAULT_TOLERANCE), "dist {}", dist.max_rel_error);

        let xs = Tensor::matrix(3, 4, rand_vec(12, 1.0)).unwrap();
        let ys = Tensor::matrix(2, 4, rand_vec(8, 1.0)).unwrap();
        let pw = gradcheck::check(
            |g, vs| {
                let a = exp_map_origin(g, vs[0], bc)?;
                let b = exp_map_origin(g, vs[1], bc)?;
                let d = pairwise_distance(g, &a, &b)?;
                let d2 = g.mul(d, d)?;
                g.sum(d2, None)
            },
            &[xs, ys],
            gradcheck::DEFAULT_STEP,
        )
        .unwrap();
        assert!(pw.passes(gradcheck::DEFAULT_TOLERANCE), "pairwise {}", pw.max_rel_error);
    }

    fn arb_vec(d: usize, scale: f64) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-scale..scale, d)
    }

    proptest! {
        #[test]
        fn exp_log_inverse(v in arb_vec(6, 3.0 / 6f64.sqrt())) {
            let mut g = Graph::new();
            let t = g.constant(Tensor::vector(v.clone()));
            let p = exp_map_origin(&mut g, t, cfg()).unwrap();
            prop_assert!(norm(g.value(p.vector)) <= cfg().max_norm());
            let back = log_map_origin(&mut g, &p).unwrap();
            for (a, b) in g.value(back).iter().zip(&v) {
                prop_assert!((a - b).abs() <= 1e-9, "{} vs {}", a, b);
            }
        }

        #[test]
        fn distance_symmetric_and_closed(
            x in arb_vec(5, 1.0),
            y in arb_vec(5, 1.0),
        ) {
            let mut g = Graph::new();
            let xt = g.constant(Tensor::vector(x));
            let yt = g.constant(Tensor::vector(y));
            let xp = exp_map_origin(&mut g, xt, cfg()).unwrap();
            let yp = exp_map_origin(&mut g, yt, cfg()).unwrap();
            let dxy = poincare_distance(&mut g, &xp, &yp).unwrap();
            let dyx = poincare_distance(&mut g, &yp, &xp).unwrap();
            prop_assert!(g.scalar_value(dxy) >= 0.0);
            prop_assert!((g.scalar_value(dxy) - g.scalar_value(dyx)).abs() <= 1e-12);
            let s = mobius_add(&mut g, &xp, &yp).unwrap();
            prop_assert!(norm(g.value(s.vector)) < 1.0);
        }
    }
}
