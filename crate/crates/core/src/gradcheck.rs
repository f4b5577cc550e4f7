//! Central finite-difference gradient checking.
//!
//! Only forward evaluations are used for the numeric side, so a check is
//! independent of every backward rule it validates.

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};

pub const DEFAULT_STEP: f64 = 1e-6;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

/// Denominator floor for the relative error of near-zero gradients.
const REL_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// (input index, element index) of the worst element.
    pub worst: (usize, usize),
    pub analytic: Vec<Vec<f64>>,
    pub numeric: Vec<Vec<f64>>,
}

impl GradCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error <= tol
    }
}

fn eval<F>(f: &F, inputs: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    if g.value(out).len() != 1 {
        return Err(Error::contract("gradient check needs a scalar function"));
    }
    Ok(g.scalar_value(out))
}

/// Analytic gradients of a scalar function of `inputs`.
pub fn analytic<F>(f: &F, inputs: &[Tensor]) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| {
            let mut t = t.clone();
            t.set_requires_grad(true);
            g.leaf(t)
        })
        .collect();
    let out = f(&mut g, &vars)?;
    g.backward(out)?;
    Ok(vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| {
            g.grad(*v)
                .map(|s| s.to_vec())
                .unwrap_or_else(|| vec![0.0; t.numel()])
        })
        .collect())
}

/// Central differences `(f(x+h) - f(x-h)) / 2h` for every input element.
pub fn numeric<F>(f: &F, inputs: &[Tensor], step: f64) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let mut gi = Vec::with_capacity(inputs[i].numel());
        for j in 0..inputs[i].numel() {
            let x0 = work[i].data()[j];
            work[i].data_mut()[j] = x0 + step;
            let fp = eval(f, &work)?;
            work[i].data_mut()[j] = x0 - step;
            let fm = eval(f, &work)?;
            work[i].data_mut()[j] = x0;
            gi.push((fp - fm) / (2.0 * step));
        }
        out.push(gi);
    }
    Ok(out)
}

pub fn compare(analytic: Vec<Vec<f64>>, numeric: Vec<Vec<f64>>) -> GradCheck {
    let mut max_rel_error = 0.0;
    let mut worst = (0, 0);
    for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
        for (j, (x, y)) in a.iter().zip(n).enumerate() {
            let rel = (x - y).abs() / x.abs().max(y.abs()).max(REL_FLOOR);
            // NaN must fail, so compare with `!(rel <= ...)`
            if !(rel <= max_rel_error) {
                max_rel_error = rel;
                worst = (i, j);
            }
        }
    }
    GradCheck {
        max_rel_error,
        worst,
        analytic,
        numeric,
    }
}

/// Checks the backward pass of `f` against central differences.
pub fn check<F>(f: F, inputs: &[Tensor], step: f64) -> Result<GradCheck>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let a = analytic(&f, inputs)?;
    let n = numeric(&f, inputs, step)?;
    Ok(compare(a, n))
}
