//! Finite-sum objectives `f(x) = (1/n) sum_i f_i(x)` with per-sample gradients.

mod factorization;
mod quadratic;
mod sigmoid;

use serde::{Deserialize, Serialize};

pub use factorization::Factorization;
pub use quadratic::Quadratic;
pub use sigmoid::SigmoidLoss;

use crate::error::{check_dim, Error, Result};
use crate::params::ParamVector;

/// A stochastic-gradient problem definition.
///
/// Implementations are immutable after construction and safe to query from
/// many threads at once. Sample indices are 0-based.
pub trait GradOracle: Send + Sync {
    fn n(&self) -> usize;

    fn dim(&self) -> usize;

    fn loss_i(&self, i: usize, x: &[f64]) -> f64;

    /// `out += grad f_i(x)`.
    fn add_grad_i(&self, i: usize, x: &[f64], out: &mut [f64]);

    /// Writes the mean gradient over `idx` into `out`. Implementations that
    /// share work across a batch override this.
    fn batch_grad(&self, idx: &[usize], x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for &i in idx {
            self.add_grad_i(i, x, out);
        }
        let scale = idx.len() as f64;
        if scale != 1.0 {
            out.iter_mut().for_each(|o| *o /= scale);
        }
    }

    /// Bound on `|grad f_i(x)|` over the feasible box, when known.
    fn grad_bound(&self) -> Option<f64> {
        None
    }

    /// Lipschitz constant of `grad f` over the feasible box, when known.
    fn smoothness(&self) -> Option<f64> {
        None
    }

    /// Per-coordinate box `[lo, hi]` on which the declared bounds hold.
    fn feasible_box(&self) -> Option<(f64, f64)> {
        None
    }
}

fn check_indices(oracle: &dyn GradOracle, idx: &[usize]) -> Result<()> {
    if idx.is_empty() {
        return Err(Error::Empty("sample index set"));
    }
    let n = oracle.n();
    match idx.iter().find(|&&i| i >= n) {
        Some(&index) => Err(Error::IndexOutOfRange { index, n }),
        None => Ok(()),
    }
}

/// Mean of `grad f_i(x)` over the index set (a single index is the plain
/// per-sample gradient).
pub fn grad_at(oracle: &dyn GradOracle, idx: &[usize], x: &ParamVector) -> Result<Vec<f64>> {
    check_dim(oracle.dim(), x.dim())?;
    check_indices(oracle, idx)?;
    let mut out = vec![0.0; oracle.dim()];
    oracle.batch_grad(idx, x.as_slice(), &mut out);
    Ok(out)
}

/// Exact `(1/n) sum_i grad f_i(x)`, summed in index order.
pub fn full_grad(oracle: &dyn GradOracle, x: &ParamVector) -> Result<Vec<f64>> {
    check_dim(oracle.dim(), x.dim())?;
    let mut out = vec![0.0; oracle.dim()];
    for i in 0..oracle.n() {
        oracle.add_grad_i(i, x.as_slice(), &mut out);
    }
    let n = oracle.n() as f64;
    out.iter_mut().for_each(|o| *o /= n);
    Ok(out)
}

pub fn loss_at(oracle: &dyn GradOracle, x: &ParamVector) -> Result<f64> {
    check_dim(oracle.dim(), x.dim())?;
    let total: f64 = (0..oracle.n()).map(|i| oracle.loss_i(i, x.as_slice())).sum();
    Ok(total / oracle.n() as f64)
}

pub fn norm_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// Built-in problem selection, as it appears in run-config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OracleSpec {
    Quadratic {
        n: usize,
        dim: usize,
        #[serde(default = "default_spread")]
        spread: f64,
        #[serde(default = "default_data_seed")]
        data_seed: u64,
    },
    Sigmoid {
        n: usize,
        dim: usize,
        #[serde(default)]
        label_noise: f64,
        #[serde(default)]
        l2: f64,
        #[serde(default = "default_data_seed")]
        data_seed: u64,
    },
    Factorization {
        rows: usize,
        cols: usize,
        rank: usize,
        #[serde(default = "default_density")]
        density: f64,
        #[serde(default = "default_data_seed")]
        data_seed: u64,
    },
}

fn default_spread() -> f64 {
    1.0
}

fn default_density() -> f64 {
    0.5
}

fn default_data_seed() -> u64 {
    1
}

impl OracleSpec {
    pub fn build(&self) -> Result<Box<dyn GradOracle>> {
        Ok(match *self {
            OracleSpec::Quadratic {
                n,
                dim,
                spread,
                data_seed,
            } => Box::new(Quadratic::synthetic(n, dim, spread, data_seed)?),
            OracleSpec::Sigmoid {
                n,
                dim,
                label_noise,
                l2,
                data_seed,
            } => Box::new(SigmoidLoss::synthetic(n, dim, label_noise, l2, data_seed)?),
            OracleSpec::Factorization {
                rows,
                cols,
                rank,
                density,
                data_seed,
            } => Box::new(Factorization::synthetic(rows, cols, rank, density, data_seed)?),
        })
    }

    pub fn dim(&self) -> usize {
        match *self {
            OracleSpec::Quadratic { dim, .. } | OracleSpec::Sigmoid { dim, .. } => dim,
            OracleSpec::Factorization {
                rows, cols, rank, ..
            } => (rows + cols) * rank,
        }
    }
}
