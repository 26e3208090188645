use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::GradOracle;
use crate::error::{Error, Result};

/// Low-rank matrix completion: one sample per observed entry,
/// `f_i(x) = 0.5 * (<U_r, V_c> - m_rc)^2` with `x = [U (rows x rank); V (cols x rank)]`.
#[derive(Debug, Clone)]
pub struct Factorization {
    rows: usize,
    cols: usize,
    rank: usize,
    entries: Vec<(usize, usize, f64)>,
    max_abs_entry: f64,
}

impl Factorization {
    pub fn new(rows: usize, cols: usize, rank: usize, entries: Vec<(usize, usize, f64)>) -> Result<Self> {
        if rows == 0 || cols == 0 || rank == 0 || entries.is_empty() {
            return Err(Error::config("factorization needs rows, cols, rank >= 1 and observations"));
        }
        if entries.iter().any(|&(r, c, _)| r >= rows || c >= cols) {
            return Err(Error::config("observed entry outside the matrix"));
        }
        let max_abs_entry = entries.iter().fold(0.0f64, |m, e| m.max(e.2.abs()));
        Ok(Self {
            rows,
            cols,
            rank,
            entries,
            max_abs_entry,
        })
    }

    /// Observes each entry of a random rank-`rank` matrix with probability
    /// `density` (at least one entry is always observed).
    pub fn synthetic(rows: usize, cols: usize, rank: usize, density: f64, seed: u64) -> Result<Self> {
        if !(density > 0.0 && density <= 1.0) {
            return Err(Error::config("density must be in (0, 1]"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u: Vec<f64> = (0..rows * rank).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..cols * rank).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut entries = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                if rng.random::<f64>() < density || (r == 0 && c == 0) {
                    let m = (0..rank).map(|k| u[r * rank + k] * v[c * rank + k]).sum();
                    entries.push((r, c, m));
                }
            }
        }
        Self::new(rows, cols, rank, entries)
    }

    fn blocks(&self, i: usize) -> (usize, usize, f64) {
        let (r, c, m) = self.entries[i];
        (r * self.rank, (self.rows + c) * self.rank, m)
    }

    fn residual(&self, i: usize, x: &[f64]) -> f64 {
        let (u, v, m) = self.blocks(i);
        let pred: f64 = (0..self.rank).map(|k| x[u + k] * x[v + k]).sum();
        pred - m
    }
}

impl GradOracle for Factorization {
    fn n(&self) -> usize {
        self.entries.len()
    }

    fn dim(&self) -> usize {
        (self.rows + self.cols) * self.rank
    }

    fn loss_i(&self, i: usize, x: &[f64]) -> f64 {
        let e = self.residual(i, x);
        0.5 * e * e
    }

    fn add_grad_i(&self, i: usize, x: &[f64], out: &mut [f64]) {
        let e = self.residual(i, x);
        let (u, v, _) = self.blocks(i);
        for k in 0..self.rank {
            out[u + k] += e * x[v + k];
            out[v + k] += e * x[u + k];
        }
    }

    fn grad_bound(&self) -> Option<f64> {
        let k = self.rank as f64;
        Some((k + self.max_abs_entry) * (2.0 * k).sqrt())
    }

    fn smoothness(&self) -> Option<f64> {
        // Per-sample Hessian: rank-one block of norm |u|^2 + |v|^2 <= 2k plus
        // a residual block of norm |e| <= k + max|m| on the unit box.
        Some(3.0 * self.rank as f64 + self.max_abs_entry)
    }

    fn feasible_box(&self) -> Option<(f64, f64)> {
        Some((-1.0, 1.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamVector;
    use crate::problems::{grad_at, loss_at};

    #[test]
    fn exact_factors_have_zero_loss_and_gradient() {
        // M = [[2]] = 1 * 2
        let f = Factorization::new(1, 1, 1, vec![(0, 0, 2.0)]).unwrap();
        let x = ParamVector::new(vec![1.0, 2.0]).unwrap();
        assert_eq!(loss_at(&f, &x).unwrap(), 0.0);
        assert_eq!(grad_at(&f, &[0], &x).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn gradient_touches_only_its_row_and_column() {
        let f = Factorization::new(2, 2, 1, vec![(1, 0, 1.0)]).unwrap();
        let x = ParamVector::new(vec![0.5, 0.5, 0.5, 0.5]).unwrap();
        let g = grad_at(&f, &[0], &x).unwrap();
        // residual = 0.25 - 1 = -0.75
        assert_eq!(g, vec![0.0, -0.375, -0.375, 0.0]);
    }

    #[test]
    fn out_of_range_entry_rejected() {
        assert!(Factorization::new(2, 2, 1, vec![(2, 0, 1.0)]).is_err());
    }
}
