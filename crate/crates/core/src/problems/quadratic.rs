use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::GradOracle;
use crate::error::{Error, Result};

/// `f_i(x) = 0.5 * |x - c_i|^2`. Convex, `L = 1`, minimizer at the mean center.
#[derive(Debug, Clone)]
pub struct Quadratic {
    dim: usize,
    centers: Vec<f64>,
    spread: f64,
}

impl Quadratic {
    /// Centers given row-major, `n` rows of length `dim`.
    pub fn new(dim: usize, centers: Vec<f64>) -> Result<Self> {
        if dim == 0 || centers.is_empty() || centers.len() % dim != 0 {
            return Err(Error::config("quadratic centers must be n x dim with n, dim >= 1"));
        }
        let spread = centers.iter().fold(0.0f64, |m, c| m.max(c.abs())).max(1.0);
        Ok(Self {
            dim,
            centers,
            spread,
        })
    }

    /// Centers uniform in `[-spread, spread]^dim`.
    pub fn synthetic(n: usize, dim: usize, spread: f64, seed: u64) -> Result<Self> {
        if n == 0 || dim == 0 || !(spread > 0.0) {
            return Err(Error::config("quadratic oracle needs n, dim >= 1 and spread > 0"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centers = (0..n * dim)
            .map(|_| rng.random_range(-spread..spread))
            .collect();
        Ok(Self {
            dim,
            centers,
            spread,
        })
    }

    pub fn center(&self, i: usize) -> &[f64] {
        &self.centers[i * self.dim..(i + 1) * self.dim]
    }

    pub fn minimizer(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for i in 0..self.n() {
            m.iter_mut().zip(self.center(i)).for_each(|(a, c)| *a += c);
        }
        m.iter_mut().for_each(|a| *a /= self.n() as f64);
        m
    }
}

impl GradOracle for Quadratic {
    fn n(&self) -> usize {
        self.centers.len() / self.dim
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn loss_i(&self, i: usize, x: &[f64]) -> f64 {
        0.5 * x
            .iter()
            .zip(self.center(i))
            .map(|(a, c)| (a - c) * (a - c))
            .sum::<f64>()
    }

    fn add_grad_i(&self, i: usize, x: &[f64], out: &mut [f64]) {
        for ((o, a), c) in out.iter_mut().zip(x).zip(self.center(i)) {
            *o += a - c;
        }
    }

    fn grad_bound(&self) -> Option<f64> {
        // |x_k - c_k| <= 3 * spread on the box below.
        Some(3.0 * self.spread * (self.dim as f64).sqrt())
    }

    fn smoothness(&self) -> Option<f64> {
        Some(1.0)
    }

    fn feasible_box(&self) -> Option<(f64, f64)> {
        Some((-2.0 * self.spread, 2.0 * self.spread))
    }
}
