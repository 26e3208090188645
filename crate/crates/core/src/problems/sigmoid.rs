use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::GradOracle;
use crate::error::{Error, Result};

/// Max of `|d^2/dz^2 1/(1+e^z)|`, attained at `z = ln(2 +- sqrt 3)`.
const SIGMOID_CURVATURE: f64 = 0.096_225_044_864_937_63;

const BOX: f64 = 3.0;

/// Non-convex bounded "sigmoid regression" loss
/// `f_i(x) = 1 / (1 + exp(y_i <a_i, x>)) + (l2/2)|x|^2`.
#[derive(Debug, Clone)]
pub struct SigmoidLoss {
    dim: usize,
    features: Vec<f64>,
    labels: Vec<f64>,
    l2: f64,
    max_feature_norm_sq: f64,
}

#[inline]
fn logistic(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

impl SigmoidLoss {
    pub fn new(dim: usize, features: Vec<f64>, labels: Vec<f64>, l2: f64) -> Result<Self> {
        if dim == 0 || labels.is_empty() || features.len() != dim * labels.len() {
            return Err(Error::config("sigmoid oracle needs an n x dim feature matrix and n labels"));
        }
        if l2 < 0.0 {
            return Err(Error::config("l2 must be >= 0"));
        }
        let max_feature_norm_sq = features
            .chunks(dim)
            .map(|a| a.iter().map(|v| v * v).sum::<f64>())
            .fold(0.0, f64::max);
        Ok(Self {
            dim,
            features,
            labels,
            l2,
            max_feature_norm_sq,
        })
    }

    /// Standard-normal features, labels from a random linear teacher with a
    /// fraction `label_noise` of them flipped.
    pub fn synthetic(n: usize, dim: usize, label_noise: f64, l2: f64, seed: u64) -> Result<Self> {
        if n == 0 || dim == 0 || !(0.0..=0.5).contains(&label_noise) {
            return Err(Error::config("sigmoid oracle needs n, dim >= 1 and label_noise in [0, 0.5]"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let teacher: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let mut features = Vec::with_capacity(n * dim);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let a: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            let score: f64 = a.iter().zip(&teacher).map(|(x, w)| x * w).sum();
            let mut y = if score >= 0.0 { 1.0 } else { -1.0 };
            if rng.random::<f64>() < label_noise {
                y = -y;
            }
            features.extend(a);
            labels.push(y);
        }
        Self::new(dim, features, labels, l2)
    }

    fn margin(&self, i: usize, x: &[f64]) -> f64 {
        let a = &self.features[i * self.dim..(i + 1) * self.dim];
        self.labels[i] * a.iter().zip(x).map(|(p, q)| p * q).sum::<f64>()
    }
}

impl GradOracle for SigmoidLoss {
    fn n(&self) -> usize {
        self.labels.len()
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn loss_i(&self, i: usize, x: &[f64]) -> f64 {
        let reg = 0.5 * self.l2 * x.iter().map(|v| v * v).sum::<f64>();
        logistic(-self.margin(i, x)) + reg
    }

    fn add_grad_i(&self, i: usize, x: &[f64], out: &mut [f64]) {
        let s = logistic(-self.margin(i, x));
        let coeff = -s * (1.0 - s) * self.labels[i];
        let a = &self.features[i * self.dim..(i + 1) * self.dim];
        for ((o, ak), xk) in out.iter_mut().zip(a).zip(x) {
            *o += coeff * ak + self.l2 * xk;
        }
    }

    fn grad_bound(&self) -> Option<f64> {
        Some(0.25 * self.max_feature_norm_sq.sqrt() + self.l2 * BOX * (self.dim as f64).sqrt())
    }

    fn smoothness(&self) -> Option<f64> {
        Some(SIGMOID_CURVATURE * self.max_feature_norm_sq + self.l2)
    }

    fn feasible_box(&self) -> Option<(f64, f64)> {
        Some((-BOX, BOX))
    }
}
