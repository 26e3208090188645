//! Dense parameter vectors and the worker-to-master update algebra.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, check_finite, Error, Result};

/// A dense vector of 64-bit parameters.
///
/// Every public constructor rejects non-finite entries, and no method
/// changes the dimension after construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ParamVector {
    values: Vec<f64>,
}

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::config("parameter vector must have dim >= 1"));
        }
        check_finite(&values)?;
        Ok(Self { values })
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim > 0, "parameter vector must have dim >= 1");
        Self {
            values: vec![0.0; dim],
        }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.values
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Largest per-dimension absolute difference.
    pub fn max_abs_diff(&self, other: &ParamVector) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl TryFrom<Vec<f64>> for ParamVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        ParamVector::new(values)
    }
}

impl From<ParamVector> for Vec<f64> {
    fn from(v: ParamVector) -> Self {
        v.values
    }
}

impl std::ops::Index<usize> for ParamVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.values[i]
    }
}

/// The payload a worker pushes: `u - v` plus the master version `v` came from.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateVector {
    pub delta: Vec<f64>,
    pub base_version: u64,
    pub worker_id: u32,
}

impl UpdateVector {
    pub fn new(delta: Vec<f64>, base_version: u64, worker_id: u32) -> Self {
        Self {
            delta,
            base_version,
            worker_id,
        }
    }

    pub fn dim(&self) -> usize {
        self.delta.len()
    }

    /// Number of master iterations that elapsed since this update's base.
    pub fn staleness(&self, current_version: u64) -> u64 {
        current_version.saturating_sub(self.base_version)
    }
}

/// Returns `v + rho * sum(updates)`.
///
/// The input is left untouched; callers publish the returned vector as the
/// next global iterate, so concurrent readers only ever see whole versions.
pub fn apply_global_update(
    v: &ParamVector,
    updates: &[UpdateVector],
    rho: f64,
) -> Result<ParamVector> {
    if !(rho > 0.0) || !rho.is_finite() {
        return Err(Error::config(format!("global rate must be > 0, got {rho}")));
    }
    for u in updates {
        check_dim(v.dim(), u.dim())?;
    }
    let mut sum = vec![0.0; v.dim()];
    for u in updates {
        for (s, d) in sum.iter_mut().zip(&u.delta) {
            *s += d;
        }
    }
    let next: Vec<f64> = v
        .values
        .iter()
        .zip(&sum)
        .map(|(x, s)| x + rho * s)
        .collect();
    check_finite(&next)?;
    Ok(ParamVector { values: next })
}
