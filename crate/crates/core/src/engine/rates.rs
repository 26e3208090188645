//! Learning-rate laws.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The constant rate used for both `eta` and `rho`:
/// `rho^2 = sqrt(f0 - f*) / (A * alpha * sqrt(T * M * Btilde))`.
pub fn rho_corollary1(
    f0_minus_fstar: f64,
    a: f64,
    alpha: f64,
    t: u64,
    m: u64,
    btilde: u64,
) -> Result<f64> {
    if !(f0_minus_fstar > 0.0 && a > 0.0 && alpha > 0.0) || t == 0 || m == 0 || btilde == 0 {
        return Err(Error::config(
            "rate law inputs must all be positive (f0 - f*, A, alpha, T, M, Btilde)",
        ));
    }
    let work = (t as f64) * (m as f64) * (btilde as f64);
    let rho_sq = f0_minus_fstar.sqrt() / (a * alpha * work.sqrt());
    Ok(rho_sq.sqrt())
}

/// Rescale a rate tuned at `(p, B, M)` for a run at `(p2, B2, M2)`:
/// `rho' = rho * (p B M / p2 B2 M2)^(1/4)`.
pub fn rho_rescale(rho: f64, base: (u64, u64, u64), new: (u64, u64, u64)) -> f64 {
    let b = (base.0 * base.1 * base.2) as f64;
    let n = (new.0 * new.1 * new.2) as f64;
    rho * (b / n).sqrt().sqrt()
}

/// Schedule for the master's global rate `rho_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RateSchedule {
    Constant { rho: f64 },
    /// `rho_t = (t + tau0)^(-kappa)`.
    RobbinsMonro { tau0: f64, kappa: f64 },
    /// Equal constant `eta = rho` from the theory parameters of the run.
    Corollary1,
}

impl Default for RateSchedule {
    fn default() -> Self {
        RateSchedule::Constant { rho: 1.0 }
    }
}

impl RateSchedule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            RateSchedule::Constant { rho } if !(rho > 0.0 && rho.is_finite()) => {
                Err(Error::config(format!("rho must be > 0, got {rho}")))
            }
            RateSchedule::RobbinsMonro { tau0, kappa } if !(tau0 >= 0.0 && kappa > 0.0) => {
                Err(Error::config("robbins_monro needs tau0 >= 0 and kappa > 0"))
            }
            RateSchedule::RobbinsMonro { tau0, .. } if tau0 == 0.0 => {
                // rho_0 would be infinite.
                Err(Error::config("robbins_monro needs tau0 > 0"))
            }
            _ => Ok(()),
        }
    }
}
