use std::path::Path;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::delay::DelayModel;
use super::rates::{rho_corollary1, RateSchedule};
use crate::error::{Error, Result};
use crate::problems::OracleSpec;

/// Hyperparameters of one DPSGD run. Field names in JSON match the
/// documented symbols (`T`, `M`, `nW`, `p`, `B`, ...).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Master iterations.
    #[serde(rename = "T")]
    pub iterations: u64,
    /// Update vectors aggregated per master iteration.
    #[serde(rename = "M")]
    pub master_batch: usize,
    #[serde(rename = "nW")]
    pub workers: usize,
    /// Lock-free threads per worker.
    #[serde(rename = "p")]
    pub threads: usize,
    /// Local steps per thread per pass.
    #[serde(rename = "B")]
    pub local_steps: usize,
    /// Local rate.
    pub eta: f64,
    #[serde(default)]
    pub rho_schedule: RateSchedule,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub delay: DelayModel,
    /// Optional for runs whose gradient source is not a built-in oracle.
    #[serde(default)]
    pub problem: Option<OracleSpec>,
    /// Samples per local gradient.
    #[serde(default = "one")]
    pub batch: usize,
    #[serde(default)]
    pub theory: Option<TheoryParams>,
    #[serde(default)]
    pub compute_cost: ComputeCost,
    /// Evaluate the observer every this many master iterations (0 = only at
    /// the start and the end).
    #[serde(default = "ten")]
    pub eval_every: u64,
    #[serde(default)]
    pub trace_overwrites: bool,
    /// Initial global parameter; zeros when absent.
    #[serde(default)]
    pub init: Option<Vec<f64>>,
}

fn one() -> usize {
    1
}

fn ten() -> u64 {
    10
}

/// Analysis-side constants. They are inputs, never estimated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryParams {
    pub f0_minus_fstar: f64,
    #[serde(rename = "A")]
    pub a: f64,
    pub alpha: f64,
    #[serde(rename = "L")]
    pub l: f64,
    pub mu: f64,
    /// Bound on local (thread-level) read delay.
    #[serde(rename = "D", default)]
    pub d: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CostMode {
    #[default]
    None,
    Sleep,
    Spin,
}

/// Simulated per-gradient compute cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct ComputeCost {
    #[serde(default)]
    pub mode: CostMode,
    #[serde(default)]
    pub per_gradient_us: u64,
}

impl ComputeCost {
    pub fn sleep_us(us: u64) -> Self {
        Self {
            mode: CostMode::Sleep,
            per_gradient_us: us,
        }
    }

    pub fn charge(&self, gradients: usize) {
        if self.per_gradient_us == 0 {
            return;
        }
        let d = Duration::from_micros(self.per_gradient_us * gradients as u64);
        match self.mode {
            CostMode::None => {}
            CostMode::Sleep => std::thread::sleep(d),
            CostMode::Spin => {
                let until = Instant::now() + d;
                while Instant::now() < until {
                    std::hint::spin_loop();
                }
            }
        }
    }
}

impl RunConfig {
    /// A single-worker, single-thread, one-step configuration.
    pub fn serial(iterations: u64, eta: f64, rho: f64) -> Self {
        Self {
            iterations,
            master_batch: 1,
            workers: 1,
            threads: 1,
            local_steps: 1,
            eta,
            rho_schedule: RateSchedule::Constant { rho },
            seed: 0,
            delay: DelayModel::none(),
            problem: None,
            batch: 1,
            theory: None,
            compute_cost: ComputeCost::default(),
            eval_every: 10,
            trace_overwrites: false,
            init: None,
        }
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: RunConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Local steps per pushed update, `Btilde = p * B`.
    pub fn btilde(&self) -> u64 {
        (self.threads * self.local_steps) as u64
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0
            || self.master_batch == 0
            || self.workers == 0
            || self.threads == 0
            || self.local_steps == 0
            || self.batch == 0
        {
            return Err(Error::config("T, M, nW, p, B and batch must all be >= 1"));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::config(format!("eta must be > 0, got {}", self.eta)));
        }
        self.rho_schedule.validate()?;
        self.delay.validate()?;
        if matches!(self.rho_schedule, RateSchedule::Corollary1) && self.theory.is_none() {
            return Err(Error::config("rho_schedule corollary1 needs theory parameters"));
        }
        if let (Some(init), Some(problem)) = (&self.init, &self.problem) {
            if init.len() != problem.dim() {
                return Err(Error::DimMismatch {
                    expected: problem.dim(),
                    got: init.len(),
                });
            }
        }
        Ok(())
    }

    fn corollary_rate(&self) -> Result<f64> {
        let th = self
            .theory
            .as_ref()
            .ok_or_else(|| Error::config("corollary1 needs theory parameters"))?;
        rho_corollary1(
            th.f0_minus_fstar,
            th.a,
            th.alpha,
            self.iterations,
            self.master_batch as u64,
            self.btilde(),
        )
    }

    /// The local rate actually used (the corollary schedule overrides `eta`).
    pub fn effective_eta(&self) -> Result<f64> {
        match self.rho_schedule {
            RateSchedule::Corollary1 => self.corollary_rate(),
            _ => Ok(self.eta),
        }
    }

    /// Global rate for master iteration `t` (0-based).
    pub fn rho_at(&self, t: u64) -> Result<f64> {
        match self.rho_schedule {
            RateSchedule::Constant { rho } => Ok(rho),
            RateSchedule::RobbinsMonro { tau0, kappa } => Ok((t as f64 + tau0).powf(-kappa)),
            RateSchedule::Corollary1 => self.corollary_rate(),
        }
    }

    /// Soft checks of the step-size conditions under which the convergence
    /// bound holds. Returned as warnings, never as errors.
    pub fn theory_warnings(&self) -> Vec<String> {
        let Some(th) = &self.theory else {
            return Vec::new();
        };
        let mut warnings = Vec::new();
        let (Ok(eta), Ok(rho)) = (self.effective_eta(), self.rho_at(0)) else {
            return warnings;
        };
        let m = self.master_batch as f64;
        let bt = self.btilde() as f64;
        let dp = self.delay.d_prime_bound.unwrap_or(0) as f64;
        // Rates are non-increasing, so rho_0 bounds every rho_{t+n}.
        let lhs = m * m * bt * bt * eta * eta * th.l * th.l * rho * dp * (dp * rho);
        if lhs > 1.0 {
            warnings.push(format!(
                "staleness/step-size condition violated: M^2 Btilde^2 eta^2 L^2 rho D' sum(rho) = {lhs:.4} > 1"
            ));
        }
        if !(th.mu > 0.0 && th.mu < 1.0) {
            warnings.push(format!("mu must lie in (0, 1), got {}", th.mu));
        } else {
            let d1 = (th.d + 1) as f64;
            let denom = 1.0
                - eta
                - 9.0 * eta * d1 * th.l * th.l * (th.mu.powf(d1) - 1.0) / (th.mu - 1.0);
            if denom <= 0.0 || 1.0 / denom > th.mu {
                warnings.push(format!(
                    "local-delay condition violated: 1 / (1 - eta - 9 eta (D+1) L^2 (mu^(D+1)-1)/(mu-1)) = {} > mu = {}",
                    if denom <= 0.0 { f64::INFINITY } else { 1.0 / denom },
                    th.mu
                ));
            }
        }
        warnings
    }
}
