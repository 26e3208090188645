//! Sweeps over the DPSGD configuration space and the figures computed from
//! them: time speed-up, throughput and convergence slope.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::engine::config::RunConfig;
use crate::engine::master::OracleObserver;
use crate::engine::rates::{rho_rescale, RateSchedule};
use crate::engine::run;
use crate::engine::transport::TransportKind;
use crate::error::{Error, Result};
use crate::metrics::{MetricsRow, CSV_SCHEMA_VERSION};

/// Time speed-up: `reference / candidate`, both measured to the same
/// target quality.
pub fn tsp(reference_time_s: f64, candidate_time_s: f64) -> Result<f64> {
    if !(reference_time_s > 0.0 && candidate_time_s > 0.0) {
        return Err(Error::Domain(format!(
            "speed-up needs positive times, got {reference_time_s} and {candidate_time_s}"
        )));
    }
    Ok(reference_time_s / candidate_time_s)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Least-squares fit of `log y` against `log x` over `(x, y)` points, where
/// `x` is the work `T * M * Btilde` and `y` the mean squared gradient norm.
/// Needs at least 4 points spanning at least two decades of `x`.
pub fn convergence_slope(points: &[(f64, f64)]) -> Result<SlopeFit> {
    if points.len() < 4 {
        return Err(Error::config(format!("slope fit needs >= 4 points, got {}", points.len())));
    }
    if let Some(&(x, y)) = points.iter().find(|&&(x, y)| !(x > 0.0 && y > 0.0)) {
        return Err(Error::Domain(format!("slope fit needs positive values, got ({x}, {y})")));
    }
    let (lo, hi) = points
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &(x, _)| (lo.min(x), hi.max(x)));
    if hi / lo < 100.0 {
        return Err(Error::config(format!("slope fit needs two decades of T, got {lo}..{hi}")));
    }
    let n = points.len() as f64;
    let logs: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = logs.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(SlopeFit {
        slope,
        intercept: my - slope * mx,
        r2,
    })
}

/// Mean of `grad_norm_sq` over the evaluation points before the last
/// iteration, i.e. over iterates `v_0 .. v_{T-1}`.
pub fn mean_grad_norm_sq(rows: &[MetricsRow]) -> f64 {
    let Some(last) = rows.last() else {
        return f64::NAN;
    };
    let pts: Vec<f64> = rows.iter().filter(|r| r.t < last.t).map(|r| r.grad_norm_sq).collect();
    pts.iter().sum::<f64>() / pts.len() as f64
}

/// First wall-clock time at which `loss <= target`.
pub fn time_to_target(rows: &[MetricsRow], target: f64) -> Option<f64> {
    rows.iter().find(|r| r.loss <= target).map(|r| r.wall_clock_s)
}

/// Effective gradients per second over the whole run.
pub fn throughput(rows: &[MetricsRow]) -> f64 {
    rows.last()
        .map(|r| r.effective_gradients as f64 / r.wall_clock_s)
        .unwrap_or(f64::NAN)
}

/// Swept values; an absent axis keeps the base value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepAxes {
    #[serde(rename = "nW", default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<Vec<usize>>,
    #[serde(rename = "p", default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<Vec<usize>>,
    #[serde(rename = "B", default, skip_serializing_if = "Option::is_none")]
    pub local_steps: Option<Vec<usize>>,
    #[serde(rename = "M", default, skip_serializing_if = "Option::is_none")]
    pub master_batch: Option<Vec<usize>>,
    #[serde(rename = "T", default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<Vec<u64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub base: RunConfig,
    #[serde(default)]
    pub sweep: SweepAxes,
    /// Rescale a constant `rho` from the base `(p, B, M)` to each point.
    #[serde(default = "yes")]
    pub rescale_rho: bool,
    /// Index of the sweep point speed-ups are measured against.
    #[serde(default)]
    pub reference: usize,
    /// Quality threshold for time-to-target; total run time when absent.
    #[serde(default)]
    pub target_loss: Option<f64>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub transport: TransportKind,
}

fn yes() -> bool {
    true
}

fn axis<T: Copy>(name: &str, axis: &Option<Vec<T>>, base: T) -> Result<Vec<T>> {
    match axis {
        None => Ok(vec![base]),
        Some(v) if v.is_empty() => Err(Error::config(format!("sweep axis {name} is empty"))),
        Some(v) => Ok(v.clone()),
    }
}

impl ExperimentSpec {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let spec: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        spec.points()?;
        Ok(spec)
    }

    /// Every sweep point as a full configuration, in `nW, p, B, M, T`
    /// nesting order.
    pub fn points(&self) -> Result<Vec<RunConfig>> {
        let b = &self.base;
        b.validate()?;
        if b.problem.is_none() {
            return Err(Error::config("an experiment needs base.problem"));
        }
        let mut out = Vec::new();
        for &nw in &axis("nW", &self.sweep.workers, b.workers)? {
            for &p in &axis("p", &self.sweep.threads, b.threads)? {
                for &bb in &axis("B", &self.sweep.local_steps, b.local_steps)? {
                    for &m in &axis("M", &self.sweep.master_batch, b.master_batch)? {
                        for &t in &axis("T", &self.sweep.iterations, b.iterations)? {
                            let mut cfg = b.clone();
                            cfg.workers = nw;
                            cfg.threads = p;
                            cfg.local_steps = bb;
                            cfg.master_batch = m;
                            cfg.iterations = t;
                            if let (true, RateSchedule::Constant { rho }) = (self.rescale_rho, &b.rho_schedule) {
                                let from = (b.threads as u64, b.local_steps as u64, b.master_batch as u64);
                                let to = (p as u64, bb as u64, m as u64);
                                cfg.rho_schedule = RateSchedule::Constant { rho: rho_rescale(*rho, from, to) };
                            }
                            cfg.validate()?;
                            out.push(cfg);
                        }
                    }
                }
            }
        }
        if self.reference >= out.len() {
            return Err(Error::config(format!(
                "reference point {} out of range for {} points",
                self.reference,
                out.len()
            )));
        }
        Ok(out)
    }
}

/// What the summary records for one sweep point. Every number is computed
/// from the rows written to `csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub index: usize,
    pub config: RunConfig,
    pub csv: Option<String>,
    pub error: Option<String>,
    pub elapsed_s: f64,
    pub messages_sent: u64,
    pub effective_gradients: u64,
    pub gradients_per_s: f64,
    pub mean_grad_norm_sq: f64,
    pub final_loss: f64,
    pub time_to_target_s: Option<f64>,
    /// Speed-up over the reference point.
    pub tsp: Option<f64>,
}

impl RunSummary {
    fn from_rows(index: usize, config: RunConfig, csv: String, rows: &[MetricsRow], target: Option<f64>) -> Self {
        let last = rows.last().expect("a run records at least two rows");
        let elapsed_s = last.wall_clock_s;
        Self {
            index,
            config,
            csv: Some(csv),
            error: None,
            elapsed_s,
            messages_sent: last.messages_sent,
            effective_gradients: last.effective_gradients,
            gradients_per_s: throughput(rows),
            mean_grad_norm_sq: mean_grad_norm_sq(rows),
            final_loss: last.loss,
            time_to_target_s: match target {
                Some(t) => time_to_target(rows, t),
                None => Some(elapsed_s),
            },
            tsp: None,
        }
    }

    fn failed(index: usize, config: RunConfig, err: &Error) -> Self {
        Self {
            index,
            config,
            csv: None,
            error: Some(err.to_string()),
            elapsed_s: f64::NAN,
            messages_sent: 0,
            effective_gradients: 0,
            gradients_per_s: f64::NAN,
            mean_grad_norm_sq: f64::NAN,
            final_loss: f64::NAN,
            time_to_target_s: None,
            tsp: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub spec: ExperimentSpec,
    pub runs: Vec<RunSummary>,
    /// Present when the successful runs support a fit.
    pub slope: Option<SlopeFit>,
}

/// Fills in speed-ups and the slope fit from the per-run figures.
pub fn summarize(spec: &ExperimentSpec, mut runs: Vec<RunSummary>) -> Summary {
    let reference = runs.get(spec.reference).and_then(|r| r.time_to_target_s);
    for r in &mut runs {
        r.tsp = match (reference, r.time_to_target_s) {
            (Some(a), Some(b)) => tsp(a, b).ok(),
            _ => None,
        };
    }
    let points: Vec<(f64, f64)> = runs
        .iter()
        .filter(|r| r.error.is_none())
        .map(|r| {
            let c = &r.config;
            ((c.iterations * c.master_batch as u64 * c.btilde()) as f64, r.mean_grad_norm_sq)
        })
        .collect();
    Summary {
        schema_version: CSV_SCHEMA_VERSION,
        spec: spec.clone(),
        runs,
        slope: convergence_slope(&points).ok(),
    }
}

/// Runs every sweep point in turn, writing `run_NNN.csv` per point and
/// `summary.json` into `out_dir`. A failing point is recorded and the
/// sweep continues.
pub fn run_experiment(spec: &ExperimentSpec, out_dir: &Path) -> Result<Summary> {
    let points = spec.points()?;
    std::fs::create_dir_all(out_dir)?;
    let oracle = spec.base.problem.as_ref().expect("checked by points").build()?;
    let mut runs = Vec::with_capacity(points.len());
    for (i, cfg) in points.into_iter().enumerate() {
        let name = format!("run_{i:03}.csv");
        log::info!("sweep point {i}: nW={} p={} B={} M={} T={}", cfg.workers, cfg.threads, cfg.local_steps, cfg.master_batch, cfg.iterations);
        let result = run(&cfg, oracle.as_ref(), &mut OracleObserver(oracle.as_ref()), spec.transport)
            .and_then(|out| {
                out.metrics.write_csv(&out_dir.join(&name))?;
                Ok(out.metrics.rows)
            });
        runs.push(match result {
            Ok(rows) => RunSummary::from_rows(i, cfg, name, &rows, spec.target_loss),
            Err(e) => {
                log::warn!("sweep point {i} failed: {e}");
                RunSummary::failed(i, cfg, &e)
            }
        });
    }
    let summary = summarize(spec, runs);
    std::fs::write(out_dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(summary)
}
