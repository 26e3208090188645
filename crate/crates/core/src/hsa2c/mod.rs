//! Advantage actor-critic under the DPSGD execution model.
//!
//! Each worker runs `p` actor threads over a shared lock-free copy of the
//! concatenated actor/critic weights. Threads add segment gradients into a
//! shared accumulator; every `m` segments the accumulated sum is applied as
//! one local step, and after `B` local steps the worker pushes its change
//! to the master and pulls a fresh model.

mod actor_critic;
mod env;

use std::collections::VecDeque;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::thread;
use std::time::Instant;

use parking_lot::Mutex;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use actor_critic::{ac_gradients, kstep_returns, rollout, ActorCritic, Trajectory};
pub use env::{EnvConfig, Step, ToyEnv, ACTIONS};

use crate::engine::config::RunConfig;
use crate::engine::master::Observation;
use crate::engine::rng::{Domain, StreamKey};
use crate::engine::transport::{MasterLink, TransportKind};
use crate::engine::worker::WorkerReport;
use crate::engine::{initial_point, launch, RunOutcome};
use crate::error::{Error, Result};
use crate::slab::{make_update_vector, SharedSlab};

/// Episodes averaged in the reported mean return.
pub const RETURN_WINDOW: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RlParams {
    #[serde(default)]
    pub env: EnvConfig,
    /// Steps per rollout segment.
    #[serde(default = "default_t_max")]
    pub t_max: usize,
    /// Segments per local step (`m`).
    #[serde(default = "default_minibatch", rename = "m")]
    pub minibatch: usize,
}

fn default_t_max() -> usize {
    5
}

fn default_minibatch() -> usize {
    4
}

impl Default for RlParams {
    fn default() -> Self {
        Self {
            env: EnvConfig::default(),
            t_max: default_t_max(),
            minibatch: default_minibatch(),
        }
    }
}

impl RlParams {
    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        if self.t_max == 0 || self.minibatch == 0 {
            return Err(Error::config("t_max and m must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hsa2cConfig {
    #[serde(flatten)]
    pub run: RunConfig,
    #[serde(default)]
    pub rl: RlParams,
}

/// One row of an RL metrics CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RlRow {
    pub wall_clock_s: f64,
    pub env_steps: u64,
    pub mean_return_last_100_episodes: f64,
}

/// Counters shared by every actor thread of a run.
#[derive(Debug, Default)]
pub struct RlStats {
    env_steps: AtomicU64,
    episodes: AtomicU64,
    recent: Mutex<VecDeque<f64>>,
}

impl RlStats {
    pub fn env_steps(&self) -> u64 {
        self.env_steps.load(Ordering::Relaxed)
    }

    pub fn episodes(&self) -> u64 {
        self.episodes.load(Ordering::Relaxed)
    }

    /// Mean discounted return of the last [`RETURN_WINDOW`] episodes; NaN
    /// before the first one ends.
    pub fn mean_recent_return(&self) -> f64 {
        let recent = self.recent.lock();
        if recent.is_empty() {
            f64::NAN
        } else {
            recent.iter().sum::<f64>() / recent.len() as f64
        }
    }

    fn record(&self, traj: &Trajectory) {
        self.env_steps.fetch_add(traj.len() as u64, Ordering::Relaxed);
        if traj.finished.is_empty() {
            return;
        }
        self.episodes.fetch_add(traj.finished.len() as u64, Ordering::Relaxed);
        let mut recent = self.recent.lock();
        for &r in &traj.finished {
            if recent.len() == RETURN_WINDOW {
                recent.pop_front();
            }
            recent.push_back(r);
        }
    }
}

fn atomic_add(cell: &AtomicU64, x: f64) {
    let mut cur = cell.load(Ordering::Relaxed);
    loop {
        let next = (f64::from_bits(cur) + x).to_bits();
        match cell.compare_exchange_weak(cur, next, Ordering::Relaxed, Ordering::Relaxed) {
            Ok(_) => return,
            Err(seen) => cur = seen,
        }
    }
}

/// The per-worker state shared by its actor threads during one pass.
struct Pass<'a> {
    slab: &'a SharedSlab,
    acc: &'a [AtomicU64],
    segments: AtomicUsize,
    updates: AtomicUsize,
}

struct Actor {
    env: ToyEnv,
    rng: ChaCha8Rng,
}

fn actor_pass(pass: &Pass<'_>, actor: &mut Actor, cfg: &RunConfig, rl: &RlParams, eta: f64, stats: &RlStats) -> Result<()> {
    let ac = ActorCritic::new(rl.env.cells());
    let dim = ac.dim();
    let mut read = vec![0.0; dim];
    let mut g = vec![0.0; dim];
    while pass.updates.load(Ordering::Acquire) < cfg.local_steps {
        pass.slab.read_into(&mut read);
        let traj = rollout(&mut actor.env, &ac, &read, rl.t_max, &mut actor.rng);
        stats.record(&traj);
        cfg.compute_cost.charge(traj.len());
        let returns = kstep_returns(&traj, rl.env.gamma);
        g.iter_mut().for_each(|x| *x = 0.0);
        ac_gradients(&traj, &returns, &ac, &read, &mut g)?;
        if pass.updates.load(Ordering::Acquire) >= cfg.local_steps {
            break;
        }
        for (cell, &x) in pass.acc.iter().zip(&g) {
            if x != 0.0 {
                atomic_add(cell, x);
            }
        }
        let k = pass.segments.fetch_add(1, Ordering::AcqRel) + 1;
        if k % rl.minibatch == 0 {
            let batch: Vec<f64> = pass
                .acc
                .iter()
                .map(|c| f64::from_bits(c.swap(0f64.to_bits(), Ordering::AcqRel)))
                .collect();
            // Reserve the slot first so at most B steps land per pass.
            if pass.updates.fetch_add(1, Ordering::AcqRel) < cfg.local_steps {
                pass.slab.write_step(&batch, eta)?;
            }
        }
    }
    Ok(())
}

/// The HSA2C worker loop: runs until the master shuts down.
pub fn run_rl_worker(
    cfg: &RunConfig,
    rl: &RlParams,
    worker_id: u32,
    link: &mut dyn MasterLink,
    stats: &RlStats,
) -> Result<WorkerReport> {
    let eta = cfg.effective_eta()?;
    let dim = ActorCritic::new(rl.env.cells()).dim();
    let key = StreamKey::new(cfg.seed);
    let mut actors: Vec<Actor> = (0..cfg.threads as u64)
        .map(|tid| Actor {
            env: ToyEnv::new(rl.env.clone()),
            rng: key.stream(Domain::Environment, worker_id as u64, tid, 0),
        })
        .collect();
    let mut slab = SharedSlab::new(dim);
    let acc: Vec<AtomicU64> = (0..dim).map(|_| AtomicU64::new(0f64.to_bits())).collect();
    let mut report = WorkerReport { worker_id, ..Default::default() };
    while let Some((version, v)) = link.pull()? {
        if v.dim() != dim {
            return Err(Error::DimMismatch { expected: dim, got: v.dim() });
        }
        slab.load(v.as_slice());
        acc.iter().for_each(|c| c.store(0f64.to_bits(), Ordering::Relaxed));
        let pass = Pass {
            slab: &slab,
            acc: &acc,
            segments: AtomicUsize::new(0),
            updates: AtomicUsize::new(0),
        };
        thread::scope(|s| -> Result<()> {
            let pass = &pass;
            let handles: Vec<_> = actors
                .iter_mut()
                .map(|actor| s.spawn(move || actor_pass(pass, actor, cfg, rl, eta, stats)))
                .collect();
            for h in handles {
                h.join().expect("actor thread panicked")?;
            }
            Ok(())
        })?;
        link.push(make_update_vector(&slab, &v, version, worker_id)?)?;
        report.passes += 1;
        report.local_steps += cfg.local_steps as u64;
    }
    Ok(report)
}

#[derive(Debug)]
pub struct Hsa2cOutcome {
    /// Final `(theta, theta_v)`, split at [`ActorCritic::split`].
    pub params: Vec<f64>,
    pub rows: Vec<RlRow>,
    pub env_steps: u64,
    pub episodes: u64,
    pub run: RunOutcome,
}

/// Trains the actor-critic with the DPSGD master over the concatenated
/// weights. The engine's `batch` is replaced by `m`.
pub fn run_hsa2c(cfg: &Hsa2cConfig, transport: TransportKind) -> Result<Hsa2cOutcome> {
    cfg.rl.validate()?;
    let mut run = cfg.run.clone();
    run.batch = cfg.rl.minibatch;
    let dim = ActorCritic::new(cfg.rl.env.cells()).dim();
    let v0 = initial_point(&run, dim)?;
    let stats = RlStats::default();
    let started = Instant::now();
    let mut rows = Vec::new();
    let mut observer = |_t: u64, _v: &crate::ParamVector| -> Result<Observation> {
        let mean = stats.mean_recent_return();
        rows.push(RlRow {
            wall_clock_s: started.elapsed().as_secs_f64(),
            env_steps: stats.env_steps(),
            mean_return_last_100_episodes: mean,
        });
        Ok(Observation { grad_norm_sq: f64::NAN, loss: -mean })
    };
    let out = launch(&run, v0, &mut observer, transport, |id, link| {
        run_rl_worker(&run, &cfg.rl, id, link, &stats)
    })?;
    Ok(Hsa2cOutcome {
        params: out.v.as_slice().to_vec(),
        rows,
        env_steps: stats.env_steps(),
        episodes: stats.episodes(),
        run: out,
    })
}
