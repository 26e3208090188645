//! The global updater.

use std::collections::{HashMap, VecDeque};
use std::sync::Arc;
use std::time::{Duration, Instant};

use crossbeam_channel::{Receiver, RecvTimeoutError, Sender};
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::delay::StalenessPolicy;
use super::transport::{Envelope, PeerId, Reply, Request};
use crate::error::{Error, Result};
use crate::metrics::{Metrics, MetricsRow};
use crate::params::{apply_global_update, ParamVector, UpdateVector};
use crate::problems::{full_grad, loss_at, norm_sq, GradOracle};

/// Longest the master waits for any message before giving up.
pub const IDLE_TIMEOUT: Duration = Duration::from_secs(120);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub grad_norm_sq: f64,
    pub loss: f64,
}

impl Observation {
    pub const NONE: Observation = Observation {
        grad_norm_sq: f64::NAN,
        loss: f64::NAN,
    };
}

/// Evaluates the global iterate at metric checkpoints.
pub trait Observer {
    fn observe(&mut self, t: u64, v: &ParamVector) -> Result<Observation>;
}

impl<F: FnMut(u64, &ParamVector) -> Result<Observation>> Observer for F {
    fn observe(&mut self, t: u64, v: &ParamVector) -> Result<Observation> {
        self(t, v)
    }
}

/// Exact full gradient and loss of an oracle.
pub struct OracleObserver<'a>(pub &'a dyn GradOracle);

impl Observer for OracleObserver<'_> {
    fn observe(&mut self, _t: u64, v: &ParamVector) -> Result<Observation> {
        Ok(Observation {
            grad_norm_sq: norm_sq(&full_grad(self.0, v)?),
            loss: loss_at(self.0, v)?,
        })
    }
}

pub struct NullObserver;

impl Observer for NullObserver {
    fn observe(&mut self, _t: u64, _v: &ParamVector) -> Result<Observation> {
        Ok(Observation::NONE)
    }
}

/// One update folded into a global step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppliedUpdate {
    /// Global iteration the update was applied in (0-based).
    pub t: u64,
    pub worker_id: u32,
    pub base_version: u64,
    /// Index of this push among all pushes received from the same peer.
    pub seq: u64,
}

pub struct MasterState {
    pub v: Arc<ParamVector>,
    pub t: u64,
    pending: VecDeque<Pending>,
    pub metrics: Metrics,
    pub log: Vec<AppliedUpdate>,
}

struct Pending {
    update: UpdateVector,
    seq: u64,
}

impl MasterState {
    pub fn new(v0: ParamVector) -> Self {
        Self {
            v: Arc::new(v0),
            t: 0,
            pending: VecDeque::new(),
            metrics: Metrics::default(),
            log: Vec::new(),
        }
    }
}

#[derive(Debug)]
pub struct MasterOutcome {
    pub v: ParamVector,
    pub metrics: Metrics,
    pub log: Vec<AppliedUpdate>,
}

#[derive(Default)]
struct Peer {
    reply: Option<Sender<Reply>>,
    /// Version of the model the peer is currently working from.
    outstanding: Option<u64>,
    pushes: u64,
}

struct Master<'a> {
    cfg: &'a RunConfig,
    state: MasterState,
    peers: HashMap<PeerId, Peer>,
    deferred: Vec<PeerId>,
    start: Instant,
    samples_per_push: u64,
}

impl Master<'_> {
    fn record(&mut self, observer: &mut dyn Observer) -> Result<()> {
        let obs = observer.observe(self.state.t, &self.state.v)?;
        let m = &self.state.metrics;
        let row = MetricsRow {
            wall_clock_s: self.start.elapsed().as_secs_f64(),
            t: self.state.t,
            grad_norm_sq: obs.grad_norm_sq,
            loss: obs.loss,
            v_norm: self.state.v.norm(),
            messages_sent: m.pushes_received,
            effective_gradients: m.pushes_received * self.samples_per_push,
        };
        self.state.metrics.rows.push(row);
        Ok(())
    }

    /// Whether advancing the global step now would push some worker that is
    /// still computing beyond the staleness bound.
    fn blocked(&self) -> bool {
        let d = &self.cfg.delay;
        if !(d.enforce && d.policy == StalenessPolicy::Block) {
            return false;
        }
        let next = self.state.t + 1;
        self.peers
            .values()
            .filter_map(|p| p.outstanding)
            .any(|base| d.violates(next - base))
    }

    fn serve_pull(&mut self, peer: PeerId) {
        let t = self.state.t;
        let v = self.state.v.clone();
        if let Some(p) = self.peers.get_mut(&peer) {
            if let Some(reply) = &p.reply {
                if reply.send(Reply::Model { version: t, v }).is_ok() {
                    p.outstanding = Some(t);
                    self.state.metrics.pulls_served += 1;
                }
            }
        }
    }

    /// Applies one global step if `M` admissible updates are pending.
    fn try_step(&mut self) -> Result<bool> {
        let m = self.cfg.master_batch;
        if self.state.pending.len() < m || self.blocked() {
            return Ok(false);
        }
        let delay = &self.cfg.delay;
        let t = self.state.t;
        if delay.enforce && delay.policy == StalenessPolicy::Block {
            self.state
                .pending
                .make_contiguous()
                .sort_by_key(|p| p.update.base_version);
        }
        let mut batch = Vec::with_capacity(m);
        let mut keep = VecDeque::new();
        while let Some(p) = self.state.pending.pop_front() {
            if batch.len() == m {
                keep.push_back(p);
                continue;
            }
            let s = p.update.staleness(t);
            if delay.violates(s) {
                if delay.enforce {
                    self.state.metrics.dropped_stale += 1;
                    continue;
                }
                self.state.metrics.staleness_violations += 1;
            }
            batch.push(p);
        }
        self.state.pending = keep;
        if batch.len() < m {
            // Survivors wait for more pushes.
            for p in batch.into_iter().rev() {
                self.state.pending.push_front(p);
            }
            return Ok(false);
        }
        let rho = self.cfg.rho_at(t)?;
        let updates: Vec<UpdateVector> = batch.iter().map(|p| p.update.clone()).collect();
        let next = apply_global_update(&self.state.v, &updates, rho)?;
        for p in &batch {
            *self
                .state
                .metrics
                .staleness_hist
                .entry(p.update.staleness(t))
                .or_default() += 1;
            self.state.log.push(AppliedUpdate {
                t,
                worker_id: p.update.worker_id,
                base_version: p.update.base_version,
                seq: p.seq,
            });
        }
        self.state.metrics.pushes_applied += m as u64;
        self.state.v = Arc::new(next);
        self.state.t += 1;
        if delay.enforce {
            // Anything left that can no longer be applied within the bound.
            let before = self.state.pending.len();
            let t = self.state.t;
            self.state.pending.retain(|p| !delay.violates(p.update.staleness(t)));
            self.state.metrics.dropped_stale += (before - self.state.pending.len()) as u64;
        }
        Ok(true)
    }

    fn handle(&mut self, env: Envelope) -> Result<()> {
        let Envelope { peer, req } = env;
        match req {
            Request::Hello(reply) => {
                self.peers.entry(peer).or_default().reply = Some(reply);
            }
            Request::Pull => {
                if self.blocked() && self.state.pending.len() >= self.cfg.master_batch {
                    self.deferred.push(peer);
                } else {
                    self.serve_pull(peer);
                }
            }
            Request::Push(update) => {
                if update.dim() != self.state.v.dim() {
                    log::warn!("peer {peer}: push of dimension {} ignored", update.dim());
                    return Ok(());
                }
                let p = self.peers.entry(peer).or_default();
                p.outstanding = None;
                let seq = p.pushes;
                p.pushes += 1;
                self.state.metrics.pushes_received += 1;
                self.state.pending.push_back(Pending { update, seq });
            }
            Request::Bye => {
                self.peers.remove(&peer);
                self.deferred.retain(|&p| p != peer);
            }
        }
        Ok(())
    }

    fn shutdown(&mut self) {
        for p in self.peers.values() {
            if let Some(reply) = &p.reply {
                let _ = reply.send(Reply::Shutdown);
            }
        }
    }
}

/// Runs exactly `T` global steps of `M` first-come-first-served updates
/// each, serving pulls in between, then broadcasts SHUTDOWN.
pub fn run_master(
    cfg: &RunConfig,
    state: MasterState,
    rx: &Receiver<Envelope>,
    observer: &mut dyn Observer,
) -> Result<MasterOutcome> {
    cfg.validate()?;
    let samples_per_push = cfg.btilde() * cfg.batch as u64;
    let mut master = Master {
        cfg,
        state,
        peers: HashMap::new(),
        deferred: Vec::new(),
        start: Instant::now(),
        samples_per_push,
    };
    master.record(observer)?;
    let result = drive(&mut master, rx, observer);
    master.shutdown();
    master.state.metrics.elapsed_s = master.start.elapsed().as_secs_f64();
    if let Err(e) = result {
        return Err(Error::Aborted {
            at: master.state.t,
            source: Box::new(e),
            partial: Box::new(master.state.metrics),
        });
    }
    let state = master.state;
    Ok(MasterOutcome {
        v: Arc::try_unwrap(state.v).unwrap_or_else(|a| (*a).clone()),
        metrics: state.metrics,
        log: state.log,
    })
}

fn drive(master: &mut Master<'_>, rx: &Receiver<Envelope>, observer: &mut dyn Observer) -> Result<()> {
    let total = master.cfg.iterations;
    let every = master.cfg.eval_every;
    while master.state.t < total {
        let env = match rx.recv_timeout(IDLE_TIMEOUT) {
            Ok(env) => env,
            Err(RecvTimeoutError::Timeout) => {
                return Err(Error::Transport(format!(
                    "no message for {IDLE_TIMEOUT:?} at iteration {}",
                    master.state.t
                )))
            }
            Err(RecvTimeoutError::Disconnected) => {
                return Err(Error::Transport(format!(
                    "all workers left at iteration {} of {total}",
                    master.state.t
                )))
            }
        };
        master.handle(env)?;
        while master.state.t < total && master.try_step()? {
            let t = master.state.t;
            if t == total || (every > 0 && t % every == 0) {
                master.record(observer)?;
            }
        }
        if !master.deferred.is_empty() && !master.blocked() && master.state.t < total {
            for peer in std::mem::take(&mut master.deferred) {
                master.serve_pull(peer);
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::delay::DelayModel;
    use crossbeam_channel::unbounded;

    fn hello(tx: &Sender<Envelope>, peer: PeerId) -> Receiver<Reply> {
        let (rtx, rrx) = unbounded();
        tx.send(Envelope { peer, req: Request::Hello(rtx) }).unwrap();
        rrx
    }

    fn push(tx: &Sender<Envelope>, peer: PeerId, delta: Vec<f64>, base: u64) {
        tx.send(Envelope {
            peer,
            req: Request::Push(UpdateVector::new(delta, base, peer as u32)),
        })
        .unwrap();
    }

    #[test]
    fn two_updates_averaged_by_rho() {
        let mut cfg = RunConfig::serial(1, 0.1, 0.5);
        cfg.master_batch = 2;
        let (tx, rx) = unbounded();
        let r0 = hello(&tx, 0);
        let r1 = hello(&tx, 1);
        push(&tx, 0, vec![1.0, 0.0], 0);
        push(&tx, 1, vec![0.0, 1.0], 0);
        let out = run_master(&cfg, MasterState::new(ParamVector::zeros(2)), &rx, &mut NullObserver).unwrap();
        assert_eq!(out.v.as_slice(), &[0.5, 0.5]);
        assert_eq!(out.metrics.pushes_received, 2);
        assert!(matches!(r0.try_recv().unwrap(), Reply::Shutdown));
        assert!(matches!(r1.try_recv().unwrap(), Reply::Shutdown));
        assert_eq!(out.log.len(), 2);
    }

    #[test]
    fn stale_update_dropped_when_enforced() {
        let mut cfg = RunConfig::serial(2, 0.1, 1.0);
        cfg.delay = DelayModel { d_prime_bound: Some(0), enforce: true, ..DelayModel::none() };
        let (tx, rx) = unbounded();
        let _r = hello(&tx, 0);
        push(&tx, 0, vec![1.0], 0);
        push(&tx, 0, vec![1.0], 0); // stale by one after the first step
        push(&tx, 0, vec![2.0], 1);
        let out = run_master(&cfg, MasterState::new(ParamVector::zeros(1)), &rx, &mut NullObserver).unwrap();
        assert_eq!(out.v.as_slice(), &[3.0]);
        assert_eq!(out.metrics.dropped_stale, 1);
        assert_eq!(out.metrics.max_applied_staleness(), 0);
    }

    #[test]
    fn violations_counted_when_not_enforced() {
        let mut cfg = RunConfig::serial(2, 0.1, 1.0);
        cfg.delay = DelayModel { d_prime_bound: Some(0), ..DelayModel::none() };
        let (tx, rx) = unbounded();
        let _r = hello(&tx, 0);
        push(&tx, 0, vec![1.0], 0);
        push(&tx, 0, vec![1.0], 0);
        let out = run_master(&cfg, MasterState::new(ParamVector::zeros(1)), &rx, &mut NullObserver).unwrap();
        assert_eq!(out.v.as_slice(), &[2.0]);
        assert_eq!(out.metrics.staleness_violations, 1);
        assert_eq!(out.metrics.staleness_hist.get(&1), Some(&1));
    }

    #[test]
    fn pulls_see_whole_versions() {
        let cfg = RunConfig::serial(1, 0.1, 1.0);
        let (tx, rx) = unbounded();
        let r = hello(&tx, 0);
        tx.send(Envelope { peer: 0, req: Request::Pull }).unwrap();
        push(&tx, 0, vec![4.0, 4.0], 0);
        let out = run_master(&cfg, MasterState::new(ParamVector::zeros(2)), &rx, &mut NullObserver).unwrap();
        let Reply::Model { version, v } = r.try_recv().unwrap() else { panic!() };
        assert_eq!((version, v.as_slice()), (0, &[0.0, 0.0][..]));
        assert_eq!(out.v.as_slice(), &[4.0, 4.0]);
    }

    #[test]
    fn departed_workers_abort_the_run() {
        let cfg = RunConfig::serial(5, 0.1, 1.0);
        let (tx, rx) = unbounded();
        let _r = hello(&tx, 0);
        push(&tx, 0, vec![1.0], 0);
        drop(tx);
        let err = run_master(&cfg, MasterState::new(ParamVector::zeros(1)), &rx, &mut NullObserver).unwrap_err();
        let Error::Aborted { at, source, partial } = err else { panic!("{err}") };
        assert_eq!(at, 1);
        assert!(matches!(*source, Error::Transport(_)));
        assert_eq!(partial.pushes_received, 1);
    }
}
