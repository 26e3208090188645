//! The DPSGD runtime: master, workers, transports and rate schedules.

pub mod config;
pub mod delay;
pub mod master;
pub mod rates;
pub mod rng;
pub mod transport;
pub mod wire;
pub mod worker;

use std::net::SocketAddr;
use std::thread;
use std::time::Duration;

use crossbeam_channel::{unbounded, Receiver};

use crate::error::{Error, Result};
use crate::metrics::Metrics;
use crate::params::ParamVector;
use crate::problems::GradOracle;
use config::RunConfig;
use master::{run_master, AppliedUpdate, MasterState, Observer};
use rng::{Domain, StreamKey};
use transport::{DelayedLink, Envelope, InprocLink, MasterLink, Reply, Request, TcpHub, TcpLink, TransportKind};
use worker::{run_worker, WorkerReport};

pub const CONNECT_ATTEMPTS: u32 = 50;
pub const CONNECT_BACKOFF: Duration = Duration::from_millis(100);

#[derive(Debug)]
pub struct RunOutcome {
    pub v: ParamVector,
    pub metrics: Metrics,
    pub log: Vec<AppliedUpdate>,
    pub workers: Vec<WorkerReport>,
}

/// Starting point of a run: `init` from the config, else zeros.
pub fn initial_point(cfg: &RunConfig, dim: usize) -> Result<ParamVector> {
    match &cfg.init {
        Some(v) => {
            if v.len() != dim {
                return Err(Error::DimMismatch { expected: dim, got: v.len() });
            }
            ParamVector::new(v.clone())
        }
        None => Ok(ParamVector::zeros(dim)),
    }
}

fn with_delay<'a, L: MasterLink + 'a>(cfg: &RunConfig, worker_id: u32, link: L) -> Box<dyn MasterLink + 'a> {
    if cfg.delay.is_zero() {
        Box::new(link)
    } else {
        let rng = StreamKey::new(cfg.seed).stream(Domain::Delay, worker_id as u64, 0, 0);
        Box::new(DelayedLink::new(link, cfg.delay.clone(), rng))
    }
}

/// Answers whoever is still talking after the master finished, so no
/// worker waits on a reply that will never come.
fn drain_until<F: Fn() -> bool>(rx: &Receiver<Envelope>, done: F) {
    while !done() {
        if let Ok(env) = rx.recv_timeout(Duration::from_millis(5)) {
            if let Request::Hello(reply) = env.req {
                let _ = reply.send(Reply::Shutdown);
            }
        }
    }
}

/// Runs a master in this thread and `nW` workers in scoped threads, each
/// executing `worker(worker_id, link)`.
pub fn launch<W>(
    cfg: &RunConfig,
    v0: ParamVector,
    observer: &mut dyn Observer,
    transport: TransportKind,
    worker: W,
) -> Result<RunOutcome>
where
    W: Fn(u32, &mut dyn MasterLink) -> Result<WorkerReport> + Sync,
{
    cfg.validate()?;
    for w in cfg.theory_warnings() {
        log::warn!("{w}");
    }
    let (tx, rx) = unbounded::<Envelope>();
    let hub = match transport {
        TransportKind::Inproc => None,
        TransportKind::Tcp => Some(TcpHub::bind("127.0.0.1:0".parse().unwrap(), tx.clone())?),
    };
    let addr = hub.as_ref().map(TcpHub::local_addr);
    let worker = &worker;
    thread::scope(|s| {
        let handles: Vec<_> = (0..cfg.workers as u32)
            .map(|id| {
                let tx = tx.clone();
                s.spawn(move || -> Result<WorkerReport> {
                    let mut link = match addr {
                        None => with_delay(cfg, id, InprocLink::connect(id as u64, tx)?),
                        Some(addr) => {
                            drop(tx);
                            with_delay(cfg, id, TcpLink::connect(addr, CONNECT_ATTEMPTS, CONNECT_BACKOFF)?)
                        }
                    };
                    worker(id, link.as_mut())
                })
            })
            .collect();
        drop(tx);
        let master = run_master(cfg, MasterState::new(v0), &rx, observer);
        drain_until(&rx, || handles.iter().all(|h| h.is_finished()));
        let mut reports = Vec::new();
        let mut worker_err = None;
        for h in handles {
            match h.join().expect("worker thread panicked") {
                Ok(r) => reports.push(r),
                Err(e) => {
                    log::warn!("worker failed: {e}");
                    worker_err.get_or_insert(e);
                }
            }
        }
        let mut out = match (master, worker_err) {
            (Ok(out), _) => out,
            (Err(Error::Aborted { at, partial, .. }), Some(e)) => {
                return Err(Error::Aborted { at, source: Box::new(e), partial })
            }
            (Err(e), _) => return Err(e),
        };
        if let Some(hub) = &hub {
            out.metrics.malformed_frames = hub.malformed_frames();
        }
        reports.sort_by_key(|r| r.worker_id);
        Ok(RunOutcome {
            v: out.v,
            metrics: out.metrics,
            log: out.log,
            workers: reports,
        })
    })
}

/// A plain DPSGD run of `oracle`.
pub fn run(
    cfg: &RunConfig,
    oracle: &dyn GradOracle,
    observer: &mut dyn Observer,
    transport: TransportKind,
) -> Result<RunOutcome> {
    let v0 = initial_point(cfg, oracle.dim())?;
    launch(cfg, v0, observer, transport, |id, link| run_worker(cfg, oracle, id, link))
}

/// Master role of a multi-process TCP run: waits for workers on `listen`.
pub fn serve_master(
    cfg: &RunConfig,
    dim: usize,
    listen: SocketAddr,
    observer: &mut dyn Observer,
) -> Result<master::MasterOutcome> {
    let (tx, rx) = unbounded();
    let hub = TcpHub::bind(listen, tx)?;
    log::info!("master listening on {}", hub.local_addr());
    let mut out = run_master(cfg, MasterState::new(initial_point(cfg, dim)?), &rx, observer)?;
    out.metrics.malformed_frames = hub.malformed_frames();
    // Give writer threads a moment to flush SHUTDOWN frames.
    thread::sleep(Duration::from_millis(50));
    Ok(out)
}

/// Worker role of a multi-process TCP run.
pub fn serve_worker(
    cfg: &RunConfig,
    oracle: &dyn GradOracle,
    master_addr: SocketAddr,
    worker_id: u32,
) -> Result<WorkerReport> {
    let link = TcpLink::connect(master_addr, CONNECT_ATTEMPTS, CONNECT_BACKOFF)?;
    let mut link = with_delay(cfg, worker_id, link);
    run_worker(cfg, oracle, worker_id, link.as_mut())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::master::{NullObserver, OracleObserver};
    use crate::problems::Quadratic;

    fn quad() -> Quadratic {
        Quadratic::synthetic(16, 3, 1.0, 3).unwrap()
    }

    #[test]
    fn push_count_law_inproc() {
        let oracle = quad();
        let mut cfg = RunConfig::serial(20, 0.05, 0.5);
        cfg.workers = 3;
        cfg.master_batch = 2;
        cfg.threads = 2;
        cfg.local_steps = 5;
        let out = run(&cfg, &oracle, &mut OracleObserver(&oracle), TransportKind::Inproc).unwrap();
        assert_eq!(out.metrics.pushes_applied, 40);
        assert_eq!(out.metrics.pushes_received, 40);
        assert_eq!(out.log.len(), 40);
        let last = out.metrics.last().unwrap();
        assert_eq!((last.t, last.messages_sent, last.effective_gradients), (20, 40, 400));
    }

    #[test]
    fn tcp_transport_matches_inproc_for_one_worker() {
        let oracle = quad();
        let cfg = RunConfig::serial(30, 0.1, 1.0);
        let a = run(&cfg, &oracle, &mut NullObserver, TransportKind::Inproc).unwrap();
        let b = run(&cfg, &oracle, &mut NullObserver, TransportKind::Tcp).unwrap();
        assert_eq!(a.v, b.v);
        assert_eq!(b.metrics.pushes_received, 30);
    }

    #[test]
    fn replayable_with_fixed_delay() {
        let oracle = quad();
        let mut cfg = RunConfig::serial(25, 0.1, 0.5);
        cfg.delay.latency = delay::Latency::Fixed { latency_us: 50 };
        cfg.threads = 1;
        cfg.local_steps = 4;
        let a = run(&cfg, &oracle, &mut NullObserver, TransportKind::Inproc).unwrap();
        let b = run(&cfg, &oracle, &mut NullObserver, TransportKind::Inproc).unwrap();
        assert_eq!(a.v, b.v);
    }

    #[test]
    fn worker_failure_aborts_run() {
        let oracle = quad();
        let cfg = RunConfig::serial(5, 0.1, 1.0);
        let err = launch(&cfg, ParamVector::zeros(3), &mut NullObserver, TransportKind::Inproc, |_, link| {
            link.pull()?;
            Err(Error::Transport("boom".into()))
        })
        .unwrap_err();
        let _ = oracle;
        let Error::Aborted { source, .. } = err else { panic!("{err}") };
        assert!(source.to_string().contains("boom"));
    }
}
