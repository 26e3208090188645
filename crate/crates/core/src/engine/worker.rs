//! The DPSGD worker: pull, run `p` lock-free updaters for `B` steps each,
//! push the difference, repeat until the master shuts down.

use std::thread;

use rand::Rng;

use super::config::RunConfig;
use super::rng::StreamKey;
use super::transport::MasterLink;
use crate::error::{Error, Result};
use crate::problems::GradOracle;
use crate::slab::{make_update_vector, OverwriteTrace, SharedSlab, StepMeta};

#[derive(Debug, Default)]
pub struct WorkerReport {
    pub worker_id: u32,
    pub passes: u64,
    pub local_steps: u64,
    /// `(pass, trace)` for every pass, when tracing was on.
    pub traces: Vec<(u64, OverwriteTrace)>,
}

/// One thread's `B` steps of a pass.
fn updater(
    slab: &SharedSlab,
    oracle: &dyn GradOracle,
    cfg: &RunConfig,
    eta: f64,
    key: StreamKey,
    worker_id: u32,
    thread_id: u32,
    pass: u64,
) -> Result<()> {
    let dim = slab.dim();
    let n = oracle.n();
    let mut rng = key.sampler(worker_id, thread_id, pass);
    let mut read = vec![0.0; dim];
    let mut grad = vec![0.0; dim];
    let mut samples = vec![0usize; cfg.batch];
    for _ in 0..cfg.local_steps {
        let stamp = slab.read_into(&mut read);
        for s in samples.iter_mut() {
            *s = rng.random_range(0..n);
        }
        oracle.batch_grad(&samples, &read, &mut grad);
        cfg.compute_cost.charge(cfg.batch);
        slab.write_step_with(
            &grad,
            eta,
            StepMeta {
                thread: thread_id,
                read: &read,
                stamp,
                samples: &samples,
            },
        )?;
    }
    Ok(())
}

pub fn run_worker(
    cfg: &RunConfig,
    oracle: &dyn GradOracle,
    worker_id: u32,
    link: &mut dyn MasterLink,
) -> Result<WorkerReport> {
    let eta = cfg.effective_eta()?;
    let key = StreamKey::new(cfg.seed);
    let dim = oracle.dim();
    let mut slab = if cfg.trace_overwrites {
        SharedSlab::traced(dim)
    } else {
        SharedSlab::new(dim)
    };
    let mut report = WorkerReport {
        worker_id,
        ..Default::default()
    };
    while let Some((version, v)) = link.pull()? {
        if v.dim() != dim {
            return Err(Error::DimMismatch { expected: dim, got: v.dim() });
        }
        let pass = report.passes;
        slab.load(v.as_slice());
        let shared = &slab;
        thread::scope(|s| -> Result<()> {
            let handles: Vec<_> = (0..cfg.threads as u32)
                .map(|tid| {
                    s.spawn(move || updater(shared, oracle, cfg, eta, key, worker_id, tid, pass))
                })
                .collect();
            for h in handles {
                h.join().expect("updater thread panicked")?;
            }
            Ok(())
        })?;
        if let Some(trace) = slab.take_trace() {
            report.traces.push((pass, trace));
        }
        link.push(make_update_vector(&slab, &v, version, worker_id)?)?;
        report.passes += 1;
        report.local_steps += cfg.btilde();
    }
    Ok(report)
}
