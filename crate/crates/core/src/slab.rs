//! The lock-free parameter region shared by the threads of one worker.
//!
//! Each dimension is an `AtomicU64` holding the bits of an `f64`. A write
//! step performs, per dimension, a single load followed by a single
//! compare-exchange and never retries: if another thread's write landed on
//! that dimension in between, this step's contribution to it is lost. A
//! dimension never holds a torn value, but a read of the whole slab may mix
//! dimensions from different moments.
//!
//! With tracing enabled the slab additionally records, for every step,
//! which dimensions survived and in what order the surviving writes hit each
//! dimension. [`OverwriteTrace::replay`] re-applies exactly those writes
//! serially and must reproduce the final slab bit for bit.

use std::sync::atomic::{AtomicU64, Ordering};

use parking_lot::Mutex;

use crate::error::{check_dim, check_finite, Result};
use crate::params::{ParamVector, UpdateVector};

pub struct SharedSlab {
    cells: Vec<AtomicU64>,
    tracer: Option<Tracer>,
}

struct Tracer {
    // Per-dimension count of successful writes. The lock is held only
    // around the compare-exchange so the count matches modification order.
    applied: Vec<Mutex<u64>>,
    next_step: AtomicU64,
    initial: Vec<f64>,
    steps: Mutex<Vec<StepTrace>>,
}

/// What a traced read observed: the step it opens and, per dimension, how
/// many successful writes were visible.
#[derive(Debug, Clone, Default)]
pub struct ReadStamp {
    step: Option<u64>,
    observed: Vec<u64>,
}

/// Context handed to [`SharedSlab::write_step_with`]; only inspected when
/// tracing.
pub struct StepMeta<'a> {
    pub thread: u32,
    pub read: &'a [f64],
    pub stamp: ReadStamp,
    pub samples: &'a [usize],
}

/// One recorded write step.
#[derive(Debug, Clone)]
pub struct StepTrace {
    pub step: u64,
    pub thread: u32,
    pub eta: f64,
    pub grad: Vec<f64>,
    /// The values the step's gradient was computed at.
    pub read: Vec<f64>,
    /// Per dimension, successful writes visible to the read.
    pub observed: Vec<u64>,
    pub samples: Vec<usize>,
    /// The diagonal of S: whether this step's write to a dimension survived.
    pub survived: Vec<bool>,
    /// Position of the surviving write in the dimension's modification
    /// order; `None` when lost or when the gradient entry was zero.
    pub order: Vec<Option<u64>>,
}

/// Per-step overwrite masks recovered from a traced pass.
#[derive(Debug, Clone)]
pub struct OverwriteTrace {
    pub initial: Vec<f64>,
    /// Sorted by step id (the order in which steps opened their read).
    pub steps: Vec<StepTrace>,
}

impl SharedSlab {
    pub fn new(dim: usize) -> Self {
        Self {
            cells: (0..dim).map(|_| AtomicU64::new(0f64.to_bits())).collect(),
            tracer: None,
        }
    }

    pub fn traced(dim: usize) -> Self {
        let mut slab = Self::new(dim);
        slab.tracer = Some(Tracer {
            applied: (0..dim).map(|_| Mutex::new(0)).collect(),
            next_step: AtomicU64::new(0),
            initial: vec![0.0; dim],
            steps: Mutex::new(Vec::new()),
        });
        slab
    }

    pub fn from_values(values: &[f64]) -> Self {
        let mut slab = Self::new(values.len());
        slab.load(values);
        slab
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.cells.len()
    }

    pub fn is_traced(&self) -> bool {
        self.tracer.is_some()
    }

    /// Overwrite the whole slab, e.g. with a freshly pulled model. Requires
    /// exclusive access, so no writer can be running. Resets any trace.
    pub fn load(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.dim(), "slab load dimension");
        for (c, v) in self.cells.iter().zip(values) {
            c.store(v.to_bits(), Ordering::Relaxed);
        }
        if let Some(t) = self.tracer.as_mut() {
            t.initial.copy_from_slice(values);
            for a in &t.applied {
                *a.lock() = 0;
            }
            t.next_step.store(0, Ordering::Relaxed);
            t.steps.lock().clear();
        }
    }

    /// Lock-free snapshot; dimensions may come from different instants.
    /// Fails if a step drove any entry out of the finite range.
    pub fn read(&self) -> Result<ParamVector> {
        let values = self
            .cells
            .iter()
            .map(|c| f64::from_bits(c.load(Ordering::Relaxed)))
            .collect();
        ParamVector::new(values)
    }

    /// Read into a caller buffer. When tracing, this opens a new step and
    /// records what the read observed.
    pub fn read_into(&self, out: &mut [f64]) -> ReadStamp {
        assert_eq!(out.len(), self.dim(), "slab read dimension");
        match &self.tracer {
            None => {
                for (o, c) in out.iter_mut().zip(&self.cells) {
                    *o = f64::from_bits(c.load(Ordering::Relaxed));
                }
                ReadStamp::default()
            }
            Some(t) => {
                let step = t.next_step.fetch_add(1, Ordering::Relaxed);
                let observed = out
                    .iter_mut()
                    .zip(&self.cells)
                    .zip(&t.applied)
                    .map(|((o, c), a)| {
                        let guard = a.lock();
                        *o = f64::from_bits(c.load(Ordering::Relaxed));
                        *guard
                    })
                    .collect();
                ReadStamp {
                    step: Some(step),
                    observed,
                }
            }
        }
    }

    /// `u <- u - eta * grad`, one indivisible attempt per dimension.
    pub fn write_step(&self, grad: &[f64], eta: f64) -> Result<()> {
        self.write_step_with(
            grad,
            eta,
            StepMeta {
                thread: 0,
                read: &[],
                stamp: ReadStamp::default(),
                samples: &[],
            },
        )
    }

    pub fn write_step_with(&self, grad: &[f64], eta: f64, meta: StepMeta<'_>) -> Result<()> {
        check_dim(self.dim(), grad.len())?;
        check_finite(grad)?;
        match &self.tracer {
            None => {
                for (c, &g) in self.cells.iter().zip(grad) {
                    if g == 0.0 {
                        continue;
                    }
                    let old = c.load(Ordering::Relaxed);
                    let new = f64::from_bits(old) - eta * g;
                    let _ = c.compare_exchange(old, new.to_bits(), Ordering::Relaxed, Ordering::Relaxed);
                }
            }
            Some(t) => {
                let mut survived = vec![true; grad.len()];
                let mut order = vec![None; grad.len()];
                for (k, (c, &g)) in self.cells.iter().zip(grad).enumerate() {
                    if g == 0.0 {
                        continue;
                    }
                    let old = c.load(Ordering::Relaxed);
                    let new = f64::from_bits(old) - eta * g;
                    let mut applied = t.applied[k].lock();
                    match c.compare_exchange(old, new.to_bits(), Ordering::Relaxed, Ordering::Relaxed) {
                        Ok(_) => {
                            order[k] = Some(*applied);
                            *applied += 1;
                        }
                        Err(_) => survived[k] = false,
                    }
                }
                let step = meta
                    .stamp
                    .step
                    .unwrap_or_else(|| t.next_step.fetch_add(1, Ordering::Relaxed));
                t.steps.lock().push(StepTrace {
                    step,
                    thread: meta.thread,
                    eta,
                    grad: grad.to_vec(),
                    read: meta.read.to_vec(),
                    observed: meta.stamp.observed,
                    samples: meta.samples.to_vec(),
                    survived,
                    order,
                });
            }
        }
        Ok(())
    }

    /// Take the trace recorded since the last [`load`](Self::load).
    pub fn take_trace(&self) -> Option<OverwriteTrace> {
        self.tracer.as_ref().map(|t| {
            let mut steps = std::mem::take(&mut *t.steps.lock());
            steps.sort_by_key(|s| s.step);
            OverwriteTrace {
                initial: t.initial.clone(),
                steps,
            }
        })
    }
}

/// `slab_read(slab) - base`, tagged with the version `base` came from.
pub fn make_update_vector(
    slab: &SharedSlab,
    base: &ParamVector,
    base_version: u64,
    worker_id: u32,
) -> Result<UpdateVector> {
    check_dim(base.dim(), slab.dim())?;
    let u = slab.read()?;
    let delta = u
        .as_slice()
        .iter()
        .zip(base.as_slice())
        .map(|(a, b)| a - b)
        .collect();
    Ok(UpdateVector::new(delta, base_version, worker_id))
}

impl OverwriteTrace {
    pub fn dim(&self) -> usize {
        self.initial.len()
    }

    /// Diagonal of S for the `idx`-th recorded step.
    pub fn s_mask(&self, idx: usize) -> &[bool] {
        &self.steps[idx].survived
    }

    /// Diagonal of P for read `b` against earlier step `j`: the dimensions
    /// of step `j`'s surviving write that read `b` observed.
    pub fn p_mask(&self, b: usize, j: usize) -> Vec<bool> {
        let reader = &self.steps[b];
        let writer = &self.steps[j];
        writer
            .order
            .iter()
            .zip(&reader.observed)
            .map(|(o, &seen)| matches!(o, Some(pos) if *pos < seen))
            .collect()
    }

    /// a(b): the length of the longest prefix of steps whose surviving
    /// writes were all visible to read `b`.
    pub fn flushed_prefix(&self, b: usize) -> usize {
        let observed = &self.steps[b].observed;
        self.steps
            .iter()
            .take(b)
            .take_while(|s| {
                s.order
                    .iter()
                    .zip(observed)
                    .all(|(o, &seen)| o.map_or(true, |pos| pos < seen))
            })
            .count()
    }

    pub fn lost_writes(&self) -> usize {
        self.steps
            .iter()
            .map(|s| s.survived.iter().filter(|x| !**x).count())
            .sum()
    }

    /// Values each dimension held over time: the initial value followed by
    /// the result of every surviving write in modification order.
    pub fn write_history(&self, dim: usize) -> Vec<f64> {
        let mut writes: Vec<(u64, f64, f64)> = self
            .steps
            .iter()
            .filter_map(|s| s.order[dim].map(|pos| (pos, s.eta, s.grad[dim])))
            .collect();
        writes.sort_by_key(|w| w.0);
        let mut x = self.initial[dim];
        let mut history = vec![x];
        for (_, eta, g) in writes {
            x -= eta * g;
            history.push(x);
        }
        history
    }

    /// Serially apply every step's gradient masked by its S diagonal.
    pub fn replay(&self) -> Vec<f64> {
        (0..self.dim())
            .map(|k| *self.write_history(k).last().unwrap())
            .collect()
    }
}
