//! Distributed and parallel asynchronous SGD.
//!
//! A master aggregates `M` update vectors per global step, first come first
//! served. Each worker pulls the global iterate into a lock-free slab, lets
//! `p` threads take `B` SGD steps each against it without locks, and pushes
//! the difference back. The same runtime drives stochastic variational
//! inference for LDA ([`svi_lda`]) and an advantage actor-critic on a toy
//! gridworld ([`hsa2c`]).

pub mod engine;
pub mod error;
pub mod experiment;
pub mod hsa2c;
pub mod metrics;
pub mod params;
pub mod problems;
pub mod slab;
pub mod svi_lda;

pub use engine::config::{ComputeCost, CostMode, RunConfig, TheoryParams};
pub use engine::delay::{DelayModel, Latency, StalenessPolicy};
pub use engine::master::{Observation, Observer, OracleObserver};
pub use engine::rates::{rho_corollary1, rho_rescale, RateSchedule};
pub use engine::transport::TransportKind;
pub use engine::{launch, run, RunOutcome};
pub use error::{Error, Result};
pub use experiment::{convergence_slope, run_experiment, tsp, ExperimentSpec, Summary};
pub use hsa2c::{run_hsa2c, Hsa2cConfig};
pub use metrics::{Metrics, MetricsRow};
pub use params::{apply_global_update, ParamVector, UpdateVector};
pub use problems::{GradOracle, OracleSpec};
pub use slab::{make_update_vector, OverwriteTrace, SharedSlab};
pub use svi_lda::{run_svi, SviConfig};
