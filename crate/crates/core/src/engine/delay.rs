//! Message latency injection and the staleness bound.

use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Latency {
    #[default]
    None,
    Fixed {
        latency_us: u64,
    },
    Uniform {
        min_us: u64,
        max_us: u64,
    },
    /// A per-worker offset in `[base_us, base_us + spread_us]`, drawn once
    /// per worker from the run seed, plus per-message jitter in `[0, jitter_us]`.
    SeededJitter {
        base_us: u64,
        spread_us: u64,
        jitter_us: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StalenessPolicy {
    /// Discard the stale update and count it.
    #[default]
    Drop,
    /// Hold back the global step while a worker that is still computing
    /// would end up beyond the bound; anything still too stale is dropped.
    Block,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct DelayModel {
    #[serde(flatten)]
    pub latency: Latency,
    /// Maximum allowed staleness in master iterations.
    #[serde(rename = "D_prime_bound", default)]
    pub d_prime_bound: Option<u64>,
    #[serde(default)]
    pub enforce: bool,
    #[serde(default)]
    pub policy: StalenessPolicy,
}

/// A message together with how long it must wait before delivery.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduledDelivery<M> {
    pub after: Duration,
    pub msg: M,
}

impl DelayModel {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        if let Latency::Uniform { min_us, max_us } = self.latency {
            if min_us > max_us {
                return Err(Error::config("uniform latency needs min_us <= max_us"));
            }
        }
        if self.enforce && self.d_prime_bound.is_none() {
            return Err(Error::config("staleness enforcement needs D_prime_bound"));
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        match self.latency {
            Latency::None => true,
            Latency::Fixed { latency_us } => latency_us == 0,
            Latency::Uniform { max_us, .. } => max_us == 0,
            Latency::SeededJitter {
                base_us,
                spread_us,
                jitter_us,
            } => base_us + spread_us + jitter_us == 0,
        }
    }

    /// The fixed part of a worker's latency; only `seeded_jitter` has one.
    pub fn worker_offset(&self, worker_rng: &mut impl Rng) -> Duration {
        match self.latency {
            Latency::SeededJitter {
                base_us, spread_us, ..
            } => Duration::from_micros(base_us + worker_rng.random_range(0..=spread_us)),
            _ => Duration::ZERO,
        }
    }

    pub fn sample(&self, offset: Duration, rng: &mut impl Rng) -> Duration {
        match self.latency {
            Latency::None => Duration::ZERO,
            Latency::Fixed { latency_us } => Duration::from_micros(latency_us),
            Latency::Uniform { min_us, max_us } => {
                Duration::from_micros(rng.random_range(min_us..=max_us))
            }
            Latency::SeededJitter { jitter_us, .. } => {
                offset + Duration::from_micros(rng.random_range(0..=jitter_us))
            }
        }
    }

    /// Whether an update with this staleness is over the bound.
    pub fn violates(&self, staleness: u64) -> bool {
        self.d_prime_bound.is_some_and(|d| staleness > d)
    }
}

pub fn inject_delay<M>(
    model: &DelayModel,
    msg: M,
    offset: Duration,
    rng: &mut impl Rng,
) -> ScheduledDelivery<M> {
    ScheduledDelivery {
        after: model.sample(offset, rng),
        msg,
    }
}
