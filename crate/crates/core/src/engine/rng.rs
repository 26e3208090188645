//! Replayable random streams.
//!
//! Every consumer of randomness gets its own ChaCha stream, selected by the
//! run seed plus a `(domain, worker, thread, pass)` tuple, so parallel
//! streams never overlap and any single one can be regenerated in isolation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Sampling = 1,
    Delay = 2,
    Environment = 3,
    Init = 4,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamKey {
    seed: u64,
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl StreamKey {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn stream_id(domain: Domain, worker: u64, thread: u64, pass: u64) -> u64 {
        [worker, thread, pass]
            .into_iter()
            .fold(splitmix64(domain as u64), |h, x| splitmix64(h ^ x))
    }

    pub fn stream(&self, domain: Domain, worker: u64, thread: u64, pass: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(Self::stream_id(domain, worker, thread, pass));
        rng
    }

    /// Sample-index stream for one thread's pass.
    pub fn sampler(&self, worker: u32, thread: u32, pass: u64) -> ChaCha8Rng {
        self.stream(Domain::Sampling, worker as u64, thread as u64, pass)
    }
}
