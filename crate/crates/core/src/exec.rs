//! Deterministic replication-parallel execution.
//!
//! Work is cut into fixed-size batches. Batch `i` of a computation draws from
//! ChaCha stream `i` of a key derived from `(seed, domain)`, so results depend
//! only on the seed and never on how batches are scheduled across threads.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Replications per batch.
pub const BATCH: u64 = 4096;

pub type StreamRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// RNG for work item `index` of the computation labelled `domain`.
pub fn stream_rng(seed: u64, domain: u64, index: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(domain)));
    rng.set_stream(index);
    rng
}

/// Stable domain label from a short name.
pub fn domain(name: &str) -> u64 {
    // FNV-1a
    name.bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// `(batch index, first replication, replications in batch)` for `total` reps.
pub fn batches(total: u64, batch: u64) -> Vec<(u64, u64, u64)> {
    let count = total.div_ceil(batch);
    (0..count)
        .map(|i| {
            let start = i * batch;
            (i, start, batch.min(total - start))
        })
        .collect()
}

/// Parallel map over an index range that preserves output order.
#[derive(Clone)]
pub struct Executor {
    pool: Option<Arc<rayon::ThreadPool>>,
    workers: usize,
}

impl std::fmt::Debug for Executor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Executor").field("workers", &self.workers).finish()
    }
}

impl Default for Executor {
    fn default() -> Self {
        Self::sequential()
    }
}

impl Executor {
    pub fn sequential() -> Self {
        Executor { pool: None, workers: 1 }
    }

    pub fn new(workers: usize) -> Result<Self> {
        if workers == 0 {
            return Err(Error::domain("workers must be at least 1"));
        }
        if workers == 1 {
            return Ok(Self::sequential());
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::Numeric(format!("thread pool: {e}")))?;
        Ok(Executor { pool: Some(Arc::new(pool)), workers })
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    pub fn map<T, F>(&self, count: u64, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(u64) -> T + Sync + Send,
    {
        match &self.pool {
            None => (0..count).map(f).collect(),
            Some(pool) => pool.install(|| (0..count).into_par_iter().map(f).collect()),
        }
    }

    /// Runs `f(rng, first_rep, len)` on every batch of `total` replications.
    pub fn run_batches<T, F>(&self, seed: u64, domain: u64, total: u64, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(&mut StreamRng, u64, u64) -> T + Sync + Send,
    {
        let plan = batches(total, BATCH);
        self.map(plan.len() as u64, |i| {
            let (idx, start, len) = plan[i as usize];
            let mut rng = stream_rng(seed, domain, idx);
            f(&mut rng, start, len)
        })
    }
}
