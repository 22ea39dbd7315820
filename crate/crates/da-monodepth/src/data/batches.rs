//! Paired source/target batch scheduling.
//!
//! Every training step consumes one source batch and one target batch of the
//! same size. An epoch walks the larger set exactly once in shuffled order
//! (trailing remainder dropped); the smaller set is drawn from a shuffled
//! stream that reshuffles whenever it runs out. All ordering derives from
//! `(seed, epoch)`, so schedules are reproducible.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::scalar::derive_seed;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct DomainBatches {
    n_source: usize,
    n_target: usize,
    batch_size: usize,
    seed: u64,
}

/// One step's worth of sample indices: (source, target).
pub type BatchPair = (Vec<usize>, Vec<usize>);

pub fn make_domain_batches(
    n_source: usize,
    n_target: usize,
    batch_size: usize,
    seed: u64,
) -> Result<DomainBatches> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    let smaller = n_source.min(n_target);
    if batch_size > smaller {
        return Err(Error::Config(format!(
            "batch_size {batch_size} exceeds the smaller set ({smaller} samples)"
        )));
    }
    Ok(DomainBatches { n_source, n_target, batch_size, seed })
}

struct Recycler {
    pool: Vec<usize>,
    pos: usize,
}

impl Recycler {
    fn new(n: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut pool: Vec<usize> = (0..n).collect();
        pool.shuffle(rng);
        Recycler { pool, pos: 0 }
    }

    fn take(&mut self, count: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            if self.pos == self.pool.len() {
                self.pool.shuffle(rng);
                self.pos = 0;
            }
            out.push(self.pool[self.pos]);
            self.pos += 1;
        }
        out
    }
}

impl DomainBatches {
    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    /// Steps per epoch: the larger set divided by the batch size.
    pub fn steps_per_epoch(&self) -> usize {
        self.n_source.max(self.n_target) / self.batch_size
    }

    /// The deterministic schedule of one epoch.
    pub fn epoch(&self, epoch: usize) -> Vec<BatchPair> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, epoch as u64));
        let mut source = Recycler::new(self.n_source, &mut rng);
        let mut target = Recycler::new(self.n_target, &mut rng);
        (0..self.steps_per_epoch())
            .map(|_| {
                (
                    source.take(self.batch_size, &mut rng),
                    target.take(self.batch_size, &mut rng),
                )
            })
            .collect()
    }
}
