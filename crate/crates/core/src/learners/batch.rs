use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

/// Epoch-wise batches without replacement, each holding both cohorts in
/// roughly their overall proportion.
#[derive(Debug, Clone)]
pub struct StratifiedBatcher {
    treated: Vec<usize>,
    control: Vec<usize>,
    batches: usize,
    cursor: usize,
    rng: ChaCha8Rng,
}

impl StratifiedBatcher {
    /// `rows` index the dataset; `treated[i]` labels dataset row `i`.
    pub fn new(rows: &[usize], treated: &[bool], batch_size: usize, seed: u64) -> Result<Self> {
        let t: Vec<usize> = rows.iter().copied().filter(|&i| treated[i]).collect();
        let c: Vec<usize> = rows.iter().copied().filter(|&i| !treated[i]).collect();
        if t.is_empty() || c.is_empty() {
            return Err(Error::contract("training rows need both treated and control subjects"));
        }
        let b = batch_size.clamp(2, rows.len());
        let batches = rows.len().div_ceil(b).min(t.len()).min(c.len()).max(1);
        let mut s = StratifiedBatcher {
            treated: t,
            control: c,
            batches,
            cursor: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        s.reshuffle();
        Ok(s)
    }

    fn reshuffle(&mut self) {
        self.treated.shuffle(&mut self.rng);
        self.control.shuffle(&mut self.rng);
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.batches
    }

    /// Next batch, reshuffling at each epoch boundary.
    pub fn next_batch(&mut self) -> Vec<usize> {
        if self.cursor == self.batches {
            self.cursor = 0;
            self.reshuffle();
        }
        let k = self.cursor;
        self.cursor += 1;
        let slice = |v: &[usize]| {
            let n = v.len();
            v[k * n / self.batches..(k + 1) * n / self.batches].to_vec()
        };
        let mut batch = slice(&self.treated);
        let mut control = slice(&self.control);
        // resample a member of an absent cohort
        if batch.is_empty() {
            batch.push(self.treated[self.rng.random_range(0..self.treated.len())]);
        }
        if control.is_empty() {
            control.push(self.control[self.rng.random_range(0..self.control.len())]);
        }
        batch.extend(control);
        batch
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epoch_covers_each_row_once() {
        let treated: Vec<bool> = (0..103).map(|i| i % 4 == 0).collect();
        let rows: Vec<usize> = (0..103).collect();
        let mut b = StratifiedBatcher::new(&rows, &treated, 20, 1).unwrap();
        let mut seen: Vec<usize> = (0..b.batches_per_epoch()).flat_map(|_| b.next_batch()).collect();
        seen.sort_unstable();
        assert_eq!(seen, rows);
    }

    #[test]
    fn every_batch_has_both_cohorts() {
        let treated: Vec<bool> = (0..60).map(|i| i < 3).collect();
        let rows: Vec<usize> = (0..60).collect();
        let mut b = StratifiedBatcher::new(&rows, &treated, 4, 2).unwrap();
        for _ in 0..50 {
            let batch = b.next_batch();
            assert!(batch.iter().any(|&i| treated[i]));
            assert!(batch.iter().any(|&i| !treated[i]));
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let treated: Vec<bool> = (0..50).map(|i| i % 2 == 0).collect();
        let rows: Vec<usize> = (0..50).collect();
        let mut a = StratifiedBatcher::new(&rows, &treated, 10, 5).unwrap();
        let mut b = StratifiedBatcher::new(&rows, &treated, 10, 5).unwrap();
        for _ in 0..12 {
            assert_eq!(a.next_batch(), b.next_batch());
        }
    }
}
