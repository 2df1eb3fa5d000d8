//! Stratified 3/1/1 train/validation/test splits.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

/// Disjoint, exhaustive index sets, each sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

fn part_sizes(n: usize) -> [usize; 3] {
    let train = (0.6 * n as f64).round() as usize;
    let val = ((0.2 * n as f64).round() as usize).min(n - train);
    [train, val, n - train - val]
}

/// Splits `n = treated.len()` subjects 60/20/20, stratified by treatment.
///
/// Global part sizes are exact; each part's treated count is within one
/// subject of its proportional share.
pub fn split_3_1_1(treated: &[bool], seed: u64) -> Result<Split> {
    let n = treated.len();
    if n < 5 {
        return Err(Error::contract(format!("cannot split {n} subjects 3/1/1")));
    }
    let sizes = part_sizes(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t: Vec<usize> = (0..n).filter(|&i| treated[i]).collect();
    let mut c: Vec<usize> = (0..n).filter(|&i| !treated[i]).collect();
    t.shuffle(&mut rng);
    c.shuffle(&mut rng);
    let share = t.len() as f64 / n as f64;
    let mut t_sizes = [0usize; 3];
    let mut left = t.len();
    for k in 0..2 {
        let want = (sizes[k] as f64 * share).round() as usize;
        // keep both the treated and the control allocation feasible
        let c_left = c.len() - (sizes[..k].iter().sum::<usize>() - t_sizes[..k].iter().sum::<usize>());
        let lo = sizes[k]
            .saturating_sub(c_left)
            .max(left.saturating_sub(sizes[k + 1..].iter().sum::<usize>()));
        t_sizes[k] = want.clamp(lo, left.min(sizes[k]));
        left -= t_sizes[k];
    }
    t_sizes[2] = left;
    let (mut ti, mut ci) = (0, 0);
    let mut parts: Vec<Vec<usize>> = Vec::with_capacity(3);
    for k in 0..3 {
        let nt = t_sizes[k];
        let nc = sizes[k] - nt;
        let mut part: Vec<usize> = t[ti..ti + nt].iter().chain(&c[ci..ci + nc]).copied().collect();
        ti += nt;
        ci += nc;
        part.sort_unstable();
        parts.push(part);
    }
    let test = parts.pop().unwrap();
    let validation = parts.pop().unwrap();
    let train = parts.pop().unwrap();
    Ok(Split {
        train,
        validation,
        test,
    })
}

impl Split {
    /// Writes `train.idx`, `validation.idx` and `test.idx` into `dir`, one
    /// subject index per line.
    pub fn write_index_files(&self, dir: &Path) -> Result<()> {
        for (name, idx) in [("train", &self.train), ("validation", &self.validation), ("test", &self.test)] {
            let path = dir.join(format!("{name}.idx"));
            let text: String = idx.iter().map(|i| format!("{i}\n")).collect();
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }

    pub fn read_index_files(dir: &Path) -> Result<Self> {
        let read = |name: &str| -> Result<Vec<usize>> {
            let path = dir.join(format!("{name}.idx"));
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            text.lines()
                .filter(|l| !l.trim().is_empty())
                .map(|l| {
                    l.trim().parse().map_err(|_| Error::Format {
                        path: path.clone(),
                        message: format!("`{l}` is not an index"),
                    })
                })
                .collect()
        };
        Ok(Split {
            train: read("train")?,
            validation: read("validation")?,
            test: read("test")?,
        })
    }
}
