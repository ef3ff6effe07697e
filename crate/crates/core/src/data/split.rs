use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Fold {
    /// Ascending.
    pub train: Vec<usize>,
    /// In shuffled order.
    pub val: Vec<usize>,
}

/// Seeded shuffle of `0..n` cut into `k` contiguous chunks whose sizes differ
/// by at most one; chunk `i` is the validation set of fold `i`.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<Vec<Fold>> {
    if k < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {k}")));
    }
    if n < k {
        return Err(Error::Config(format!("{n} samples cannot fill {k} folds")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        let val = idx[start..start + len].to_vec();
        let mut train: Vec<usize> = idx[..start].iter().chain(&idx[start + len..]).copied().collect();
        train.sort_unstable();
        folds.push(Fold { train, val });
        start += len;
    }
    Ok(folds)
}
