//! Patient-level k-fold partitioning.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Indices into the patient list for one fold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Shuffles `n` patient indices with `seed` and deals them into `k` test
/// partitions of near-equal size (the first `n % k` folds get one extra).
pub fn kfold_indices(n: usize, k: usize, seed: u64) -> Result<Vec<Fold>> {
    if k < 2 {
        return Err(Error::Invalid(format!("k must be >= 2, got {k}")));
    }
    if n < k {
        return Err(Error::Invalid(format!("{k} folds need at least {k} patients, got {n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let base = n / k;
    let extra = n % k;
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        let mut test = order[start..start + len].to_vec();
        test.sort_unstable();
        let mut train: Vec<usize> = order[..start].iter().chain(&order[start + len..]).copied().collect();
        train.sort_unstable();
        folds.push(Fold { train, test });
        start += len;
    }
    Ok(folds)
}

/// Splits a list of items into `(train, test)` borrowed partitions.
pub fn kfold_split<T>(items: &[T], k: usize, seed: u64) -> Result<Vec<(Vec<&T>, Vec<&T>)>> {
    Ok(kfold_indices(items.len(), k, seed)?
        .into_iter()
        .map(|f| {
            (
                f.train.iter().map(|&i| &items[i]).collect(),
                f.test.iter().map(|&i| &items[i]).collect(),
            )
        })
        .collect())
}
