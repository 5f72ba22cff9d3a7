use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Minimum samples per class for a split.
pub const MIN_PER_CLASS: usize = 10;

/// Stratified 9:1 split of sample indices. Each class contributes
/// `⌊n_c/10⌋` test samples chosen by a seeded shuffle. Both lists are
/// returned sorted.
pub fn split_train_test(labels: &[usize], seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let mut train = Vec::with_capacity(labels.len());
    let mut test = Vec::with_capacity(labels.len() / 10 + 1);
    for (class, mut idx) in by_class {
        if idx.len() < MIN_PER_CLASS {
            return Err(Error::Dataset(format!(
                "class {class} has {} samples, at least {MIN_PER_CLASS} are needed for a 9:1 split",
                idx.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(class as u64);
        idx.shuffle(&mut rng);
        let n_test = idx.len() / 10;
        test.extend_from_slice(&idx[..n_test]);
        train.extend_from_slice(&idx[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}
