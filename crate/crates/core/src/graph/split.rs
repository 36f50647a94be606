use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::Dataset;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SplitError {
    #[error("need at least 10 graphs to split, got {0}")]
    TooFewGraphs(usize),
}

/// Disjoint train/valid/test index lists covering every graph.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_idx: Vec<usize>,
    pub valid_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
    pub seed: u64,
}

impl SplitSpec {
    /// 80/10/10 split of `0..n` after a seeded shuffle. Train gets
    /// `floor(0.8 n)`, valid `floor(0.1 n)`, test the remainder.
    pub fn new(n: usize, seed: u64) -> Result<Self, SplitError> {
        if n < 10 {
            return Err(SplitError::TooFewGraphs(n));
        }
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_train = n * 8 / 10;
        let n_valid = n / 10;
        let test_idx = perm.split_off(n_train + n_valid);
        let valid_idx = perm.split_off(n_train);
        Ok(Self {
            train_idx: perm,
            valid_idx,
            test_idx,
            seed,
        })
    }

    pub fn sizes(&self) -> (usize, usize, usize) {
        (
            self.train_idx.len(),
            self.valid_idx.len(),
            self.test_idx.len(),
        )
    }
}

pub fn make_split(ds: &Dataset, seed: u64) -> Result<SplitSpec, SplitError> {
    SplitSpec::new(ds.len(), seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn mutag_sized_split() {
        assert_eq!(SplitSpec::new(188, 0).unwrap().sizes(), (150, 18, 20));
    }

    #[test]
    fn exact_proportions_and_minimum() {
        assert_eq!(SplitSpec::new(10, 3).unwrap().sizes(), (8, 1, 1));
        assert_eq!(SplitSpec::new(9, 3), Err(SplitError::TooFewGraphs(9)));
    }

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(
            SplitSpec::new(50, 7).unwrap(),
            SplitSpec::new(50, 7).unwrap()
        );
        assert_ne!(
            SplitSpec::new(50, 7).unwrap().train_idx,
            SplitSpec::new(50, 8).unwrap().train_idx
        );
    }

    proptest! {
        #[test]
        fn partition_covers_everything(n in 10usize..400, seed in any::<u64>()) {
            let s = SplitSpec::new(n, seed).unwrap();
            let mut all: Vec<usize> = s.train_idx.iter()
                .chain(&s.valid_idx)
                .chain(&s.test_idx)
                .copied()
                .collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            prop_assert_eq!(s.train_idx.len(), n * 8 / 10);
            prop_assert_eq!(s.valid_idx.len(), n / 10);
        }
    }
}
