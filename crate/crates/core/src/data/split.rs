use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::rng::rng_from_seed;
use crate::{Error, Result};

/// Train/validation/test fractions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitRatios {
    pub fn new(train: f64, val: f64, test: f64) -> Result<Self> {
        let r = Self { train, val, test };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|p| !p.is_finite() || *p <= 0.0) {
            return Err(Error::config("ratios", "every ratio must be positive"));
        }
        let s: f64 = parts.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::config("ratios", format!("ratios sum to {s}, expected 1")));
        }
        Ok(())
    }

    /// Largest-remainder apportionment of `n` items.
    pub fn sizes(&self, n: usize) -> [usize; 3] {
        let shares = [self.train, self.val, self.test].map(|r| r * n as f64);
        let mut sizes = shares.map(|s| s.floor() as usize);
        let mut left = n - sizes.iter().sum::<usize>();
        let mut order = [0usize, 1, 2];
        // Stable sort keeps ties in train/val/test order.
        order.sort_by(|&a, &b| {
            let fa = shares[a] - shares[a].floor();
            let fb = shares[b] - shares[b].floor();
            fb.partial_cmp(&fa).unwrap_or(std::cmp::Ordering::Equal)
        });
        for &k in order.iter().cycle() {
            if left == 0 {
                break;
            }
            sizes[k] += 1;
            left -= 1;
        }
        sizes
    }
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.6,
            val: 0.1,
            test: 0.3,
        }
    }
}

/// Shuffles `0..n` under `seed` and cuts it into three ascending index lists.
pub fn split_indices(n: usize, ratios: SplitRatios, seed: u64) -> Result<[Vec<usize>; 3]> {
    ratios.validate()?;
    if n == 0 {
        return Err(Error::Empty("cannot split an empty dataset".into()));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_from_seed(seed));
    let [a, b, _] = ratios.sizes(n);
    let mut train = idx[..a].to_vec();
    let mut val = idx[a..a + b].to_vec();
    let mut test = idx[a + b..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok([train, val, test])
}

pub fn split_train_val_test(ds: &Dataset, ratios: SplitRatios, seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    let [a, b, c] = split_indices(ds.len(), ratios, seed)?;
    Ok((ds.subset(&a), ds.subset(&b), ds.subset(&c)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{test_record, Provenance};
    use proptest::prelude::*;

    fn dataset(n: usize) -> Dataset {
        let recs = (0..n)
            .map(|i| test_record(&format!("t{i}"), "c", "m", "2019-01-01 00:00:00", i % 7 == 0))
            .collect();
        Dataset::new(recs, Provenance::Synthetic, None)
    }

    #[test]
    fn sixty_ten_thirty() {
        let (a, b, c) = split_train_val_test(&dataset(100), SplitRatios::default(), 1).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (60, 10, 30));
    }

    #[test]
    fn deterministic_under_seed() {
        let ds = dataset(57);
        let x = split_train_val_test(&ds, SplitRatios::default(), 9).unwrap();
        let y = split_train_val_test(&ds, SplitRatios::default(), 9).unwrap();
        assert_eq!(x, y);
        let z = split_train_val_test(&ds, SplitRatios::default(), 10).unwrap();
        assert_ne!(x.0, z.0);
    }

    #[test]
    fn invalid_ratios_are_rejected() {
        assert!(SplitRatios::new(0.5, 0.5, 0.5).is_err());
        assert!(SplitRatios::new(1.0, 0.0, 0.0).is_err());
        let bad = SplitRatios {
            train: 0.5,
            val: 0.5,
            test: 0.5,
        };
        assert!(split_indices(10, bad, 0).is_err());
    }

    #[test]
    fn empty_dataset_is_an_error() {
        assert!(matches!(
            split_train_val_test(&dataset(0), SplitRatios::default(), 0),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn largest_remainder_rounding() {
        let r = SplitRatios::default();
        assert_eq!(r.sizes(7), [4, 1, 2]);
        assert_eq!(r.sizes(1), [1, 0, 0]);
        let thirds = SplitRatios {
            train: 1.0 / 3.0,
            val: 1.0 / 3.0,
            test: 1.0 / 3.0,
        };
        assert_eq!(thirds.sizes(10), [4, 3, 3]);
    }

    proptest! {
        #[test]
        fn splits_partition_the_input(n in 1usize..300, seed in any::<u64>()) {
            let [a, b, c] = split_indices(n, SplitRatios::default(), seed).unwrap();
            let mut all: Vec<usize> = a.iter().chain(&b).chain(&c).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        }
    }
}
