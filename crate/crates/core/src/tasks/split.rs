use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of character classes in an Omniglot-layout pool.
pub const OMNIGLOT_CLASSES: usize = 1623;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitPart {
    Train,
    Val,
    Test,
}

/// Disjoint meta-train / meta-validation / meta-test class indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetaSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl MetaSplit {
    pub fn part(&self, part: SplitPart) -> &[usize] {
        match part {
            SplitPart::Train => &self.train,
            SplitPart::Val => &self.val,
            SplitPart::Test => &self.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitSpec {
    Counts { train: usize, val: usize, test: usize },
    /// Train and validation fractions; the remainder is meta-test.
    Fractions { train: f64, val: f64 },
}

impl SplitSpec {
    /// 1200 : 423 with 220 of the 1200 held out for validation.
    pub fn omniglot() -> Self {
        SplitSpec::Counts { train: 980, val: 220, test: 423 }
    }

    /// The Omniglot split for 1623-class pools, 60/20/20 otherwise.
    pub fn default_for(pool_size: usize) -> Self {
        if pool_size == OMNIGLOT_CLASSES {
            SplitSpec::omniglot()
        } else {
            SplitSpec::Fractions { train: 0.6, val: 0.2 }
        }
    }

    fn counts(&self, pool_size: usize) -> Result<(usize, usize, usize)> {
        match *self {
            SplitSpec::Counts { train, val, test } => Ok((train, val, test)),
            SplitSpec::Fractions { train, val } => {
                if !(0.0..=1.0).contains(&train) || !(0.0..=1.0).contains(&val) || train + val > 1.0 {
                    return Err(Error::Invalid(format!("bad split fractions {train}, {val}")));
                }
                let t = (train * pool_size as f64).round() as usize;
                let v = (val * pool_size as f64).round() as usize;
                let v = v.min(pool_size - t.min(pool_size));
                Ok((t, v, pool_size - t - v))
            }
        }
    }
}

/// Shuffles class indices with `seed` and cuts them into the three parts.
pub fn split_classes(pool_size: usize, spec: &SplitSpec, seed: u64) -> Result<MetaSplit> {
    let (train, val, test) = spec.counts(pool_size)?;
    let needed = train + val + test;
    if needed > pool_size {
        return Err(Error::NotEnoughClasses { needed, available: pool_size });
    }
    let mut order: Vec<usize> = (0..pool_size).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(MetaSplit {
        train: order[..train].to_vec(),
        val: order[train..train + val].to_vec(),
        test: order[train + val..needed].to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn omniglot_default() {
        let s = split_classes(1623, &SplitSpec::default_for(1623), 0).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (980, 220, 423));
    }

    #[test]
    fn counts_are_disjoint() {
        let s = split_classes(10, &SplitSpec::Counts { train: 6, val: 2, test: 2 }, 3).unwrap();
        let all: HashSet<_> = s.train.iter().chain(&s.val).chain(&s.test).collect();
        assert_eq!(all.len(), 10);
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (6, 2, 2));
    }

    #[test]
    fn deterministic() {
        let spec = SplitSpec::default_for(50);
        assert_eq!(split_classes(50, &spec, 9).unwrap(), split_classes(50, &spec, 9).unwrap());
    }

    #[test]
    fn insufficient_classes() {
        assert!(split_classes(5, &SplitSpec::Counts { train: 3, val: 2, test: 1 }, 0).is_err());
    }

    #[test]
    fn fractions_cover_pool() {
        let s = split_classes(200, &SplitSpec::default_for(200), 1).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (120, 40, 40));
    }
}
