use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurize::{ImplicitIndex, ImplicitMode};
use crate::types::Dataset;

/// Disjoint test blocks that together cover every record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub n_records: usize,
    pub seed: u64,
    /// Sorted record indices of each fold's test set.
    pub test_sets: Vec<Vec<usize>>,
}

/// Shuffles `0..n_records` with `seed` and cuts the permutation into
/// `n_folds` blocks whose sizes differ by at most one.
pub fn make_folds(n_records: usize, n_folds: usize, seed: u64) -> Result<FoldPlan> {
    if n_folds < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {n_folds}")));
    }
    if n_folds > n_records {
        return Err(Error::Config(format!(
            "{n_folds} folds requested for {n_records} records"
        )));
    }
    let mut perm: Vec<usize> = (0..n_records).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let base = n_records / n_folds;
    let extra = n_records % n_folds;
    let mut test_sets = Vec::with_capacity(n_folds);
    let mut start = 0;
    for f in 0..n_folds {
        let len = base + usize::from(f < extra);
        let mut set = perm[start..start + len].to_vec();
        set.sort_unstable();
        test_sets.push(set);
        start += len;
    }
    Ok(FoldPlan {
        n_records,
        seed,
        test_sets,
    })
}

impl FoldPlan {
    pub fn n_folds(&self) -> usize {
        self.test_sets.len()
    }

    pub fn test_indices(&self, fold: usize) -> &[usize] {
        &self.test_sets[fold]
    }

    /// Every record not in `fold`'s test set, ascending.
    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        let test = &self.test_sets[fold];
        let mut out = Vec::with_capacity(self.n_records - test.len());
        let mut t = test.iter().peekable();
        for i in 0..self.n_records {
            if t.peek() == Some(&&i) {
                t.next();
            } else {
                out.push(i);
            }
        }
        out
    }
}

/// Result of checking one fold for train/test leakage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FoldAudit {
    /// Record indices present in both the training and test sets.
    pub index_overlap: usize,
    /// Records covered by neither set.
    pub uncovered: usize,
    /// Test-only `(user, item)` pairs that appear in the implicit sets.
    pub leaked_identities: usize,
}

impl FoldAudit {
    pub fn is_clean(&self) -> bool {
        self.index_overlap == 0 && self.uncovered == 0 && self.leaked_identities == 0
    }
}

/// Checks a fold's index sets and, in strict mode, that the implicit index
/// holds no interaction that exists only in the test set.
pub fn audit_fold(
    data: &Dataset,
    train_idx: &[usize],
    test_idx: &[usize],
    implicit: &ImplicitIndex,
    mode: ImplicitMode,
) -> FoldAudit {
    let test: HashSet<usize> = test_idx.iter().copied().collect();
    let train: HashSet<usize> = train_idx.iter().copied().collect();
    let index_overlap = train.intersection(&test).count();
    let uncovered = (0..data.len())
        .filter(|i| !train.contains(i) && !test.contains(i))
        .count();
    let leaked_identities = match mode {
        ImplicitMode::Prize => 0,
        ImplicitMode::Strict => {
            let records = data.records();
            let train_pairs: HashSet<(i64, i64)> = train_idx
                .iter()
                .map(|&i| (records[i].user_id, records[i].item_id))
                .collect();
            test_idx
                .iter()
                .map(|&i| (records[i].user_id, records[i].item_id))
                .filter(|p| !train_pairs.contains(p))
                .filter(|&(u, i)| {
                    implicit.contains(u, i)
                        || implicit.users_of_item.get(&i).is_some_and(|s| s.contains(&u))
                })
                .count()
        }
    };
    FoldAudit {
        index_overlap,
        uncovered,
        leaked_identities,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featurize::build_implicit_index;
    use crate::types::RatingRecord;

    #[test]
    fn singleton_folds() {
        let plan = make_folds(10, 10, 3).unwrap();
        let mut all: Vec<usize> = plan.test_sets.iter().flatten().copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert!(plan.test_sets.iter().all(|s| s.len() == 1));
    }

    #[test]
    fn balanced_sizes() {
        let plan = make_folds(10, 3, 0).unwrap();
        let mut sizes: Vec<usize> = plan.test_sets.iter().map(Vec::len).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![3, 3, 4]);
    }

    #[test]
    fn seeded() {
        assert_eq!(make_folds(100, 10, 5).unwrap(), make_folds(100, 10, 5).unwrap());
        assert_ne!(make_folds(100, 10, 5).unwrap(), make_folds(100, 10, 6).unwrap());
    }

    #[test]
    fn errors() {
        assert!(make_folds(3, 4, 0).is_err());
        assert!(make_folds(3, 1, 0).is_err());
    }

    #[test]
    fn train_is_complement() {
        let plan = make_folds(23, 4, 1).unwrap();
        for f in 0..4 {
            let train = plan.train_indices(f);
            assert_eq!(train.len() + plan.test_indices(f).len(), 23);
            assert!(train.iter().all(|i| !plan.test_indices(f).contains(i)));
        }
    }

    #[test]
    fn audit_detects_leaks() {
        let data = Dataset::new(vec![
            RatingRecord::new(1, 1, 1.0, 0),
            RatingRecord::new(1, 2, 1.0, 0),
            RatingRecord::new(2, 1, 1.0, 0),
        ]);
        let train = data.subset(&[0, 2]);
        let strict = build_implicit_index(&train);
        let clean = audit_fold(&data, &[0, 2], &[1], &strict, ImplicitMode::Strict);
        assert!(clean.is_clean());

        let leaky = build_implicit_index(&data);
        let bad = audit_fold(&data, &[0, 2], &[1], &leaky, ImplicitMode::Strict);
        assert_eq!(bad.leaked_identities, 1);

        let overlap = audit_fold(&data, &[0, 1, 2], &[1], &strict, ImplicitMode::Strict);
        assert_eq!(overlap.index_overlap, 1);
    }
}
