use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FOLDS: usize = 5;
pub const PAPER_SPEAKERS: usize = 50;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fold {
    pub index: usize,
    pub train_validation: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FoldPlan {
    pub seed: u64,
    pub folds: Vec<Fold>,
    /// False when the speaker count differs from 50 and the split is proportional.
    pub paper_split: bool,
}

/// Seeded speaker-independent partition into five test groups. Group sizes
/// differ by at most one when the speakers do not divide evenly.
pub fn plan_folds(speakers: &[String], seed: u64) -> Result<FoldPlan> {
    plan_k_folds(speakers, FOLDS, seed)
}

pub fn plan_k_folds(speakers: &[String], k: usize, seed: u64) -> Result<FoldPlan> {
    let unique: BTreeSet<&String> = speakers.iter().collect();
    if unique.len() != speakers.len() {
        return Err(Error::Config("duplicate speaker ids".into()));
    }
    if k < 2 || speakers.len() < k {
        return Err(Error::Config(format!(
            "cannot form {k} folds from {} speakers",
            speakers.len()
        )));
    }
    let mut order = speakers.to_vec();
    order.sort();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let base = order.len() / k;
    let extra = order.len() % k;
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for index in 0..k {
        let size = base + usize::from(index < extra);
        let test: Vec<String> = order[start..start + size].to_vec();
        let train_validation = order.iter().filter(|s| !test.contains(s)).cloned().collect();
        folds.push(Fold {
            index,
            train_validation,
            test,
        });
        start += size;
    }
    let paper_split = k == FOLDS && speakers.len() == PAPER_SPEAKERS;
    if !paper_split {
        log::warn!("{} speakers in {k} folds: non-paper split", speakers.len());
    }
    Ok(FoldPlan {
        seed,
        folds,
        paper_split,
    })
}

/// Seeded train/validation split of a fold's training speakers
/// (40 speakers give 32/8).
pub fn split_validation(speakers: &[String], fraction: f64, seed: u64) -> (Vec<String>, Vec<String>) {
    let mut order = speakers.to_vec();
    order.sort();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = if fraction <= 0.0 || order.len() < 2 {
        0
    } else {
        ((order.len() as f64 * fraction).round() as usize).clamp(1, order.len() - 1)
    };
    let val = order.split_off(order.len() - n_val);
    (order, val)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("spk{i:02}")).collect()
    }

    #[test]
    fn paper_plan() {
        let plan = plan_folds(&ids(50), 7).unwrap();
        assert!(plan.paper_split);
        assert_eq!(plan.folds.len(), 5);
        for f in &plan.folds {
            assert_eq!(f.test.len(), 10);
            assert_eq!(f.train_validation.len(), 40);
        }
        assert_eq!(plan, plan_folds(&ids(50), 7).unwrap());
        let (tr, va) = split_validation(&plan.folds[0].train_validation, 0.2, 1);
        assert_eq!((tr.len(), va.len()), (32, 8));
    }

    #[test]
    fn forty_nine_speakers() {
        let plan = plan_folds(&ids(49), 7).unwrap();
        assert!(!plan.paper_split);
        let sizes: Vec<usize> = plan.folds.iter().map(|f| f.test.len()).collect();
        assert_eq!(sizes, vec![10, 10, 10, 10, 9]);
    }

    #[test]
    fn duplicates_rejected() {
        let mut s = ids(10);
        s.push("spk03".into());
        assert!(matches!(plan_folds(&s, 1), Err(Error::Config(_))));
    }

    proptest! {
        #[test]
        fn folds_partition_speakers(n in 5usize..80, seed in any::<u64>()) {
            let speakers = ids(n);
            let plan = plan_folds(&speakers, seed).unwrap();
            let mut all: Vec<String> = plan.folds.iter().flat_map(|f| f.test.clone()).collect();
            all.sort();
            prop_assert_eq!(&all, &speakers);
            for f in &plan.folds {
                prop_assert!(f.test.iter().all(|s| !f.train_validation.contains(s)));
                prop_assert_eq!(f.test.len() + f.train_validation.len(), n);
            }
        }
    }
}
