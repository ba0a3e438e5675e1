use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::dataset::Dataset;

pub const FOLDS: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SplitError {
    #[error("fold {fold} out of range (0..{FOLDS})")]
    InvalidFold { fold: usize },
    #[error("insufficient drugs for {mode} split: {reason}")]
    InsufficientDrugs { mode: SplitMode, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SplitMode {
    /// Random sample-level partition at 7:1:2.
    Transductive,
    /// Test pairs hold exactly one drug never seen in training.
    InductiveS1,
    /// Test pairs hold two drugs never seen in training.
    InductiveS2,
}

impl fmt::Display for SplitMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitMode::Transductive => "transductive",
            SplitMode::InductiveS1 => "s1",
            SplitMode::InductiveS2 => "s2",
        })
    }
}

impl FromStr for SplitMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "transductive" => Ok(SplitMode::Transductive),
            "s1" | "inductive-s1" => Ok(SplitMode::InductiveS1),
            "s2" | "inductive-s2" => Ok(SplitMode::InductiveS2),
            other => Err(format!("unknown split mode {other:?}")),
        }
    }
}

/// Sample indices of one fold's train/validation/test partition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub mode: SplitMode,
    pub fold: usize,
    pub seed: u64,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Nearest integer to `num / den`, halves rounding up.
fn round_div(num: usize, den: usize) -> usize {
    (2 * num + den) / (2 * den)
}

pub fn make_splits(
    dataset: &Dataset,
    mode: SplitMode,
    fold: usize,
    seed: u64,
) -> Result<SplitPlan, SplitError> {
    if fold >= FOLDS {
        return Err(SplitError::InvalidFold { fold });
    }
    let (train, val, test) = match mode {
        SplitMode::Transductive => transductive(dataset.len(), fold, seed),
        SplitMode::InductiveS1 | SplitMode::InductiveS2 => inductive(dataset, mode, fold, seed)?,
    };
    Ok(SplitPlan {
        mode,
        fold,
        seed,
        train,
        val,
        test,
    })
}

/// One shuffled order shared by all folds; fold `k` tests on the `k`-th fifth
/// of it, validates on the samples right after, and trains on the rest. The
/// validation size is chosen so that all three sizes sit within one sample of
/// 7:1:2.
fn transductive(n: usize, fold: usize, seed: u64) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let start = round_div(fold * n, FOLDS);
    let end = round_div((fold + 1) * n, FOLDS);
    let test_len = end - start;
    // centre of the window where both val and train stay within ±1 of target
    let val_len = (0.2 * n as f64 - 0.5 * test_len as f64).round().max(0.0) as usize;
    let val_len = val_len.min(n - test_len);

    let mut test: Vec<usize> = order[start..end].to_vec();
    let mut val: Vec<usize> = (0..val_len).map(|i| order[(end + i) % n]).collect();
    let taken: HashSet<usize> = test.iter().chain(&val).copied().collect();
    let mut train: Vec<usize> = (0..n).filter(|i| !taken.contains(i)).collect();
    test.sort_unstable();
    val.sort_unstable();
    train.sort_unstable();
    (train, val, test)
}

/// Drugs are partitioned first: a test-unseen group, a validation-unseen
/// group and the seen remainder. Training keeps pairs of two seen drugs; test
/// and validation keep pairs matching the cold-start pattern of `mode`, with
/// the seen partner required to actually occur in a training pair.
fn inductive(
    dataset: &Dataset,
    mode: SplitMode,
    fold: usize,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>), SplitError> {
    let m = dataset.drugs.len();
    let min_group = if mode == SplitMode::InductiveS2 { 2 } else { 1 };
    let test_drugs = round_div(m, FOLDS).max(min_group);
    let val_drugs = round_div(m, 10).max(min_group);
    let insufficient = |reason: String| SplitError::InsufficientDrugs { mode, reason };
    if test_drugs + val_drugs + 2 > m {
        return Err(insufficient(format!(
            "{m} drugs cannot hold {test_drugs} test, {val_drugs} validation and 2 seen drugs"
        )));
    }

    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let start = round_div(fold * m, FOLDS);
    let mut group = vec![Group::Seen; m];
    for i in 0..test_drugs {
        group[order[(start + i) % m]] = Group::Test;
    }
    for i in 0..val_drugs {
        group[order[(start + test_drugs + i) % m]] = Group::Val;
    }

    let train: Vec<usize> = (0..dataset.len())
        .filter(|&s| {
            let (a, b) = dataset.pairs[s];
            group[a] == Group::Seen && group[b] == Group::Seen
        })
        .collect();
    let mut in_train = vec![false; m];
    for &s in &train {
        let (a, b) = dataset.pairs[s];
        in_train[a] = true;
        in_train[b] = true;
    }

    let select = |target: Group| -> Vec<usize> {
        (0..dataset.len())
            .filter(|&s| {
                let (a, b) = dataset.pairs[s];
                match mode {
                    SplitMode::InductiveS2 => group[a] == target && group[b] == target,
                    _ => (group[a] == target && in_train[b]) || (group[b] == target && in_train[a]),
                }
            })
            .collect()
    };
    let test = select(Group::Test);
    let val = select(Group::Val);
    if train.is_empty() {
        return Err(insufficient("no training pairs between seen drugs".into()));
    }
    if test.is_empty() {
        return Err(insufficient(format!(
            "no {mode} test pairs for fold {fold}"
        )));
    }
    Ok((train, val, test))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Group {
    Seen,
    Val,
    Test,
}
