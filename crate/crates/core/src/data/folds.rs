use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{DataError, DataResult, PairedDataset};
use crate::rng::{stream, tag};

/// Assignment of every dataset row to one of `k` folds.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub fold_assignments: Vec<usize>,
}

impl FoldPlan {
    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        self.fold_assignments
            .iter()
            .enumerate()
            .filter(|&(_, &f)| f == fold)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        self.fold_assignments
            .iter()
            .enumerate()
            .filter(|&(_, &f)| f != fold)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Stratified k-fold over `labels`: each class is shuffled and dealt round-robin,
/// starting where the previous class stopped so fold sizes stay balanced too.
pub fn stratified_kfold_labels(
    labels: &[usize],
    class_names: &[String],
    k: usize,
    seed: u64,
) -> DataResult<FoldPlan> {
    if k < 2 {
        return Err(DataError::InvalidArgument(format!("need at least 2 folds, got {k}")));
    }
    let mut assignment = vec![usize::MAX; labels.len()];
    let mut offset = 0;
    for (class, name) in class_names.iter().enumerate() {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.is_empty() {
            continue;
        }
        if members.len() < k {
            return Err(DataError::TooFewSamples {
                class: name.clone(),
                count: members.len(),
                folds: k,
            });
        }
        members.shuffle(&mut stream(seed, tag::FOLDS, class as u64));
        for (j, &i) in members.iter().enumerate() {
            assignment[i] = (offset + j) % k;
        }
        offset = (offset + members.len()) % k;
    }
    Ok(FoldPlan {
        k,
        seed,
        fold_assignments: assignment,
    })
}

pub fn stratified_kfold(dataset: &PairedDataset, k: usize, seed: u64) -> DataResult<FoldPlan> {
    stratified_kfold_labels(dataset.labels(), dataset.class_names(), k, seed)
}

/// Splits `subset` into batches. `shuffle = Some((seed, epoch))` permutes with a
/// per-epoch stream; `None` keeps the given order. The last batch may be short.
pub fn batch_indices(
    subset: &[usize],
    batch_size: usize,
    shuffle: Option<(u64, usize)>,
) -> Vec<Vec<usize>> {
    let batch_size = batch_size.max(1);
    let mut order = subset.to_vec();
    if let Some((seed, epoch)) = shuffle {
        order.shuffle(&mut stream(seed, tag::SHUFFLE, epoch as u64));
    }
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}
