//! Feature tables, pairing, fold plans, batching and synthetic data.

mod folds;
mod pfv;
mod synth;

use std::collections::HashMap;

use thiserror::Error;

use crate::nn::Tensor2;

pub use folds::{batch_indices, stratified_kfold, stratified_kfold_labels, FoldPlan};
pub use pfv::{format_feature_table, load_feature_table, parse_feature_table, write_feature_table};
pub use synth::{synth_generate, SynthConfig};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("line {line}: expected {expected} values, found {got}")]
    RaggedRow {
        line: usize,
        expected: usize,
        got: usize,
    },
    #[error("line {line}, value {column}: `{text}` is not a number")]
    BadNumber {
        line: usize,
        column: usize,
        text: String,
    },
    #[error("line {line}, value {column}: non-finite value")]
    NonFinite { line: usize, column: usize },
    #[error("line {line}: empty utterance id")]
    EmptyId { line: usize },
    #[error("duplicate utterance id `{0}`")]
    DuplicateId(String),
    #[error("line {line}: label `{label}` is not declared in the header")]
    UnknownLabel { line: usize, label: String },
    #[error("table has no rows")]
    EmptyTable,
    #[error("invalid table: {0}")]
    InvalidTable(String),
    #[error("utterance `{id}` appears only in the {present_in} table")]
    IdMismatch { id: String, present_in: &'static str },
    #[error("utterance `{id}` has label `{label_p}` in one table and `{label_q}` in the other")]
    LabelDisagreement {
        id: String,
        label_p: String,
        label_q: String,
    },
    #[error("tables declare different class lists: {p:?} vs {q:?}")]
    ClassListMismatch { p: Vec<String>, q: Vec<String> },
    #[error("class `{class}` has {count} samples, fewer than {folds} folds")]
    TooFewSamples {
        class: String,
        count: usize,
        folds: usize,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type DataResult<T> = Result<T, DataError>;

/// One PTM's pooled embeddings for a dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTable {
    ptm_name: String,
    class_names: Vec<String>,
    utterance_ids: Vec<String>,
    labels: Vec<usize>,
    matrix: Tensor2,
}

impl FeatureTable {
    pub fn new(
        ptm_name: String,
        class_names: Vec<String>,
        utterance_ids: Vec<String>,
        labels: Vec<usize>,
        matrix: Tensor2,
    ) -> DataResult<Self> {
        let n = utterance_ids.len();
        if n == 0 {
            return Err(DataError::EmptyTable);
        }
        if labels.len() != n || matrix.rows() != n {
            return Err(DataError::InvalidTable(format!(
                "{n} ids, {} labels, {} rows",
                labels.len(),
                matrix.rows()
            )));
        }
        if matrix.cols() == 0 {
            return Err(DataError::InvalidTable("zero feature dimension".into()));
        }
        if class_names.len() < 2 {
            return Err(DataError::InvalidTable("need at least two classes".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_names.len()) {
            return Err(DataError::InvalidTable(format!("label id {bad} out of range")));
        }
        if !matrix.is_finite() {
            return Err(DataError::InvalidTable("non-finite feature value".into()));
        }
        let mut seen = std::collections::HashSet::with_capacity(n);
        for id in &utterance_ids {
            if id.is_empty() || id.contains([',', '\n', '\r']) {
                return Err(DataError::InvalidTable(format!("unusable utterance id {id:?}")));
            }
            if !seen.insert(id.as_str()) {
                return Err(DataError::DuplicateId(id.clone()));
            }
        }
        for name in class_names.iter().chain(std::iter::once(&ptm_name)) {
            if name.contains([',', ';', '\n', '\r', '=']) {
                return Err(DataError::InvalidTable(format!("unusable name {name:?}")));
            }
        }
        Ok(Self {
            ptm_name,
            class_names,
            utterance_ids,
            labels,
            matrix,
        })
    }

    pub fn ptm_name(&self) -> &str {
        &self.ptm_name
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn utterance_ids(&self) -> &[String] {
        &self.utterance_ids
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn matrix(&self) -> &Tensor2 {
        &self.matrix
    }

    pub fn len(&self) -> usize {
        self.utterance_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterance_ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    /// Per-class sample counts.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    fn sorted_by_id(&self) -> Self {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| self.utterance_ids[a].cmp(&self.utterance_ids[b]));
        Self {
            ptm_name: self.ptm_name.clone(),
            class_names: self.class_names.clone(),
            utterance_ids: order.iter().map(|&i| self.utterance_ids[i].clone()).collect(),
            labels: order.iter().map(|&i| self.labels[i]).collect(),
            matrix: self.matrix.select_rows(&order),
        }
    }
}

/// Two tables aligned row-by-row on utterance id, in sorted id order.
#[derive(Clone, Debug, PartialEq)]
pub struct PairedDataset {
    p: FeatureTable,
    q: FeatureTable,
}

/// Aligns two tables by utterance id.
pub fn pair(table_p: &FeatureTable, table_q: &FeatureTable) -> DataResult<PairedDataset> {
    if table_p.class_names != table_q.class_names {
        return Err(DataError::ClassListMismatch {
            p: table_p.class_names.clone(),
            q: table_q.class_names.clone(),
        });
    }
    let p = table_p.sorted_by_id();
    let q = table_q.sorted_by_id();
    let q_index: HashMap<&str, usize> = q
        .utterance_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    for (i, id) in p.utterance_ids.iter().enumerate() {
        let j = *q_index.get(id.as_str()).ok_or_else(|| DataError::IdMismatch {
            id: id.clone(),
            present_in: "first",
        })?;
        if p.labels[i] != q.labels[j] {
            return Err(DataError::LabelDisagreement {
                id: id.clone(),
                label_p: p.class_names[p.labels[i]].clone(),
                label_q: q.class_names[q.labels[j]].clone(),
            });
        }
    }
    if q.len() != p.len() {
        let p_ids: std::collections::HashSet<&str> =
            p.utterance_ids.iter().map(String::as_str).collect();
        let extra = q
            .utterance_ids
            .iter()
            .find(|id| !p_ids.contains(id.as_str()))
            .expect("q has more ids than p");
        return Err(DataError::IdMismatch {
            id: extra.clone(),
            present_in: "second",
        });
    }
    Ok(PairedDataset { p, q })
}

impl PairedDataset {
    pub fn table_p(&self) -> &FeatureTable {
        &self.p
    }

    pub fn table_q(&self) -> &FeatureTable {
        &self.q
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    pub fn labels(&self) -> &[usize] {
        &self.p.labels
    }

    pub fn classes(&self) -> usize {
        self.p.classes()
    }

    pub fn class_names(&self) -> &[String] {
        &self.p.class_names
    }

    pub fn utterance_ids(&self) -> &[String] {
        &self.p.utterance_ids
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.p.dim(), self.q.dim())
    }

    /// Gathers rows `indices` into `(X_p, X_q, labels)`.
    pub fn gather(&self, indices: &[usize]) -> Batch {
        Batch {
            xp: self.p.matrix.select_rows(indices),
            xq: self.q.matrix.select_rows(indices),
            labels: indices.iter().map(|&i| self.p.labels[i]).collect(),
            indices: indices.to_vec(),
        }
    }

    /// Batches in training (shuffled per epoch) or evaluation (dataset) order.
    pub fn batches<'a>(
        &'a self,
        subset: &'a [usize],
        batch_size: usize,
        shuffle: Option<(u64, usize)>,
    ) -> impl Iterator<Item = Batch> + 'a {
        batch_indices(subset, batch_size, shuffle)
            .into_iter()
            .map(move |idx| self.gather(&idx))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub xp: Tensor2,
    pub xq: Tensor2,
    pub labels: Vec<usize>,
    /// Dataset row of each batch row.
    pub indices: Vec<usize>,
}
