//! Training loop, cross-validation driver and reports.

mod early_stop;
mod metrics;
mod report;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{batch_indices, stratified_kfold, DataError, FoldPlan, PairedDataset};
use crate::fusion::{ArchConfig, FusionError, FusionModel};
use crate::nn::{argmax_rows, softmax_xent, Adam, NnError, Tensor2};
use crate::rng::{derive_seed, stream, tag};

pub use early_stop::{EarlyStopping, StopDecision};
pub use metrics::{metrics, Metrics};
pub use report::{EpochRecord, ExperimentReport, FoldReport, REPORT_SCHEMA_VERSION};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error("non-finite {what} at epoch {epoch}, batch {batch} (max |grad| = {max_grad:e})")]
    NonFinite {
        what: &'static str,
        epoch: usize,
        batch: usize,
        max_grad: f64,
    },
    #[error("{0}")]
    Invalid(String),
}

impl From<NnError> for TrainError {
    fn from(e: NnError) -> Self {
        TrainError::Fusion(e.into())
    }
}

impl TrainError {
    /// True for failures caused by the numbers rather than the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            TrainError::NonFinite { .. }
                | TrainError::Fusion(FusionError::Nn(NnError::NonFinite { .. }))
                | TrainError::Fusion(FusionError::Ot(crate::ot::OtError::NonFiniteCost))
        )
    }
}

pub type TrainResult<T> = Result<T, TrainError>;

/// Optimisation settings. Model shape, dropout and Sinkhorn settings live in
/// [`ArchConfig`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Epochs without validation improvement before stopping; 0 disables.
    pub patience: usize,
    pub min_delta: f64,
    /// Share of each training split held out for early stopping.
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 32,
            epochs: 50,
            patience: 7,
            min_delta: 1e-4,
            validation_fraction: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> TrainResult<()> {
        let bad = |m: String| Err(TrainError::Invalid(m));
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad(format!("learning rate must be positive, got {}", self.lr));
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive".into());
        }
        if self.epochs == 0 {
            return bad("need at least one epoch".into());
        }
        if !(self.min_delta.is_finite() && self.min_delta >= 0.0) {
            return bad(format!("min-delta must be >= 0, got {}", self.min_delta));
        }
        if !(0.0..0.5).contains(&self.validation_fraction) {
            return bad(format!("validation fraction must be in [0, 0.5), got {}", self.validation_fraction));
        }
        Ok(())
    }
}

/// Splits `indices` into (train, validation), taking about `fraction` of each
/// class while always leaving at least one sample of the class for training.
pub fn validation_split(
    labels: &[usize],
    indices: &[usize],
    fraction: f64,
    seed: u64,
) -> (Vec<usize>, Vec<usize>) {
    let classes = indices.iter().map(|&i| labels[i] + 1).max().unwrap_or(0);
    let mut val = Vec::new();
    for c in 0..classes {
        let mut members: Vec<usize> = indices.iter().copied().filter(|&i| labels[i] == c).collect();
        let take = ((members.len() as f64 * fraction).round() as usize).min(members.len().saturating_sub(1));
        members.shuffle(&mut stream(seed, tag::VALIDATION, c as u64));
        val.extend_from_slice(&members[..take]);
    }
    val.sort_unstable();
    let train = indices.iter().copied().filter(|i| val.binary_search(i).is_err()).collect();
    (train, val)
}

/// Predictions and loss over a set of rows.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub loss: f64,
    pub predictions: Vec<usize>,
    pub truth: Vec<usize>,
    pub metrics: Metrics,
    /// Post-ReLU head activations, one row per evaluated sample.
    pub penultimate: Option<Tensor2>,
}

/// Evaluates `model` on `indices` in the given order, in batches of
/// `batch_size` (the transport plan depends on batch composition).
pub fn evaluate(
    model: &mut FusionModel,
    dataset: &PairedDataset,
    indices: &[usize],
    batch_size: usize,
    keep_penultimate: bool,
) -> TrainResult<Evaluation> {
    if indices.is_empty() {
        return Err(TrainError::Invalid("nothing to evaluate".into()));
    }
    let mut no_dropout = stream(0, 0, 0);
    let mut loss_sum = 0.0;
    let mut predictions = Vec::with_capacity(indices.len());
    let mut truth = Vec::with_capacity(indices.len());
    let mut penultimate = Vec::new();
    for idx in batch_indices(indices, batch_size, None) {
        let batch = dataset.gather(&idx);
        let out = model.forward(&batch.xp, &batch.xq, false, &mut no_dropout)?;
        let xent = softmax_xent(&out.logits, &batch.labels)?;
        loss_sum += xent.loss * idx.len() as f64;
        predictions.extend(argmax_rows(&out.logits));
        truth.extend_from_slice(&batch.labels);
        if keep_penultimate {
            penultimate.push(out.penultimate);
        }
    }
    let metrics = metrics(&truth, &predictions, model.arch().classes)?;
    let penultimate = if keep_penultimate {
        let refs: Vec<&Tensor2> = penultimate.iter().collect();
        Some(Tensor2::vcat(&refs)?)
    } else {
        None
    };
    Ok(Evaluation {
        loss: loss_sum / indices.len() as f64,
        predictions,
        truth,
        metrics,
        penultimate,
    })
}

/// Outcome of [`fit`].
#[derive(Clone, Debug)]
pub struct FitSummary {
    pub epochs_ran: usize,
    pub best_epoch: usize,
    pub best_loss: f64,
    pub history: Vec<EpochRecord>,
    pub train_size: usize,
    pub validation_size: usize,
}

/// Trains a fresh model on `train` rows, carving a stratified validation
/// subset for early stopping, and returns it with the best-epoch parameters.
///
/// Every random draw derives from `seed`.
pub fn fit(
    dataset: &PairedDataset,
    arch: ArchConfig,
    train: &[usize],
    config: &TrainConfig,
    seed: u64,
) -> TrainResult<(FusionModel, FitSummary)> {
    config.validate()?;
    if dataset.dims() != (arch.dim_p, arch.dim_q) {
        return Err(TrainError::Invalid(format!(
            "model expects dims {}x{}, data has {}x{}",
            arch.dim_p,
            arch.dim_q,
            dataset.dims().0,
            dataset.dims().1
        )));
    }
    if arch.classes != dataset.classes() {
        return Err(TrainError::Invalid(format!(
            "model has {} classes, data has {}",
            arch.classes,
            dataset.classes()
        )));
    }
    let (fit_rows, val_rows) = validation_split(dataset.labels(), train, config.validation_fraction, seed);
    if fit_rows.is_empty() {
        return Err(TrainError::Invalid("empty training split".into()));
    }
    let mut model = FusionModel::new(arch, derive_seed(seed, tag::INIT, 0))?;
    let adam = Adam::with_lr(config.lr);
    let mut stopper = EarlyStopping::new(config.patience, config.min_delta);
    let mut best = model.params().clone();
    let mut history = Vec::new();
    let mut epochs_ran = 0;

    for epoch in 1..=config.epochs {
        epochs_ran = epoch;
        let mut dropout_rng = stream(seed, tag::DROPOUT, epoch as u64);
        let mut loss_sum = 0.0;
        for (b, idx) in batch_indices(&fit_rows, config.batch_size, Some((seed, epoch))).iter().enumerate() {
            let batch = dataset.gather(idx);
            let numeric = |what, model: &FusionModel| TrainError::NonFinite {
                what,
                epoch,
                batch: b,
                max_grad: model.params().max_abs_grad(),
            };
            let out = match model.forward(&batch.xp, &batch.xq, true, &mut dropout_rng) {
                Ok(out) => out,
                Err(FusionError::Nn(NnError::NonFinite { .. })) => return Err(numeric("activation", &model)),
                Err(e) => return Err(e.into()),
            };
            let xent = softmax_xent(&out.logits, &batch.labels)?;
            if !xent.loss.is_finite() {
                return Err(numeric("loss", &model));
            }
            model.backward(&xent.logits_grad(&batch.labels))?;
            if !model.params().max_abs_grad().is_finite() {
                return Err(numeric("gradient", &model));
            }
            adam.step(model.params_mut());
            loss_sum += xent.loss * idx.len() as f64;
        }
        let train_loss = loss_sum / fit_rows.len() as f64;
        let validation_loss = if val_rows.is_empty() {
            None
        } else {
            Some(evaluate(&mut model, dataset, &val_rows, config.batch_size, false)?.loss)
        };
        history.push(EpochRecord {
            epoch,
            train_loss,
            validation_loss,
        });
        match stopper.observe(epoch, validation_loss.unwrap_or(train_loss)) {
            StopDecision::Improved => best = model.params().clone(),
            StopDecision::Continue => {}
            StopDecision::Stop => break,
        }
    }
    model.params_mut().copy_values_from(&best);
    Ok((
        model,
        FitSummary {
            epochs_ran,
            best_epoch: stopper.best_epoch(),
            best_loss: stopper.best_loss(),
            history,
            train_size: fit_rows.len(),
            validation_size: val_rows.len(),
        },
    ))
}

/// Trains on every fold but `fold` and scores the held-out fold.
pub fn train_one_fold(
    dataset: &PairedDataset,
    arch: ArchConfig,
    plan: &FoldPlan,
    fold: usize,
    config: &TrainConfig,
) -> TrainResult<(FusionModel, FoldReport)> {
    if fold >= plan.k {
        return Err(TrainError::Invalid(format!("fold {fold} out of range for k={}", plan.k)));
    }
    let train = plan.train_indices(fold);
    let test = plan.test_indices(fold);
    let seed = derive_seed(config.seed, tag::FOLD_RUN, fold as u64);
    let (mut model, summary) = fit(dataset, arch, &train, config, seed)?;
    let eval = evaluate(&mut model, dataset, &test, config.batch_size, false)?;
    let report = FoldReport {
        fold_index: fold,
        accuracy: eval.metrics.accuracy,
        macro_f1: eval.metrics.macro_f1,
        confusion: eval.metrics.confusion,
        test_loss: eval.loss,
        epochs_ran: summary.epochs_ran,
        best_epoch: summary.best_epoch,
        best_validation_loss: summary.best_loss,
        train_size: summary.train_size,
        validation_size: summary.validation_size,
        test_size: test.len(),
        history: summary.history,
    };
    report.check()?;
    Ok((model, report))
}

/// k-fold cross-validation. `jobs > 1` trains folds concurrently; the report
/// is identical either way.
pub fn cross_validate(
    dataset: &PairedDataset,
    arch: ArchConfig,
    config: &TrainConfig,
    k: usize,
    jobs: usize,
) -> TrainResult<ExperimentReport> {
    config.validate()?;
    arch.validate()?;
    let plan = stratified_kfold(dataset, k, config.seed)?;
    let run = |fold: usize| train_one_fold(dataset, arch, &plan, fold, config).map(|(_, r)| r);
    let folds = run_folds(k, jobs, run)?;
    ExperimentReport::new(dataset, arch, config.clone(), folds)
}

#[cfg(feature = "parallel")]
fn run_folds<F>(k: usize, jobs: usize, run: F) -> TrainResult<Vec<FoldReport>>
where
    F: Fn(usize) -> TrainResult<FoldReport> + Sync,
{
    use rayon::prelude::*;
    if jobs <= 1 {
        return (0..k).map(run).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| TrainError::Invalid(format!("cannot start worker threads: {e}")))?;
    pool.install(|| (0..k).into_par_iter().map(&run).collect())
}

#[cfg(not(feature = "parallel"))]
fn run_folds<F>(k: usize, _jobs: usize, run: F) -> TrainResult<Vec<FoldReport>>
where
    F: Fn(usize) -> TrainResult<FoldReport>,
{
    (0..k).map(run).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation_split_is_stratified_and_disjoint() {
        let labels: Vec<usize> = (0..100).map(|i| i % 2).collect();
        let idx: Vec<usize> = (0..100).collect();
        let (train, val) = validation_split(&labels, &idx, 0.1, 4);
        assert_eq!(val.len(), 10);
        assert_eq!(val.iter().filter(|&&i| labels[i] == 0).count(), 5);
        assert_eq!(train.len(), 90);
        assert!(train.iter().all(|i| !val.contains(i)));
        assert_eq!(validation_split(&labels, &idx, 0.1, 4), (train, val));
    }

    #[test]
    fn validation_split_keeps_a_training_sample() {
        let labels = vec![0, 1];
        let (train, val) = validation_split(&labels, &[0, 1], 0.49, 0);
        assert_eq!(train, vec![0, 1]);
        assert!(val.is_empty());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = [
            TrainConfig { lr: 0.0, ..Default::default() },
            TrainConfig { batch_size: 0, ..Default::default() },
            TrainConfig { epochs: 0, ..Default::default() },
            TrainConfig { validation_fraction: 0.7, ..Default::default() },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }
}
