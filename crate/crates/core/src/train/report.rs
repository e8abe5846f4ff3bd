use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{TrainConfig, TrainError, TrainResult};
use crate::data::PairedDataset;
use crate::fusion::{ArchConfig, FusionKind};

/// Bumped whenever the JSON layout changes.
pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold_index: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub confusion: Vec<Vec<u64>>,
    pub test_loss: f64,
    pub epochs_ran: usize,
    pub best_epoch: usize,
    pub best_validation_loss: f64,
    pub train_size: usize,
    pub validation_size: usize,
    pub test_size: usize,
    pub history: Vec<EpochRecord>,
}

impl FoldReport {
    /// Confusion total equals the test size and accuracy equals its normalised trace.
    pub fn check(&self) -> TrainResult<()> {
        let total: u64 = self.confusion.iter().flatten().sum();
        let trace: u64 = (0..self.confusion.len()).map(|c| self.confusion[c][c]).sum();
        if total != self.test_size as u64 {
            return Err(TrainError::Invalid(format!(
                "fold {}: confusion total {total} != test size {}",
                self.fold_index, self.test_size
            )));
        }
        if (trace as f64 / total as f64 - self.accuracy).abs() > 1e-12 {
            return Err(TrainError::Invalid(format!(
                "fold {}: accuracy disagrees with confusion trace",
                self.fold_index
            )));
        }
        if self.best_epoch > self.epochs_ran {
            return Err(TrainError::Invalid(format!(
                "fold {}: best epoch after last epoch",
                self.fold_index
            )));
        }
        Ok(())
    }
}

/// Cross-validation results. Contains no timing, so identical runs serialise
/// to identical bytes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub fusion: FusionKind,
    pub ptm_a: String,
    pub ptm_b: String,
    pub class_names: Vec<String>,
    pub samples: usize,
    pub param_count: usize,
    pub arch: ArchConfig,
    pub config: TrainConfig,
    pub folds: Vec<FoldReport>,
    pub mean_accuracy: f64,
    pub mean_macro_f1: f64,
    pub std_accuracy: f64,
    pub std_macro_f1: f64,
    /// Sum of the per-fold confusion matrices.
    pub confusion: Vec<Vec<u64>>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl ExperimentReport {
    /// Aggregates fold reports, which may arrive in any order.
    pub fn new(
        dataset: &PairedDataset,
        arch: ArchConfig,
        config: TrainConfig,
        mut folds: Vec<FoldReport>,
    ) -> TrainResult<Self> {
        if folds.is_empty() {
            return Err(TrainError::Invalid("no folds to report".into()));
        }
        folds.sort_by_key(|f| f.fold_index);
        for f in &folds {
            f.check()?;
        }
        let k = dataset.classes();
        let mut confusion = vec![vec![0u64; k]; k];
        for f in &folds {
            for (row, frow) in confusion.iter_mut().zip(&f.confusion) {
                for (c, v) in row.iter_mut().zip(frow) {
                    *c += v;
                }
            }
        }
        let accs: Vec<f64> = folds.iter().map(|f| f.accuracy).collect();
        let f1s: Vec<f64> = folds.iter().map(|f| f.macro_f1).collect();
        let (mean_accuracy, std_accuracy) = mean_std(&accs);
        let (mean_macro_f1, std_macro_f1) = mean_std(&f1s);
        Ok(Self {
            schema_version: REPORT_SCHEMA_VERSION,
            fusion: arch.fusion,
            ptm_a: dataset.table_p().ptm_name().to_string(),
            ptm_b: dataset.table_q().ptm_name().to_string(),
            class_names: dataset.class_names().to_vec(),
            samples: dataset.len(),
            param_count: arch.param_count()?,
            arch,
            config,
            folds,
            mean_accuracy,
            mean_macro_f1,
            std_accuracy,
            std_macro_f1,
            confusion,
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report is always serialisable");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> TrainResult<Self> {
        serde_json::from_str(text).map_err(|e| TrainError::Invalid(format!("bad report JSON: {e}")))
    }

    /// One row per fold plus a mean row.
    pub fn folds_csv(&self) -> String {
        let mut out = String::from("fold,accuracy,macro_f1,test_loss,epochs_ran,best_epoch,test_size\n");
        for f in &self.folds {
            let _ = writeln!(
                out,
                "{},{:?},{:?},{:?},{},{},{}",
                f.fold_index, f.accuracy, f.macro_f1, f.test_loss, f.epochs_ran, f.best_epoch, f.test_size
            );
        }
        let _ = writeln!(out, "mean,{:?},{:?},,,,", self.mean_accuracy, self.mean_macro_f1);
        out
    }

    /// Summed confusion matrix with class names on both axes.
    pub fn confusion_csv(&self) -> String {
        let mut out = String::from("truth\\predicted");
        for name in &self.class_names {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for (name, row) in self.class_names.iter().zip(&self.confusion) {
            out.push_str(name);
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }

    /// Console summary in percent with two decimals.
    pub fn summary_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "fold   acc(%)   f1(%)   epochs  best");
        for f in &self.folds {
            let _ = writeln!(
                out,
                "{:>4}  {:>7.2}  {:>6.2}  {:>6}  {:>4}",
                f.fold_index,
                100.0 * f.accuracy,
                100.0 * f.macro_f1,
                f.epochs_ran,
                f.best_epoch
            );
        }
        let _ = writeln!(
            out,
            "mean  {:>7.2}  {:>6.2}   ({} {}+{}, {} params)",
            100.0 * self.mean_accuracy,
            100.0 * self.mean_macro_f1,
            self.fusion,
            self.ptm_a,
            self.ptm_b,
            self.param_count
        );
        out
    }
}
