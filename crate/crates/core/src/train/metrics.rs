use serde::{Deserialize, Serialize};

use super::{TrainError, TrainResult};

/// Accuracy, macro-F1 and the confusion matrix (rows = truth, cols = prediction).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub confusion: Vec<Vec<u64>>,
}

/// Per-class F1 with zero-division treated as 0. Classes with no true and no
/// predicted samples are left out of the macro average.
pub fn metrics(truth: &[usize], predicted: &[usize], classes: usize) -> TrainResult<Metrics> {
    if truth.len() != predicted.len() {
        return Err(TrainError::Invalid(format!(
            "{} true labels vs {} predictions",
            truth.len(),
            predicted.len()
        )));
    }
    if truth.is_empty() {
        return Err(TrainError::Invalid("no samples to score".into()));
    }
    let mut confusion = vec![vec![0u64; classes]; classes];
    for (&t, &p) in truth.iter().zip(predicted) {
        if t >= classes || p >= classes {
            return Err(TrainError::Invalid(format!("label {} out of range for {classes} classes", t.max(p))));
        }
        confusion[t][p] += 1;
    }
    let correct: u64 = (0..classes).map(|c| confusion[c][c]).sum();
    let accuracy = correct as f64 / truth.len() as f64;

    let mut f1_sum = 0.0;
    let mut counted = 0usize;
    for c in 0..classes {
        let tp = confusion[c][c] as f64;
        let actual: u64 = confusion[c].iter().sum();
        let predicted_c: u64 = confusion.iter().map(|row| row[c]).sum();
        if actual == 0 && predicted_c == 0 {
            continue;
        }
        counted += 1;
        if tp > 0.0 {
            let precision = tp / predicted_c as f64;
            let recall = tp / actual as f64;
            f1_sum += 2.0 * precision * recall / (precision + recall);
        }
    }
    Ok(Metrics {
        accuracy,
        macro_f1: f1_sum / counted as f64,
        confusion,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_prediction() {
        let y = [0, 1, 2, 2, 1];
        let m = metrics(&y, &y, 3).unwrap();
        assert_eq!((m.accuracy, m.macro_f1), (1.0, 1.0));
        assert_eq!(m.confusion, vec![vec![1, 0, 0], vec![0, 2, 0], vec![0, 0, 2]]);
    }

    #[test]
    fn hand_computed_case() {
        let m = metrics(&[0, 0, 1, 1], &[0, 1, 1, 1], 2).unwrap();
        assert_eq!(m.accuracy, 0.75);
        assert!((m.macro_f1 - (2.0 / 3.0 + 0.8) / 2.0).abs() < 1e-12);
        assert!((m.macro_f1 - 0.7333).abs() < 1e-4);
    }

    #[test]
    fn single_class_predictions() {
        let m = metrics(&[0, 0, 1, 1], &[0, 0, 0, 0], 2).unwrap();
        assert_eq!(m.accuracy, 0.5);
        assert!((m.macro_f1 - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn unused_class_is_skipped() {
        // class 2 never appears on either side
        let m = metrics(&[0, 1], &[0, 1], 3).unwrap();
        assert_eq!(m.macro_f1, 1.0);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(metrics(&[0, 1], &[0], 2).is_err());
        assert!(metrics(&[], &[], 2).is_err());
        assert!(metrics(&[0, 3], &[0, 1], 2).is_err());
    }
}
