use super::{NnError, NnResult, Tensor2};

/// Result of a softmax + cross-entropy evaluation.
#[derive(Clone, Debug)]
pub struct SoftmaxXent {
    /// Mean negative log-likelihood over the batch.
    pub loss: f64,
    pub probs: Tensor2,
}

/// Row-wise softmax followed by mean cross-entropy against `labels`.
///
/// Each row is shifted by its maximum before exponentiation, so large logits
/// do not overflow.
pub fn softmax_xent(logits: &Tensor2, labels: &[usize]) -> NnResult<SoftmaxXent> {
    let (batch, classes) = logits.shape();
    if labels.len() != batch {
        return Err(NnError::shape(
            "softmax_xent",
            format!("{} labels for {batch} rows", labels.len()),
        ));
    }
    if batch == 0 {
        return Err(NnError::shape("softmax_xent", "empty batch".into()));
    }
    logits.ensure_finite("softmax_xent")?;
    let mut probs = Tensor2::zeros(batch, classes);
    let mut total = 0.0;
    for (r, &label) in labels.iter().enumerate() {
        if label >= classes {
            return Err(NnError::LabelOutOfRange { label, classes });
        }
        let row = logits.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let out = probs.row_mut(r);
        let mut z = 0.0;
        for (p, &v) in out.iter_mut().zip(row) {
            *p = (v - max).exp();
            z += *p;
        }
        for p in out.iter_mut() {
            *p /= z;
        }
        total += z.ln() - (row[label] - max);
    }
    Ok(SoftmaxXent {
        loss: total / batch as f64,
        probs,
    })
}

impl SoftmaxXent {
    /// Gradient of the mean loss with respect to the logits.
    pub fn logits_grad(&self, labels: &[usize]) -> Tensor2 {
        let batch = self.probs.rows() as f64;
        let mut g = self.probs.clone();
        for (r, &label) in labels.iter().enumerate() {
            let row = g.row_mut(r);
            row[label] -= 1.0;
            for v in row.iter_mut() {
                *v /= batch;
            }
        }
        g
    }
}

/// Index of the largest entry of each row (first on ties).
pub fn argmax_rows(t: &Tensor2) -> Vec<usize> {
    (0..t.rows())
        .map(|r| {
            let row = t.row(r);
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}
