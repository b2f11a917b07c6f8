use super::{expect_rank, NnError, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct LossOutput {
    /// Mean loss over the batch.
    pub loss: f64,
    /// Gradient with respect to the logits.
    pub grad: Tensor,
}

/// Mean softmax cross-entropy over `[N, K]` logits, stabilized by
/// subtracting each row's maximum.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<LossOutput> {
    expect_rank("softmax_cross_entropy", logits.shape(), 2)?;
    let (n, k) = (logits.shape()[0], logits.shape()[1]);
    if k < 2 {
        return Err(NnError::TooFewClasses(k));
    }
    if labels.len() != n {
        return Err(NnError::LabelCount {
            expected: n,
            actual: labels.len(),
        });
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= k) {
        return Err(NnError::LabelOutOfRange { label, classes: k });
    }
    let mut grad = vec![0.0; n * k];
    let mut total = 0.0;
    for ((row, g), &label) in logits
        .data()
        .chunks_exact(k)
        .zip(grad.chunks_exact_mut(k))
        .zip(labels)
    {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|&z| (z - max).exp()).sum();
        let log_sum = sum.ln();
        total += -(row[label] - max - log_sum);
        for (gj, &z) in g.iter_mut().zip(row) {
            *gj = (z - max).exp() / sum / n as f64;
        }
        g[label] -= 1.0 / n as f64;
    }
    Ok(LossOutput {
        loss: total / n as f64,
        grad: Tensor::from_vec(&[n, k], grad)?,
    })
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean binary cross-entropy on `[N, 1]` logits with labels in {0, 1},
/// computed as `max(z,0) - z·y + ln(1 + e^{-|z|})`.
pub fn sigmoid_bce(logits: &Tensor, labels: &[usize]) -> Result<LossOutput> {
    expect_rank("sigmoid_bce", logits.shape(), 2)?;
    let n = logits.shape()[0];
    if logits.shape()[1] != 1 {
        return Err(NnError::ChannelMismatch {
            layer: "sigmoid_bce".into(),
            expected: 1,
            actual: logits.shape()[1],
        });
    }
    if labels.len() != n {
        return Err(NnError::LabelCount {
            expected: n,
            actual: labels.len(),
        });
    }
    if let Some(&label) = labels.iter().find(|&&l| l > 1) {
        return Err(NnError::LabelOutOfRange { label, classes: 2 });
    }
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(n);
    for (&z, &label) in logits.data().iter().zip(labels) {
        let y = label as f64;
        total += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
        grad.push((sigmoid(z) - y) / n as f64);
    }
    Ok(LossOutput {
        loss: total / n as f64,
        grad: Tensor::from_vec(&[n, 1], grad)?,
    })
}
