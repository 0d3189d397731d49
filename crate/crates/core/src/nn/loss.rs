//! Softmax and soft-label cross-entropy.
//!
//! Teacher outputs are used as targets directly; there is no temperature
//! scaling (equivalently, temperature is fixed at 1).

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Added inside the logarithm of the cross-entropy.
pub const LOG_EPS: f64 = 1e-12;

/// Row sums of probability inputs must be within this of 1.
pub const STOCHASTIC_TOL: f64 = 1e-6;

/// Max-shifted softmax of one logit row.
pub fn softmax_row(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for p in &mut out {
        *p /= sum;
    }
    out
}

/// Row-wise softmax of a `[B, K]` logit tensor.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    if logits.shape().len() != 2 {
        return Err(Error::input(format!(
            "softmax expects [B, K], got {:?}",
            logits.shape()
        )));
    }
    let mut values = Vec::with_capacity(logits.len());
    for b in 0..logits.rows() {
        values.extend(softmax_row(logits.row(b)));
    }
    Tensor::new(logits.shape().to_vec(), values)
}

/// Checks that `row` is a probability vector.
pub fn check_stochastic(row: &[f64], what: &str) -> Result<()> {
    if row.iter().any(|&p| !p.is_finite() || p < 0.0) {
        return Err(Error::input(format!(
            "{what}: entries must be finite and >= 0"
        )));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > STOCHASTIC_TOL {
        return Err(Error::input(format!("{what}: row sums to {sum}, not 1")));
    }
    Ok(())
}

/// `-sum_y target[y] * ln(pred[y] + eps)` for one sample.
pub fn cross_entropy_row(pred: &[f64], target: &[f64]) -> f64 {
    pred.iter()
        .zip(target)
        .map(|(&p, &t)| -t * (p + LOG_EPS).ln())
        .sum()
}

/// Mean soft-label cross-entropy over a batch of `[B, K]` probability rows.
pub fn soft_cross_entropy(pred: &Tensor, target: &Tensor) -> Result<f64> {
    if pred.shape() != target.shape() || pred.shape().len() != 2 {
        return Err(Error::input(format!(
            "prediction {:?} and target {:?} must both be [B, K]",
            pred.shape(),
            target.shape()
        )));
    }
    let b = pred.rows();
    if b == 0 {
        return Err(Error::input("empty batch"));
    }
    let mut total = 0.0;
    for i in 0..b {
        check_stochastic(pred.row(i), &format!("prediction row {i}"))?;
        check_stochastic(target.row(i), &format!("target row {i}"))?;
        total += cross_entropy_row(pred.row(i), target.row(i));
    }
    Ok(total / b as f64)
}

/// Shannon entropy (natural log) of a probability vector.
pub fn entropy(p: &[f64]) -> f64 {
    p.iter().filter(|&&v| v > 0.0).map(|&v| -v * v.ln()).sum()
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}
