//! Source log-loss, target entropy loss and their weighted sum
//! `L = L_s + lambda * L_t`, all on class probabilities.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Probabilities are clamped to this before taking logarithms.
pub const PROB_FLOOR: f64 = 1e-12;
const ROW_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub lambda: f64,
    pub class_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossValue {
    pub l_source: f64,
    pub l_target: f64,
    pub total: f64,
}

fn check_rows(probs: &Tensor) -> Result<(usize, usize)> {
    if probs.shape().len() != 2 {
        return Err(Error::Dimension(format!(
            "probabilities must be 2-D, got {:?}",
            probs.shape()
        )));
    }
    let (n, k) = (probs.shape()[0], probs.shape()[1]);
    for i in 0..n {
        let row = probs.row(i);
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOL || row.iter().any(|&p| p < 0.0) {
            return Err(Error::Normalization { row: i, sum });
        }
    }
    Ok((n, k))
}

/// Mean negative log-probability of the true labels and its gradient with
/// respect to the probabilities.
pub fn source_log_loss(probs: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (n, k) = check_rows(probs)?;
    if labels.len() != n {
        return Err(Error::Dimension(format!("{} labels for {n} rows", labels.len())));
    }
    let mut grad = Tensor::zeros(vec![n, k]);
    if n == 0 {
        return Ok((0.0, grad));
    }
    let mut value = 0.0;
    let inv_n = 1.0 / n as f64;
    for (i, &y) in labels.iter().enumerate() {
        if y >= k {
            return Err(Error::Index {
                what: "class label",
                index: y,
                limit: k,
            });
        }
        let p = probs.get2(i, y).max(PROB_FLOOR);
        value -= p.ln();
        grad.data_mut()[i * k + y] = -inv_n / p;
    }
    Ok((value * inv_n, grad))
}

/// Mean row entropy `-(1/m) sum_i sum_y p_iy ln p_iy` and its gradient.
pub fn target_entropy_loss(probs: &Tensor) -> Result<(f64, Tensor)> {
    let (m, k) = check_rows(probs)?;
    let mut grad = Tensor::zeros(vec![m, k]);
    if m == 0 {
        return Ok((0.0, grad));
    }
    let inv_m = 1.0 / m as f64;
    let mut value = 0.0;
    for (g, &p) in grad.data_mut().iter_mut().zip(probs.data()) {
        // 0 ln 0 = 0; the floor only guards the logarithm
        let lp = p.max(PROB_FLOOR).ln();
        value -= p * lp;
        *g = -inv_m * (lp + 1.0);
    }
    Ok((value * inv_m, grad))
}

/// Combined objective over a batch whose first `n_source` rows are source
/// samples. The returned gradient follows the batch row layout.
pub fn combined_loss(
    probs: &Tensor,
    n_source: usize,
    source_labels: &[usize],
    cfg: &LossConfig,
) -> Result<(LossValue, Tensor)> {
    if n_source > probs.batch() {
        return Err(Error::Layout(format!(
            "{n_source} source rows in a batch of {}",
            probs.batch()
        )));
    }
    if cfg.lambda < 0.0 {
        return Err(Error::Config(format!("lambda must be >= 0, got {}", cfg.lambda)));
    }
    let src = probs.rows(0..n_source)?;
    let tgt = probs.rows(n_source..probs.batch())?;
    let (l_source, g_source) = source_log_loss(&src, source_labels)?;
    let (l_target, g_target) = target_entropy_loss(&tgt)?;
    let g_target = g_target.scale(cfg.lambda)?;
    Ok((
        LossValue {
            l_source,
            l_target,
            total: l_source + cfg.lambda * l_target,
        },
        g_source.concat_batch(&g_target)?,
    ))
}
