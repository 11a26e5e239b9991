use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A scalar loss and its gradient with respect to the predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub value: f64,
    pub grad: Array2<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Weight of the contrastive term.
    pub lambda: f64,
    /// Softmax temperature of the contrastive term.
    pub tau: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { lambda: 0.25, tau: 1.0 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::arg(format!("lambda must be in [0, 1], got {}", self.lambda)));
        }
        if !(self.tau > 0.0) {
            return Err(Error::arg(format!("tau must be positive, got {}", self.tau)));
        }
        Ok(())
    }
}

fn check_pair(pred: &Array2<f64>, target: &Array2<f64>) -> Result<()> {
    if pred.nrows() != target.nrows() {
        return Err(Error::Shape { axis: "rows", expected: target.nrows(), got: pred.nrows() });
    }
    if pred.ncols() != target.ncols() {
        return Err(Error::Shape { axis: "features", expected: target.ncols(), got: pred.ncols() });
    }
    Ok(())
}

fn row_norms(a: &Array2<f64>, what: &str) -> Result<Vec<f64>> {
    a.axis_iter(Axis(0))
        .enumerate()
        .map(|(i, r)| {
            let n = r.dot(&r).sqrt();
            if n > 0.0 {
                Ok(n)
            } else {
                Err(Error::arg(format!("{what} row {i} has zero norm")))
            }
        })
        .collect()
}

/// Contrastive loss over in-batch candidates: for each prediction, the
/// negative log-softmax (over all batch targets) of its cosine similarity
/// with its own target, divided by `tau`, averaged over the batch.
pub fn clip_loss(pred: &Array2<f64>, target: &Array2<f64>, tau: f64) -> Result<LossGrad> {
    check_pair(pred, target)?;
    let b = pred.nrows();
    if b == 0 {
        return Err(Error::arg("empty batch"));
    }
    let pn = row_norms(pred, "prediction")?;
    let tn = row_norms(target, "target")?;
    let mut u = pred.clone();
    for (mut r, n) in u.axis_iter_mut(Axis(0)).zip(&pn) {
        r /= *n;
    }
    let mut v = target.clone();
    for (mut r, n) in v.axis_iter_mut(Axis(0)).zip(&tn) {
        r /= *n;
    }
    let sims = u.dot(&v.t()) / tau;

    let mut value = 0.0;
    let mut d_sims = Array2::zeros((b, b));
    for i in 0..b {
        let row = sims.row(i);
        let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        let denom: f64 = row.iter().map(|&x| (x - max).exp()).sum();
        value += max + denom.ln() - row[i];
        for j in 0..b {
            let p = (row[j] - max).exp() / denom;
            d_sims[[i, j]] = (p - if i == j { 1.0 } else { 0.0 }) / b as f64;
        }
    }
    value /= b as f64;

    // Back through the similarity and the row normalisation of the predictions.
    let d_u = d_sims.dot(&v) / tau;
    let mut grad = Array2::zeros(pred.dim());
    for i in 0..b {
        let (ui, di) = (u.row(i), d_u.row(i));
        let radial = ui.dot(&di);
        let mut g = grad.row_mut(i);
        g.assign(&(&di - &(&ui * radial)));
        g /= pn[i];
    }
    Ok(LossGrad { value, grad })
}

/// Mean squared error normalised by `N·F`.
pub fn mse_loss(pred: &Array2<f64>, target: &Array2<f64>) -> Result<LossGrad> {
    check_pair(pred, target)?;
    let n = pred.len().max(1) as f64;
    let diff = pred - target;
    let value = diff.iter().map(|d| d * d).sum::<f64>() / n;
    Ok(LossGrad { value, grad: diff * (2.0 / n) })
}

/// `lambda·clip + (1 − lambda)·mse`.
pub fn combined_loss(clip: f64, mse: f64, lambda: f64) -> f64 {
    lambda * clip + (1.0 - lambda) * mse
}

/// Value and per-head gradients of the combined objective.
#[derive(Debug, Clone)]
pub struct CombinedLoss {
    pub value: f64,
    pub clip: f64,
    pub mse: f64,
    pub d_clip: Array2<f64>,
    pub d_mse: Array2<f64>,
}

pub fn combined_with_grad(
    clip_pred: &Array2<f64>,
    mse_pred: &Array2<f64>,
    target: &Array2<f64>,
    cfg: &LossConfig,
) -> Result<CombinedLoss> {
    let c = clip_loss(clip_pred, target, cfg.tau)?;
    let m = mse_loss(mse_pred, target)?;
    Ok(CombinedLoss {
        value: combined_loss(c.value, m.value, cfg.lambda),
        clip: c.value,
        mse: m.value,
        d_clip: c.grad * cfg.lambda,
        d_mse: m.grad * (1.0 - cfg.lambda),
    })
}
