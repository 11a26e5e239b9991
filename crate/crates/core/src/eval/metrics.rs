use ndarray::{Array2, ArrayView1, Axis};

use crate::error::{Error, Result};

/// Pearson correlation of two equally long series, `None` when either has
/// zero variance.
pub fn pearson(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.sum() / n;
    let mb = b.sum() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b.iter()) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        None
    } else {
        Some(sab / (saa * sbb).sqrt())
    }
}

/// Correlation of each feature across rows; zero-variance features give 0.
pub fn pearson_per_feature(pred: &Array2<f64>, target: &Array2<f64>) -> Result<Vec<f64>> {
    if pred.dim() != target.dim() {
        return Err(Error::contract(format!(
            "prediction shape {:?} differs from target shape {:?}",
            pred.dim(),
            target.dim()
        )));
    }
    if pred.nrows() < 3 {
        return Err(Error::arg(format!(
            "feature-wise correlation needs at least 3 rows, got {}",
            pred.nrows()
        )));
    }
    let mut degenerate = 0;
    let rs = pred
        .axis_iter(Axis(1))
        .zip(target.axis_iter(Axis(1)))
        .map(|(p, t)| {
            pearson(p, t).unwrap_or_else(|| {
                degenerate += 1;
                0.0
            })
        })
        .collect();
    if degenerate > 0 {
        log::warn!("{degenerate} feature(s) with zero variance counted as correlation 0");
    }
    Ok(rs)
}

/// Mean over features of the correlation between predicted and true values
/// across the `M` rows.
pub fn pearson_featurewise(pred: &Array2<f64>, target: &Array2<f64>) -> Result<f64> {
    let rs = pearson_per_feature(pred, target)?;
    Ok(rs.iter().sum::<f64>() / rs.len().max(1) as f64)
}
