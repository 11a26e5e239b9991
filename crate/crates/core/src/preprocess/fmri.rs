use ndarray::{s, Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use super::{EpochSet, PreprocessReport};
use crate::dataset::Sampling;
use crate::error::{Error, Result};

/// A stimulus onset in an fMRI run, in seconds from the first volume.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimedEvent {
    pub onset_s: f64,
    pub image_id: usize,
    pub trial_id: usize,
}

/// One fMRI run: `vertices × TRs` plus its stimulus onsets.
#[derive(Debug, Clone, PartialEq)]
pub struct FmriRun {
    pub data: Array2<f64>,
    pub tr_seconds: f64,
    pub events: Vec<TimedEvent>,
}

/// Orthonormal DCT-II drift regressors (`n_trs × K`), constant column first,
/// holding every cosine whose period is at least `cutoff_period` seconds.
pub fn cosine_drift_basis(n_trs: usize, tr_seconds: f64, cutoff_period: f64) -> Array2<f64> {
    let n = n_trs as f64;
    let order = ((2.0 * n * tr_seconds / cutoff_period).floor() as usize).min(n_trs - 1);
    let mut basis = Array2::zeros((n_trs, order + 1));
    basis.column_mut(0).fill(1.0 / n.sqrt());
    let norm = (2.0 / n).sqrt();
    for k in 1..=order {
        for t in 0..n_trs {
            basis[[t, k]] =
                norm * (std::f64::consts::PI / n * (t as f64 + 0.5) * k as f64).cos();
        }
    }
    basis
}

/// Removes the least-squares cosine drift from every vertex, then z-scores
/// each vertex over the run (population variance).
pub fn fmri_detrend_zscore(
    series: &Array2<f64>,
    tr_seconds: f64,
    cutoff_period: f64,
    report: &mut PreprocessReport,
) -> Result<Array2<f64>> {
    let n_trs = series.ncols();
    if n_trs < 2 {
        return Err(Error::contract(format!("detrending needs at least 2 TRs, got {n_trs}")));
    }
    if !(cutoff_period > 2.0 * tr_seconds) {
        return Err(Error::arg(format!(
            "drift cutoff {cutoff_period} s must exceed twice the TR ({tr_seconds} s)"
        )));
    }
    let basis = cosine_drift_basis(n_trs, tr_seconds, cutoff_period);
    let mut out = series.clone();
    for (v, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
        let coef = basis.t().dot(&row);
        let fitted = basis.dot(&coef);
        row -= &fitted;
        let mean = row.sum() / n_trs as f64;
        let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n_trs as f64;
        // Residual energy far below round-off of the input counts as flat.
        let scale = series.row(v).iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1.0);
        if var.sqrt() <= 1e-12 * scale {
            log::warn!("vertex {v} has zero variance after detrending");
            report.zero_variance_vertices.push(v);
            row.fill(0.0);
        } else {
            let sd = var.sqrt();
            row.mapv_inplace(|x| (x - mean) / sd);
        }
    }
    Ok(out)
}

/// Cuts fixed-length epochs of `round((t1 - t0) / TR)` volumes starting at
/// the first volume acquired at or after `onset + t0`.
pub fn fmri_epoch(run: &FmriRun, window: (f64, f64), report: &mut PreprocessReport) -> Result<EpochSet> {
    let (t0, t1) = window;
    let tr = run.tr_seconds;
    let n_t = ((t1 - t0) / tr).round() as usize;
    if n_t < 1 {
        return Err(Error::arg(format!("window ({t0}, {t1}) spans less than one TR of {tr} s")));
    }
    let n_trs = run.data.ncols();
    let mut starts = Vec::new();
    for ev in &run.events {
        let start = ((ev.onset_s + t0) / tr - 1e-9).ceil();
        if start < 0.0 || start as usize + n_t > n_trs {
            report.drop_trial(ev.trial_id, "event too close to run boundary");
            continue;
        }
        starts.push((start as usize, ev.trial_id));
    }
    let mut data = Array3::zeros((starts.len(), run.data.nrows(), n_t));
    for (i, &(start, _)) in starts.iter().enumerate() {
        data.index_axis_mut(Axis(0), i)
            .assign(&run.data.slice(s![.., start..start + n_t]));
    }
    Ok(EpochSet {
        data,
        window,
        sampling: Sampling::TrSeconds(tr),
        trial_ids: starts.into_iter().map(|(_, id)| id).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(v: usize, n: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((v, n), |_| rng.random::<f64>() - 0.5)
    }

    #[test]
    fn drift_basis_is_orthonormal() {
        let b = cosine_drift_basis(200, 1.5, 128.0);
        assert_eq!(b.ncols(), 5);
        let g = b.t().dot(&b);
        for i in 0..g.nrows() {
            for j in 0..g.ncols() {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((g[[i, j]] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn basis_vector_is_annihilated() {
        let b = cosine_drift_basis(150, 2.0, 128.0);
        let mut series = Array2::zeros((1, 150));
        series.row_mut(0).assign(&b.column(2).mapv(|v| 3.0 * v + 1.0));
        let mut report = PreprocessReport::default();
        let out = fmri_detrend_zscore(&series, 2.0, 128.0, &mut report).unwrap();
        assert!(out.iter().all(|v| v.abs() < 1e-8));
        assert_eq!(report.zero_variance_vertices, vec![0]);
    }

    #[test]
    fn white_noise_is_standardised_and_orthogonal_to_drift() {
        let series = noise(4, 300, 1);
        let out = fmri_detrend_zscore(&series, 1.5, 128.0, &mut PreprocessReport::default()).unwrap();
        let basis = cosine_drift_basis(300, 1.5, 128.0);
        for row in out.axis_iter(Axis(0)) {
            let mean = row.mean().unwrap();
            let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 300.0;
            assert!(mean.abs() < 1e-9);
            assert!((var - 1.0).abs() < 1e-9);
            for col in basis.axis_iter(Axis(1)) {
                assert!(col.dot(&row).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn detrend_is_idempotent() {
        let mut series = noise(3, 120, 2);
        for t in 0..120 {
            series[[0, t]] += 0.05 * t as f64;
        }
        let mut r = PreprocessReport::default();
        let once = fmri_detrend_zscore(&series, 2.0, 100.0, &mut r).unwrap();
        let twice = fmri_detrend_zscore(&once, 2.0, 100.0, &mut r).unwrap();
        let diff = (&once - &twice).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(diff < 1e-6);
    }

    #[test]
    fn detrend_rejects_bad_inputs() {
        let mut r = PreprocessReport::default();
        assert!(fmri_detrend_zscore(&Array2::zeros((1, 1)), 2.0, 128.0, &mut r).is_err());
        assert!(fmri_detrend_zscore(&noise(1, 10, 0), 2.0, 3.0, &mut r).is_err());
    }

    fn run(tr: f64, n: usize, onsets: &[f64]) -> FmriRun {
        FmriRun {
            data: Array2::from_shape_fn((2, n), |(v, t)| (v * 1000 + t) as f64),
            tr_seconds: tr,
            events: onsets
                .iter()
                .enumerate()
                .map(|(i, &o)| TimedEvent {
                    onset_s: o,
                    image_id: i,
                    trial_id: i,
                })
                .collect(),
        }
    }

    #[test]
    fn published_windows_span_five_trs() {
        for (tr, window) in [(1.5, (3.0, 10.5)), (2.0, (3.0, 13.0)), (1.6, (3.0, 11.0))] {
            let r = run(tr, 100, &[0.0, 4.0 * tr]);
            let e = fmri_epoch(&r, window, &mut PreprocessReport::default()).unwrap();
            assert_eq!(e.timepoints(), 5, "TR {tr}");
            // First volume at or after onset + 3 s.
            let first = e.data[[0, 0, 0]] as usize;
            assert_eq!(first, (3.0 / tr - 1e-9).ceil() as usize);
        }
    }

    #[test]
    fn late_events_are_dropped() {
        let r = run(2.0, 10, &[0.0, 14.0]);
        let mut report = PreprocessReport::default();
        let e = fmri_epoch(&r, (3.0, 13.0), &mut report).unwrap();
        assert_eq!(e.trial_ids, vec![0]);
        assert_eq!(report.dropped_trials.len(), 1);
    }
}
