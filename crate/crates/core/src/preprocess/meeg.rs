use ndarray::{s, Array3, Axis};

use super::{ContinuousRecording, EpochSet, PreprocessReport, CLIP_BOUND};
use crate::dataset::Sampling;
use crate::error::{Error, Result};

/// Quantile of sorted data with linear interpolation between order
/// statistics (position `(n - 1) * q`).
pub fn quantile_linear(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = (n - 1) as f64 * q;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Per channel: subtract the median, divide by the interquartile range, then
/// clamp to `[-20, 20]`. Statistics are taken over the whole recording.
pub fn robust_scale_clip(
    rec: &ContinuousRecording,
    report: &mut PreprocessReport,
) -> Result<ContinuousRecording> {
    if rec.samples() < 4 {
        return Err(Error::contract(format!(
            "robust scaling needs at least 4 samples per channel, got {}",
            rec.samples()
        )));
    }
    let mut out = rec.clone();
    for (c, mut row) in out.data.axis_iter_mut(Axis(0)).enumerate() {
        let mut sorted = row.to_vec();
        sorted.sort_by(f64::total_cmp);
        let median = quantile_linear(&sorted, 0.5);
        let mut iqr = quantile_linear(&sorted, 0.75) - quantile_linear(&sorted, 0.25);
        if iqr == 0.0 {
            log::warn!("channel {c} has zero interquartile range; dividing by 1");
            report.zero_iqr_channels.push(c);
            iqr = 1.0;
        }
        row.mapv_inplace(|v| ((v - median) / iqr).clamp(-CLIP_BOUND, CLIP_BOUND));
    }
    Ok(out)
}

/// Cuts a `S × T` epoch around every event, `T = round((t1 - t0) * rate)`.
///
/// With a baseline `(b0, b1)`, the per-channel mean over the onset-relative
/// interval `[b0, b1)` is subtracted from each trial. Events whose window or
/// baseline falls outside the recording are dropped and reported.
pub fn epoch(
    rec: &ContinuousRecording,
    window: (f64, f64),
    baseline: Option<(f64, f64)>,
    report: &mut PreprocessReport,
) -> Result<EpochSet> {
    let (t0, t1) = window;
    if !(t0 < t1) {
        return Err(Error::arg(format!("epoch window ({t0}, {t1}) is empty")));
    }
    let rate = rec.sampling_rate;
    let n_t = ((t1 - t0) * rate).round() as usize;
    let offset = (t0 * rate).round() as isize;
    let base = match baseline {
        Some((b0, b1)) => {
            let lo = (b0 * rate).round() as isize;
            let hi = (b1 * rate).round() as isize;
            if hi <= lo {
                return Err(Error::arg(format!(
                    "baseline ({b0}, {b1}) holds no samples at {rate} Hz"
                )));
            }
            Some((lo, hi))
        }
        None => None,
    };

    let n_samples = rec.samples() as isize;
    let mut kept = Vec::new();
    for ev in &rec.events {
        let onset = ev.sample as isize;
        let start = onset + offset;
        if start < 0 || start + n_t as isize > n_samples {
            report.drop_trial(ev.trial_id, "epoch window exceeds recording");
            continue;
        }
        if let Some((lo, hi)) = base {
            if onset + lo < 0 || onset + hi > n_samples {
                report.drop_trial(ev.trial_id, "baseline interval exceeds recording");
                continue;
            }
        }
        kept.push(*ev);
    }

    let mut data = Array3::zeros((kept.len(), rec.channels(), n_t));
    for (i, ev) in kept.iter().enumerate() {
        let onset = ev.sample as isize;
        let start = (onset + offset) as usize;
        let mut trial = data.index_axis_mut(Axis(0), i);
        trial.assign(&rec.data.slice(s![.., start..start + n_t]));
        if let Some((lo, hi)) = base {
            let b = rec.data.slice(s![.., (onset + lo) as usize..(onset + hi) as usize]);
            let means = b.mean_axis(Axis(1)).expect("non-empty baseline");
            for (mut row, m) in trial.axis_iter_mut(Axis(0)).zip(means.iter()) {
                row -= *m;
            }
        }
    }
    Ok(EpochSet {
        data,
        window,
        sampling: Sampling::Hz(rate),
        trial_ids: kept.iter().map(|e| e.trial_id).collect(),
    })
}
