use ndarray::{s, Axis};
use serde::{Deserialize, Serialize};

use super::EpochSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum WindowMode {
    Full,
    /// Consecutive non-overlapping windows of `width_s` seconds.
    Sliding { width_s: f64 },
    /// Windows starting at `start_s` and growing by `step_s` until the end
    /// of the epoch.
    Growing { start_s: f64, step_s: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowLabel {
    pub start_s: f64,
    pub end_s: f64,
}

/// Splits epochs into labelled time windows.
pub fn window_views(epochs: &EpochSet, mode: WindowMode) -> Result<Vec<(WindowLabel, EpochSet)>> {
    let n_t = epochs.timepoints();
    let period = epochs.sampling.period();
    let view = |lo: usize, hi: usize| {
        let label = WindowLabel {
            start_s: epochs.time_of(lo),
            end_s: epochs.time_of(hi),
        };
        let set = EpochSet {
            data: epochs.data.slice(s![.., .., lo..hi]).to_owned(),
            window: (label.start_s, label.end_s),
            sampling: epochs.sampling,
            trial_ids: epochs.trial_ids.clone(),
        };
        (label, set)
    };
    match mode {
        WindowMode::Full => Ok(vec![(
            WindowLabel {
                start_s: epochs.window.0,
                end_s: epochs.window.1,
            },
            epochs.clone(),
        )]),
        WindowMode::Sliding { width_s } => {
            let width = (width_s / period).round() as usize;
            if width == 0 || width > n_t {
                return Err(Error::arg(format!(
                    "window width {width_s} s is {width} samples; epoch has {n_t}"
                )));
            }
            Ok((0..n_t / width).map(|w| view(w * width, (w + 1) * width)).collect())
        }
        WindowMode::Growing { start_s, step_s } => {
            let step = (step_s / period).round() as usize;
            let start = ((start_s - epochs.window.0) / period).round().max(0.0) as usize;
            if step == 0 || start >= n_t {
                return Err(Error::arg(format!(
                    "growing window start {start_s} s / step {step_s} s do not fit the epoch"
                )));
            }
            let mut out = Vec::new();
            let mut end = start + step;
            while end < n_t {
                out.push(view(start, end));
                end += step;
            }
            out.push(view(start, n_t));
            Ok(out)
        }
    }
}

impl EpochSet {
    /// Row-major flattening of each trial's `S × T` block into one feature row.
    pub fn flatten_trials(&self) -> ndarray::Array2<f64> {
        let n = self.n_trials();
        let f = self.channels() * self.timepoints();
        self.data
            .as_standard_layout()
            .to_owned()
            .into_shape_with_order((n, f))
            .expect("contiguous layout")
    }

    /// `n × S` slice at timepoint `t`.
    pub fn at_time(&self, t: usize) -> ndarray::Array2<f64> {
        self.data.index_axis(Axis(2), t).to_owned()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Sampling;
    use ndarray::Array3;

    fn epochs(n_t: usize, sampling: Sampling, window: (f64, f64)) -> EpochSet {
        EpochSet {
            data: Array3::from_shape_fn((2, 3, n_t), |(i, c, t)| (i * 100 + c * 10) as f64 + t as f64),
            window,
            sampling,
            trial_ids: vec![4, 9],
        }
    }

    #[test]
    fn sliding_100ms_at_120hz() {
        let e = epochs(144, Sampling::Hz(120.0), (-0.2, 1.0));
        let views = window_views(&e, WindowMode::Sliding { width_s: 0.1 }).unwrap();
        assert_eq!(views.len(), 12);
        assert!(views.iter().all(|(_, v)| v.timepoints() == 12));
        assert!((views[0].0.start_s + 0.2).abs() < 1e-12);
        assert!((views[11].0.end_s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sliding_one_tr() {
        let e = epochs(5, Sampling::TrSeconds(1.5), (3.0, 10.5));
        let views = window_views(&e, WindowMode::Sliding { width_s: 1.5 }).unwrap();
        assert_eq!(views.len(), 5);
    }

    #[test]
    fn growing_ends_with_full_epoch() {
        let e = epochs(144, Sampling::Hz(120.0), (-0.2, 1.0));
        let views = window_views(&e, WindowMode::Growing { start_s: -0.2, step_s: 0.1 }).unwrap();
        let (label, last) = views.last().unwrap();
        assert_eq!(last.data, e.data);
        assert!((label.end_s - 1.0).abs() < 1e-12);
        assert!(views.windows(2).all(|w| w[0].1.timepoints() < w[1].1.timepoints()));
    }

    #[test]
    fn full_view_is_identity() {
        let e = epochs(10, Sampling::Hz(10.0), (0.0, 1.0));
        let views = window_views(&e, WindowMode::Full).unwrap();
        assert_eq!(views.len(), 1);
        assert_eq!(views[0].1, e);
    }

    #[test]
    fn oversized_width_rejected() {
        let e = epochs(10, Sampling::Hz(10.0), (0.0, 1.0));
        assert!(window_views(&e, WindowMode::Sliding { width_s: 2.0 }).is_err());
    }
}
