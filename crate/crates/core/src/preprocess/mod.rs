//! M/EEG and fMRI preprocessing, epoching and window views.
//!
//! M/EEG: causal high-pass, anti-aliased polyphase resampling, per-channel
//! robust scaling with clipping to [-20, 20], epoching with baseline
//! correction. fMRI: discrete-cosine drift removal and z-scoring per vertex,
//! then fixed-length epochs counted in TRs.
//!
//! Every operation takes a [`PreprocessReport`] that collects dropped trials
//! and degenerate channels instead of failing.

mod filter;
mod fmri;
mod meeg;
mod windows;

pub use filter::{highpass_downsample, resample_poly, Biquad};
pub use fmri::{cosine_drift_basis, fmri_detrend_zscore, fmri_epoch, FmriRun, TimedEvent};
pub use meeg::{epoch, quantile_linear, robust_scale_clip};
pub use windows::{window_views, WindowLabel, WindowMode};

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::dataset::Sampling;

/// Default high-pass period for cosine drift removal, in seconds.
pub const DEFAULT_DRIFT_CUTOFF_S: f64 = 128.0;
/// Robust-scaled values are clamped to `[-CLIP_BOUND, CLIP_BOUND]`.
pub const CLIP_BOUND: f64 = 20.0;

/// A stimulus onset in a continuous M/EEG recording.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub sample: usize,
    pub image_id: usize,
    pub trial_id: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousRecording {
    /// `channels × samples`.
    pub data: Array2<f64>,
    pub sampling_rate: f64,
    /// Optional 2-D sensor coordinates in `[0, 1]²`, one row per channel.
    pub channel_positions: Option<Array2<f64>>,
    /// Onsets in strictly increasing sample order.
    pub events: Vec<Event>,
}

impl ContinuousRecording {
    pub fn channels(&self) -> usize {
        self.data.nrows()
    }

    pub fn samples(&self) -> usize {
        self.data.ncols()
    }

    pub fn events_strictly_increasing(&self) -> bool {
        self.events.windows(2).all(|w| w[0].sample < w[1].sample)
    }
}

/// Epoched data: `n_trials × S × T` with the trial id of every row.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochSet {
    pub data: Array3<f64>,
    pub window: (f64, f64),
    pub sampling: Sampling,
    pub trial_ids: Vec<usize>,
}

impl EpochSet {
    pub fn n_trials(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn channels(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn timepoints(&self) -> usize {
        self.data.shape()[2]
    }

    /// Time in seconds (relative to onset) of sample `t`.
    pub fn time_of(&self, t: usize) -> f64 {
        self.window.0 + t as f64 * self.sampling.period()
    }

    /// Keeps the listed rows, in order.
    pub fn select(&self, rows: &[usize]) -> EpochSet {
        EpochSet {
            data: self.data.select(ndarray::Axis(0), rows),
            window: self.window,
            sampling: self.sampling,
            trial_ids: rows.iter().map(|&r| self.trial_ids[r]).collect(),
        }
    }

    /// Concatenates epoch sets that share a window and sampling.
    pub fn concat(parts: &[EpochSet]) -> crate::Result<EpochSet> {
        let first = parts
            .first()
            .ok_or_else(|| crate::Error::contract("cannot concatenate zero epoch sets"))?;
        let views: Vec<_> = parts.iter().map(|p| p.data.view()).collect();
        let data = ndarray::concatenate(ndarray::Axis(0), &views)
            .map_err(|e| crate::Error::contract(format!("epoch shapes differ: {e}")))?;
        Ok(EpochSet {
            data,
            window: first.window,
            sampling: first.sampling,
            trial_ids: parts.iter().flat_map(|p| p.trial_ids.iter().copied()).collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedTrial {
    pub trial_id: usize,
    pub reason: String,
}

/// Machine-readable summary of a preprocessing run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PreprocessReport {
    pub dropped_trials: Vec<DroppedTrial>,
    pub zero_iqr_channels: Vec<usize>,
    pub zero_variance_vertices: Vec<usize>,
    pub filter: Option<FilterSettings>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterSettings {
    pub highpass_hz: f64,
    pub highpass_order: usize,
    pub source_rate_hz: f64,
    pub target_rate_hz: f64,
    pub resample_up: usize,
    pub resample_down: usize,
    pub antialias_taps: usize,
}

impl PreprocessReport {
    pub(crate) fn drop_trial(&mut self, trial_id: usize, reason: impl Into<String>) {
        let reason = reason.into();
        log::info!("dropping trial {trial_id}: {reason}");
        self.dropped_trials.push(DroppedTrial { trial_id, reason });
    }
}
