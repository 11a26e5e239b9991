//! End-to-end glue: raw recordings to epochs, decoders on top of a split,
//! and scoring of their test-set predictions.

use std::collections::BTreeMap;

use ndarray::{Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{zscore_with, DeviceKind, EmbeddingMatrix, FeatureStats, Sampling, SplitAssignment, TrialRecord};
use crate::error::{Error, Result};
use crate::eval::{
    average_predictions, pearson_featurewise, topk_accuracy, AveragingScope, Head, PredictionMeta, PredictionSet,
};
use crate::linear::{ridge_fit, rows_for_trials, RidgeFit, RidgeOptions};
use crate::nn::{BrainConfig, BrainModel, FmriConfig, MeegConfig, ModelParams};
use crate::preprocess::{
    epoch, fmri_detrend_zscore, fmri_epoch, highpass_downsample, robust_scale_clip, window_views, EpochSet, FmriRun,
    PreprocessReport, WindowLabel, WindowMode, DEFAULT_DRIFT_CUTOFF_S,
};
use crate::synth::RawRecordings;
use crate::training::{predict_batched, train, TrainConfig, TrainData, TrainOutcome};

/// High-pass cutoff applied to continuous M/EEG before resampling.
pub const MEEG_HIGHPASS_HZ: f64 = 0.1;

/// Window used for M/EEG sliding and growing analyses, seconds.
pub const MEEG_WINDOW_S: f64 = 0.1;

/// Turns continuous recordings into epochs: high-pass, resample to
/// `sampling`, robust scale and clip, epoch and baseline-correct for M/EEG;
/// cosine detrend, z-score and epoch for fMRI. Epochs of all recordings are
/// concatenated in recording order.
pub fn preprocess_recordings(
    raw: &RawRecordings,
    sampling: Sampling,
    window: (f64, f64),
    report: &mut PreprocessReport,
) -> Result<EpochSet> {
    let parts = match (raw, sampling) {
        (RawRecordings::Meeg(recs), Sampling::Hz(rate)) => {
            let baseline = (window.0 < 0.0).then_some((window.0, 0.0));
            recs.iter()
                .map(|rec| {
                    let filtered = highpass_downsample(rec, MEEG_HIGHPASS_HZ, rate, report)?;
                    let scaled = robust_scale_clip(&filtered, report)?;
                    epoch(&scaled, window, baseline, report)
                })
                .collect::<Result<Vec<_>>>()?
        }
        (RawRecordings::Fmri(runs), Sampling::TrSeconds(_)) => runs
            .iter()
            .map(|run| {
                let clean = fmri_detrend_zscore(&run.data, run.tr_seconds, DEFAULT_DRIFT_CUTOFF_S, report)?;
                let run = FmriRun { data: clean, tr_seconds: run.tr_seconds, events: run.events.clone() };
                fmri_epoch(&run, window, report)
            })
            .collect::<Result<Vec<_>>>()?,
        _ => return Err(Error::arg("sampling kind does not match the recordings (Hz for M/EEG, TR for fMRI)")),
    };
    EpochSet::concat(&parts)
}

/// Sensor positions of the first M/EEG recording, if any.
pub fn sensor_positions(raw: &RawRecordings) -> Option<Array2<f64>> {
    match raw {
        RawRecordings::Meeg(recs) => recs.first().and_then(|r| r.channel_positions.clone()),
        RawRecordings::Fmri(_) => None,
    }
}

/// Window mode for a `full|sliding|growing` name: 100-ms windows for M/EEG,
/// one TR for fMRI.
pub fn window_mode(name: &str, epochs: &EpochSet) -> Result<WindowMode> {
    let step = match epochs.sampling {
        Sampling::Hz(_) => MEEG_WINDOW_S,
        Sampling::TrSeconds(tr) => tr,
    };
    match name {
        "full" => Ok(WindowMode::Full),
        "sliding" => Ok(WindowMode::Sliding { width_s: step }),
        "growing" => Ok(WindowMode::Growing { start_s: epochs.window.0, step_s: step }),
        other => Err(Error::arg(format!("unknown window mode `{other}` (full|sliding|growing)"))),
    }
}

/// Target statistics from the distinct images of the training trials.
pub fn target_stats(trials: &[TrialRecord], embeddings: &EmbeddingMatrix, train_ids: &[usize]) -> Result<FeatureStats> {
    let images: Vec<usize> = train_ids.iter().map(|&i| trials[i].image_id).collect();
    embeddings.stats_for(&images)
}

/// Z-scored embeddings of the listed images.
pub fn targets_for(embeddings: &EmbeddingMatrix, stats: &FeatureStats, image_ids: &[usize]) -> Result<Array2<f64>> {
    Ok(zscore_with(&embeddings.rows_for(image_ids)?, stats))
}

/// Network inputs for the epochs of the listed trials, in epoch order.
pub fn train_data(
    epochs: &EpochSet,
    trials: &[TrialRecord],
    embeddings: &EmbeddingMatrix,
    stats: &FeatureStats,
    ids: &[usize],
) -> Result<TrainData> {
    let rows = rows_for_trials(epochs, ids);
    let tids: Vec<usize> = rows.iter().map(|&r| epochs.trial_ids[r]).collect();
    let images: Vec<usize> = tids.iter().map(|&t| trials[t].image_id).collect();
    TrainData::new(
        epochs.data.select(Axis(0), &rows),
        tids.iter().map(|&t| trials[t].subject_id).collect(),
        targets_for(embeddings, stats, &images)?,
    )
}

/// Trial ids of the epochs of the listed trials, in epoch order.
pub fn epoch_trials(epochs: &EpochSet, ids: &[usize]) -> Vec<usize> {
    rows_for_trials(epochs, ids).iter().map(|&r| epochs.trial_ids[r]).collect()
}

/// Labels both heads' predictions for `trial_ids`. A single-head decoder
/// passes its output for both.
pub fn prediction_set(
    trials: &[TrialRecord],
    trial_ids: &[usize],
    mse: &Array2<f64>,
    clip: &Array2<f64>,
) -> Result<PredictionSet> {
    let meta = |head| {
        trial_ids.iter().map(move |&t| PredictionMeta {
            head,
            subject_id: Some(trials[t].subject_id),
            image_id: trials[t].image_id,
            repetition_index: Some(trials[t].repetition_index),
        })
    };
    let data = ndarray::concatenate(Axis(0), &[mse.view(), clip.view()])
        .map_err(|e| Error::contract(format!("head outputs differ in shape: {e}")))?;
    PredictionSet::new(meta(Head::Mse).chain(meta(Head::Clip)).collect(), data)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    #[serde(rename = "R")]
    pub r: f64,
    pub top1: f64,
    pub top5: f64,
}

/// Pearson R of the MSE head and top-1/top-5 retrieval of the CLIP head
/// among the distinct images present, after averaging within `scope`.
pub fn score_predictions(
    preds: &PredictionSet,
    embeddings: &EmbeddingMatrix,
    stats: &FeatureStats,
    scope: AveragingScope,
) -> Result<Scores> {
    let avg = average_predictions(preds, scope);
    let mse = avg.head(Head::Mse);
    let r = pearson_featurewise(&mse.data, &targets_for(embeddings, stats, &mse.image_ids())?)?;
    let mut candidates: Vec<usize> = avg.image_ids();
    candidates.sort_unstable();
    candidates.dedup();
    let cand = EmbeddingMatrix::new(candidates.clone(), targets_for(embeddings, stats, &candidates)?)?;
    let top5_k = 5.min(candidates.len());
    Ok(Scores { r, top1: topk_accuracy(&avg, &cand, 1)?, top5: topk_accuracy(&avg, &cand, top5_k)? })
}

/// Single-trial R of each subject present in `preds` (MSE head).
pub fn per_subject_r(preds: &PredictionSet, embeddings: &EmbeddingMatrix, stats: &FeatureStats) -> Result<BTreeMap<usize, f64>> {
    let mse = preds.head(Head::Mse);
    let mut by_subject: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (r, m) in mse.meta.iter().enumerate() {
        by_subject.entry(m.subject_id.unwrap_or(0)).or_default().push(r);
    }
    by_subject
        .into_iter()
        .map(|(s, rows)| {
            let images: Vec<usize> = rows.iter().map(|&r| mse.meta[r].image_id).collect();
            let pred = mse.data.select(Axis(0), &rows);
            Ok((s, pearson_featurewise(&pred, &targets_for(embeddings, stats, &images)?)?))
        })
        .collect()
}

/// A ridge decoder on flattened epochs, fit on train∪valid.
#[derive(Debug, Clone)]
pub struct RidgeDecoder {
    pub fit: RidgeFit,
    pub stats: FeatureStats,
}

impl RidgeDecoder {
    pub fn fit(
        epochs: &EpochSet,
        trials: &[TrialRecord],
        embeddings: &EmbeddingMatrix,
        splits: &SplitAssignment,
        grid: &[f64],
    ) -> Result<Self> {
        let pool = splits.train_valid();
        let stats = target_stats(trials, embeddings, &pool)?;
        let rows = rows_for_trials(epochs, &pool);
        if rows.len() < 2 {
            return Err(Error::contract("ridge decoding needs at least 2 training epochs"));
        }
        let images: Vec<usize> = rows.iter().map(|&r| trials[epochs.trial_ids[r]].image_id).collect();
        let x = epochs.flatten_trials().select(Axis(0), &rows);
        let fit = ridge_fit(&x, &targets_for(embeddings, &stats, &images)?, grid, &RidgeOptions::default())?;
        Ok(RidgeDecoder { fit, stats })
    }

    /// Predictions for the epochs of the listed trials, with their trial ids.
    pub fn predict(&self, epochs: &EpochSet, ids: &[usize]) -> Result<(Vec<usize>, Array2<f64>)> {
        let rows = rows_for_trials(epochs, ids);
        let x = epochs.flatten_trials().select(Axis(0), &rows);
        Ok((rows.iter().map(|&r| epochs.trial_ids[r]).collect(), self.fit.predict(&x)?))
    }
}

/// A trained deep decoder.
#[derive(Debug, Clone)]
pub struct DeepDecoder {
    pub model: BrainModel,
    pub positions: Option<Array2<f64>>,
    pub outcome: TrainOutcome,
    pub stats: FeatureStats,
    pub batch_size: usize,
}

impl DeepDecoder {
    /// Trains on `splits.train` with early stopping on `splits.valid`.
    /// Target statistics come from train∪valid images.
    pub fn fit(
        config: BrainConfig,
        positions: Option<&Array2<f64>>,
        epochs: &EpochSet,
        trials: &[TrialRecord],
        embeddings: &EmbeddingMatrix,
        splits: &SplitAssignment,
        train_cfg: &TrainConfig,
    ) -> Result<Self> {
        let model = BrainModel::new(config, positions)?;
        let stats = target_stats(trials, embeddings, &splits.train_valid())?;
        let train_set = train_data(epochs, trials, embeddings, &stats, &splits.train)?;
        let valid = train_data(epochs, trials, embeddings, &stats, &splits.valid)?;
        let outcome = train(&model, &train_set, &valid, train_cfg)?;
        Ok(DeepDecoder { model, positions: positions.cloned(), outcome, stats, batch_size: train_cfg.batch_size })
    }

    pub fn from_parts(
        model: BrainModel,
        positions: Option<Array2<f64>>,
        params: ModelParams,
        buffers: ModelParams,
        stats: FeatureStats,
    ) -> Self {
        let outcome = TrainOutcome {
            params,
            buffers,
            history: Vec::new(),
            best_epoch: 0,
            best_valid_loss: f64::NAN,
            best_valid_r: f64::NAN,
        };
        DeepDecoder { model, positions, outcome, stats, batch_size: 64 }
    }

    /// `(trial ids, mse head, clip head)` for the epochs of the listed trials.
    pub fn predict(
        &self,
        epochs: &EpochSet,
        trials: &[TrialRecord],
        ids: &[usize],
    ) -> Result<(Vec<usize>, Array2<f64>, Array2<f64>)> {
        let rows = rows_for_trials(epochs, ids);
        let tids: Vec<usize> = rows.iter().map(|&r| epochs.trial_ids[r]).collect();
        let f = self.model.config().embed_dim();
        let data = TrainData::new(
            epochs.data.select(Axis(0), &rows),
            tids.iter().map(|&t| trials[t].subject_id).collect(),
            Array2::zeros((rows.len(), f)),
        )?;
        let (mse, clip, _) =
            predict_batched(&self.model, &self.outcome.params, &self.outcome.buffers, &data, self.batch_size, None)?;
        Ok((tids, mse, clip))
    }
}

/// Small M/EEG architecture sized for CPU training on desk presets.
pub fn desk_meeg_config(channels: usize, timepoints: usize, embed_dim: usize, n_subjects: usize) -> BrainConfig {
    BrainConfig::Meeg(MeegConfig {
        in_channels: channels,
        timepoints,
        sa_out: 32,
        sa_harmonics: 8,
        hidden: 32,
        n_blocks: 0,
        backbone_out: 64,
        embed_dim,
        n_subjects,
    })
}

/// Small fMRI architecture sized for CPU training on desk presets.
pub fn desk_fmri_config(vertices: usize, n_trs: usize, embed_dim: usize, n_subjects: usize) -> BrainConfig {
    BrainConfig::Fmri(FmriConfig {
        in_vertices: vertices,
        n_trs,
        hidden: 64,
        n_blocks: 1,
        clip_head: false,
        embed_dim,
        n_subjects,
        dropout: 0.5,
    })
}

/// Desk architecture matching the shape of `epochs`.
pub fn desk_config(device: DeviceKind, epochs: &EpochSet, embed_dim: usize, n_subjects: usize) -> BrainConfig {
    if device.is_fmri() {
        desk_fmri_config(epochs.channels(), epochs.timepoints(), embed_dim, n_subjects)
    } else {
        desk_meeg_config(epochs.channels(), epochs.timepoints(), embed_dim, n_subjects)
    }
}

/// Training settings used on desk presets.
pub fn desk_train_config(seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig::new(3e-3, 64, seed);
    cfg.max_epochs = 40;
    cfg.patience = 8;
    cfg
}

/// Peak over time of a per-window, per-subject R table: the mean over
/// subjects of each subject's best window.
pub fn mean_peak_r(curves: &[BTreeMap<usize, f64>]) -> f64 {
    let mut best: BTreeMap<usize, f64> = BTreeMap::new();
    for curve in curves {
        for (&s, &r) in curve {
            let e = best.entry(s).or_insert(f64::NEG_INFINITY);
            if r > *e {
                *e = r;
            }
        }
    }
    if best.is_empty() {
        return f64::NAN;
    }
    best.values().sum::<f64>() / best.len() as f64
}

/// Subject-specific ridge decoders at every timepoint, returning one
/// per-subject single-trial R map per timepoint.
pub fn stepwise_subject_curves(
    epochs: &EpochSet,
    trials: &[TrialRecord],
    embeddings: &EmbeddingMatrix,
    splits: &SplitAssignment,
    grid: &[f64],
) -> Result<Vec<(f64, BTreeMap<usize, f64>)>> {
    let subjects: std::collections::BTreeSet<usize> = trials.iter().map(|t| t.subject_id).collect();
    let per_subject: Vec<(usize, Vec<f64>)> = subjects
        .into_par_iter()
        .map(|s| {
            let keep = |ids: &[usize]| ids.iter().copied().filter(|&i| trials[i].subject_id == s).collect::<Vec<_>>();
            let sub = SplitAssignment { train: keep(&splits.train), valid: keep(&splits.valid), test: keep(&splits.test) };
            let scores = crate::linear::stepwise_decode(epochs, trials, embeddings, &sub, grid)?;
            Ok((s, scores.into_iter().map(|t| t.r).collect()))
        })
        .collect::<Result<_>>()?;
    Ok((0..epochs.timepoints())
        .map(|t| (epochs.time_of(t), per_subject.iter().map(|(s, rs)| (*s, rs[t])).collect()))
        .collect())
}

/// Deep decoders trained across subjects on each window of `mode`,
/// returning the window label and per-subject single-trial R of each.
pub fn windowed_deep_curves(
    device: DeviceKind,
    epochs: &EpochSet,
    positions: Option<&Array2<f64>>,
    trials: &[TrialRecord],
    embeddings: &EmbeddingMatrix,
    splits: &SplitAssignment,
    mode: WindowMode,
    train_cfg: &TrainConfig,
) -> Result<Vec<(WindowLabel, BTreeMap<usize, f64>)>> {
    let n_subjects = trials.iter().map(|t| t.subject_id + 1).max().unwrap_or(1);
    window_views(epochs, mode)?
        .into_par_iter()
        .map(|(label, view)| {
            let cfg = desk_config(device, &view, embeddings.dim(), n_subjects);
            let dec = DeepDecoder::fit(cfg, positions, &view, trials, embeddings, splits, train_cfg)?;
            let (tids, mse, clip) = dec.predict(&view, trials, &splits.test)?;
            let preds = prediction_set(trials, &tids, &mse, &clip)?;
            Ok((label, per_subject_r(&preds, embeddings, &dec.stats)?))
        })
        .collect()
}
