//! Synthetic paired (brain signal, image embedding) datasets.
//!
//! Each trial is a rank-one space-time pattern: the subject's mixing matrix
//! applied to the image embedding, times a device-specific temporal response,
//! plus i.i.d. Gaussian noise of standard deviation `1 / snr`.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, Array3};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{DeviceKind, EmbeddingMatrix, Sampling, TrialRecord};
use crate::error::{Error, Result};
use crate::preprocess::{ContinuousRecording, EpochSet, Event, FmriRun, TimedEvent};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub device: DeviceKind,
    pub channels: usize,
    pub timepoints: usize,
    pub embed_dim: usize,
    /// Images of the training pool; each is shown `n_reps` times per subject.
    pub n_images: usize,
    pub n_reps: usize,
    /// Held-out images, shown `n_test_reps` times, each in its own category.
    pub n_test_images: usize,
    pub n_test_reps: usize,
    pub n_subjects: usize,
    /// Categories shared by the training-pool images.
    pub n_categories: usize,
    pub snr: f64,
    pub seed: u64,
    pub sampling: Sampling,
    /// Epoch window relative to onset, seconds.
    pub window: (f64, f64),
    pub soa_seconds: f64,
    /// Weight of the subject-specific part of each mixing matrix.
    #[serde(default = "default_subject_variability")]
    pub subject_variability: f64,
    /// Gain on sensors in the posterior (`y < 0.3`) strip.
    #[serde(default = "default_occipital_gain")]
    pub occipital_gain: f64,
}

fn default_subject_variability() -> f64 {
    0.5
}

fn default_occipital_gain() -> f64 {
    1.0
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("channels", self.channels),
            ("timepoints", self.timepoints),
            ("embed_dim", self.embed_dim),
            ("n_images", self.n_images),
            ("n_reps", self.n_reps),
            ("n_subjects", self.n_subjects),
            ("n_categories", self.n_categories),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::arg(format!("synth config: {name} must be >= 1")));
            }
        }
        if !(self.snr > 0.0) {
            return Err(Error::arg("synth config: snr must be > 0"));
        }
        if !(self.soa_seconds > 0.0) {
            return Err(Error::arg("synth config: soa_seconds must be > 0"));
        }
        Ok(())
    }

    pub fn noise_scale(&self) -> f64 {
        if self.snr.is_infinite() {
            0.0
        } else {
            1.0 / self.snr
        }
    }

    /// Onset-relative time of sample `t`.
    pub fn time_of(&self, t: usize) -> f64 {
        self.window.0 + t as f64 * self.sampling.period()
    }

    pub fn total_images(&self) -> usize {
        self.n_images + self.n_test_images
    }

    /// Category ids of the held-out images.
    pub fn test_categories(&self) -> std::collections::BTreeSet<usize> {
        (self.n_categories..self.n_categories + self.n_test_images).collect()
    }
}

/// Temporal response to a stimulus at onset-relative time `t` (seconds),
/// before normalisation to unit peak.
pub fn response_curve(device: DeviceKind, t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    if device.is_fmri() {
        // Gamma-shaped haemodynamic response peaking at 5 s.
        const PEAK: f64 = 5.0;
        const SHAPE: f64 = 6.0;
        (t / PEAK).powf(SHAPE) * (SHAPE * (1.0 - t / PEAK)).exp()
    } else {
        // Damped 3 Hz oscillation: early positive peak, later negative lobe.
        (2.0 * std::f64::consts::PI * 3.0 * t).sin() * (-t / 0.15).exp()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardModel {
    /// One `channels × F` matrix per subject.
    pub mixing: Vec<Array2<f64>>,
    /// Response over the epoch samples, unit peak magnitude.
    pub temporal_kernel: Vec<f64>,
    pub noise_scale: f64,
    /// Sensor coordinates in `[0, 1]²`.
    pub positions: Array2<f64>,
}

fn sensor_positions(n: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let side = (n as f64).sqrt().ceil() as usize;
    let mut pos = Array2::zeros((n, 2));
    for i in 0..n {
        let (gx, gy) = (i % side, i / side);
        let jitter: f64 = StandardNormal.sample(rng);
        let jitter2: f64 = StandardNormal.sample(rng);
        pos[[i, 0]] = ((gx as f64 + 0.5) / side as f64 + 0.05 / side as f64 * jitter).clamp(0.0, 1.0);
        pos[[i, 1]] = ((gy as f64 + 0.5) / side as f64 + 0.05 / side as f64 * jitter2).clamp(0.0, 1.0);
    }
    pos
}

fn gaussian_matrix(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || {
        let v: f64 = StandardNormal.sample(rng);
        scale * v
    })
}

fn stream(seed: u64, tag: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tag);
    rng
}

impl ForwardModel {
    pub fn for_config(config: &SynthConfig) -> Self {
        let mut rng = stream(config.seed, 1);
        let positions = sensor_positions(config.channels, &mut rng);
        let scale = 1.0 / (config.embed_dim as f64).sqrt();
        let shared = gaussian_matrix(config.channels, config.embed_dim, scale, &mut rng);
        let v = config.subject_variability;
        let norm = 1.0 / (1.0 + v * v).sqrt();
        let mixing = (0..config.n_subjects)
            .map(|_| {
                let own = gaussian_matrix(config.channels, config.embed_dim, scale, &mut rng);
                let mut m = (&shared + &(own * v)) * norm;
                for (c, mut row) in m.rows_mut().into_iter().enumerate() {
                    if positions[[c, 1]] < 0.3 {
                        row *= config.occipital_gain;
                    }
                }
                m
            })
            .collect();
        let mut kernel: Vec<f64> = (0..config.timepoints)
            .map(|t| response_curve(config.device, config.time_of(t)))
            .collect();
        let peak = kernel.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if peak > 0.0 {
            kernel.iter_mut().for_each(|v| *v /= peak);
        }
        ForwardModel {
            mixing,
            temporal_kernel: kernel,
            noise_scale: config.noise_scale(),
            positions,
        }
    }

    /// Indices of the sensors that receive the posterior gain.
    pub fn occipital_channels(&self) -> Vec<usize> {
        (0..self.positions.nrows())
            .filter(|&c| self.positions[[c, 1]] < 0.3)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub config: SynthConfig,
    pub epochs: EpochSet,
    pub embeddings: EmbeddingMatrix,
    pub trials: Vec<TrialRecord>,
    pub forward: ForwardModel,
}

fn embeddings(config: &SynthConfig) -> EmbeddingMatrix {
    let mut rng = stream(config.seed, 2);
    let n = config.total_images();
    let data = gaussian_matrix(n, config.embed_dim, 1.0, &mut rng);
    EmbeddingMatrix {
        image_ids: (0..n).collect(),
        data,
    }
}

/// Trial table: per subject, each repetition block presents its images in a
/// seeded order, one every `soa_seconds`.
fn trial_table(config: &SynthConfig) -> Vec<TrialRecord> {
    let mut rng = stream(config.seed, 3);
    let mut trials = Vec::new();
    for subject in 0..config.n_subjects {
        let mut t = 0.0;
        let max_reps = config.n_reps.max(config.n_test_reps);
        for rep in 1..=max_reps {
            let mut block: Vec<usize> = Vec::new();
            if rep <= config.n_reps {
                block.extend(0..config.n_images);
            }
            if rep <= config.n_test_reps {
                block.extend(config.n_images..config.total_images());
            }
            block.shuffle(&mut rng);
            for image_id in block {
                let category_id = if image_id < config.n_images {
                    image_id % config.n_categories
                } else {
                    config.n_categories + (image_id - config.n_images)
                };
                trials.push(TrialRecord {
                    subject_id: subject,
                    image_id,
                    category_id,
                    repetition_index: rep,
                    session_id: rep - 1,
                    onset_time: t,
                });
                t += config.soa_seconds;
            }
        }
    }
    trials
}

/// Generates epoched trials with the default forward model.
pub fn generate(config: &SynthConfig) -> Result<SynthDataset> {
    config.validate()?;
    generate_with_model(config, ForwardModel::for_config(config))
}

/// Generates epoched trials from an explicit forward model.
pub fn generate_with_model(config: &SynthConfig, forward: ForwardModel) -> Result<SynthDataset> {
    config.validate()?;
    if forward.mixing.len() != config.n_subjects {
        return Err(Error::Shape {
            axis: "subjects",
            expected: config.n_subjects,
            got: forward.mixing.len(),
        });
    }
    if forward.temporal_kernel.len() != config.timepoints {
        return Err(Error::Shape {
            axis: "timepoints",
            expected: config.timepoints,
            got: forward.temporal_kernel.len(),
        });
    }
    let emb = embeddings(config);
    let trials = trial_table(config);
    let mut rng = stream(config.seed, 4);
    let (s, t_len) = (config.channels, config.timepoints);
    let mut data = Array3::zeros((trials.len(), s, t_len));
    for (i, trial) in trials.iter().enumerate() {
        let pattern: Array1<f64> = forward.mixing[trial.subject_id].dot(&emb.data.row(trial.image_id));
        for c in 0..s {
            for t in 0..t_len {
                let noise: f64 = StandardNormal.sample(&mut rng);
                data[[i, c, t]] = pattern[c] * forward.temporal_kernel[t] + forward.noise_scale * noise;
            }
        }
    }
    let window = (config.window.0, config.window.0 + t_len as f64 * config.sampling.period());
    Ok(SynthDataset {
        config: config.clone(),
        epochs: EpochSet {
            data,
            window,
            sampling: config.sampling,
            trial_ids: (0..trials.len()).collect(),
        },
        embeddings: emb,
        trials,
        forward,
    })
}

/// Continuous recordings: one per subject, either M/EEG at a raw rate or an
/// fMRI run at the preset TR.
#[derive(Debug, Clone, PartialEq)]
pub enum RawRecordings {
    Meeg(Vec<ContinuousRecording>),
    Fmri(Vec<FmriRun>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousSynth {
    pub config: SynthConfig,
    pub raw: RawRecordings,
    pub embeddings: EmbeddingMatrix,
    pub trials: Vec<TrialRecord>,
    pub forward: ForwardModel,
}

/// Raw M/EEG rate used by [`generate_continuous`], as a multiple of the
/// preset's epoch rate.
pub const RAW_RATE_FACTOR: f64 = 5.0;

/// Generates continuous recordings with overlapping responses, a per-channel
/// offset and slow drift on top of white noise, for exercising the
/// preprocessing chain.
pub fn generate_continuous(config: &SynthConfig) -> Result<ContinuousSynth> {
    config.validate()?;
    let forward = ForwardModel::for_config(config);
    let emb = embeddings(config);
    let trials = trial_table(config);
    let mut rng = stream(config.seed, 5);
    let (rate, fmri) = match config.sampling {
        Sampling::Hz(r) => (r * RAW_RATE_FACTOR, false),
        Sampling::TrSeconds(tr) => (1.0 / tr, true),
    };
    let lead = 2.0f64.max(-config.window.0 + 1.0);
    let response_len = if fmri { 30.0 } else { config.window.1.max(1.0) };
    let peak = (0..(response_len * rate * 10.0) as usize)
        .map(|i| response_curve(config.device, i as f64 / (rate * 10.0)).abs())
        .fold(0.0f64, f64::max);

    let mut meeg = Vec::new();
    let mut runs = Vec::new();
    for subject in 0..config.n_subjects {
        let ids: Vec<usize> = (0..trials.len()).filter(|&i| trials[i].subject_id == subject).collect();
        let first = trials[ids[0]].onset_time;
        let last = trials[*ids.last().expect("subject has trials")].onset_time;
        let duration = lead + (last - first) + config.window.1.max(response_len) + 2.0;
        let n = (duration * rate).ceil() as usize;
        let mut data = Array2::zeros((config.channels, n));
        for c in 0..config.channels {
            let offset: f64 = StandardNormal.sample(&mut rng);
            let phase: f64 = StandardNormal.sample(&mut rng);
            for j in 0..n {
                let time = j as f64 / rate;
                let noise: f64 = StandardNormal.sample(&mut rng);
                data[[c, j]] = 3.0 * offset
                    + 0.5 * (2.0 * std::f64::consts::PI * 0.02 * time + phase).sin()
                    + forward.noise_scale * noise;
            }
        }
        for &i in &ids {
            let trial = &trials[i];
            let onset = lead + trial.onset_time - first;
            let pattern = forward.mixing[subject].dot(&emb.data.row(trial.image_id));
            let j0 = (onset * rate).ceil() as usize;
            let j1 = (((onset + response_len) * rate).ceil() as usize).min(n);
            for j in j0..j1 {
                let k = response_curve(config.device, j as f64 / rate - onset) / peak;
                for c in 0..config.channels {
                    data[[c, j]] += pattern[c] * k;
                }
            }
        }
        if fmri {
            runs.push(FmriRun {
                data,
                tr_seconds: 1.0 / rate,
                events: ids
                    .iter()
                    .map(|&i| TimedEvent {
                        onset_s: lead + trials[i].onset_time - first,
                        image_id: trials[i].image_id,
                        trial_id: i,
                    })
                    .collect(),
            });
        } else {
            meeg.push(ContinuousRecording {
                data,
                sampling_rate: rate,
                channel_positions: Some(forward.positions.clone()),
                events: ids
                    .iter()
                    .map(|&i| Event {
                        sample: ((lead + trials[i].onset_time - first) * rate).round() as usize,
                        image_id: trials[i].image_id,
                        trial_id: i,
                    })
                    .collect(),
            });
        }
    }
    Ok(ContinuousSynth {
        config: config.clone(),
        raw: if fmri { RawRecordings::Fmri(runs) } else { RawRecordings::Meeg(meeg) },
        embeddings: emb,
        trials,
        forward,
    })
}

/// Desk-scale presets, one per device, ordered by signal-to-noise ratio
/// `7T > 3T > MEG > EEG`.
pub fn device_presets() -> BTreeMap<DeviceKind, SynthConfig> {
    let base = |device, channels, sampling: Sampling, window: (f64, f64), soa, snr| {
        let timepoints = sampling.samples_in(window.1 - window.0);
        SynthConfig {
            device,
            channels,
            timepoints,
            embed_dim: 16,
            n_images: 480,
            n_reps: 2,
            n_test_images: 40,
            n_test_reps: 8,
            n_subjects: 4,
            n_categories: 120,
            snr,
            seed: 0,
            sampling,
            window,
            soa_seconds: soa,
            subject_variability: 0.5,
            occipital_gain: 1.0,
        }
    };
    BTreeMap::from([
        (
            DeviceKind::Eeg,
            base(DeviceKind::Eeg, 32, Sampling::Hz(40.0), (-0.2, 1.0), 0.6, 0.12),
        ),
        (
            DeviceKind::Meg,
            base(DeviceKind::Meg, 48, Sampling::Hz(40.0), (-0.5, 1.0), 1.6, 0.15),
        ),
        (
            DeviceKind::Fmri3T,
            base(DeviceKind::Fmri3T, 64, Sampling::TrSeconds(1.5), (3.0, 10.5), 4.5, 0.45),
        ),
        (
            DeviceKind::Fmri7T,
            base(DeviceKind::Fmri7T, 64, Sampling::TrSeconds(1.6), (3.0, 11.0), 4.0, 0.75),
        ),
    ])
}

/// Preset for one device.
pub fn preset(device: DeviceKind) -> SynthConfig {
    device_presets().remove(&device).expect("every device has a preset")
}
