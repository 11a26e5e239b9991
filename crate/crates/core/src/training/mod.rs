//! Losses, optimiser, early-stopped training loop and random search.

pub mod loss;
pub mod optim;
pub mod search;

use std::io::{Read, Write};

use ndarray::{Array2, Array3, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use loss::{clip_loss, combined_loss, combined_with_grad, mse_loss, LossConfig, LossGrad};
pub use optim::{Adam, EarlyStopping, Monitor, StopDecision};
pub use search::{hyperparameter_search, inner_split, Candidate, SearchFamily, SearchResult, SearchSpace};

use crate::error::{Error, Result};
use crate::eval::pearson_featurewise;
use crate::nn::{update_running_stats, BrainModel, ModelParams, Mode, BN_MOMENTUM};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    #[serde(default = "defaults::max_epochs")]
    pub max_epochs: usize,
    #[serde(default = "defaults::patience")]
    pub patience: usize,
    #[serde(default = "defaults::valid_fraction")]
    pub valid_fraction: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "defaults::beta1")]
    pub beta1: f64,
    #[serde(default = "defaults::beta2")]
    pub beta2: f64,
    #[serde(default = "defaults::eps")]
    pub eps: f64,
    #[serde(default)]
    pub loss: LossConfig,
    #[serde(default)]
    pub monitor: Monitor,
}

mod defaults {
    pub fn max_epochs() -> usize {
        50
    }
    pub fn patience() -> usize {
        10
    }
    pub fn valid_fraction() -> f64 {
        0.2
    }
    pub fn beta1() -> f64 {
        0.9
    }
    pub fn beta2() -> f64 {
        0.999
    }
    pub fn eps() -> f64 {
        1e-8
    }
}

impl TrainConfig {
    pub fn new(lr: f64, batch_size: usize, seed: u64) -> Self {
        TrainConfig {
            lr,
            batch_size,
            max_epochs: defaults::max_epochs(),
            patience: defaults::patience(),
            valid_fraction: defaults::valid_fraction(),
            seed,
            beta1: defaults::beta1(),
            beta2: defaults::beta2(),
            eps: defaults::eps(),
            loss: LossConfig::default(),
            monitor: Monitor::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::arg(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::arg("batch size must be at least 1"));
        }
        if self.max_epochs == 0 {
            return Err(Error::arg("max_epochs must be at least 1"));
        }
        if self.patience == 0 || self.patience > self.max_epochs {
            return Err(Error::arg(format!(
                "patience must be in [1, max_epochs = {}], got {}",
                self.max_epochs, self.patience
            )));
        }
        if !(self.valid_fraction > 0.0 && self.valid_fraction < 1.0) {
            return Err(Error::arg("valid_fraction must be in (0, 1)"));
        }
        self.loss.validate()
    }
}

/// Inputs, subject ids and (z-scored) targets for a set of trials.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub x: Array3<f64>,
    pub subjects: Vec<usize>,
    pub targets: Array2<f64>,
}

impl TrainData {
    pub fn new(x: Array3<f64>, subjects: Vec<usize>, targets: Array2<f64>) -> Result<Self> {
        let n = x.shape()[0];
        if subjects.len() != n {
            return Err(Error::Shape { axis: "subject ids", expected: n, got: subjects.len() });
        }
        if targets.nrows() != n {
            return Err(Error::Shape { axis: "target rows", expected: n, got: targets.nrows() });
        }
        Ok(TrainData { x, subjects, targets })
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn select(&self, rows: &[usize]) -> TrainData {
        TrainData {
            x: self.x.select(Axis(0), rows),
            subjects: rows.iter().map(|&i| self.subjects[i]).collect(),
            targets: self.targets.select(Axis(0), rows),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_loss: f64,
    #[serde(rename = "valid_R")]
    pub valid_r: f64,
}

pub fn write_history<W: Write>(writer: W, history: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in history {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("history", e))?;
    Ok(())
}

pub fn read_history<R: Read>(reader: R) -> Result<Vec<EpochRecord>> {
    let mut r = csv::Reader::from_reader(reader);
    Ok(r.deserialize().collect::<std::result::Result<Vec<_>, _>>()?)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub buffers: ModelParams,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_valid_loss: f64,
    pub best_valid_r: f64,
}

/// Seed of the dropout masks used for one batch.
fn batch_seed(seed: u64, epoch: usize, batch: usize) -> u64 {
    let mut z = seed ^ ((epoch as u64) << 32 | batch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Combined loss and Pearson R of the MSE head over `data`, in eval mode,
/// scored batch by batch (the contrastive term only sees in-batch candidates).
pub fn validation_scores(
    model: &BrainModel,
    params: &ModelParams,
    buffers: &ModelParams,
    data: &TrainData,
    batch_size: usize,
    loss: &LossConfig,
) -> Result<(f64, f64)> {
    let (mse_pred, _, total) = predict_batched(model, params, buffers, data, batch_size, Some(loss))?;
    let r = pearson_featurewise(&mse_pred, &data.targets)?;
    Ok((total / data.len() as f64, r))
}

/// Eval-mode predictions of both heads, optionally with the summed
/// (size-weighted) combined loss.
pub fn predict_batched(
    model: &BrainModel,
    params: &ModelParams,
    buffers: &ModelParams,
    data: &TrainData,
    batch_size: usize,
    loss: Option<&LossConfig>,
) -> Result<(Array2<f64>, Array2<f64>, f64)> {
    let f = model.config().embed_dim();
    let mut mse = Array2::zeros((data.len(), f));
    let mut clip = Array2::zeros((data.len(), f));
    let mut total = 0.0;
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let x = data.x.select(Axis(0), chunk);
        let subjects: Vec<usize> = chunk.iter().map(|&i| data.subjects[i]).collect();
        let (m, c) = model.predict(params, buffers, x.view(), &subjects)?;
        if let Some(cfg) = loss {
            let t = data.targets.select(Axis(0), chunk);
            total += combined_with_grad(&c, &m, &t, cfg)?.value * chunk.len() as f64;
        }
        for (k, &i) in chunk.iter().enumerate() {
            mse.row_mut(i).assign(&m.row(k));
            clip.row_mut(i).assign(&c.row(k));
        }
    }
    Ok((mse, clip, total))
}

/// Trains `model` with Adam and early stopping on `valid`, returning the
/// parameters of the best validation epoch.
///
/// Initialisation, batch order and dropout masks all derive from
/// `cfg.seed`, so two runs with the same inputs are bitwise identical.
pub fn train(model: &BrainModel, train_set: &TrainData, valid: &TrainData, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::arg("training set is empty"));
    }
    if valid.len() < 3 {
        return Err(Error::arg("validation set needs at least 3 trials"));
    }
    let (mut params, mut buffers) = model.init(cfg.seed);
    let layout = params.layout.clone();
    let mut opt = Adam::new(params.len(), cfg.lr, cfg.beta1, cfg.beta2, cfg.eps);
    let mut stopper = EarlyStopping::new(cfg.monitor, cfg.patience);
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    order_rng.set_stream(1);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    let mut history = Vec::new();
    let mut best = (params.clone(), buffers.clone(), 0usize, f64::INFINITY, f64::NAN);
    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut order_rng);
        let mut epoch_loss = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch = train_set.select(chunk);
            let mode = Mode::Train { seed: batch_seed(cfg.seed, epoch, b) };
            let pass = model.forward(&params, &buffers, batch.x.view(), &batch.subjects, mode)?;
            let (clip_out, mse_out) = (pass.clip_out(), pass.mse_out());
            if let Some(&bad) = clip_out.iter().chain(mse_out.iter()).find(|v| !v.is_finite()) {
                return Err(Error::NonFinite { value: bad, epoch, batch: b, lr: cfg.lr });
            }
            let l = combined_with_grad(&clip_out, &mse_out, &batch.targets, &cfg.loss)?;
            if !l.value.is_finite() {
                return Err(Error::NonFinite { value: l.value, epoch, batch: b, lr: cfg.lr });
            }
            let grads = pass.backward(&layout, &l.d_mse, &l.d_clip);
            opt.step(&mut params.data, &grads.data);
            if !params.all_finite() {
                return Err(Error::NonFinite { value: f64::NAN, epoch, batch: b, lr: cfg.lr });
            }
            update_running_stats(&mut buffers, &pass.norm_stats, BN_MOMENTUM);
            epoch_loss += l.value * chunk.len() as f64;
        }
        let train_loss = epoch_loss / train_set.len() as f64;
        let (valid_loss, valid_r) = validation_scores(model, &params, &buffers, valid, cfg.batch_size, &cfg.loss)?;
        if !valid_loss.is_finite() {
            return Err(Error::NonFinite { value: valid_loss, epoch, batch: 0, lr: cfg.lr });
        }
        log::debug!("epoch {epoch}: train {train_loss:.5} valid {valid_loss:.5} R {valid_r:.4}");
        history.push(EpochRecord { epoch, train_loss, valid_loss, valid_r });
        let watched = match cfg.monitor {
            Monitor::CombinedLoss => valid_loss,
            Monitor::PearsonR => valid_r,
        };
        match stopper.observe(epoch, watched) {
            StopDecision::Improved => best = (params.clone(), buffers.clone(), epoch, valid_loss, valid_r),
            StopDecision::Continue => {}
            StopDecision::Stop => break,
        }
    }
    let (params, buffers, best_epoch, best_valid_loss, best_valid_r) = best;
    Ok(TrainOutcome { params, buffers, history, best_epoch, best_valid_loss, best_valid_r })
}
