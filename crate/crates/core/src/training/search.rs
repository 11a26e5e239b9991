use std::collections::BTreeSet;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{sample_categories, DeviceKind, TrialRecord};
use crate::error::{Error, Result};
use crate::nn::BrainConfig;

/// Architecture part of a search space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum SearchFamily {
    Meeg {
        /// Inclusive range of the residual block count.
        blocks: (usize, usize),
        /// Log-uniform range of the hidden size.
        hidden: (f64, f64),
        /// Log-uniform range of the backbone output size.
        backbone_out: (f64, f64),
    },
    Fmri {
        hidden: (f64, f64),
        blocks: (usize, usize),
        clip_head: Vec<bool>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub batch_sizes: Vec<usize>,
    pub learning_rates: Vec<f64>,
    pub family: SearchFamily,
    pub n_samples: usize,
}

impl SearchSpace {
    /// The ranges explored for each device family.
    pub fn for_device(device: DeviceKind) -> Self {
        let family = if device.is_fmri() {
            SearchFamily::Fmri { hidden: (32.0, 2048.0), blocks: (0, 3), clip_head: vec![false, true] }
        } else {
            SearchFamily::Meeg { blocks: (0, 5), hidden: (32.0, 512.0), backbone_out: (64.0, 2048.0) }
        };
        SearchSpace {
            batch_sizes: vec![32, 64, 128, 256, 512],
            learning_rates: vec![3e-5, 3e-4, 3e-3],
            family,
            n_samples: 75,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_sizes.is_empty() || self.learning_rates.is_empty() {
            return Err(Error::arg("search space needs at least one batch size and learning rate"));
        }
        if self.n_samples == 0 {
            return Err(Error::arg("search needs at least one sample"));
        }
        let range_ok = |(lo, hi): (f64, f64)| lo >= 1.0 && lo <= hi;
        let ok = match &self.family {
            SearchFamily::Meeg { blocks, hidden, backbone_out } => {
                blocks.0 <= blocks.1 && range_ok(*hidden) && range_ok(*backbone_out)
            }
            SearchFamily::Fmri { hidden, blocks, clip_head } => {
                blocks.0 <= blocks.1 && range_ok(*hidden) && !clip_head.is_empty()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::arg("search space has an empty or invalid range"))
        }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Candidate {
        let batch_size = *self.batch_sizes.choose(rng).expect("validated");
        let lr = *self.learning_rates.choose(rng).expect("validated");
        match &self.family {
            SearchFamily::Meeg { blocks, hidden, backbone_out } => Candidate {
                batch_size,
                lr,
                n_blocks: rng.random_range(blocks.0..=blocks.1),
                hidden: log_uniform(rng, *hidden),
                backbone_out: Some(log_uniform(rng, *backbone_out)),
                clip_head: None,
            },
            SearchFamily::Fmri { hidden, blocks, clip_head } => Candidate {
                batch_size,
                lr,
                hidden: log_uniform(rng, *hidden),
                n_blocks: rng.random_range(blocks.0..=blocks.1),
                backbone_out: None,
                clip_head: Some(*clip_head.choose(rng).expect("validated")),
            },
        }
    }
}

/// Integer drawn log-uniformly from `[lo, hi]`.
fn log_uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> usize {
    if lo == hi {
        return lo.round() as usize;
    }
    let v = rng.random_range(lo.ln()..=hi.ln()).exp().round();
    v.clamp(lo.ceil(), hi.floor()) as usize
}

/// One drawn point of a search space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub batch_size: usize,
    pub lr: f64,
    pub hidden: usize,
    pub n_blocks: usize,
    pub backbone_out: Option<usize>,
    pub clip_head: Option<bool>,
}

impl Candidate {
    /// `base` with this candidate's architecture choices.
    pub fn apply(&self, base: &BrainConfig) -> BrainConfig {
        match base.clone() {
            BrainConfig::Meeg(mut c) => {
                c.hidden = self.hidden;
                c.n_blocks = self.n_blocks;
                if let Some(o) = self.backbone_out {
                    c.backbone_out = o;
                }
                BrainConfig::Meeg(c)
            }
            BrainConfig::Fmri(mut c) => {
                c.hidden = self.hidden;
                c.n_blocks = self.n_blocks;
                if let Some(h) = self.clip_head {
                    c.clip_head = h;
                }
                BrainConfig::Fmri(c)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best: Candidate,
    pub best_score: f64,
    /// Every draw with its score, in draw order.
    pub trials: Vec<(Candidate, f64)>,
}

/// Draws `space.n_samples` seeded candidates and returns the one with the
/// highest objective (inner-test Pearson R). NaN scores never win; ties keep
/// the earliest draw.
pub fn hyperparameter_search<F>(space: &SearchSpace, mut objective: F, seed: u64) -> Result<SearchResult>
where
    F: FnMut(&Candidate) -> Result<f64>,
{
    space.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trials = Vec::with_capacity(space.n_samples);
    let mut best: Option<(usize, f64)> = None;
    for i in 0..space.n_samples {
        let c = space.sample(&mut rng);
        let score = objective(&c)?;
        log::info!("search draw {i}: {c:?} -> {score:.4}");
        if !score.is_nan() && best.is_none_or(|(_, s)| score > s) {
            best = Some((i, score));
        }
        trials.push((c, score));
    }
    let (i, best_score) = best.ok_or_else(|| Error::contract("every search draw scored NaN"))?;
    Ok(SearchResult { best: trials[i].0.clone(), best_score, trials })
}

/// Carves `fraction` of the categories in `pool` out as an inner test set.
/// Returns `(inner_train, inner_test)` trial indices.
pub fn inner_split(trials: &[TrialRecord], pool: &[usize], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let held: BTreeSet<usize> = sample_categories(trials, pool, fraction, seed);
    pool.iter().partition(|&&i| !held.contains(&trials[i].category_id))
}
