use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::store::{read_json, write_json};
use super::tensor::TensorContainer;
use crate::dataset::{DeviceKind, FeatureStats};
use crate::error::{Error, Result};
use crate::linear::RidgeFit;
use crate::nn::{BrainConfig, BrainModel, ModelParams, ParamLayout};
use crate::pipeline::{DeepDecoder, RidgeDecoder};
use crate::preprocess::WindowLabel;

pub const MODEL_FILE: &str = "model.json";
const TENSORS_DIR: &str = "tensors";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DecoderMeta {
    Ridge {
        alpha_selected: f64,
        alpha_per_target: Vec<f64>,
        alpha_grid: Vec<f64>,
        cv_errors: Vec<f64>,
    },
    Deep {
        config: BrainConfig,
        param_layout: ParamLayout,
        buffer_layout: ParamLayout,
        batch_size: usize,
    },
}

/// Contents of `model.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub device: DeviceKind,
    /// Time window of the epochs the decoder was trained on.
    pub window: WindowLabel,
    /// Statistics used to z-score the training targets.
    pub target_stats: FeatureStats,
    pub decoder: DecoderMeta,
}

#[derive(Debug, Clone)]
pub enum Decoder {
    Ridge(RidgeDecoder),
    Deep(DeepDecoder),
}

impl Decoder {
    pub fn stats(&self) -> &FeatureStats {
        match self {
            Decoder::Ridge(d) => &d.stats,
            Decoder::Deep(d) => &d.stats,
        }
    }
}

/// A trained decoder with the window it applies to.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub device: DeviceKind,
    pub window: WindowLabel,
    pub decoder: Decoder,
}

fn same_segments(a: &ParamLayout, b: &ParamLayout) -> bool {
    a.total() == b.total()
        && a.segments().len() == b.segments().len()
        && a.segments()
            .iter()
            .zip(b.segments())
            .all(|(x, y)| x.name == y.name && x.shape == y.shape && x.offset == y.offset)
}

fn store_segments(c: &mut TensorContainer, prefix: &str, p: &ModelParams) -> Result<()> {
    for (i, seg) in p.layout.segments().iter().enumerate() {
        c.insert_f64(format!("{prefix}.{}", seg.name), p.array(i))?;
    }
    Ok(())
}

fn load_segments(c: &TensorContainer, prefix: &str, layout: &ParamLayout) -> Result<ModelParams> {
    let mut data = Vec::with_capacity(layout.total());
    for seg in layout.segments() {
        let name = format!("{prefix}.{}", seg.name);
        let t = c.get(&name)?;
        if t.shape() != seg.shape.as_slice() {
            return Err(Error::contract(format!(
                "tensor `{name}` has shape {:?}, layout expects {:?}",
                t.shape(),
                seg.shape
            )));
        }
        data.extend(t.iter().copied());
    }
    ModelParams::from_data(layout, data)
}

impl Checkpoint {
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut c = TensorContainer::new();
        let decoder = match &self.decoder {
            Decoder::Ridge(d) => {
                c.insert_f64("ridge.weights", d.fit.weights.clone().into_dyn())?;
                c.insert_f64("ridge.intercept", d.fit.intercept.clone().into_dyn())?;
                DecoderMeta::Ridge {
                    alpha_selected: d.fit.alpha_selected,
                    alpha_per_target: d.fit.alpha_per_target.clone(),
                    alpha_grid: d.fit.alpha_grid.clone(),
                    cv_errors: d.fit.cv_errors.clone(),
                }
            }
            Decoder::Deep(d) => {
                store_segments(&mut c, "params", &d.outcome.params)?;
                store_segments(&mut c, "buffers", &d.outcome.buffers)?;
                if let Some(p) = &d.positions {
                    c.insert_f64("positions", p.clone().into_dyn())?;
                }
                DecoderMeta::Deep {
                    config: d.model.config(),
                    param_layout: d.outcome.params.layout.clone(),
                    buffer_layout: d.outcome.buffers.layout.clone(),
                    batch_size: d.batch_size,
                }
            }
        };
        let meta = CheckpointMeta {
            device: self.device,
            window: self.window,
            target_stats: self.decoder.stats().clone(),
            decoder,
        };
        write_json(&dir.join(MODEL_FILE), &meta)?;
        c.write(&dir.join(TENSORS_DIR))
    }

    /// Reads a checkpoint, rebuilding the model from its configuration and
    /// checking that the stored segments match the rebuilt layout.
    pub fn read(dir: &Path) -> Result<Self> {
        let meta: CheckpointMeta = read_json(&dir.join(MODEL_FILE))?;
        let c = TensorContainer::read(&dir.join(TENSORS_DIR))?;
        let stats = meta.target_stats;
        let decoder = match meta.decoder {
            DecoderMeta::Ridge { alpha_selected, alpha_per_target, alpha_grid, cv_errors } => {
                let weights: Array2<f64> = c.get2("ridge.weights")?;
                let intercept: Array1<f64> = c
                    .get("ridge.intercept")?
                    .clone()
                    .into_dimensionality()
                    .map_err(|_| Error::contract("tensor `ridge.intercept` is not rank 1"))?;
                if intercept.len() != weights.nrows() || stats.mean.len() != weights.nrows() {
                    return Err(Error::contract("ridge intercept, weights and target statistics disagree on the target count"));
                }
                Decoder::Ridge(RidgeDecoder {
                    fit: RidgeFit { weights, intercept, alpha_selected, alpha_per_target, alpha_grid, cv_errors },
                    stats,
                })
            }
            DecoderMeta::Deep { config, param_layout, buffer_layout, batch_size } => {
                let positions = if c.tensors.contains_key("positions") { Some(c.get2("positions")?) } else { None };
                let model = BrainModel::new(config, positions.as_ref())?;
                let (layout, buffers) = (model.layout(), model.buffer_layout());
                if !same_segments(&layout, &param_layout) || !same_segments(&buffers, &buffer_layout) {
                    return Err(Error::contract("stored parameter layout does not match the model built from its config"));
                }
                let params = load_segments(&c, "params", &layout)?;
                let buffers = load_segments(&c, "buffers", &buffers)?;
                let mut d = DeepDecoder::from_parts(model, positions, params, buffers, stats);
                d.batch_size = batch_size;
                Decoder::Deep(d)
            }
        };
        Ok(Checkpoint { device: meta.device, window: meta.window, decoder })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::make_splits;
    use crate::linear::decoding_alpha_grid;
    use crate::pipeline::{desk_config, desk_train_config};
    use crate::synth::{generate, preset};

    fn small(device: DeviceKind) -> crate::synth::SynthDataset {
        let mut c = preset(device);
        c.n_images = 40;
        c.n_categories = 10;
        c.n_test_images = 5;
        c.n_test_reps = 2;
        c.n_subjects = 2;
        generate(&c).unwrap()
    }

    fn window(d: &crate::synth::SynthDataset) -> WindowLabel {
        WindowLabel { start_s: d.epochs.window.0, end_s: d.epochs.window.1 }
    }

    #[test]
    fn ridge_checkpoint_predicts_identically_after_reload() {
        let d = small(DeviceKind::Fmri3T);
        let splits = make_splits(&d.trials, &d.config.test_categories(), 0.2, 0).unwrap();
        let ridge = RidgeDecoder::fit(&d.epochs, &d.trials, &d.embeddings, &splits, &decoding_alpha_grid()).unwrap();
        let (_, before) = ridge.predict(&d.epochs, &splits.test).unwrap();
        let ck = Checkpoint { device: DeviceKind::Fmri3T, window: window(&d), decoder: Decoder::Ridge(ridge) };
        let dir = tempfile::tempdir().unwrap();
        ck.write(dir.path()).unwrap();
        let Decoder::Ridge(back) = Checkpoint::read(dir.path()).unwrap().decoder else { panic!("kind changed") };
        assert_eq!(back.predict(&d.epochs, &splits.test).unwrap().1, before);
    }

    #[test]
    fn deep_checkpoint_round_trips_and_rejects_foreign_layouts() {
        let d = small(DeviceKind::Eeg);
        let splits = make_splits(&d.trials, &d.config.test_categories(), 0.2, 0).unwrap();
        let cfg = desk_config(DeviceKind::Eeg, &d.epochs, d.embeddings.dim(), 2);
        let mut tc = desk_train_config(1);
        tc.max_epochs = 2;
        tc.patience = 2;
        let deep =
            DeepDecoder::fit(cfg, Some(&d.forward.positions), &d.epochs, &d.trials, &d.embeddings, &splits, &tc).unwrap();
        let (_, mse, clip) = deep.predict(&d.epochs, &d.trials, &splits.test).unwrap();
        let ck = Checkpoint { device: DeviceKind::Eeg, window: window(&d), decoder: Decoder::Deep(deep) };
        let dir = tempfile::tempdir().unwrap();
        ck.write(dir.path()).unwrap();
        let Decoder::Deep(back) = Checkpoint::read(dir.path()).unwrap().decoder else { panic!("kind changed") };
        let (_, mse2, clip2) = back.predict(&d.epochs, &d.trials, &splits.test).unwrap();
        assert_eq!((mse, clip), (mse2, clip2));

        // A config edit that changes the layout must be caught on load.
        let path = dir.path().join(MODEL_FILE);
        let text = std::fs::read_to_string(&path).unwrap().replacen("\"hidden\": 32", "\"hidden\": 31", 1);
        std::fs::write(&path, text).unwrap();
        assert!(matches!(Checkpoint::read(dir.path()), Err(Error::Contract(_))));
    }
}
