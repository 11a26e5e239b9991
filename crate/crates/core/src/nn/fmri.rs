use std::collections::HashMap;

use ndarray::{ArrayD, ArrayView3, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::params::{Init, ModelParams, ParamLayout};
use super::{check_input, ForwardPass, Mode};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FmriConfig {
    pub in_vertices: usize,
    pub n_trs: usize,
    pub hidden: usize,
    pub n_blocks: usize,
    pub clip_head: bool,
    pub embed_dim: usize,
    pub n_subjects: usize,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
}

fn default_dropout() -> f64 {
    0.5
}

impl FmriConfig {
    pub fn layout(&self) -> ParamLayout {
        let (v, h, t, f) = (self.in_vertices, self.hidden, self.n_trs, self.embed_dim);
        let mut l = ParamLayout::new();
        let subject_init = if v == h {
            Init::IdentityNoise { scale: 0.01 }
        } else {
            Init::FanInUniform { fan_in: v }
        };
        l.push("subject_layer.weight", &[self.n_subjects, h, v], subject_init);
        l.push("tr_layer.weight", &[t, h, h], Init::FanInUniform { fan_in: h });
        l.push("tr_layer.bias", &[t, h], Init::Zeros);
        l.push("tr_layer.norm.gamma", &[h], Init::Ones);
        l.push("tr_layer.norm.beta", &[h], Init::Zeros);
        for k in 0..self.n_blocks {
            l.push(format!("blocks.{k}.norm.gamma"), &[h], Init::Ones);
            l.push(format!("blocks.{k}.norm.beta"), &[h], Init::Zeros);
            l.push(format!("blocks.{k}.linear.weight"), &[h, h], Init::FanInUniform { fan_in: h });
            l.push(format!("blocks.{k}.linear.bias"), &[h], Init::Zeros);
        }
        l.push("temporal_aggregation.weight", &[t], Init::FanInUniform { fan_in: t });
        l.push("temporal_aggregation.bias", &[1], Init::Zeros);
        l.push("projection.weight", &[f, h], Init::FanInUniform { fan_in: h });
        l.push("projection.bias", &[f], Init::Zeros);
        l.push("mse_head.weight", &[f, f], Init::FanInUniform { fan_in: f });
        l.push("mse_head.bias", &[f], Init::Zeros);
        if self.clip_head {
            l.push("clip_head.weight", &[f, f], Init::FanInUniform { fan_in: f });
            l.push("clip_head.bias", &[f], Init::Zeros);
            l.push("clip_head.norm.gamma", &[f], Init::Ones);
            l.push("clip_head.norm.beta", &[f], Init::Zeros);
        }
        l
    }

    pub fn out_of_search_range(&self) -> Vec<String> {
        let mut w = Vec::new();
        if !(32..=2048).contains(&self.hidden) {
            w.push(format!("hidden size {} outside [32, 2048]", self.hidden));
        }
        if self.n_blocks > 3 {
            w.push(format!("{} blocks outside [0, 3]", self.n_blocks));
        }
        w
    }
}

/// fMRI brain module: per-subject vertex projection, per-TR linear layer,
/// residual MLP blocks, temporal aggregation, projection and heads. Without
/// a CLIP head the CLIP output is the MSE-head output.
#[derive(Debug, Clone)]
pub struct FmriModule {
    pub config: FmriConfig,
    layout: ParamLayout,
    index: HashMap<String, usize>,
}

impl FmriModule {
    pub fn new(config: FmriConfig) -> Self {
        for w in config.out_of_search_range() {
            log::warn!("fMRI config: {w}");
        }
        let layout = config.layout();
        let index = layout.segments().iter().enumerate().map(|(i, s)| (s.name.clone(), i)).collect();
        FmriModule { config, layout, index }
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    fn p(&self, g: &mut Graph, params: &ModelParams, name: &str) -> Var {
        let i = self.index[name];
        g.param(i, params.array(i))
    }

    fn dropout(&self, g: &mut Graph, x: Var, rng: &mut Option<ChaCha8Rng>) -> Var {
        let Some(rng) = rng.as_mut() else { return x };
        let p = self.config.dropout;
        if p <= 0.0 {
            return x;
        }
        let keep = 1.0 / (1.0 - p);
        let shape = g.value(x).shape().to_vec();
        let mask = ArrayD::from_shape_simple_fn(IxDyn(&shape), || if rng.random::<f64>() < p { 0.0 } else { keep });
        g.dropout(x, mask)
    }

    pub fn forward(&self, params: &ModelParams, x: ArrayView3<f64>, subjects: &[usize], mode: Mode) -> Result<ForwardPass> {
        let c = &self.config;
        check_input(x, subjects, c.in_vertices, c.n_trs, c.n_subjects)?;
        let mut rng = match mode {
            Mode::Train { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
            Mode::Eval => None,
        };
        let mut g = Graph::new();
        let input = g.constant(x.to_owned().into_dyn());

        let w = self.p(&mut g, params, "subject_layer.weight");
        let h = g.subject_mix(w, input, subjects);
        let w = self.p(&mut g, params, "tr_layer.weight");
        let b = self.p(&mut g, params, "tr_layer.bias");
        let h = g.timestep_linear(h, w, b);
        let gamma = self.p(&mut g, params, "tr_layer.norm.gamma");
        let beta = self.p(&mut g, params, "tr_layer.norm.beta");
        let h = g.layer_norm(h, gamma, beta);
        let h = g.gelu(h);
        let mut h = self.dropout(&mut g, h, &mut rng);

        for k in 0..c.n_blocks {
            let gamma = self.p(&mut g, params, &format!("blocks.{k}.norm.gamma"));
            let beta = self.p(&mut g, params, &format!("blocks.{k}.norm.beta"));
            let w = self.p(&mut g, params, &format!("blocks.{k}.linear.weight"));
            let b = self.p(&mut g, params, &format!("blocks.{k}.linear.bias"));
            let y = g.layer_norm(h, gamma, beta);
            let y = g.channel_mix(w, y);
            let y = g.channel_bias(y, b);
            let y = g.gelu(y);
            let y = self.dropout(&mut g, y, &mut rng);
            h = g.add(h, y);
        }

        let w = self.p(&mut g, params, "temporal_aggregation.weight");
        let b = self.p(&mut g, params, "temporal_aggregation.bias");
        let z = g.temporal_affine(h, w, b);
        let w = self.p(&mut g, params, "projection.weight");
        let b = self.p(&mut g, params, "projection.bias");
        let z = g.linear(z, w, b);

        let w = self.p(&mut g, params, "mse_head.weight");
        let b = self.p(&mut g, params, "mse_head.bias");
        let mse = g.linear(z, w, b);
        let clip = if c.clip_head {
            let w = self.p(&mut g, params, "clip_head.weight");
            let b = self.p(&mut g, params, "clip_head.bias");
            let gamma = self.p(&mut g, params, "clip_head.norm.gamma");
            let beta = self.p(&mut g, params, "clip_head.norm.beta");
            let y = g.linear(z, w, b);
            let y = g.layer_norm(y, gamma, beta);
            g.gelu(y)
        } else {
            mse
        };
        Ok(ForwardPass {
            graph: g,
            mse,
            clip,
            norm_stats: Vec::new(),
        })
    }
}
