use std::collections::HashMap;

use ndarray::{Array2, ArrayView3};
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::params::{Init, ModelParams, ParamLayout};
use super::{check_input, ForwardPass, Mode, NormStats};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeegConfig {
    pub in_channels: usize,
    pub timepoints: usize,
    pub sa_out: usize,
    pub sa_harmonics: usize,
    pub hidden: usize,
    pub n_blocks: usize,
    pub backbone_out: usize,
    pub embed_dim: usize,
    pub n_subjects: usize,
}

impl MeegConfig {
    /// Dilations of the two residual convolutions of block `k` (0-based).
    pub fn dilations(k: usize) -> (usize, usize) {
        (1 << ((2 * k) % 5), 1 << ((2 * k + 1) % 5))
    }

    /// Dilation of the gated (third) convolution of every block.
    pub const GLU_DILATION: usize = 2;

    pub fn layout(&self) -> ParamLayout {
        let (d, o, f) = (self.hidden, self.backbone_out, self.embed_dim);
        let k2 = self.sa_harmonics * self.sa_harmonics;
        let mut l = ParamLayout::new();
        l.push(
            "spatial_attention.weight",
            &[self.sa_out, 2, self.sa_harmonics, self.sa_harmonics],
            Init::FanInUniform { fan_in: 2 * k2 },
        );
        l.push("projection.weight", &[d, self.sa_out], Init::FanInUniform { fan_in: self.sa_out });
        l.push("projection.bias", &[d], Init::Zeros);
        l.push("subject_layer.weight", &[self.n_subjects, d, d], Init::IdentityNoise { scale: 0.01 });
        for k in 0..self.n_blocks {
            let p = format!("blocks.{k}");
            for (conv, bn) in [("conv1", "bn1"), ("conv2", "bn2")] {
                l.push(format!("{p}.{conv}.weight"), &[d, d, 3], Init::FanInUniform { fan_in: 3 * d });
                l.push(format!("{p}.{conv}.bias"), &[d], Init::Zeros);
                l.push(format!("{p}.{bn}.gamma"), &[d], Init::Ones);
                l.push(format!("{p}.{bn}.beta"), &[d], Init::Zeros);
            }
            l.push(format!("{p}.conv3.weight"), &[2 * d, d, 3], Init::FanInUniform { fan_in: 3 * d });
            l.push(format!("{p}.conv3.bias"), &[2 * d], Init::Zeros);
        }
        l.push("pointwise.conv1.weight", &[2 * d, d, 1], Init::FanInUniform { fan_in: d });
        l.push("pointwise.conv1.bias", &[2 * d], Init::Zeros);
        l.push("pointwise.conv2.weight", &[o, 2 * d, 1], Init::FanInUniform { fan_in: 2 * d });
        l.push("pointwise.conv2.bias", &[o], Init::Zeros);
        l.push(
            "temporal_aggregation.weight",
            &[self.timepoints],
            Init::FanInUniform { fan_in: self.timepoints },
        );
        l.push("temporal_aggregation.bias", &[1], Init::Zeros);
        for head in ["mse_head", "clip_head"] {
            l.push(format!("{head}.weight"), &[f, o], Init::FanInUniform { fan_in: o });
            l.push(format!("{head}.bias"), &[f], Init::Zeros);
        }
        l
    }

    pub fn buffer_layout(&self) -> ParamLayout {
        let mut l = ParamLayout::new();
        for k in 0..self.n_blocks {
            for bn in ["bn1", "bn2"] {
                l.push(format!("blocks.{k}.{bn}.running_mean"), &[self.hidden], Init::Zeros);
                l.push(format!("blocks.{k}.{bn}.running_var"), &[self.hidden], Init::Ones);
            }
        }
        l
    }

    /// Values outside the ranges explored by the architecture search.
    pub fn out_of_search_range(&self) -> Vec<String> {
        let mut w = Vec::new();
        if !(32..=512).contains(&self.hidden) {
            w.push(format!("hidden size {} outside [32, 512]", self.hidden));
        }
        if self.n_blocks > 5 {
            w.push(format!("{} blocks outside [0, 5]", self.n_blocks));
        }
        if !(64..=2048).contains(&self.backbone_out) {
            w.push(format!("backbone output {} outside [64, 2048]", self.backbone_out));
        }
        w
    }
}

/// `S × 2K²` Fourier features `[cos 2π(k x + l y) | sin 2π(k x + l y)]` of the
/// sensor positions, `k, l < K`.
pub fn fourier_features(positions: &Array2<f64>, harmonics: usize) -> Array2<f64> {
    let k2 = harmonics * harmonics;
    let mut out = Array2::zeros((positions.nrows(), 2 * k2));
    for (s, p) in positions.rows().into_iter().enumerate() {
        for k in 0..harmonics {
            for l in 0..harmonics {
                let phase = 2.0 * std::f64::consts::PI * (k as f64 * p[0] + l as f64 * p[1]);
                out[[s, k * harmonics + l]] = phase.cos();
                out[[s, k2 + k * harmonics + l]] = phase.sin();
            }
        }
    }
    out
}

/// M/EEG brain module: spatial attention, projection, subject layer, dilated
/// residual blocks, pointwise block, temporal aggregation and two heads.
#[derive(Debug, Clone)]
pub struct MeegModule {
    pub config: MeegConfig,
    layout: ParamLayout,
    buffers: ParamLayout,
    index: HashMap<String, usize>,
    buffer_index: HashMap<String, usize>,
    /// `2K² × S`, transposed Fourier features.
    features_t: Array2<f64>,
}

impl MeegModule {
    pub fn new(config: MeegConfig, positions: Option<&Array2<f64>>) -> Result<Self> {
        let positions = positions.ok_or_else(|| Error::arg("the M/EEG module needs sensor positions"))?;
        if positions.nrows() != config.in_channels || positions.ncols() != 2 {
            return Err(Error::Shape {
                axis: "sensor positions",
                expected: config.in_channels,
                got: positions.nrows(),
            });
        }
        if positions.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::arg("sensor positions must lie in [0, 1]²"));
        }
        for w in config.out_of_search_range() {
            log::warn!("M/EEG config: {w}");
        }
        let layout = config.layout();
        let buffers = config.buffer_layout();
        let index = layout.segments().iter().enumerate().map(|(i, s)| (s.name.clone(), i)).collect();
        let buffer_index = buffers.segments().iter().enumerate().map(|(i, s)| (s.name.clone(), i)).collect();
        let features_t = fourier_features(positions, config.sa_harmonics).t().to_owned();
        Ok(MeegModule {
            config,
            layout,
            buffers,
            index,
            buffer_index,
            features_t,
        })
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn buffer_layout(&self) -> &ParamLayout {
        &self.buffers
    }

    fn p(&self, g: &mut Graph, params: &ModelParams, name: &str) -> Var {
        let i = self.index[name];
        g.param(i, params.array(i))
    }

    /// Post-softmax spatial attention weights, `sa_out × S`; each row sums to 1.
    pub fn attention_weights(&self, params: &ModelParams) -> Array2<f64> {
        let mut g = Graph::new();
        let logits = self.attention_logits(&mut g, params);
        let a = g.softmax_rows(logits);
        g.value(a).clone().into_dimensionality().expect("matrix")
    }

    fn attention_logits(&self, g: &mut Graph, params: &ModelParams) -> Var {
        let i = self.index["spatial_attention.weight"];
        let k2 = 2 * self.config.sa_harmonics * self.config.sa_harmonics;
        let w = g.param(i, params.array_as(i, &[self.config.sa_out, k2]));
        let f = g.constant(self.features_t.clone().into_dyn());
        g.matmul(w, f)
    }

    pub fn forward(
        &self,
        params: &ModelParams,
        buffers: &ModelParams,
        x: ArrayView3<f64>,
        subjects: &[usize],
        mode: Mode,
    ) -> Result<ForwardPass> {
        let c = &self.config;
        check_input(x, subjects, c.in_channels, c.timepoints, c.n_subjects)?;
        let mut g = Graph::new();
        let mut stats = Vec::new();
        let input = g.constant(x.to_owned().into_dyn());

        let logits = self.attention_logits(&mut g, params);
        let attn = g.softmax_rows(logits);
        let h = g.channel_mix(attn, input);

        let w = self.p(&mut g, params, "projection.weight");
        let b = self.p(&mut g, params, "projection.bias");
        let h = g.channel_mix(w, h);
        let h = g.channel_bias(h, b);

        let w = self.p(&mut g, params, "subject_layer.weight");
        let mut h = g.subject_mix(w, h, subjects);

        for k in 0..c.n_blocks {
            let (d1, d2) = MeegConfig::dilations(k);
            for (conv, bn, dil) in [("conv1", "bn1", d1), ("conv2", "bn2", d2)] {
                let w = self.p(&mut g, params, &format!("blocks.{k}.{conv}.weight"));
                let b = self.p(&mut g, params, &format!("blocks.{k}.{conv}.bias"));
                let gamma = self.p(&mut g, params, &format!("blocks.{k}.{bn}.gamma"));
                let beta = self.p(&mut g, params, &format!("blocks.{k}.{bn}.beta"));
                let y = g.conv1d(h, w, b, dil);
                let mean_idx = self.buffer_index[&format!("blocks.{k}.{bn}.running_mean")];
                let var_idx = self.buffer_index[&format!("blocks.{k}.{bn}.running_var")];
                let y = match mode {
                    Mode::Train { .. } => {
                        let (y, s) = g.batch_norm(y, gamma, beta, None);
                        stats.push(NormStats {
                            mean_segment: mean_idx,
                            var_segment: var_idx,
                            stats: s,
                        });
                        y
                    }
                    Mode::Eval => {
                        let running = (buffers.segment(mean_idx), buffers.segment(var_idx));
                        g.batch_norm(y, gamma, beta, Some(running)).0
                    }
                };
                let y = g.gelu(y);
                h = g.add(h, y);
            }
            let w = self.p(&mut g, params, &format!("blocks.{k}.conv3.weight"));
            let b = self.p(&mut g, params, &format!("blocks.{k}.conv3.bias"));
            let y = g.conv1d(h, w, b, MeegConfig::GLU_DILATION);
            h = g.glu(y);
        }

        let w = self.p(&mut g, params, "pointwise.conv1.weight");
        let b = self.p(&mut g, params, "pointwise.conv1.bias");
        let y = g.conv1d(h, w, b, 1);
        let y = g.gelu(y);
        let w = self.p(&mut g, params, "pointwise.conv2.weight");
        let b = self.p(&mut g, params, "pointwise.conv2.bias");
        let y = g.conv1d(y, w, b, 1);

        let w = self.p(&mut g, params, "temporal_aggregation.weight");
        let b = self.p(&mut g, params, "temporal_aggregation.bias");
        let z = g.temporal_affine(y, w, b);

        let mut heads = Vec::new();
        for head in ["mse_head", "clip_head"] {
            let w = self.p(&mut g, params, &format!("{head}.weight"));
            let b = self.p(&mut g, params, &format!("{head}.bias"));
            heads.push(g.linear(z, w, b));
        }
        Ok(ForwardPass {
            graph: g,
            mse: heads[0],
            clip: heads[1],
            norm_stats: stats,
        })
    }
}
