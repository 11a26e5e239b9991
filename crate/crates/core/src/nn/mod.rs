//! Deep brain modules for M/EEG and fMRI, their parameter layouts and the
//! small autodiff tape they are trained with.

pub mod fmri;
pub mod graph;
pub mod meeg;
pub mod params;

use ndarray::{Array2, ArrayView3};
use serde::{Deserialize, Serialize};

pub use fmri::{FmriConfig, FmriModule};
pub use graph::{BatchStats, Graph, Var};
pub use meeg::{fourier_features, MeegConfig, MeegModule};
pub use params::{Init, ModelParams, ParamLayout, Segment};

use crate::dataset::DeviceKind;
use crate::error::{Error, Result};

/// Running-average momentum of the batch-norm buffers.
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Running batch-norm statistics, no dropout.
    Eval,
    /// Batch statistics and dropout masks drawn from `seed`.
    Train { seed: u64 },
}

/// Batch statistics of one batch-norm layer and the buffers they update.
#[derive(Debug, Clone)]
pub struct NormStats {
    pub mean_segment: usize,
    pub var_segment: usize,
    pub stats: BatchStats,
}

/// A recorded forward pass. `mse` and `clip` are the same node when the
/// model has no CLIP head.
#[derive(Debug)]
pub struct ForwardPass {
    pub graph: Graph,
    pub mse: Var,
    pub clip: Var,
    pub norm_stats: Vec<NormStats>,
}

impl ForwardPass {
    pub fn mse_out(&self) -> Array2<f64> {
        self.graph.value(self.mse).clone().into_dimensionality().expect("head output is a matrix")
    }

    pub fn clip_out(&self) -> Array2<f64> {
        self.graph.value(self.clip).clone().into_dimensionality().expect("head output is a matrix")
    }

    /// Gradient of `⟨d_mse, mse⟩ + ⟨d_clip, clip⟩` with respect to every
    /// parameter, laid out like the parameters.
    pub fn backward(&self, layout: &ParamLayout, d_mse: &Array2<f64>, d_clip: &Array2<f64>) -> ModelParams {
        let seeds = [
            (self.mse, d_mse.clone().into_dyn()),
            (self.clip, d_clip.clone().into_dyn()),
        ];
        let mut grads = ModelParams::zeros(layout);
        for (segment, g) in self.graph.backward(&seeds) {
            grads.add_to_segment(segment, &g);
        }
        grads
    }
}

pub(crate) fn check_input(
    x: ArrayView3<f64>,
    subjects: &[usize],
    channels: usize,
    timepoints: usize,
    n_subjects: usize,
) -> Result<()> {
    let (b, s, t) = x.dim();
    if s != channels {
        return Err(Error::Shape { axis: "channels", expected: channels, got: s });
    }
    if t != timepoints {
        return Err(Error::Shape { axis: "timepoints", expected: timepoints, got: t });
    }
    if subjects.len() != b {
        return Err(Error::Shape { axis: "subject ids", expected: b, got: subjects.len() });
    }
    if b == 0 {
        return Err(Error::arg("empty batch"));
    }
    if let Some(&bad) = subjects.iter().find(|&&id| id >= n_subjects) {
        return Err(Error::arg(format!("subject id {bad} out of range for {n_subjects} subjects")));
    }
    Ok(())
}

/// Moves the batch-norm buffers towards the observed batch statistics.
/// Variances are stored unbiased.
pub fn update_running_stats(buffers: &mut ModelParams, stats: &[NormStats], momentum: f64) {
    for s in stats {
        let n = s.stats.count as f64;
        let correction = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
        for (r, m) in buffers.segment_mut(s.mean_segment).iter_mut().zip(s.stats.mean.iter()) {
            *r = (1.0 - momentum) * *r + momentum * m;
        }
        for (r, v) in buffers.segment_mut(s.var_segment).iter_mut().zip(s.stats.var.iter()) {
            *r = (1.0 - momentum) * *r + momentum * v * correction;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BrainConfig {
    Meeg(MeegConfig),
    Fmri(FmriConfig),
}

impl BrainConfig {
    pub fn layout(&self) -> ParamLayout {
        match self {
            BrainConfig::Meeg(c) => c.layout(),
            BrainConfig::Fmri(c) => c.layout(),
        }
    }

    pub fn buffer_layout(&self) -> ParamLayout {
        match self {
            BrainConfig::Meeg(c) => c.buffer_layout(),
            BrainConfig::Fmri(_) => ParamLayout::new(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.layout().total()
    }

    pub fn embed_dim(&self) -> usize {
        match self {
            BrainConfig::Meeg(c) => c.embed_dim,
            BrainConfig::Fmri(c) => c.embed_dim,
        }
    }

    pub fn n_subjects(&self) -> usize {
        match self {
            BrainConfig::Meeg(c) => c.n_subjects,
            BrainConfig::Fmri(c) => c.n_subjects,
        }
    }

    /// `(channels, timepoints)` expected at the input.
    pub fn input_shape(&self) -> (usize, usize) {
        match self {
            BrainConfig::Meeg(c) => (c.in_channels, c.timepoints),
            BrainConfig::Fmri(c) => (c.in_vertices, c.n_trs),
        }
    }
}

/// A built brain module of either family.
#[derive(Debug, Clone)]
pub enum BrainModel {
    Meeg(MeegModule),
    Fmri(FmriModule),
}

impl BrainModel {
    /// Sensor positions are required for M/EEG and ignored for fMRI.
    pub fn new(config: BrainConfig, positions: Option<&Array2<f64>>) -> Result<Self> {
        Ok(match config {
            BrainConfig::Meeg(c) => BrainModel::Meeg(MeegModule::new(c, positions)?),
            BrainConfig::Fmri(c) => BrainModel::Fmri(FmriModule::new(c)),
        })
    }

    pub fn config(&self) -> BrainConfig {
        match self {
            BrainModel::Meeg(m) => BrainConfig::Meeg(m.config.clone()),
            BrainModel::Fmri(m) => BrainConfig::Fmri(m.config.clone()),
        }
    }

    pub fn layout(&self) -> ParamLayout {
        match self {
            BrainModel::Meeg(m) => m.layout().clone(),
            BrainModel::Fmri(m) => m.layout().clone(),
        }
    }

    pub fn buffer_layout(&self) -> ParamLayout {
        match self {
            BrainModel::Meeg(m) => m.buffer_layout().clone(),
            BrainModel::Fmri(_) => ParamLayout::new(),
        }
    }

    /// Freshly initialised parameters and buffers.
    pub fn init(&self, seed: u64) -> (ModelParams, ModelParams) {
        (
            ModelParams::initialise(&self.layout(), seed),
            ModelParams::initialise(&self.buffer_layout(), seed),
        )
    }

    pub fn forward(
        &self,
        params: &ModelParams,
        buffers: &ModelParams,
        x: ArrayView3<f64>,
        subjects: &[usize],
        mode: Mode,
    ) -> Result<ForwardPass> {
        let layout = match self {
            BrainModel::Meeg(m) => m.layout(),
            BrainModel::Fmri(m) => m.layout(),
        };
        if params.len() != layout.total() || params.layout.segments() != layout.segments() {
            return Err(Error::contract("parameters do not match the model layout"));
        }
        match self {
            BrainModel::Meeg(m) => m.forward(params, buffers, x, subjects, mode),
            BrainModel::Fmri(m) => m.forward(params, x, subjects, mode),
        }
    }

    /// Eval-mode `(mse_out, clip_out)`.
    pub fn predict(
        &self,
        params: &ModelParams,
        buffers: &ModelParams,
        x: ArrayView3<f64>,
        subjects: &[usize],
    ) -> Result<(Array2<f64>, Array2<f64>)> {
        let pass = self.forward(params, buffers, x, subjects, Mode::Eval)?;
        Ok((pass.mse_out(), pass.clip_out()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelSize {
    Medium,
    Large,
}

impl std::str::FromStr for ModelSize {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "medium" => Ok(ModelSize::Medium),
            "large" => Ok(ModelSize::Large),
            other => Err(Error::arg(format!("unknown model size `{other}` (medium|large)"))),
        }
    }
}

pub const EMBED_DIM: usize = 1536;
pub const SA_OUT: usize = 270;
pub const SA_HARMONICS: usize = 32;
pub const FMRI_VERTICES: usize = 20484;
pub const FMRI_TRS: usize = 5;

fn meeg(in_channels: usize, timepoints: usize, hidden: usize, n_blocks: usize, backbone_out: usize, n_subjects: usize) -> BrainConfig {
    BrainConfig::Meeg(MeegConfig {
        in_channels,
        timepoints,
        sa_out: SA_OUT,
        sa_harmonics: SA_HARMONICS,
        hidden,
        n_blocks,
        backbone_out,
        embed_dim: EMBED_DIM,
        n_subjects,
    })
}

fn fmri(hidden: usize, n_blocks: usize, clip_head: bool, n_subjects: usize) -> BrainConfig {
    BrainConfig::Fmri(FmriConfig {
        in_vertices: FMRI_VERTICES,
        n_trs: FMRI_TRS,
        hidden,
        n_blocks,
        clip_head,
        embed_dim: EMBED_DIM,
        n_subjects,
        dropout: 0.5,
    })
}

/// Full-size architectures as laid out in the published parameter tables.
/// Both fMRI devices share one table.
pub fn published_config(device: DeviceKind, size: ModelSize) -> BrainConfig {
    use DeviceKind::*;
    use ModelSize::*;
    match (device, size) {
        (Eeg, Medium) => meeg(64, 144, 181, 4, 564, 1),
        (Eeg, Large) => meeg(64, 144, 442, 5, 1526, 10),
        (Meg, Medium) => meeg(272, 180, 50, 2, 152, 1),
        (Meg, Large) => meeg(272, 180, 396, 4, 1411, 4),
        (Fmri3T | Fmri7T, Medium) => fmri(553, 2, false, 3),
        (Fmri3T | Fmri7T, Large) => fmri(1552, 0, true, 4),
    }
}

/// Outcome of the published hyperparameter search for one setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub config: BrainConfig,
    pub batch_size: usize,
    pub lr: f64,
}

/// Hyperparameters as listed in the search-result tables. The M/EEG labels
/// of these tables are swapped relative to the architecture tables; this
/// follows the search tables verbatim, keeping the device's input shape and
/// subject count from [`published_config`].
pub fn published_search_outcome(device: DeviceKind, size: ModelSize) -> SearchOutcome {
    use DeviceKind::*;
    use ModelSize::*;
    let base = published_config(device, size);
    let (config, batch_size, lr) = match (base, device, size) {
        (BrainConfig::Meeg(c), Eeg, Medium) => (meeg(c.in_channels, c.timepoints, 50, 2, 152, c.n_subjects), 32, 3e-4),
        (BrainConfig::Meeg(c), Eeg, Large) => (meeg(c.in_channels, c.timepoints, 396, 4, 1411, c.n_subjects), 256, 3e-4),
        (BrainConfig::Meeg(c), Meg, Medium) => (meeg(c.in_channels, c.timepoints, 181, 4, 564, c.n_subjects), 64, 3e-4),
        (BrainConfig::Meeg(c), Meg, Large) => (meeg(c.in_channels, c.timepoints, 442, 5, 1526, c.n_subjects), 512, 3e-4),
        (c @ BrainConfig::Fmri(_), _, Medium) => (c, 256, 3e-4),
        (c @ BrainConfig::Fmri(_), _, Large) => (c, 64, 3e-3),
        (c, _, _) => (c, 64, 3e-4),
    };
    SearchOutcome { config, batch_size, lr }
}

/// Per-layer parameter counts in table order; the total is the layout total.
pub fn param_rows(config: &BrainConfig) -> Vec<(&'static str, usize)> {
    let l = config.layout();
    match config {
        BrainConfig::Meeg(_) => vec![
            ("spatial attention", l.count_prefix("spatial_attention.")),
            ("linear projection", l.count_prefix("projection.")),
            ("subject layer", l.count_prefix("subject_layer.")),
            ("residual dilated conv blocks", l.count_prefix("blocks.")),
            ("1x1 conv block", l.count_prefix("pointwise.")),
            ("temporal aggregation", l.count_prefix("temporal_aggregation.")),
            ("MSE head", l.count_prefix("mse_head.")),
            ("CLIP head", l.count_prefix("clip_head.")),
        ],
        BrainConfig::Fmri(c) => {
            let mut rows = vec![
                ("subject layer", l.count_prefix("subject_layer.")),
                ("TR layer", l.count_prefix("tr_layer.")),
                ("residual blocks", l.count_prefix("blocks.")),
                ("temporal aggregation", l.count_prefix("temporal_aggregation.")),
                ("linear projection", l.count_prefix("projection.")),
                ("MSE head", l.count_prefix("mse_head.")),
            ];
            if c.clip_head {
                rows.push(("CLIP head", l.count_prefix("clip_head.")));
            }
            rows
        }
    }
}

/// Cotangent-weighted sum of both heads, the scalar used by gradient checks.
pub fn probe_objective(pass: &ForwardPass, d_mse: &Array2<f64>, d_clip: &Array2<f64>) -> f64 {
    let same = pass.mse == pass.clip;
    let m = (&pass.mse_out() * d_mse).sum();
    let c = if same {
        (&pass.mse_out() * d_clip).sum()
    } else {
        (&pass.clip_out() * d_clip).sum()
    };
    m + c
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn positions(s: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_simple_fn((s, 2), || rng.random_range(0.05..0.95))
    }

    fn random3(shape: (usize, usize, usize), seed: u64) -> Array3<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array3::from_shape_simple_fn(shape, || rng.random_range(-1.0..1.0))
    }

    fn random2(shape: (usize, usize), seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_simple_fn(shape, || rng.random_range(-1.0..1.0))
    }

    fn desk_meeg() -> BrainConfig {
        BrainConfig::Meeg(MeegConfig {
            in_channels: 6,
            timepoints: 12,
            sa_out: 4,
            sa_harmonics: 3,
            hidden: 4,
            n_blocks: 2,
            backbone_out: 6,
            embed_dim: 5,
            n_subjects: 2,
        })
    }

    fn desk_fmri(clip_head: bool) -> BrainConfig {
        BrainConfig::Fmri(FmriConfig {
            in_vertices: 10,
            n_trs: 3,
            hidden: 6,
            n_blocks: 2,
            clip_head,
            embed_dim: 4,
            n_subjects: 2,
            dropout: 0.5,
        })
    }

    fn build(config: &BrainConfig) -> BrainModel {
        let (s, _) = config.input_shape();
        BrainModel::new(config.clone(), Some(&positions(s, 7))).unwrap()
    }

    #[test]
    fn published_totals_and_rows() {
        use DeviceKind::*;
        use ModelSize::*;
        let cases: [(DeviceKind, ModelSize, usize, &[usize]); 6] = [
            (Eeg, Medium, 4_219_533, &[552_960, 49_051, 32_761, 1_578_320, 270_616, 145, 867_840, 867_840]),
            (Eeg, Large, 20_799_113, &[552_960, 119_782, 1_953_640, 11_739_520, 1_742_122, 145, 2_345_472, 2_345_472]),
            (Meg, Medium, 1_120_459, &[552_960, 13_550, 2_500, 60_800, 20_452, 181, 235_008, 235_008]),
            (Meg, Large, 14_598_572, &[552_960, 107_316, 627_264, 7_539_840, 1_433_347, 181, 2_168_832, 2_168_832]),
            (Fmri7T, Medium, 39_342_590, &[33_982_956, 1_532_916, 614_936, 6, 850_944, 2_360_832]),
            (Fmri7T, Large, 146_329_206, &[127_164_672, 12_054_384, 0, 6, 2_385_408, 2_360_832, 2_363_904]),
        ];
        for (device, size, total, rows) in cases {
            let config = published_config(device, size);
            let layout = config.layout();
            layout.validate().unwrap();
            assert_eq!(layout.total(), total, "{device:?} {size:?}");
            let got: Vec<usize> = param_rows(&config).iter().map(|r| r.1).collect();
            assert_eq!(got, rows, "{device:?} {size:?}");
            assert_eq!(got.iter().sum::<usize>(), total);
        }
    }

    #[test]
    fn block_count_closed_form() {
        for (d, blocks) in [(181usize, 4usize), (442, 5), (50, 2), (396, 4)] {
            let c = meeg(64, 144, d, blocks, 100, 1);
            assert_eq!(c.layout().count_prefix("blocks."), blocks * (12 * d * d + 8 * d));
        }
    }

    #[test]
    fn search_tables_follow_printed_labels() {
        let o = published_search_outcome(DeviceKind::Eeg, ModelSize::Medium);
        let BrainConfig::Meeg(c) = &o.config else { panic!() };
        assert_eq!((c.hidden, c.n_blocks, c.backbone_out, o.batch_size), (50, 2, 152, 32));
        let o = published_search_outcome(DeviceKind::Fmri3T, ModelSize::Large);
        assert_eq!((o.batch_size, o.lr), (64, 3e-3));
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let model = build(&desk_meeg());
        let (p, _) = model.init(3);
        let BrainModel::Meeg(m) = &model else { panic!() };
        let a = m.attention_weights(&p);
        assert_eq!(a.dim(), (4, 6));
        for row in a.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn missing_positions_is_an_error() {
        assert!(BrainModel::new(desk_meeg(), None).is_err());
    }

    #[test]
    fn shape_errors_name_the_axis() {
        let model = build(&desk_meeg());
        let (p, b) = model.init(0);
        let x = Array3::zeros((2, 6, 11));
        match model.forward(&p, &b, x.view(), &[0, 1], Mode::Eval) {
            Err(Error::Shape { axis, .. }) => assert_eq!(axis, "timepoints"),
            other => panic!("{other:?}"),
        }
        let x = Array3::zeros((2, 6, 12));
        assert!(model.forward(&p, &b, x.view(), &[0, 2], Mode::Eval).is_err());
    }

    #[test]
    fn zero_input_gives_zero_heads() {
        for config in [desk_meeg(), desk_fmri(true), desk_fmri(false)] {
            let model = build(&config);
            let (p, b) = model.init(5);
            let (s, t) = config.input_shape();
            let x = Array3::zeros((3, s, t));
            for mode in [Mode::Eval, Mode::Train { seed: 1 }] {
                let pass = model.forward(&p, &b, x.view(), &[0, 1, 0], mode).unwrap();
                assert_eq!(pass.mse_out().dim(), (3, config.embed_dim()));
                assert!(pass.mse_out().iter().all(|&v| v == 0.0));
                assert!(pass.clip_out().iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn eval_forward_is_deterministic() {
        for config in [desk_meeg(), desk_fmri(true)] {
            let model = build(&config);
            let (p, b) = model.init(11);
            let (s, t) = config.input_shape();
            let x = random3((2, s, t), 4);
            let a = model.predict(&p, &b, x.view(), &[1, 0]).unwrap();
            let c = model.predict(&p, &b, x.view(), &[1, 0]).unwrap();
            assert_eq!(a, c);
        }
    }

    #[test]
    fn train_dropout_depends_on_seed_only() {
        let config = desk_fmri(true);
        let model = build(&config);
        let (p, b) = model.init(2);
        let x = random3((2, 10, 3), 9);
        let run = |seed| model.forward(&p, &b, x.view(), &[0, 1], Mode::Train { seed }).unwrap().mse_out();
        assert_eq!(run(4), run(4));
        assert_ne!(run(4), run(5));
    }

    fn check_gradients(config: &BrainConfig, mode: Mode) {
        let model = build(config);
        let (mut p, b) = model.init(21);
        // Move biases and norm parameters away from their trivial values.
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for v in p.data.iter_mut() {
            *v += rng.random_range(-0.1..0.1);
        }
        let (s, t) = config.input_shape();
        let f = config.embed_dim();
        let x = random3((3, s, t), 13);
        let ids = [0, 1, 1];
        let d_mse = random2((3, f), 14);
        let d_clip = random2((3, f), 15);
        let pass = model.forward(&p, &b, x.view(), &ids, mode).unwrap();
        let analytic = pass.backward(&p.layout, &d_mse, &d_clip);
        let objective = |q: &ModelParams| {
            let pass = model.forward(q, &b, x.view(), &ids, mode).unwrap();
            probe_objective(&pass, &d_mse, &d_clip)
        };
        let h = 1e-5;
        for (i, seg) in p.layout.segments().iter().enumerate() {
            let mut num = Vec::with_capacity(seg.len());
            for j in seg.range() {
                let mut q = p.clone();
                q.data[j] += h;
                let up = objective(&q);
                q.data[j] -= 2.0 * h;
                let down = objective(&q);
                num.push((up - down) / (2.0 * h));
            }
            let ana = analytic.segment(i);
            let diff: f64 = ana.iter().zip(&num).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
            // Biases feeding a batch norm have an exactly zero gradient.
            let scale: f64 = num.iter().map(|n| n * n).sum::<f64>().sqrt().max(1e-6);
            assert!(diff / scale < 1e-4, "{}: rel err {}", seg.name, diff / scale);
        }
    }

    #[test]
    fn meeg_gradients_match_finite_differences() {
        check_gradients(&desk_meeg(), Mode::Train { seed: 3 });
    }

    #[test]
    fn fmri_gradients_match_finite_differences() {
        check_gradients(&desk_fmri(true), Mode::Train { seed: 3 });
        check_gradients(&desk_fmri(false), Mode::Eval);
    }

    #[test]
    fn absent_subject_gets_zero_gradient() {
        for config in [desk_meeg(), desk_fmri(false)] {
            let model = build(&config);
            let (p, b) = model.init(1);
            let (s, t) = config.input_shape();
            let x = random3((3, s, t), 2);
            let pass = model.forward(&p, &b, x.view(), &[1, 1, 1], Mode::Train { seed: 0 }).unwrap();
            let d = random2((3, config.embed_dim()), 3);
            let g = pass.backward(&p.layout, &d, &d);
            let seg = g.array(p.layout.index_of("subject_layer.weight").unwrap());
            let sub0 = seg.index_axis(ndarray::Axis(0), 0);
            assert!(sub0.iter().all(|&v| v == 0.0));
            assert!(seg.index_axis(ndarray::Axis(0), 1).iter().any(|&v| v != 0.0));
        }
    }

    #[test]
    fn running_stats_use_unbiased_variance() {
        let mut l = ParamLayout::new();
        l.push("m", &[1], Init::Zeros);
        l.push("v", &[1], Init::Ones);
        let mut buf = ModelParams::initialise(&l, 0);
        let stats = NormStats {
            mean_segment: 0,
            var_segment: 1,
            stats: BatchStats {
                mean: ndarray::arr1(&[2.0]),
                var: ndarray::arr1(&[3.0]),
                count: 4,
            },
        };
        update_running_stats(&mut buf, &[stats], BN_MOMENTUM);
        assert!((buf.data[0] - 0.2).abs() < 1e-15);
        assert!((buf.data[1] - (0.9 + 0.1 * 4.0)).abs() < 1e-15);
    }
}
