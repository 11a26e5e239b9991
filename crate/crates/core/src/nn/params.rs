use ndarray::{ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How a segment is filled at initialisation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    #[default]
    Zeros,
    Ones,
    /// `U(-√(3 / fan_in), √(3 / fan_in))`.
    FanInUniform { fan_in: usize },
    /// Stack of square identities plus `N(0, scale²)` noise.
    IdentityNoise { scale: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    #[serde(skip)]
    pub init: Init,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Named, shaped segments of a flat parameter vector. Building a layout
/// allocates nothing, so counts of full-size models are cheap.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParamLayout {
    segments: Vec<Segment>,
    total: usize,
}

impl ParamLayout {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a segment and returns its index.
    pub fn push(&mut self, name: impl Into<String>, shape: &[usize], init: Init) -> usize {
        let seg = Segment {
            name: name.into(),
            shape: shape.to_vec(),
            offset: self.total,
            init,
        };
        self.total += seg.len();
        self.segments.push(seg);
        self.segments.len() - 1
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.segments.iter().position(|s| s.name == name)
    }

    /// Total size of the segments whose name starts with `prefix`.
    pub fn count_prefix(&self, prefix: &str) -> usize {
        self.segments
            .iter()
            .filter(|s| s.name.starts_with(prefix))
            .map(Segment::len)
            .sum()
    }

    /// Checks that segments tile `[0, total)` in order.
    pub fn validate(&self) -> Result<()> {
        let mut next = 0;
        for s in &self.segments {
            if s.offset != next {
                return Err(Error::contract(format!("segment `{}` starts at {}, expected {next}", s.name, s.offset)));
            }
            next += s.len();
        }
        if next != self.total {
            return Err(Error::contract("segment sizes do not add up to the layout total"));
        }
        Ok(())
    }
}

/// A flat parameter (or gradient, or buffer) vector with its layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub layout: ParamLayout,
    pub data: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(layout: &ParamLayout) -> Self {
        ModelParams {
            layout: layout.clone(),
            data: vec![0.0; layout.total()],
        }
    }

    pub fn from_data(layout: &ParamLayout, data: Vec<f64>) -> Result<Self> {
        if data.len() != layout.total() {
            return Err(Error::Shape {
                axis: "parameters",
                expected: layout.total(),
                got: data.len(),
            });
        }
        Ok(ModelParams {
            layout: layout.clone(),
            data,
        })
    }

    /// Fills every segment according to its [`Init`] rule.
    pub fn initialise(layout: &ParamLayout, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::zeros(layout);
        for seg in layout.segments() {
            let dst = &mut p.data[seg.range()];
            match seg.init {
                Init::Zeros => {}
                Init::Ones => dst.fill(1.0),
                Init::FanInUniform { fan_in } => {
                    let bound = (3.0 / fan_in.max(1) as f64).sqrt();
                    for v in dst.iter_mut() {
                        *v = rng.random_range(-bound..bound);
                    }
                }
                Init::IdentityNoise { scale } => {
                    let (rows, cols) = (seg.shape[seg.shape.len() - 2], seg.shape[seg.shape.len() - 1]);
                    for (i, v) in dst.iter_mut().enumerate() {
                        let within = i % (rows * cols);
                        let (r, c) = (within / cols, within % cols);
                        let noise: f64 = StandardNormal.sample(&mut rng);
                        *v = if r == c { 1.0 } else { 0.0 } + scale * noise;
                    }
                }
            }
        }
        p
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn segment(&self, index: usize) -> &[f64] {
        &self.data[self.layout.segments()[index].range()]
    }

    pub fn segment_mut(&mut self, index: usize) -> &mut [f64] {
        let r = self.layout.segments()[index].range();
        &mut self.data[r]
    }

    pub fn by_name(&self, name: &str) -> Option<&[f64]> {
        self.layout.index_of(name).map(|i| self.segment(i))
    }

    /// Copy of segment `index` shaped as declared.
    pub fn array(&self, index: usize) -> ArrayD<f64> {
        let seg = &self.layout.segments()[index];
        ArrayD::from_shape_vec(IxDyn(&seg.shape), self.segment(index).to_vec()).expect("layout shape")
    }

    /// Copy of segment `index` reshaped to `shape` (same size).
    pub fn array_as(&self, index: usize, shape: &[usize]) -> ArrayD<f64> {
        ArrayD::from_shape_vec(IxDyn(shape), self.segment(index).to_vec()).expect("reshape keeps size")
    }

    /// Adds `g` (flattened) into segment `index`.
    pub fn add_to_segment(&mut self, index: usize, g: &ArrayD<f64>) {
        let dst = self.segment_mut(index);
        for (d, v) in dst.iter_mut().zip(g.iter()) {
            *d += v;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_offsets_tile_the_vector() {
        let mut l = ParamLayout::new();
        l.push("a", &[2, 3], Init::Zeros);
        l.push("b", &[4], Init::Ones);
        l.push("c", &[2, 2, 2], Init::FanInUniform { fan_in: 4 });
        assert_eq!(l.total(), 18);
        assert_eq!(l.segments()[2].offset, 10);
        l.validate().unwrap();
        assert_eq!(l.count_prefix("b"), 4);
    }

    #[test]
    fn initialisation_follows_rules() {
        let mut l = ParamLayout::new();
        l.push("w", &[100], Init::FanInUniform { fan_in: 12 });
        l.push("g", &[3], Init::Ones);
        l.push("s", &[2, 3, 3], Init::IdentityNoise { scale: 0.0 });
        let p = ModelParams::initialise(&l, 1);
        let bound = 0.5;
        assert!(p.segment(0).iter().all(|v| v.abs() < bound));
        assert_eq!(p.segment(1), &[1.0, 1.0, 1.0]);
        let s = p.array(2);
        assert_eq!(s[[1, 2, 2]], 1.0);
        assert_eq!(s[[1, 0, 2]], 0.0);
        assert_eq!(ModelParams::initialise(&l, 1), p);
    }
}
