use std::collections::BTreeMap;

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use super::metrics::pearson;
use crate::dataset::FeatureStats;
use crate::error::{Error, Result};

/// Z-scores every predicted feature over the prediction set, then maps it
/// back with the training-set mean and standard deviation. Features with zero
/// spread across predictions pass through unchanged; their indices are
/// returned.
pub fn renormalize_predictions(pred: &Array2<f64>, train: &FeatureStats) -> Result<(Array2<f64>, Vec<usize>)> {
    if train.mean.len() != pred.ncols() {
        return Err(Error::Shape {
            axis: "features",
            expected: train.mean.len(),
            got: pred.ncols(),
        });
    }
    let own = FeatureStats::from_rows(pred);
    let mut out = pred.clone();
    let mut passthrough = Vec::new();
    for (f, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
        if own.std[f] == 0.0 {
            passthrough.push(f);
            continue;
        }
        let (m, s) = (own.mean[f], own.std[f]);
        col.mapv_inplace(|v| (v - m) / s * train.std[f] + train.mean[f]);
    }
    if !passthrough.is_empty() {
        log::warn!("{} constant prediction feature(s) passed through", passthrough.len());
    }
    Ok((out, passthrough))
}

/// A named mapping from image id to a feature vector (raw pixels, or an
/// externally computed representation).
#[derive(Debug, Clone, PartialEq)]
pub struct RepresentationProvider {
    pub name: String,
    vectors: BTreeMap<usize, Array1<f64>>,
    dim: usize,
}

impl RepresentationProvider {
    pub fn new(name: impl Into<String>, vectors: BTreeMap<usize, Array1<f64>>) -> Result<Self> {
        let dim = vectors.values().next().map_or(0, Array1::len);
        if let Some((id, v)) = vectors.iter().find(|(_, v)| v.len() != dim) {
            return Err(Error::contract(format!(
                "representation of image {id} has dimension {}, expected {dim}",
                v.len()
            )));
        }
        Ok(RepresentationProvider {
            name: name.into(),
            vectors,
            dim,
        })
    }

    /// Builds a provider from an `n × d` matrix keyed by `ids`.
    pub fn from_rows(name: impl Into<String>, ids: &[usize], rows: &Array2<f64>) -> Result<Self> {
        if ids.len() != rows.nrows() {
            return Err(Error::Shape {
                axis: "representations",
                expected: ids.len(),
                got: rows.nrows(),
            });
        }
        let vectors = ids.iter().zip(rows.rows()).map(|(&id, r)| (id, r.to_owned())).collect();
        Self::new(name, vectors)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, id: usize) -> Result<&Array1<f64>> {
        self.vectors
            .get(&id)
            .ok_or_else(|| Error::contract(format!("representation `{}` has no entry for {id}", self.name)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReconMode {
    /// Mean correlation between each image and its reconstruction.
    Pointwise,
    /// Fraction of (pair, distractor) comparisons where the reconstruction
    /// correlates more with its own image than with the distractor.
    TwoWay,
}

fn corr(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    pearson(a.view(), b.view()).unwrap_or(0.0)
}

/// Scores `(image_id, reconstruction_id)` pairs, both looked up in `provider`.
/// Distractors for the two-way score are the other pairs' images.
pub fn reconstruction_metrics(
    pairs: &[(usize, usize)],
    provider: &RepresentationProvider,
    mode: ReconMode,
) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::arg("no reconstruction pairs"));
    }
    match mode {
        ReconMode::Pointwise => {
            let mut total = 0.0;
            for &(img, rec) in pairs {
                total += corr(provider.get(img)?, provider.get(rec)?);
            }
            Ok(total / pairs.len() as f64)
        }
        ReconMode::TwoWay => {
            let (mut wins, mut comparisons) = (0usize, 0usize);
            for &(img, rec) in pairs {
                let r = provider.get(rec)?;
                let own = corr(provider.get(img)?, r);
                for &(other, _) in pairs {
                    if other == img {
                        continue;
                    }
                    comparisons += 1;
                    if own > corr(provider.get(other)?, r) {
                        wins += 1;
                    }
                }
            }
            if comparisons == 0 {
                return Err(Error::arg("two-way comparison needs at least two distinct images"));
            }
            Ok(wins as f64 / comparisons as f64)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn renormalize_matches_two_step_arithmetic() {
        let pred = array![[1.0], [3.0]];
        let stats = FeatureStats {
            mean: vec![10.0],
            std: vec![4.0],
        };
        let (out, pass) = renormalize_predictions(&pred, &stats).unwrap();
        // mean 2, population std 1: z = -1, 1
        assert_eq!(out, array![[6.0], [14.0]]);
        assert!(pass.is_empty());
    }

    #[test]
    fn renormalize_fixes_train_distributed_predictions() {
        let pred = array![[0.5, 2.0], [1.5, -2.0], [1.0, 0.0]];
        let stats = FeatureStats::from_rows(&pred);
        let (out, _) = renormalize_predictions(&pred, &stats).unwrap();
        assert!((&out - &pred).iter().all(|d| d.abs() < 1e-9));
    }

    #[test]
    fn renormalized_means_equal_train_means() {
        let pred = array![[0.1, 5.0], [0.4, 7.0], [0.2, 9.5], [0.9, 1.0]];
        let stats = FeatureStats {
            mean: vec![-3.0, 42.0],
            std: vec![0.5, 2.0],
        };
        let (out, _) = renormalize_predictions(&pred, &stats).unwrap();
        let got = FeatureStats::from_rows(&out);
        for f in 0..2 {
            assert!((got.mean[f] - stats.mean[f]).abs() < 1e-12);
            assert!((got.std[f] - stats.std[f]).abs() < 1e-12);
        }
    }

    fn provider() -> RepresentationProvider {
        let rows = array![
            [1.0, 0.0, 0.0, 2.0],
            [0.0, 1.0, 3.0, 0.0],
            [1.0, 1.0, 0.0, -1.0],
            [2.0, -1.0, 1.0, 0.0],
            // reconstructions
            [1.0, 0.2, 0.1, 1.5],
            [0.5, 1.0, 2.0, 0.0],
            [0.0, 0.0, 1.0, 1.0],
            [2.0, -1.0, 0.5, 0.5],
        ];
        RepresentationProvider::from_rows("pixels", &[0, 1, 2, 3, 100, 101, 102, 103], &rows).unwrap()
    }

    #[test]
    fn perfect_reconstructions_score_one() {
        let p = provider();
        let pairs: Vec<_> = (0..4).map(|i| (i, i)).collect();
        assert!((reconstruction_metrics(&pairs, &p, ReconMode::Pointwise).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(reconstruction_metrics(&pairs, &p, ReconMode::TwoWay).unwrap(), 1.0);
    }

    #[test]
    fn two_way_matches_exhaustive_count() {
        let p = provider();
        let pairs: Vec<_> = (0..4).map(|i| (i, 100 + i)).collect();
        let c = |a: usize, b: usize| pearson(p.get(a).unwrap().view(), p.get(b).unwrap().view()).unwrap();
        let mut wins = 0;
        for i in 0..4 {
            for j in 0..4 {
                if i != j && c(i, 100 + i) > c(j, 100 + i) {
                    wins += 1;
                }
            }
        }
        let got = reconstruction_metrics(&pairs, &p, ReconMode::TwoWay).unwrap();
        assert_eq!(got, wins as f64 / 12.0);
    }

    #[test]
    fn mixed_dimensions_rejected() {
        let mut v = BTreeMap::new();
        v.insert(0, array![1.0, 2.0]);
        v.insert(1, array![1.0]);
        assert!(RepresentationProvider::new("bad", v).is_err());
    }
}
