use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    Mse,
    Clip,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AveragingScope {
    /// One prediction per trial.
    #[serde(alias = "single")]
    SingleTrial,
    /// Mean over repetitions of an image within each subject.
    #[serde(alias = "subject")]
    SubjectAverage,
    /// Mean over every subject and repetition of an image.
    #[serde(alias = "instance")]
    InstanceAverage,
}

impl std::str::FromStr for AveragingScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" | "single_trial" => Ok(Self::SingleTrial),
            "subject" | "subject_average" => Ok(Self::SubjectAverage),
            "instance" | "instance_average" => Ok(Self::InstanceAverage),
            other => Err(Error::arg(format!("unknown averaging scope `{other}`"))),
        }
    }
}

/// Labels of one predicted vector. Averaged rows have no repetition index,
/// and instance averages no subject.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PredictionMeta {
    pub head: Head,
    pub subject_id: Option<usize>,
    pub image_id: usize,
    pub repetition_index: Option<usize>,
}

/// Predicted embeddings with one label row per vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    pub meta: Vec<PredictionMeta>,
    pub data: Array2<f64>,
}

impl PredictionSet {
    pub fn new(meta: Vec<PredictionMeta>, data: Array2<f64>) -> Result<Self> {
        if meta.len() != data.nrows() {
            return Err(Error::Shape {
                axis: "predictions",
                expected: meta.len(),
                got: data.nrows(),
            });
        }
        Ok(PredictionSet { meta, data })
    }

    /// Rows of one head, in order.
    pub fn head(&self, head: Head) -> PredictionSet {
        let rows: Vec<usize> = (0..self.meta.len()).filter(|&r| self.meta[r].head == head).collect();
        PredictionSet {
            meta: rows.iter().map(|&r| self.meta[r]).collect(),
            data: self.data.select(ndarray::Axis(0), &rows),
        }
    }

    pub fn image_ids(&self) -> Vec<usize> {
        self.meta.iter().map(|m| m.image_id).collect()
    }

    pub fn len(&self) -> usize {
        self.meta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meta.is_empty()
    }
}

fn mean_of_group(set: &PredictionSet, mut rows: Vec<usize>) -> Array1<f64> {
    // Fixed summation order makes the result independent of input row order.
    rows.sort_by(|&a, &b| {
        set.meta[a].cmp(&set.meta[b]).then_with(|| {
            set.data
                .row(a)
                .iter()
                .zip(set.data.row(b).iter())
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        })
    });
    let mut acc = Array1::zeros(set.data.ncols());
    for &r in &rows {
        acc += &set.data.row(r);
    }
    acc / rows.len() as f64
}

fn collect_groups(groups: BTreeMap<PredictionMeta, Vec<usize>>, set: &PredictionSet) -> PredictionSet {
    let mut meta = Vec::with_capacity(groups.len());
    let mut data = Array2::zeros((groups.len(), set.data.ncols()));
    for (i, (key, rows)) in groups.into_iter().enumerate() {
        data.row_mut(i).assign(&mean_of_group(set, rows));
        meta.push(key);
    }
    PredictionSet { meta, data }
}

/// Averages predictions within the requested scope. Output rows are sorted by
/// label.
pub fn average_predictions(set: &PredictionSet, scope: AveragingScope) -> PredictionSet {
    if scope == AveragingScope::SingleTrial {
        return set.clone();
    }
    let mut groups: BTreeMap<PredictionMeta, Vec<usize>> = BTreeMap::new();
    for (r, m) in set.meta.iter().enumerate() {
        let key = PredictionMeta {
            head: m.head,
            subject_id: if scope == AveragingScope::SubjectAverage { m.subject_id } else { None },
            image_id: m.image_id,
            repetition_index: None,
        };
        groups.entry(key).or_default().push(r);
    }
    collect_groups(groups, set)
}

/// Averages `k` seeded repetitions of every image within each subject. Groups
/// with fewer than `k` rows are left out.
pub fn average_k_repetitions(set: &PredictionSet, k: usize, seed: u64) -> Result<PredictionSet> {
    if k == 0 {
        return Err(Error::arg("repetition count must be >= 1"));
    }
    let mut groups: BTreeMap<PredictionMeta, Vec<usize>> = BTreeMap::new();
    for (r, m) in set.meta.iter().enumerate() {
        let key = PredictionMeta {
            repetition_index: None,
            ..*m
        };
        groups.entry(key).or_default().push(r);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = BTreeMap::new();
    for (key, mut rows) in groups {
        if rows.len() < k {
            continue;
        }
        rows.sort_by_key(|&r| set.meta[r]);
        rows.shuffle(&mut rng);
        rows.truncate(k);
        picked.insert(key, rows);
    }
    if picked.is_empty() {
        return Err(Error::contract(format!("no image has {k} repetitions")));
    }
    Ok(collect_groups(picked, set))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn meta(subject: usize, image: usize, rep: usize) -> PredictionMeta {
        PredictionMeta {
            head: Head::Mse,
            subject_id: Some(subject),
            image_id: image,
            repetition_index: Some(rep),
        }
    }

    #[test]
    fn identical_repeats_average_to_themselves() {
        let set = PredictionSet::new(
            vec![meta(0, 1, 1), meta(0, 1, 2), meta(0, 1, 3)],
            array![[0.1, 0.7], [0.1, 0.7], [0.1, 0.7]],
        )
        .unwrap();
        let avg = average_predictions(&set, AveragingScope::SubjectAverage);
        assert_eq!(avg.len(), 1);
        assert!((avg.data[[0, 0]] - 0.1).abs() < 1e-15 && (avg.data[[0, 1]] - 0.7).abs() < 1e-15);
    }

    #[test]
    fn instance_average_pools_subjects() {
        let set = PredictionSet::new(vec![meta(0, 5, 1), meta(1, 5, 1)], array![[1.0, 2.0], [3.0, -2.0]]).unwrap();
        let avg = average_predictions(&set, AveragingScope::InstanceAverage);
        assert_eq!(avg.meta[0].subject_id, None);
        assert_eq!(avg.data.row(0).to_vec(), vec![2.0, 0.0]);
        let by_subject = average_predictions(&set, AveragingScope::SubjectAverage);
        assert_eq!(by_subject.len(), 2);
    }

    #[test]
    fn k_repetitions_uses_exactly_k_rows() {
        let set = PredictionSet::new(
            (1..=4).map(|r| meta(0, 2, r)).collect(),
            array![[1.0], [2.0], [3.0], [4.0]],
        )
        .unwrap();
        let all = average_k_repetitions(&set, 4, 0).unwrap();
        assert_eq!(all.data[[0, 0]], 2.5);
        let one = average_k_repetitions(&set, 1, 0).unwrap();
        assert!([1.0, 2.0, 3.0, 4.0].contains(&one.data[[0, 0]]));
        assert!(average_k_repetitions(&set, 5, 0).is_err());
    }

    #[test]
    fn scope_parses_cli_names() {
        assert_eq!("instance".parse::<AveragingScope>().unwrap(), AveragingScope::InstanceAverage);
        assert!("every".parse::<AveragingScope>().is_err());
    }
}
