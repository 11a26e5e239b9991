//! Datasets, trial bookkeeping and train/valid/test splits.
//!
//! A trial is identified by its index in the trial table. Every sampling
//! routine orders candidate trials by `(image_id, subject_id, repetition_index)`
//! before a seeded shuffle, so results depend only on the inputs and the seed.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use ndarray::{Array1, Array2, Axis};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sampling rate M/EEG recordings are resampled to before epoching.
pub const MEEG_RATE_HZ: f64 = 120.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeviceKind {
    Eeg,
    Meg,
    #[serde(rename = "fmri3t")]
    Fmri3T,
    #[serde(rename = "fmri7t")]
    Fmri7T,
}

impl DeviceKind {
    pub const ALL: [DeviceKind; 4] = [
        DeviceKind::Eeg,
        DeviceKind::Meg,
        DeviceKind::Fmri3T,
        DeviceKind::Fmri7T,
    ];

    pub fn is_fmri(self) -> bool {
        matches!(self, DeviceKind::Fmri3T | DeviceKind::Fmri7T)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DeviceKind::Eeg => "eeg",
            DeviceKind::Meg => "meg",
            DeviceKind::Fmri3T => "fmri3t",
            DeviceKind::Fmri7T => "fmri7t",
        }
    }
}

impl fmt::Display for DeviceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DeviceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "eeg" => Ok(DeviceKind::Eeg),
            "meg" => Ok(DeviceKind::Meg),
            "fmri3t" => Ok(DeviceKind::Fmri3T),
            "fmri7t" => Ok(DeviceKind::Fmri7T),
            other => Err(Error::arg(format!("unknown device `{other}`"))),
        }
    }
}

/// Time axis of a recording: samples per second for M/EEG, seconds per
/// volume for fMRI.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    Hz(f64),
    TrSeconds(f64),
}

impl Sampling {
    /// Seconds between consecutive samples.
    pub fn period(self) -> f64 {
        match self {
            Sampling::Hz(rate) => 1.0 / rate,
            Sampling::TrSeconds(tr) => tr,
        }
    }

    /// Number of samples spanned by a duration.
    pub fn samples_in(self, seconds: f64) -> usize {
        (seconds / self.period()).round().max(0.0) as usize
    }
}

/// Whether subjects see a shared image set or disjoint per-subject sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ImageDesign {
    #[default]
    Shared,
    PerSubject,
}

/// Published trial counts for the matched and all-trials configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialCounts {
    pub matched_unique: u64,
    pub matched_trials: u64,
    pub all_unique: u64,
    pub all_trials: u64,
    pub test_unique: u64,
    pub test_trials: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub name: String,
    pub device: DeviceKind,
    pub num_subjects: usize,
    pub channels: usize,
    pub sampling: Sampling,
    pub soa_seconds: f64,
    pub epoch_window: (f64, f64),
    /// Baseline interval for M/EEG when it differs from `(t_start, 0)`.
    #[serde(default)]
    pub baseline: Option<(f64, f64)>,
    pub hourly_cost_usd: f64,
    #[serde(default)]
    pub image_design: ImageDesign,
    #[serde(default)]
    pub counts: Option<TrialCounts>,
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.soa_seconds > 0.0) {
            return Err(Error::contract(format!("{}: soa_seconds must be > 0", self.name)));
        }
        if !(self.epoch_window.0 < self.epoch_window.1) {
            return Err(Error::contract(format!("{}: epoch window start must precede end", self.name)));
        }
        if self.channels == 0 {
            return Err(Error::contract(format!("{}: channels must be > 0", self.name)));
        }
        Ok(())
    }

    /// Baseline interval used for M/EEG epochs; `None` for fMRI.
    pub fn baseline_window(&self) -> Option<(f64, f64)> {
        if self.device.is_fmri() {
            None
        } else {
            Some(self.baseline.unwrap_or((self.epoch_window.0, 0.0)))
        }
    }
}

fn counts(mu: u64, mt: u64, au: u64, at: u64, tu: u64, tt: u64) -> Option<TrialCounts> {
    Some(TrialCounts {
        matched_unique: mu,
        matched_trials: mt,
        all_unique: au,
        all_trials: at,
        test_unique: tu,
        test_trials: tt,
    })
}

/// The eight public datasets of the benchmark, with their acquisition
/// parameters, epoch windows and trial counts.
///
/// SOAs are stimulus-plus-blank durations; the MEG entry uses 1.6 s, which is
/// the value consistent with the published acquisition cost.
pub fn published_datasets() -> Vec<DatasetSpec> {
    use DeviceKind::*;
    let eeg_rate = 263.0;
    let meg_rate = 550.0;
    let fmri3_rate = 935.0;
    let fmri7_rate = 1093.0;
    let fmri_vertices = 20484;
    vec![
        DatasetSpec {
            name: "Xu2024".into(),
            device: Eeg,
            num_subjects: 8,
            channels: 64,
            sampling: Sampling::Hz(512.0),
            soa_seconds: 0.6,
            epoch_window: (-0.3, 1.0),
            baseline: Some((-0.05, 0.0)),
            hourly_cost_usd: eeg_rate,
            image_design: ImageDesign::Shared,
            counts: counts(777, 34_868, 777, 34_868, 100, 4_472),
        },
        DatasetSpec {
            name: "Grootswagers2022".into(),
            device: Eeg,
            num_subjects: 48,
            channels: 64,
            sampling: Sampling::Hz(1000.0),
            soa_seconds: 0.1,
            epoch_window: (-0.1, 1.0),
            baseline: None,
            hourly_cost_usd: eeg_rate,
            image_design: ImageDesign::Shared,
            counts: counts(7_428, 353_172, 19_848, 943_892, 100, 55_200),
        },
        DatasetSpec {
            name: "Gifford2022".into(),
            device: Eeg,
            num_subjects: 10,
            channels: 64,
            sampling: Sampling::Hz(1000.0),
            soa_seconds: 0.2,
            epoch_window: (-0.2, 1.0),
            baseline: None,
            hourly_cost_usd: eeg_rate,
            image_design: ImageDesign::Shared,
            counts: counts(7_428, 300_145, 16_540, 668_400, 100, 81_091),
        },
        DatasetSpec {
            name: "Hebart2023meg".into(),
            device: Meg,
            num_subjects: 4,
            channels: 272,
            sampling: Sampling::Hz(1200.0),
            soa_seconds: 1.6,
            epoch_window: (-0.5, 1.0),
            baseline: None,
            hourly_cost_usd: meg_rate,
            image_design: ImageDesign::Shared,
            counts: counts(7_428, 29_712, 19_848, 79_392, 100, 4_800),
        },
        DatasetSpec {
            name: "Shen2019".into(),
            device: Fmri3T,
            num_subjects: 3,
            channels: fmri_vertices,
            sampling: Sampling::TrSeconds(2.0),
            soa_seconds: 8.0,
            epoch_window: (3.0, 13.0),
            baseline: None,
            hourly_cost_usd: fmri3_rate,
            image_design: ImageDesign::Shared,
            counts: counts(1_200, 19_800, 1_200, 19_800, 50, 3_960),
        },
        DatasetSpec {
            name: "Hebart2023fmri".into(),
            device: Fmri3T,
            num_subjects: 3,
            channels: fmri_vertices,
            sampling: Sampling::TrSeconds(1.5),
            soa_seconds: 4.5,
            epoch_window: (3.0, 10.5),
            baseline: None,
            hourly_cost_usd: fmri3_rate,
            image_design: ImageDesign::Shared,
            counts: counts(7_428, 22_284, 7_428, 22_284, 100, 3_600),
        },
        DatasetSpec {
            name: "Chang2019".into(),
            device: Fmri3T,
            num_subjects: 4,
            channels: fmri_vertices,
            sampling: Sampling::TrSeconds(2.0),
            soa_seconds: 10.0,
            epoch_window: (3.0, 13.0),
            baseline: None,
            hourly_cost_usd: fmri3_rate,
            image_design: ImageDesign::Shared,
            counts: counts(4_803, 17_255, 4_803, 17_255, 100, 1_422),
        },
        DatasetSpec {
            name: "Allen2022".into(),
            device: Fmri7T,
            num_subjects: 4,
            channels: fmri_vertices,
            sampling: Sampling::TrSeconds(1.6),
            soa_seconds: 4.0,
            epoch_window: (3.0, 11.0),
            baseline: None,
            hourly_cost_usd: fmri7_rate,
            image_design: ImageDesign::PerSubject,
            counts: counts(29_712, 89_136, 36_000, 108_000, 100, 1_200),
        },
    ]
}

/// Looks up one of [`published_datasets`] by name (case-insensitive).
pub fn published_dataset(name: &str) -> Option<DatasetSpec> {
    published_datasets()
        .into_iter()
        .find(|d| d.name.eq_ignore_ascii_case(name))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub subject_id: usize,
    pub image_id: usize,
    pub category_id: usize,
    pub repetition_index: usize,
    pub session_id: usize,
    pub onset_time: f64,
}

/// Checks the per-table invariants: repetitions start at 1 and
/// `(subject, image, repetition)` keys are unique.
pub fn validate_trials(trials: &[TrialRecord]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for (id, t) in trials.iter().enumerate() {
        if t.repetition_index < 1 {
            return Err(Error::contract(format!("trial {id}: repetition_index must be >= 1")));
        }
        if !seen.insert((t.subject_id, t.image_id, t.repetition_index)) {
            return Err(Error::contract(format!(
                "trial {id}: duplicate (subject {}, image {}, repetition {})",
                t.subject_id, t.image_id, t.repetition_index
            )));
        }
    }
    Ok(())
}

pub fn write_trials_csv<W: Write>(writer: W, trials: &[TrialRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for t in trials {
        w.serialize(t)?;
    }
    w.flush().map_err(|e| Error::io("<trial table>", e))?;
    Ok(())
}

pub fn read_trials_csv<R: Read>(reader: R) -> Result<Vec<TrialRecord>> {
    let mut r = csv::Reader::from_reader(reader);
    let trials = r.deserialize().collect::<std::result::Result<Vec<TrialRecord>, _>>()?;
    Ok(trials)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct SplitAssignment {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitAssignment {
    /// Training plus validation trials, sorted.
    pub fn train_valid(&self) -> Vec<usize> {
        let mut all: Vec<usize> = self.train.iter().chain(&self.valid).copied().collect();
        all.sort_unstable();
        all
    }

    pub fn check_disjoint(&self) -> Result<()> {
        let train: BTreeSet<_> = self.train.iter().collect();
        let valid: BTreeSet<_> = self.valid.iter().collect();
        let test: BTreeSet<_> = self.test.iter().collect();
        if train.intersection(&valid).next().is_some()
            || train.intersection(&test).next().is_some()
            || valid.intersection(&test).next().is_some()
        {
            return Err(Error::contract("split sets are not pairwise disjoint"));
        }
        Ok(())
    }
}

fn canonical_order(trials: &[TrialRecord], ids: &mut [usize]) {
    ids.sort_by_key(|&i| {
        let t = &trials[i];
        (t.image_id, t.subject_id, t.repetition_index, i)
    });
}

fn seeded_shuffle<T>(items: &mut [T], seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    items.shuffle(&mut rng);
}

/// Splits trials into train/valid/test with category leakage removed.
///
/// Every trial whose category is in `test_categories` goes to the test set,
/// so no category (and hence no image) is shared between train∪valid and
/// test. The validation set holds `floor(valid_fraction * |train∪valid|)`
/// trials drawn by seed.
pub fn make_splits(
    trials: &[TrialRecord],
    test_categories: &BTreeSet<usize>,
    valid_fraction: f64,
    seed: u64,
) -> Result<SplitAssignment> {
    if !(valid_fraction > 0.0 && valid_fraction < 1.0) {
        return Err(Error::arg(format!("valid_fraction must be in (0, 1), got {valid_fraction}")));
    }
    if test_categories.is_empty() {
        return Err(Error::arg("test_categories must not be empty"));
    }
    let (mut test, mut pool): (Vec<usize>, Vec<usize>) =
        (0..trials.len()).partition(|&i| test_categories.contains(&trials[i].category_id));
    canonical_order(trials, &mut pool);
    seeded_shuffle(&mut pool, seed);
    let n_valid = (valid_fraction * pool.len() as f64).floor() as usize;
    let mut valid = pool[..n_valid].to_vec();
    let mut train = pool[n_valid..].to_vec();
    if train.is_empty() {
        return Err(Error::contract("training set is empty after removing test categories"));
    }
    train.sort_unstable();
    valid.sort_unstable();
    test.sort_unstable();
    Ok(SplitAssignment { train, valid, test })
}

/// Picks a seeded subset of categories holding roughly `fraction` of the
/// distinct categories present in `ids` (at least one).
pub fn sample_categories(
    trials: &[TrialRecord],
    ids: &[usize],
    fraction: f64,
    seed: u64,
) -> BTreeSet<usize> {
    let mut cats: Vec<usize> = ids
        .iter()
        .map(|&i| trials[i].category_id)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    seeded_shuffle(&mut cats, seed);
    let n = ((fraction * cats.len() as f64).round() as usize).clamp(1, cats.len().max(1));
    cats.into_iter().take(n).collect()
}

/// Keeps `n_unique` test images chosen by seed, with all their repetitions.
pub fn subsample_test(
    trials: &[TrialRecord],
    test: &[usize],
    n_unique: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    let mut images: Vec<usize> = test
        .iter()
        .map(|&i| trials[i].image_id)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if images.len() < n_unique {
        return Err(Error::contract(format!(
            "test set has {} unique images, {} requested",
            images.len(),
            n_unique
        )));
    }
    seeded_shuffle(&mut images, seed);
    let keep: BTreeSet<usize> = images.into_iter().take(n_unique).collect();
    let mut out: Vec<usize> = test
        .iter()
        .copied()
        .filter(|&i| keep.contains(&trials[i].image_id))
        .collect();
    out.sort_unstable();
    Ok(out)
}

/// Downsamples a training pool to the matched-trials configuration.
///
/// * shared image set with more than `target_unique` images: `target_unique`
///   images are drawn once for all subjects, then one presentation of each is
///   drawn per subject;
/// * per-subject image sets: `target_unique` images are drawn per subject and
///   all their presentations kept;
/// * fewer unique images than the target: everything is kept.
pub fn matched_trials(
    dataset: &DatasetSpec,
    trials: &[TrialRecord],
    pool: &[usize],
    target_unique: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    matched_trials_by_design(dataset.image_design, trials, pool, target_unique, seed)
}

/// [`matched_trials`] for an explicit image design.
pub fn matched_trials_by_design(
    design: ImageDesign,
    trials: &[TrialRecord],
    pool: &[usize],
    target_unique: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    if target_unique == 0 {
        return Err(Error::arg("target_unique must be > 0"));
    }
    let mut out = Vec::new();
    match design {
        ImageDesign::Shared => {
            let mut images: Vec<usize> = pool
                .iter()
                .map(|&i| trials[i].image_id)
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            if images.len() <= target_unique {
                out.extend_from_slice(pool);
            } else {
                seeded_shuffle(&mut images, seed);
                let keep: BTreeSet<usize> = images.into_iter().take(target_unique).collect();
                let mut groups: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
                for &i in pool {
                    let t = &trials[i];
                    if keep.contains(&t.image_id) {
                        groups.entry((t.subject_id, t.image_id)).or_default().push(i);
                    }
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
                for (_, mut ids) in groups {
                    canonical_order(trials, &mut ids);
                    out.push(*ids.choose(&mut rng).expect("non-empty group"));
                }
            }
        }
        ImageDesign::PerSubject => {
            let mut by_subject: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            for &i in pool {
                by_subject.entry(trials[i].subject_id).or_default().push(i);
            }
            for (subject, ids) in by_subject {
                let mut images: Vec<usize> = ids
                    .iter()
                    .map(|&i| trials[i].image_id)
                    .collect::<BTreeSet<_>>()
                    .into_iter()
                    .collect();
                if images.len() <= target_unique {
                    out.extend(ids);
                    continue;
                }
                seeded_shuffle(&mut images, seed ^ (subject as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
                let keep: BTreeSet<usize> = images.into_iter().take(target_unique).collect();
                out.extend(ids.into_iter().filter(|&i| keep.contains(&trials[i].image_id)));
            }
        }
    }
    out.sort_unstable();
    Ok(out)
}

/// Per-feature mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureStats {
    pub fn from_rows(rows: &Array2<f64>) -> Self {
        let n = rows.nrows().max(1) as f64;
        let mean: Array1<f64> = rows.sum_axis(Axis(0)) / n;
        let std = rows
            .axis_iter(Axis(1))
            .zip(mean.iter())
            .map(|(col, m)| (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt())
            .collect();
        FeatureStats {
            mean: mean.to_vec(),
            std,
        }
    }
}

/// Target image embeddings, one row per image id.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub image_ids: Vec<usize>,
    pub data: Array2<f64>,
}

impl EmbeddingMatrix {
    pub fn new(image_ids: Vec<usize>, data: Array2<f64>) -> Result<Self> {
        if image_ids.len() != data.nrows() {
            return Err(Error::Shape {
                axis: "images",
                expected: image_ids.len(),
                got: data.nrows(),
            });
        }
        Ok(EmbeddingMatrix { image_ids, data })
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    fn row_index(&self) -> BTreeMap<usize, usize> {
        self.image_ids.iter().enumerate().map(|(r, &id)| (id, r)).collect()
    }

    /// Gathers the embedding of each listed image into an `n × F` matrix.
    pub fn rows_for(&self, image_ids: &[usize]) -> Result<Array2<f64>> {
        let index = self.row_index();
        let mut out = Array2::zeros((image_ids.len(), self.dim()));
        for (r, id) in image_ids.iter().enumerate() {
            let src = index
                .get(id)
                .ok_or_else(|| Error::contract(format!("no embedding for image {id}")))?;
            out.row_mut(r).assign(&self.data.row(*src));
        }
        Ok(out)
    }

    /// Statistics over the distinct images listed.
    pub fn stats_for(&self, image_ids: &[usize]) -> Result<FeatureStats> {
        let unique: Vec<usize> = image_ids.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
        Ok(FeatureStats::from_rows(&self.rows_for(&unique)?))
    }
}

/// Applies `(x - mean) / std` per column; zero-std columns are only centered.
pub fn zscore_with(rows: &Array2<f64>, stats: &FeatureStats) -> Array2<f64> {
    let mut out = rows.clone();
    for (f, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
        let s = if stats.std[f] > 0.0 { stats.std[f] } else { 1.0 };
        col.mapv_inplace(|v| (v - stats.mean[f]) / s);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_trials(n_images: usize, n_reps: usize, n_subjects: usize, n_cats: usize) -> Vec<TrialRecord> {
        let mut out = Vec::new();
        for s in 0..n_subjects {
            for rep in 1..=n_reps {
                for img in 0..n_images {
                    out.push(TrialRecord {
                        subject_id: s,
                        image_id: img,
                        category_id: img % n_cats,
                        repetition_index: rep,
                        session_id: 0,
                        onset_time: out.len() as f64,
                    });
                }
            }
        }
        out
    }

    #[test]
    fn test_categories_are_excluded_from_training() {
        let trials = grid_trials(10, 1, 1, 2);
        let test_cats = BTreeSet::from([1]);
        let split = make_splits(&trials, &test_cats, 0.2, 7).unwrap();
        for &i in split.train.iter().chain(&split.valid) {
            assert_eq!(trials[i].category_id, 0);
        }
        assert_eq!(split.test.len(), 5);
        split.check_disjoint().unwrap();
        assert_eq!(split, make_splits(&trials, &test_cats, 0.2, 7).unwrap());
    }

    #[test]
    fn valid_size_is_exact_floor() {
        // 1250 trials, 5 categories, one held out: pool of 1000.
        let trials = grid_trials(1250, 1, 1, 5);
        let split = make_splits(&trials, &BTreeSet::from([4]), 0.2, 3).unwrap();
        assert_eq!(split.train.len() + split.valid.len(), 1000);
        assert_eq!(split.valid.len(), 200);
    }

    #[test]
    fn empty_train_is_an_error() {
        let trials = grid_trials(4, 1, 1, 1);
        assert!(make_splits(&trials, &BTreeSet::from([0]), 0.2, 0).is_err());
        assert!(make_splits(&trials, &BTreeSet::new(), 0.2, 0).is_err());
        assert!(make_splits(&trials, &BTreeSet::from([5]), 1.0, 0).is_err());
    }

    #[test]
    fn subsample_keeps_all_repetitions() {
        let trials = grid_trials(200, 12, 1, 200);
        let all: Vec<usize> = (0..trials.len()).collect();
        let kept = subsample_test(&trials, &all, 100, 11).unwrap();
        assert_eq!(kept.len(), 1200);
        let images: BTreeSet<_> = kept.iter().map(|&i| trials[i].image_id).collect();
        assert_eq!(images.len(), 100);
        assert_eq!(kept, subsample_test(&trials, &all, 100, 11).unwrap());
        let full = subsample_test(&trials, &all, 200, 5).unwrap();
        assert_eq!(full, all);
        assert!(subsample_test(&trials, &all, 201, 5).is_err());
    }

    fn shared_spec() -> DatasetSpec {
        published_dataset("Gifford2022").unwrap()
    }

    #[test]
    fn matched_trials_one_presentation_per_image() {
        let trials = grid_trials(10, 3, 1, 10);
        let pool: Vec<usize> = (0..trials.len()).collect();
        let kept = matched_trials(&shared_spec(), &trials, &pool, 5, 1).unwrap();
        assert_eq!(kept.len(), 5);
        let images: BTreeSet<_> = kept.iter().map(|&i| trials[i].image_id).collect();
        assert_eq!(images.len(), 5);
    }

    #[test]
    fn matched_trials_keeps_small_datasets() {
        let trials = grid_trials(7, 4, 2, 7);
        let pool: Vec<usize> = (0..trials.len()).collect();
        let kept = matched_trials(&shared_spec(), &trials, &pool, 7428, 1).unwrap();
        assert_eq!(kept, pool);
    }

    #[test]
    fn matched_trials_per_subject_design_keeps_repetitions() {
        let spec = published_dataset("Allen2022").unwrap();
        let mut trials = Vec::new();
        for s in 0..2 {
            for img in 0..20 {
                for rep in 1..=3 {
                    trials.push(TrialRecord {
                        subject_id: s,
                        image_id: s * 100 + img,
                        category_id: s * 100 + img,
                        repetition_index: rep,
                        session_id: 0,
                        onset_time: 0.0,
                    });
                }
            }
        }
        let pool: Vec<usize> = (0..trials.len()).collect();
        let kept = matched_trials(&spec, &trials, &pool, 8, 4).unwrap();
        assert_eq!(kept.len(), 2 * 8 * 3);
    }

    #[test]
    fn trial_table_csv_round_trip() {
        let trials = grid_trials(3, 2, 2, 3);
        let mut buf = Vec::new();
        write_trials_csv(&mut buf, &trials).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(
            "subject_id,image_id,category_id,repetition_index,session_id,onset_time\n"
        ));
        assert_eq!(read_trials_csv(buf.as_slice()).unwrap(), trials);
    }

    #[test]
    fn duplicate_trial_keys_rejected() {
        let mut trials = grid_trials(2, 1, 1, 2);
        trials.push(trials[0].clone());
        assert!(validate_trials(&trials).is_err());
    }

    #[test]
    fn published_registry_is_valid() {
        let all = published_datasets();
        assert_eq!(all.len(), 8);
        for d in &all {
            d.validate().unwrap();
        }
    }
}
