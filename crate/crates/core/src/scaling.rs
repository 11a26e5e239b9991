//! Log-linear scaling fits of decoding performance against data quantity,
//! threshold inversion, and the recording-cost model.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetSpec, DeviceKind};
use crate::error::{Error, Result};

/// What the x axis of a scaling fit measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum XKind {
    Trials,
    Hours,
    Usd,
}

impl std::str::FromStr for XKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "trials" => Ok(XKind::Trials),
            "hours" => Ok(XKind::Hours),
            "usd" => Ok(XKind::Usd),
            other => Err(Error::arg(format!("unknown x axis `{other}` (trials|hours|usd)"))),
        }
    }
}

/// `R = slope·log10(x) + intercept`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub device: Option<DeviceKind>,
    pub x_kind: XKind,
    pub slope: f64,
    pub intercept: f64,
    pub sem_slope: f64,
    pub sem_intercept: f64,
    pub n_points: usize,
}

/// Ordinary least squares of `R` on `log10(x)`, with standard errors from
/// the residual variance (`n − 2` degrees of freedom).
pub fn fit_loglinear(points: &[(f64, f64)], x_kind: XKind) -> Result<ScalingFit> {
    if let Some(&(x, _)) = points.iter().find(|p| !(p.0 > 0.0 && p.0.is_finite())) {
        return Err(Error::arg(format!("scaling x values must be positive, got {x}")));
    }
    if points.iter().any(|p| !p.1.is_finite()) {
        return Err(Error::arg("scaling R values must be finite"));
    }
    let mut pts: Vec<(f64, f64)> = points.iter().map(|&(x, r)| (x.log10(), r)).collect();
    // Sorting makes the sums, and hence the fit, independent of input order.
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut distinct = pts.iter().map(|p| p.0).collect::<Vec<_>>();
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::arg(format!("need at least 3 distinct x values, got {}", distinct.len())));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let s2 = ssr / (n - 2.0);
    Ok(ScalingFit {
        device: None,
        x_kind,
        slope,
        intercept,
        sem_slope: (s2 / sxx).sqrt(),
        sem_intercept: (s2 * (1.0 / n + mx * mx / sxx)).sqrt(),
        n_points: pts.len(),
    })
}

pub fn predict_at(fit: &ScalingFit, x: f64) -> f64 {
    fit.slope * x.log10() + fit.intercept
}

/// The `x` at which the fit reaches `r_star`.
pub fn solve_threshold(fit: &ScalingFit, r_star: f64) -> Result<f64> {
    if fit.slope == 0.0 || (fit.slope < 0.0 && r_star > fit.intercept) {
        return Err(Error::contract(format!(
            "threshold R = {r_star} is unreachable with slope {}",
            fit.slope
        )));
    }
    Ok(10f64.powf((r_star - fit.intercept) / fit.slope))
}

/// Result of comparing the slope of the upper end of a curve with the
/// slope of the whole curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateauReport {
    pub overall_slope: f64,
    pub tail_slope: f64,
    pub tail_sem: f64,
    pub plateau: bool,
}

/// Flags a plateau when even the optimistic end (`slope + 2·sem`) of the
/// log-linear slope fitted on the upper `tail_fraction` of x values stays
/// below `min_ratio` times the overall slope.
pub fn detect_plateau(points: &[(f64, f64)], tail_fraction: f64, min_ratio: f64) -> Result<PlateauReport> {
    let overall = fit_loglinear(points, XKind::Trials)?;
    let mut xs: Vec<f64> = points.iter().map(|p| p.0).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    let keep = ((xs.len() as f64 * tail_fraction).ceil() as usize).clamp(3, xs.len());
    let cut = xs[xs.len() - keep];
    let tail: Vec<(f64, f64)> = points.iter().copied().filter(|p| p.0 >= cut).collect();
    let t = fit_loglinear(&tail, XKind::Trials)?;
    let tail_sem = if t.sem_slope.is_finite() { t.sem_slope } else { 0.0 };
    let plateau = overall.slope > 0.0 && t.slope + 2.0 * tail_sem < min_ratio * overall.slope;
    Ok(PlateauReport { overall_slope: overall.slope, tail_slope: t.slope, tail_sem, plateau })
}

/// Hours of recording needed for `n_trials` presentations.
pub fn recording_time(n_trials: f64, soa_seconds: f64) -> f64 {
    n_trials * soa_seconds / 3600.0
}

pub fn estimate_cost(n_trials: f64, soa_seconds: f64, hourly_rate: f64) -> f64 {
    recording_time(n_trials, soa_seconds) * hourly_rate
}

/// Hourly scanner or lab cost per device, in USD.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostTable {
    pub rates: BTreeMap<DeviceKind, f64>,
}

impl Default for CostTable {
    fn default() -> Self {
        CostTable {
            rates: BTreeMap::from([
                (DeviceKind::Eeg, 263.0),
                (DeviceKind::Meg, 550.0),
                (DeviceKind::Fmri3T, 935.0),
                (DeviceKind::Fmri7T, 1093.0),
            ]),
        }
    }
}

impl CostTable {
    pub fn validate(&self) -> Result<()> {
        for (d, r) in &self.rates {
            if !(*r > 0.0 && r.is_finite()) {
                return Err(Error::contract(format!("hourly rate for {} must be positive, got {r}", d.as_str())));
            }
        }
        Ok(())
    }

    pub fn rate(&self, device: DeviceKind) -> Result<f64> {
        self.rates
            .get(&device)
            .copied()
            .ok_or_else(|| Error::arg(format!("no hourly rate for {}", device.as_str())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let table: CostTable = serde_json::from_str(&text)?;
        table.validate()?;
        Ok(table)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }
}

/// Converts a training-trial count to the chosen x axis.
pub fn x_value(kind: XKind, n_trials: f64, soa_seconds: f64, hourly_rate: f64) -> f64 {
    match kind {
        XKind::Trials => n_trials,
        XKind::Hours => recording_time(n_trials, soa_seconds),
        XKind::Usd => estimate_cost(n_trials, soa_seconds, hourly_rate),
    }
}

/// Acquisition cost of a dataset's training (train + validation) trials.
pub fn dataset_cost(spec: &DatasetSpec, table: &CostTable) -> Result<f64> {
    let counts = spec
        .counts
        .ok_or_else(|| Error::arg(format!("{} has no trial counts", spec.name)))?;
    Ok(estimate_cost(counts.all_trials as f64, spec.soa_seconds, table.rate(spec.device)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::published_datasets;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn planted(a: f64, b: f64, xs: &[f64]) -> Vec<(f64, f64)> {
        xs.iter().map(|&x| (x, a * x.log10() + b)).collect()
    }

    #[test]
    fn exact_lines() {
        let f = fit_loglinear(&[(10.0, 1.0), (100.0, 2.0), (1000.0, 3.0)], XKind::Trials).unwrap();
        assert!((f.slope - 1.0).abs() < 1e-12 && f.intercept.abs() < 1e-12);
        assert!(f.sem_slope < 1e-12 && f.sem_intercept < 1e-12);
        let f = fit_loglinear(&planted(0.075, -0.1, &[30.0, 100.0, 500.0, 2e3, 1e4, 8e4]), XKind::Hours).unwrap();
        assert!((f.slope - 0.075).abs() < 1e-9 && (f.intercept + 0.1).abs() < 1e-9);
    }

    #[test]
    fn degenerate_x_is_rejected() {
        assert!(fit_loglinear(&[(10.0, 1.0), (10.0, 2.0), (100.0, 3.0)], XKind::Trials).is_err());
        assert!(fit_loglinear(&[(0.0, 1.0), (10.0, 2.0), (100.0, 3.0)], XKind::Trials).is_err());
    }

    #[test]
    fn thresholds() {
        let f = ScalingFit {
            device: None,
            x_kind: XKind::Trials,
            slope: 1.0,
            intercept: 0.0,
            sem_slope: 0.0,
            sem_intercept: 0.0,
            n_points: 3,
        };
        assert!((solve_threshold(&f, 2.0).unwrap() - 100.0).abs() < 1e-9);
        assert_eq!(predict_at(&f, 10.0), 1.0);
        let crossing = planted(0.02, 0.01 - 0.02 * 57f64.log10(), &[10.0, 57.0, 300.0, 2000.0]);
        let g = fit_loglinear(&crossing, XKind::Trials).unwrap();
        assert!((solve_threshold(&g, 0.01).unwrap() - 57.0).abs() < 0.5);
        let flat = ScalingFit { slope: -0.1, ..f.clone() };
        assert!(solve_threshold(&flat, 1.0).is_err());
        assert!(solve_threshold(&ScalingFit { slope: 0.0, ..f }, 1.0).is_err());
    }

    #[test]
    fn fitted_residuals_match_least_squares() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pts: Vec<(f64, f64)> = (1..=12).map(|i| (1e3 * i as f64, 0.05 * i as f64 + rng.random_range(-0.01..0.01))).collect();
        let f = fit_loglinear(&pts, XKind::Usd).unwrap();
        let residuals: Vec<f64> = pts.iter().map(|p| p.1 - predict_at(&f, p.0)).collect();
        // Normal equations: residuals are orthogonal to [1, log10 x].
        let s0: f64 = residuals.iter().sum();
        let s1: f64 = residuals.iter().zip(&pts).map(|(r, p)| r * p.0.log10()).sum();
        assert!(s0.abs() < 1e-12 && s1.abs() < 1e-12);
    }

    #[test]
    fn sem_agrees_with_bootstrap() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let noise = Normal::new(0.0, 0.02).unwrap();
        let xs: Vec<f64> = (0..40).map(|i| 10f64.powf(1.0 + 3.0 * i as f64 / 39.0)).collect();
        let pts: Vec<(f64, f64)> = xs.iter().map(|&x| (x, 0.045 * x.log10() + 0.01 + noise.sample(&mut rng))).collect();
        let fit = fit_loglinear(&pts, XKind::Trials).unwrap();
        let residuals: Vec<f64> = pts.iter().map(|p| p.1 - predict_at(&fit, p.0)).collect();
        let inflate = (pts.len() as f64 / (pts.len() as f64 - 2.0)).sqrt();
        let mut slopes = Vec::with_capacity(10_000);
        for _ in 0..10_000 {
            let resampled: Vec<(f64, f64)> = xs
                .iter()
                .map(|&x| (x, predict_at(&fit, x) + inflate * residuals[rng.random_range(0..residuals.len())]))
                .collect();
            slopes.push(fit_loglinear(&resampled, XKind::Trials).unwrap().slope);
        }
        let m = slopes.iter().sum::<f64>() / slopes.len() as f64;
        let sd = (slopes.iter().map(|s| (s - m).powi(2)).sum::<f64>() / (slopes.len() - 1) as f64).sqrt();
        assert!((sd / fit.sem_slope - 1.0).abs() < 0.15, "bootstrap {sd} vs formula {}", fit.sem_slope);
    }

    #[test]
    fn increasing_curves_are_not_plateaus() {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts: Vec<(f64, f64)> = [50.0, 100.0, 200.0, 400.0, 800.0, 1600.0, 3200.0]
                .iter()
                .map(|&x| (x, 0.04 * f64::log10(x) + rng.random_range(-0.004..0.004)))
                .collect();
            assert!(!detect_plateau(&pts, 0.5, 0.25).unwrap().plateau, "seed {seed}");
        }
        let saturating: Vec<(f64, f64)> = [50.0, 100.0, 200.0, 400.0, 800.0, 1600.0, 3200.0, 6400.0]
            .iter()
            .map(|&x| (x, 0.3 * (1.0 - (-x / 150.0f64).exp())))
            .collect();
        assert!(detect_plateau(&saturating, 0.5, 0.25).unwrap().plateau);
    }

    #[test]
    fn recording_times() {
        assert!((recording_time(943_892.0, 0.1) - 26.2192).abs() < 1e-3);
        assert_eq!(recording_time(0.0, 0.6), 0.0);
        assert!((recording_time(108_000.0, 4.0) - 120.0).abs() < 1e-12);
    }

    #[test]
    fn published_dataset_costs() {
        let table = CostTable::default();
        let expected = [
            ("Xu2024", 1.5),
            ("Grootswagers2022", 6.9),
            ("Gifford2022", 9.7),
            ("Hebart2023meg", 19.4),
            ("Shen2019", 41.1),
            ("Hebart2023fmri", 26.0),
            ("Chang2019", 44.8),
            ("Allen2022", 131.2),
        ];
        for spec in published_datasets() {
            let k = expected.iter().find(|e| e.0 == spec.name).unwrap().1;
            let cost = dataset_cost(&spec, &table).unwrap() / 1000.0;
            assert!((cost - k).abs() <= 0.1, "{}: {cost:.3}k vs {k}k", spec.name);
        }
        assert!((estimate_cost(108_000.0, 4.0, 1093.0) - 131_160.0).abs() < 1e-6);
        assert!((estimate_cost(19_800.0, 8.0, 935.0) - 41_140.0).abs() < 1e-6);
    }

    #[test]
    fn cost_table_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("costs.json");
        CostTable::default().save(&path).unwrap();
        assert_eq!(CostTable::load(&path).unwrap(), CostTable::default());
        std::fs::write(&path, r#"{"rates": {"eeg": -1.0}}"#).unwrap();
        assert!(CostTable::load(&path).is_err());
    }

    proptest! {
        #[test]
        fn cost_is_linear(n in 0.0..1e6f64, k in 0.0..10.0f64, soa in 0.05..10.0f64, rate in 1.0..2000.0f64) {
            let base = estimate_cost(n, soa, rate);
            prop_assert!((estimate_cost(k * n, soa, rate) - k * base).abs() <= 1e-9 * base.max(1.0) * k.max(1.0));
            prop_assert!((estimate_cost(n, soa, k * rate) - k * base).abs() <= 1e-9 * base.max(1.0) * k.max(1.0));
        }

        #[test]
        fn fit_ignores_point_order(pts in proptest::collection::vec((1.0..1e5f64, -1.0..1.0f64), 4..20), seed in any::<u64>()) {
            prop_assume!({
                let mut xs: Vec<f64> = pts.iter().map(|p| p.0.log10()).collect();
                xs.sort_by(f64::total_cmp);
                xs.dedup();
                xs.len() >= 3
            });
            let mut shuffled = pts.clone();
            use rand::seq::SliceRandom;
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(fit_loglinear(&pts, XKind::Trials).unwrap(), fit_loglinear(&shuffled, XKind::Trials).unwrap());
        }

        #[test]
        fn prediction_is_monotone_for_positive_slope(a in 1e-4..1.0f64, b in -1.0..1.0f64, x in 1.0..1e6f64, y in 1.0..1e6f64) {
            let f = ScalingFit { device: None, x_kind: XKind::Trials, slope: a, intercept: b, sem_slope: 0.0, sem_intercept: 0.0, n_points: 3 };
            let (lo, hi) = if x < y { (x, y) } else { (y, x) };
            prop_assert!(predict_at(&f, lo) <= predict_at(&f, hi));
        }

        #[test]
        fn threshold_round_trip(a in 0.001..1.0f64, b in -1.0..1.0f64, r in -0.5..0.5f64) {
            let f = ScalingFit { device: None, x_kind: XKind::Trials, slope: a, intercept: b, sem_slope: 0.0, sem_intercept: 0.0, n_points: 3 };
            let x = solve_threshold(&f, r).unwrap();
            prop_assume!(x.is_finite() && x > 0.0);
            prop_assert!((predict_at(&f, x) - r).abs() < 1e-12);
        }
    }
}
