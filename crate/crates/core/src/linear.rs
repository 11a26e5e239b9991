//! Ridge regression with cross-validated penalty selection, per-timepoint
//! decoding and single-channel encoding.

use nalgebra::DMatrix;
use ndarray::{s, Array1, Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{EmbeddingMatrix, SplitAssignment, TrialRecord};
use crate::error::{Error, Result};
use crate::eval::{pearson, pearson_featurewise};
use crate::preprocess::EpochSet;

/// `n` log-spaced values from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.log10(), hi.log10());
    (0..n).map(|i| 10f64.powf(a + (b - a) * i as f64 / (n - 1) as f64)).collect()
}

/// 33 penalties over `[1e-4, 1e8]`.
pub fn decoding_alpha_grid() -> Vec<f64> {
    log_grid(1e-4, 1e8, 33)
}

/// 35 penalties over `[1e-12, 1e22]`.
pub fn encoding_alpha_grid() -> Vec<f64> {
    log_grid(1e-12, 1e22, 35)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CvMode {
    /// Exact leave-one-out residuals from the hat-matrix diagonal.
    Loo,
    /// `k` interleaved folds (row `i` is held out in fold `i % k`).
    KFold(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RidgeOptions {
    pub cv: CvMode,
    pub fit_intercept: bool,
    /// Select a penalty per target column instead of one for all.
    pub alpha_per_target: bool,
}

impl Default for RidgeOptions {
    fn default() -> Self {
        RidgeOptions {
            cv: CvMode::Loo,
            fit_intercept: true,
            alpha_per_target: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RidgeFit {
    /// `q × p`: one row per target.
    pub weights: Array2<f64>,
    pub intercept: Array1<f64>,
    pub alpha_selected: f64,
    /// Selected penalty of each target (all equal unless chosen per target).
    pub alpha_per_target: Vec<f64>,
    pub alpha_grid: Vec<f64>,
    /// Mean cross-validated squared error per grid point, averaged over targets.
    pub cv_errors: Vec<f64>,
}

impl RidgeFit {
    pub fn predict(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.weights.ncols() {
            return Err(Error::Shape {
                axis: "features",
                expected: self.weights.ncols(),
                got: x.ncols(),
            });
        }
        Ok(x.dot(&self.weights.t()) + &self.intercept)
    }
}

fn to_na(a: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

fn from_na(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

fn column_means(a: &Array2<f64>) -> Array1<f64> {
    a.mean_axis(Axis(0)).unwrap_or_else(|| Array1::zeros(a.ncols()))
}

/// When both sides of the design exceed this, it is decomposed through the
/// Gram matrix of its smaller side, an order of magnitude faster than a
/// direct SVD.
const GRAM_MIN_FEATURES: usize = 128;

/// Relative eigenvalue floor below which Gram components are dropped.
const GRAM_RANK_TOL: f64 = 1e-13;

/// Thin SVD of a tall matrix from the eigendecomposition of `XᵀX`.
fn gram_svd(x: &Array2<f64>) -> (Array2<f64>, Vec<f64>, Array2<f64>) {
    let eig = to_na(&x.t().dot(x)).symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let top = eig.eigenvalues[order[0]].max(0.0);
    order.retain(|&k| eig.eigenvalues[k] > top * GRAM_RANK_TOL);
    let v = Array2::from_shape_fn((x.ncols(), order.len()), |(i, k)| eig.eigenvectors[(i, order[k])]);
    let s: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k].sqrt()).collect();
    let mut u = x.dot(&v);
    for (mut col, sk) in u.axis_iter_mut(Axis(1)).zip(&s) {
        col /= *sk;
    }
    (u, s, v.reversed_axes())
}

/// Thin SVD of the (optionally centered) design, reused across penalties.
struct Decomposition {
    u: Array2<f64>,
    s: Vec<f64>,
    vt: Array2<f64>,
    x_mean: Array1<f64>,
    y_mean: Array1<f64>,
    /// `Uᵀ Y_c`.
    uty: Array2<f64>,
}

impl Decomposition {
    fn new(x: &Array2<f64>, y: &Array2<f64>, fit_intercept: bool) -> Self {
        let (x_mean, y_mean) = if fit_intercept {
            (column_means(x), column_means(y))
        } else {
            (Array1::zeros(x.ncols()), Array1::zeros(y.ncols()))
        };
        let xc = x - &x_mean;
        let yc = y - &y_mean;
        let (u, s, vt) = if xc.nrows().min(xc.ncols()) > GRAM_MIN_FEATURES {
            if xc.nrows() >= xc.ncols() {
                gram_svd(&xc)
            } else {
                let (u, s, vt) = gram_svd(&xc.t().to_owned());
                (vt.reversed_axes(), s, u.reversed_axes())
            }
        } else {
            let svd = to_na(&xc).svd(true, true);
            let u = from_na(&svd.u.expect("requested U"));
            let vt = from_na(&svd.v_t.expect("requested Vᵀ"));
            (u, svd.singular_values.iter().copied().collect(), vt)
        };
        let uty = u.t().dot(&yc);
        Decomposition {
            u,
            s,
            vt,
            x_mean,
            y_mean,
            uty,
        }
    }

    /// `p × q` coefficients for penalty `alpha`.
    fn coefficients(&self, alpha: f64) -> Array2<f64> {
        let mut scaled = self.uty.clone();
        for (k, mut row) in scaled.axis_iter_mut(Axis(0)).enumerate() {
            let s = self.s[k];
            let f = if s == 0.0 { 0.0 } else { s / (s * s + alpha) };
            row *= f;
        }
        self.vt.t().dot(&scaled)
    }

    /// Leave-one-out squared error per target for penalty `alpha`.
    fn loo_errors(&self, y: &Array2<f64>, alpha: f64, fit_intercept: bool) -> Array1<f64> {
        let n = self.u.nrows();
        let shrink: Vec<f64> = self.s.iter().map(|s| s * s / (s * s + alpha)).collect();
        let mut scaled = self.uty.clone();
        for (k, mut row) in scaled.axis_iter_mut(Axis(0)).enumerate() {
            row *= shrink[k];
        }
        let fitted = self.u.dot(&scaled) + &self.y_mean;
        let base = if fit_intercept { 1.0 / n as f64 } else { 0.0 };
        let hat: Vec<f64> = self
            .u
            .rows()
            .into_iter()
            .map(|r| base + r.iter().zip(&shrink).map(|(u, f)| u * u * f).sum::<f64>())
            .collect();
        let mut err = Array1::zeros(y.ncols());
        for i in 0..n {
            let denom = (1.0 - hat[i]).max(1e-12);
            for j in 0..y.ncols() {
                let e = (y[[i, j]] - fitted[[i, j]]) / denom;
                err[j] += e * e;
            }
        }
        err / n as f64
    }
}

fn solve_with(dec: &Decomposition, alphas: &[f64]) -> (Array2<f64>, Array1<f64>) {
    let q = dec.y_mean.len();
    let p = dec.x_mean.len();
    let mut weights = Array2::zeros((q, p));
    if alphas.iter().all(|a| *a == alphas[0]) {
        weights.assign(&dec.coefficients(alphas[0]).t());
    } else {
        for (j, &a) in alphas.iter().enumerate() {
            let w = dec.coefficients(a);
            weights.row_mut(j).assign(&w.column(j));
        }
    }
    let intercept = &dec.y_mean - &weights.dot(&dec.x_mean);
    (weights, intercept)
}

fn check_inputs(x: &Array2<f64>, y: &Array2<f64>, grid: &[f64]) -> Result<()> {
    if x.nrows() != y.nrows() {
        return Err(Error::Shape {
            axis: "rows",
            expected: x.nrows(),
            got: y.nrows(),
        });
    }
    if x.nrows() < 2 {
        return Err(Error::arg(format!("ridge needs at least 2 rows, got {}", x.nrows())));
    }
    if grid.is_empty() || grid.iter().any(|a| !(*a > 0.0) || !a.is_finite()) {
        return Err(Error::arg("alpha grid must be non-empty with finite positive values"));
    }
    Ok(())
}

/// Fits ridge for one fixed penalty.
pub fn ridge_solve(x: &Array2<f64>, y: &Array2<f64>, alpha: f64, fit_intercept: bool) -> Result<RidgeFit> {
    check_inputs(x, y, &[alpha])?;
    let dec = Decomposition::new(x, y, fit_intercept);
    let (weights, intercept) = solve_with(&dec, &vec![alpha; y.ncols()]);
    Ok(RidgeFit {
        weights,
        intercept,
        alpha_selected: alpha,
        alpha_per_target: vec![alpha; y.ncols()],
        alpha_grid: vec![alpha],
        cv_errors: vec![f64::NAN],
    })
}

fn loo_error_table(dec: &Decomposition, y: &Array2<f64>, grid: &[f64], fit_intercept: bool) -> Array2<f64> {
    let mut table = Array2::zeros((grid.len(), y.ncols()));
    for (g, &a) in grid.iter().enumerate() {
        table.row_mut(g).assign(&dec.loo_errors(y, a, fit_intercept));
    }
    table
}

/// K-fold cross-validated error of every grid penalty, `grid × targets`.
fn kfold_error_table(x: &Array2<f64>, y: &Array2<f64>, grid: &[f64], k: usize, fit_intercept: bool) -> Result<Array2<f64>> {
    let n = x.nrows();
    if k < 2 || k > n {
        return Err(Error::arg(format!("k-fold needs 2 <= k <= n, got k = {k}, n = {n}")));
    }
    let mut table = Array2::zeros((grid.len(), y.ncols()));
    for fold in 0..k {
        let (test, train): (Vec<usize>, Vec<usize>) = (0..n).partition(|i| i % k == fold);
        let (xt, yt) = (x.select(Axis(0), &train), y.select(Axis(0), &train));
        let (xv, yv) = (x.select(Axis(0), &test), y.select(Axis(0), &test));
        let dec = Decomposition::new(&xt, &yt, fit_intercept);
        for (g, &a) in grid.iter().enumerate() {
            let w = dec.coefficients(a);
            let b = &dec.y_mean - &w.t().dot(&dec.x_mean);
            let resid = &yv - &(xv.dot(&w) + &b);
            let sq = resid.mapv(|v| v * v).sum_axis(Axis(0));
            let mut row = table.row_mut(g);
            row += &sq;
        }
    }
    table /= n as f64;
    Ok(table)
}

/// Fits ridge regression of `y` (`n × q`) on `x` (`n × p`), selecting the
/// penalty from `grid` by cross-validated squared error. The first grid
/// point wins ties.
pub fn ridge_fit(x: &Array2<f64>, y: &Array2<f64>, grid: &[f64], opts: &RidgeOptions) -> Result<RidgeFit> {
    check_inputs(x, y, grid)?;
    let dec = Decomposition::new(x, y, opts.fit_intercept);
    let table = match opts.cv {
        CvMode::Loo => loo_error_table(&dec, y, grid, opts.fit_intercept),
        CvMode::KFold(k) => kfold_error_table(x, y, grid, k, opts.fit_intercept)?,
    };
    let argmin = |vals: &mut dyn Iterator<Item = f64>| {
        vals.enumerate()
            .fold((0, f64::INFINITY), |best, (i, v)| if v < best.1 { (i, v) } else { best })
            .0
    };
    let cv_errors: Vec<f64> = table.rows().into_iter().map(|r| r.mean().unwrap_or(0.0)).collect();
    let best = argmin(&mut cv_errors.iter().copied());
    let alpha_per_target: Vec<f64> = if opts.alpha_per_target {
        (0..y.ncols())
            .map(|j| grid[argmin(&mut table.column(j).iter().copied())])
            .collect()
    } else {
        vec![grid[best]; y.ncols()]
    };
    let (weights, intercept) = solve_with(&dec, &alpha_per_target);
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::contract("ridge produced non-finite weights"));
    }
    Ok(RidgeFit {
        weights,
        intercept,
        alpha_selected: grid[best],
        alpha_per_target,
        alpha_grid: grid.to_vec(),
        cv_errors,
    })
}

/// Decoding score at one timepoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimepointScore {
    pub timepoint_s: f64,
    #[serde(rename = "R")]
    pub r: f64,
}

/// Epoch rows whose trial id is in `ids`, in epoch order.
pub fn rows_for_trials(epochs: &EpochSet, ids: &[usize]) -> Vec<usize> {
    let wanted: std::collections::BTreeSet<usize> = ids.iter().copied().collect();
    (0..epochs.n_trials()).filter(|&r| wanted.contains(&epochs.trial_ids[r])).collect()
}

/// Training and test matrices for decoding: rows of the epoch set split by
/// `splits` (train∪valid vs test) with targets z-scored by training-image
/// statistics.
pub struct DecodingData {
    pub train_rows: Vec<usize>,
    pub test_rows: Vec<usize>,
    pub y_train: Array2<f64>,
    pub y_test: Array2<f64>,
}

impl DecodingData {
    pub fn new(
        epochs: &EpochSet,
        trials: &[TrialRecord],
        embeddings: &EmbeddingMatrix,
        splits: &SplitAssignment,
    ) -> Result<Self> {
        let train_rows = rows_for_trials(epochs, &splits.train_valid());
        let test_rows = rows_for_trials(epochs, &splits.test);
        if train_rows.len() < 2 || test_rows.len() < 3 {
            return Err(Error::contract(format!(
                "decoding needs >= 2 training and >= 3 test trials, got {} and {}",
                train_rows.len(),
                test_rows.len()
            )));
        }
        let image = |r: &usize| trials[epochs.trial_ids[*r]].image_id;
        let train_images: Vec<usize> = train_rows.iter().map(image).collect();
        let test_images: Vec<usize> = test_rows.iter().map(image).collect();
        let stats = embeddings.stats_for(&train_images)?;
        let y_train = crate::dataset::zscore_with(&embeddings.rows_for(&train_images)?, &stats);
        let y_test = crate::dataset::zscore_with(&embeddings.rows_for(&test_images)?, &stats);
        Ok(DecodingData {
            train_rows,
            test_rows,
            y_train,
            y_test,
        })
    }
}

/// Fits one ridge decoder per timepoint from the `S` channel values to the
/// embedding and reports the feature-wise Pearson R on the test trials.
pub fn stepwise_decode(
    epochs: &EpochSet,
    trials: &[TrialRecord],
    embeddings: &EmbeddingMatrix,
    splits: &SplitAssignment,
    grid: &[f64],
) -> Result<Vec<TimepointScore>> {
    let data = DecodingData::new(epochs, trials, embeddings, splits)?;
    let opts = RidgeOptions::default();
    (0..epochs.timepoints())
        .into_par_iter()
        .map(|t| {
            let slice = epochs.data.slice(s![.., .., t]);
            let x_train = slice.select(Axis(0), &data.train_rows);
            let x_test = slice.select(Axis(0), &data.test_rows);
            let fit = ridge_fit(&x_train, &data.y_train, grid, &opts)?;
            let r = pearson_featurewise(&fit.predict(&x_test)?, &data.y_test)?;
            Ok(TimepointScore {
                timepoint_s: epochs.time_of(t),
                r,
            })
        })
        .collect()
}

/// Ridge decoder on the flattened `S × T` epoch, returning the fit and the
/// test-set predictions (z-scored embedding space).
pub fn full_window_decode(
    epochs: &EpochSet,
    trials: &[TrialRecord],
    embeddings: &EmbeddingMatrix,
    splits: &SplitAssignment,
    grid: &[f64],
) -> Result<(RidgeFit, Array2<f64>, f64)> {
    let data = DecodingData::new(epochs, trials, embeddings, splits)?;
    let flat = epochs.flatten_trials();
    let fit = ridge_fit(&flat.select(Axis(0), &data.train_rows), &data.y_train, grid, &RidgeOptions::default())?;
    let pred = fit.predict(&flat.select(Axis(0), &data.test_rows))?;
    let r = pearson_featurewise(&pred, &data.y_test)?;
    Ok((fit, pred, r))
}

/// Encoding score of one channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelScore {
    pub channel: usize,
    #[serde(rename = "R")]
    pub r: f64,
}

/// Predicts each channel's response (`n × C`) from image features (`n × F`)
/// with interleaved `folds`-fold cross-validation and returns the Pearson R
/// between held-out predictions and responses.
///
/// With `lags > 0`, the features of the `lags` preceding trials in row order
/// are concatenated to each row (zeros before the first trial).
pub fn encode(
    features: &Array2<f64>,
    responses: &Array2<f64>,
    grid: &[f64],
    folds: usize,
    lags: usize,
) -> Result<Vec<ChannelScore>> {
    let n = features.nrows();
    if responses.nrows() != n {
        return Err(Error::Shape {
            axis: "rows",
            expected: n,
            got: responses.nrows(),
        });
    }
    if folds < 2 || folds > n {
        return Err(Error::arg(format!("encoding needs 2 <= folds <= n, got {folds}")));
    }
    let f = features.ncols();
    let mut design = Array2::zeros((n, f * (lags + 1)));
    for lag in 0..=lags {
        for i in lag..n {
            design.slice_mut(s![i, lag * f..(lag + 1) * f]).assign(&features.row(i - lag));
        }
    }
    let opts = RidgeOptions {
        alpha_per_target: true,
        ..RidgeOptions::default()
    };
    let mut predicted = Array2::zeros(responses.dim());
    for fold in 0..folds {
        let (test, train): (Vec<usize>, Vec<usize>) = (0..n).partition(|i| i % folds == fold);
        let fit = ridge_fit(
            &design.select(Axis(0), &train),
            &responses.select(Axis(0), &train),
            grid,
            &opts,
        )?;
        let pred = fit.predict(&design.select(Axis(0), &test))?;
        for (k, &i) in test.iter().enumerate() {
            predicted.row_mut(i).assign(&pred.row(k));
        }
    }
    Ok((0..responses.ncols())
        .map(|c| {
            let r = pearson(predicted.column(c), responses.column(c)).unwrap_or_else(|| {
                log::warn!("channel {c} is constant; encoding R set to 0");
                0.0
            });
            ChannelScore { channel: c, r }
        })
        .collect())
}
