//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! `cargo test --test acceptance`; set `ACCEPTANCE_ONLY=7,9` to run a subset.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use ndarray::{array, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use neurodec::dataset::{
    make_splits, matched_trials_by_design, published_datasets, DeviceKind, ImageDesign, Sampling, SplitAssignment,
};
use neurodec::eval::{average_k_repetitions, pearson_featurewise, spearman, wilcoxon_signed_rank, AveragingScope, Head};
use neurodec::linear::{decoding_alpha_grid, log_grid, ridge_fit, ridge_solve, RidgeOptions};
use neurodec::nn::meeg::MeegConfig;
use neurodec::nn::fmri::FmriConfig;
use neurodec::nn::{published_config, param_rows, probe_objective, BrainConfig, BrainModel, ModelParams, ModelSize, Mode};
use neurodec::pipeline::{
    desk_train_config, mean_peak_r, per_subject_r, prediction_set, preprocess_recordings, score_predictions,
    sensor_positions, stepwise_subject_curves, targets_for, window_mode, windowed_deep_curves, RidgeDecoder,
};
use neurodec::preprocess::{
    epoch, fmri_epoch, highpass_downsample, ContinuousRecording, Event, FmriRun, PreprocessReport, TimedEvent,
};
use neurodec::scaling::{dataset_cost, detect_plateau, fit_loglinear, predict_at, solve_threshold, CostTable, XKind};
use neurodec::synth::{generate_continuous, preset};
use neurodec::training::{clip_loss, combined_loss, combined_with_grad, LossConfig};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn fail<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

// 1 ---------------------------------------------------------------------------

fn parameter_counts() -> Outcome {
    use DeviceKind::*;
    use ModelSize::*;
    let start = Instant::now();
    let cases = [
        (Eeg, Medium, 4_219_533),
        (Eeg, Large, 20_799_113),
        (Meg, Medium, 1_120_459),
        (Meg, Large, 14_598_572),
        (Fmri7T, Medium, 39_342_590),
        (Fmri7T, Large, 146_329_206),
    ];
    for (device, size, total) in cases {
        let config = published_config(device, size);
        let got = config.param_count();
        check(got == total, format!("{device:?} {size:?}: {got} != {total}"))?;
        let rows: usize = param_rows(&config).iter().map(|r| r.1).sum();
        check(rows == total, format!("{device:?} {size:?}: rows sum to {rows}"))?;
    }
    let row = |d, s, name: &str| {
        param_rows(&published_config(d, s)).into_iter().find(|r| r.0 == name).map(|r| r.1)
    };
    check(row(Eeg, Large, "spatial attention") == Some(552_960), "spatial attention row")?;
    check(row(Fmri7T, Large, "subject layer") == Some(127_164_672), "fMRI large subject layer row")?;
    let elapsed = start.elapsed();
    check(elapsed < Duration::from_secs(1), format!("took {elapsed:?}"))?;
    Ok(format!("six totals and per-layer rows exact in {:.1} ms", elapsed.as_secs_f64() * 1e3))
}

// 2 ---------------------------------------------------------------------------

fn acquisition_costs() -> Outcome {
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
    let table = CostTable::default();
    let datasets = published_datasets();
    let mut worst: f64 = 0.0;
    for (name, k) in expected {
        let spec = datasets.iter().find(|d| d.name == name).ok_or(format!("missing dataset {name}"))?;
        let got = dataset_cost(spec, &table).map_err(fail)? / 1000.0;
        worst = worst.max((got - k).abs());
        check((got - k).abs() <= 0.1 + 1e-12, format!("{name}: ${got:.3}k vs ${k}k"))?;
    }
    Ok(format!("8 datasets within $0.1k (largest gap ${worst:.3}k)"))
}

// 3 ---------------------------------------------------------------------------

fn loss_closed_forms() -> Outcome {
    let single = clip_loss(&array![[0.4, -1.0, 2.0]], &array![[3.0, 0.5, -0.2]], 1.0).map_err(fail)?;
    check(single.value == 0.0, format!("B=1 gives {}", single.value))?;
    let eye = array![[1.0, 0.0], [0.0, 1.0]];
    let matched = clip_loss(&eye, &eye, 1.0).map_err(fail)?.value;
    let oracle = (1.0 + (-1.0f64).exp()).ln();
    check((matched - oracle).abs() < 1e-9, format!("B=2 matched {matched} vs {oracle}"))?;
    for (c, m) in [(2.0, 4.0), (0.7, -1.3), (1e3, 3e-3)] {
        let got = combined_loss(c, m, 0.25);
        check(got == 0.25 * c + 0.75 * m, format!("λ=0.25 at ({c}, {m}) gives {got}"))?;
    }
    Ok(format!("B=1 → 0, B=2 → {matched:.12}, λ=0.25 affine"))
}

// 4 ---------------------------------------------------------------------------

fn uniform2(shape: (usize, usize), rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn(shape, || rng.random_range(-1.0..1.0))
}

fn module_gradient_error(config: BrainConfig, mode: Mode, seed: u64) -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (s, t) = config.input_shape();
    let positions = Array2::from_shape_simple_fn((s, 2), || rng.random_range(0.05..0.95));
    let f = config.embed_dim();
    let model = BrainModel::new(config, Some(&positions)).map_err(fail)?;
    let (mut p, b) = model.init(seed);
    for v in p.data.iter_mut() {
        *v += rng.random_range(-0.1..0.1);
    }
    let x = Array3::from_shape_simple_fn((3, s, t), || rng.random_range(-1.0..1.0));
    let ids = [0, 1, 1];
    let (d_mse, d_clip) = (uniform2((3, f), &mut rng), uniform2((3, f), &mut rng));
    let pass = model.forward(&p, &b, x.view(), &ids, mode).map_err(fail)?;
    let analytic = pass.backward(&p.layout, &d_mse, &d_clip);
    let objective = |q: &ModelParams| -> f64 {
        let pass = model.forward(q, &b, x.view(), &ids, mode).expect("forward");
        probe_objective(&pass, &d_mse, &d_clip)
    };
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (i, seg) in p.layout.segments().iter().enumerate() {
        let mut num = Vec::with_capacity(seg.len());
        for j in seg.range() {
            let mut q = p.clone();
            q.data[j] += h;
            let up = objective(&q);
            q.data[j] -= 2.0 * h;
            num.push((up - objective(&q)) / (2.0 * h));
        }
        let diff = analytic.segment(i).iter().zip(&num).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
        let scale = num.iter().map(|n| n * n).sum::<f64>().sqrt().max(1e-6);
        worst = worst.max(diff / scale);
    }
    Ok(worst)
}

fn loss_gradient_error(seed: u64) -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (cp, mp, t) = (uniform2((4, 3), &mut rng), uniform2((4, 3), &mut rng), uniform2((4, 3), &mut rng));
    let cfg = LossConfig { lambda: 0.3, tau: 0.7 };
    let l = combined_with_grad(&cp, &mp, &t, &cfg).map_err(fail)?;
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for (which, base, ana) in [(0, &cp, &l.d_clip), (1, &mp, &l.d_mse)] {
        let mut num = Array2::zeros(base.dim());
        for idx in ndarray::indices(base.dim()) {
            let eval = |delta: f64| {
                let mut p = base.clone();
                p[idx] += delta;
                let (c, m) = if which == 0 { (&p, &mp) } else { (&cp, &p) };
                combined_with_grad(c, m, &t, &cfg).expect("loss").value
            };
            num[idx] = (eval(h) - eval(-h)) / (2.0 * h);
        }
        let diff = (&num - ana).mapv(|v| v * v).sum().sqrt();
        worst = worst.max(diff / num.mapv(|v| v * v).sum().sqrt().max(1e-8));
    }
    Ok(worst)
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let meeg = BrainConfig::Meeg(MeegConfig {
        in_channels: 6,
        timepoints: 12,
        sa_out: 4,
        sa_harmonics: 3,
        hidden: 4,
        n_blocks: 2,
        backbone_out: 6,
        embed_dim: 5,
        n_subjects: 2,
    });
    let fmri = |clip_head| {
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
    };
    let errors = [
        ("M/EEG train", module_gradient_error(meeg.clone(), Mode::Train { seed: 3 }, 1)?),
        ("M/EEG eval", module_gradient_error(meeg, Mode::Eval, 2)?),
        ("fMRI train", module_gradient_error(fmri(true), Mode::Train { seed: 3 }, 3)?),
        ("fMRI eval", module_gradient_error(fmri(false), Mode::Eval, 4)?),
        ("losses", (0..8).map(loss_gradient_error).collect::<Result<Vec<_>, _>>()?.into_iter().fold(0.0, f64::max)),
    ];
    for (name, e) in &errors {
        check(*e < 1e-4, format!("{name}: relative error {e:.2e}"))?;
    }
    let elapsed = start.elapsed();
    check(elapsed < Duration::from_secs(120), format!("took {elapsed:?}"))?;
    let worst = errors.iter().map(|e| e.1).fold(0.0, f64::max);
    Ok(format!("worst relative error {worst:.2e} in {:.1} s", elapsed.as_secs_f64()))
}

// 5 ---------------------------------------------------------------------------

/// Centered normal-equation solve, `q × p`.
fn normal_equations(x: &Array2<f64>, y: &Array2<f64>, alpha: f64) -> Array2<f64> {
    let (n, p, q) = (x.nrows(), x.ncols(), y.ncols());
    let xm = DMatrix::from_fn(n, p, |i, j| x[[i, j]]);
    let ym = DMatrix::from_fn(n, q, |i, j| y[[i, j]]);
    let center = |m: &DMatrix<f64>| {
        let mut c = m.clone();
        for mut col in c.column_iter_mut() {
            let mean = col.mean();
            col.add_scalar_mut(-mean);
        }
        c
    };
    let (xc, yc) = (center(&xm), center(&ym));
    let a = xc.transpose() * &xc + DMatrix::identity(p, p) * alpha;
    let w = a.cholesky().expect("positive definite").solve(&(xc.transpose() * yc));
    Array2::from_shape_fn((q, p), |(i, j)| w[(j, i)])
}

fn ridge_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let grid = decoding_alpha_grid();
    let mut worst: f64 = 0.0;
    for system in 0..50 {
        // Every tenth system is large enough to take the Gram-matrix path.
        let (n, p) = if system % 10 == 9 {
            (rng.random_range(300..400), rng.random_range(140..180))
        } else {
            (rng.random_range(15..80), rng.random_range(2..14))
        };
        let q = rng.random_range(1..5);
        let x = uniform2((n, p), &mut rng);
        let w_true = uniform2((p, q), &mut rng);
        let y = x.dot(&w_true) + uniform2((n, q), &mut rng) * rng.random_range(0.1..2.0);
        let fit = ridge_fit(&x, &y, &grid, &RidgeOptions::default()).map_err(fail)?;
        let oracle = normal_equations(&x, &y, fit.alpha_selected);
        let err = (&fit.weights - &oracle).iter().fold(0.0f64, |m, d| m.max(d.abs()));
        worst = worst.max(err);
        check(err < 1e-8, format!("system {system} ({n}x{p}): max |Δw| = {err:.2e}"))?;
    }
    // Coefficient norm never grows with the penalty.
    let (x, y) = (uniform2((40, 8), &mut rng), uniform2((40, 3), &mut rng));
    let mut last = f64::INFINITY;
    for alpha in log_grid(1e-4, 1e8, 61) {
        let norm = ridge_solve(&x, &y, alpha, true).map_err(fail)?.weights.mapv(|v| v * v).sum().sqrt();
        check(norm <= last * (1.0 + 1e-12), format!("norm grew at α = {alpha:.3e}"))?;
        last = norm;
    }
    Ok(format!("50 systems, max |Δw| {worst:.2e}; shrinkage monotone over 61 penalties"))
}

// 6 ---------------------------------------------------------------------------

fn epoch_shapes() -> Outcome {
    let mut parts = Vec::new();
    for spec in published_datasets() {
        let mut report = PreprocessReport::default();
        let t = match spec.sampling {
            Sampling::Hz(rate) => {
                let n = (12.0 * rate) as usize;
                let rec = ContinuousRecording {
                    data: Array2::from_shape_fn((2, n), |(c, i)| ((c + 1) as f64 * i as f64 * 0.01).sin()),
                    sampling_rate: rate,
                    channel_positions: None,
                    events: [4.0, 8.0]
                        .iter()
                        .enumerate()
                        .map(|(k, s)| Event { sample: (s * rate) as usize, image_id: k, trial_id: k })
                        .collect(),
                };
                let down = highpass_downsample(&rec, 0.1, 120.0, &mut report).map_err(fail)?;
                epoch(&down, spec.epoch_window, spec.baseline_window(), &mut report).map_err(fail)?.timepoints()
            }
            Sampling::TrSeconds(tr) => {
                let run = FmriRun {
                    data: Array2::zeros((2, 60)),
                    tr_seconds: tr,
                    events: vec![TimedEvent { onset_s: 10.0, image_id: 0, trial_id: 0 }],
                };
                fmri_epoch(&run, spec.epoch_window, &mut report).map_err(fail)?.timepoints()
            }
        };
        match (spec.name.as_str(), spec.device.is_fmri()) {
            ("Gifford2022", _) => check(t == 144, format!("EEG window gives T = {t}"))?,
            ("Hebart2023meg", _) => check(t == 180, format!("MEG window gives T = {t}"))?,
            (_, true) => check(t == 5, format!("{} gives {t} TRs", spec.name))?,
            _ => {}
        }
        parts.push(format!("{}={t}", spec.name));
    }
    Ok(format!("EEG 144, MEG 180, fMRI 5 TRs ({})", parts.join(" ")))
}

// 7 ---------------------------------------------------------------------------

fn device_ordering_and_deep_gain() -> Outcome {
    let start = Instant::now();
    let devices = [DeviceKind::Eeg, DeviceKind::Meg, DeviceKind::Fmri3T, DeviceKind::Fmri7T];
    let mut ordered = 0;
    let (mut ridge_eeg, mut deep_eeg) = (Vec::new(), Vec::new());
    let mut lines = Vec::new();
    for seed in 0..3u64 {
        let mut peaks = Vec::new();
        for device in devices {
            let mut cfg = preset(device);
            cfg.seed = seed;
            let synth = generate_continuous(&cfg).map_err(fail)?;
            let mut report = PreprocessReport::default();
            let epochs = preprocess_recordings(&synth.raw, cfg.sampling, cfg.window, &mut report).map_err(fail)?;
            let splits = make_splits(&synth.trials, &cfg.test_categories(), 0.2, seed).map_err(fail)?;
            let curves =
                stepwise_subject_curves(&epochs, &synth.trials, &synth.embeddings, &splits, &decoding_alpha_grid())
                    .map_err(fail)?;
            let maps: Vec<_> = curves.into_iter().map(|(_, m)| m).collect();
            let peak = mean_peak_r(&maps);
            peaks.push(peak);
            if device == DeviceKind::Eeg {
                ridge_eeg.push(peak);
                let deep = windowed_deep_curves(
                    device,
                    &epochs,
                    sensor_positions(&synth.raw).as_ref(),
                    &synth.trials,
                    &synth.embeddings,
                    &splits,
                    window_mode("sliding", &epochs).map_err(fail)?,
                    &desk_train_config(seed),
                )
                .map_err(fail)?;
                let maps: Vec<_> = deep.into_iter().map(|(_, m)| m).collect();
                deep_eeg.push(mean_peak_r(&maps));
            }
        }
        if peaks.windows(2).all(|w| w[0] < w[1]) {
            ordered += 1;
        }
        lines.push(format!(
            "seed {seed}: EEG {:.3} MEG {:.3} 3T {:.3} 7T {:.3}",
            peaks[0], peaks[1], peaks[2], peaks[3]
        ));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let ratio = mean(&deep_eeg) / mean(&ridge_eeg);
    let elapsed = start.elapsed();
    for l in &lines {
        println!("      {l}");
    }
    println!("      EEG deep {:?} vs ridge {:?}", deep_eeg, ridge_eeg);
    check(ordered >= 2, format!("ordering held in {ordered}/3 seeds"))?;
    check(ratio >= 1.2, format!("deep/ridge on EEG = {ratio:.3}"))?;
    check(elapsed < Duration::from_secs(1800), format!("took {elapsed:?}"))?;
    Ok(format!(
        "7T > 3T > MEG > EEG in {ordered}/3 seeds; EEG deep/ridge {ratio:.3}x; {:.0} s",
        elapsed.as_secs_f64()
    ))
}

// 8 ---------------------------------------------------------------------------

fn repetition_averaging() -> Outcome {
    let mut cfg = preset(DeviceKind::Eeg);
    cfg.seed = 5;
    let synth = generate_continuous(&cfg).map_err(fail)?;
    let mut report = PreprocessReport::default();
    let epochs = preprocess_recordings(&synth.raw, cfg.sampling, cfg.window, &mut report).map_err(fail)?;
    let splits = make_splits(&synth.trials, &cfg.test_categories(), 0.2, cfg.seed).map_err(fail)?;
    let ridge =
        RidgeDecoder::fit(&epochs, &synth.trials, &synth.embeddings, &splits, &decoding_alpha_grid()).map_err(fail)?;
    let (ids, pred) = ridge.predict(&epochs, &splits.test).map_err(fail)?;
    let single = prediction_set(&synth.trials, &ids, &pred, &pred).map_err(fail)?.head(Head::Mse);
    let (mut ks, mut rs) = (Vec::new(), Vec::new());
    let mut pooled = Vec::new();
    for k in [1usize, 2, 4, 8] {
        let avg = average_k_repetitions(&single, k, cfg.seed).map_err(fail)?;
        let targets = targets_for(&synth.embeddings, &ridge.stats, &avg.image_ids()).map_err(fail)?;
        pooled.push(pearson_featurewise(&avg.data, &targets).map_err(fail)?);
        for r in per_subject_r(&avg, &synth.embeddings, &ridge.stats).map_err(fail)?.into_values() {
            ks.push(k as f64);
            rs.push(r);
        }
    }
    check(pooled.windows(2).all(|w| w[0] <= w[1]), format!("R by k: {pooled:?}"))?;
    let rho = spearman(&ks, &rs).map_err(fail)?;
    check(rho.statistic > 0.0 && rho.p_value < 0.05, format!("ρ = {:.3}, p = {:.2e}", rho.statistic, rho.p_value))?;
    Ok(format!(
        "R at k=1,2,4,8: {}; ρ = {:.3} (p = {:.1e}, {} subject points)",
        pooled.iter().map(|r| format!("{r:.3}")).collect::<Vec<_>>().join(", "),
        rho.statistic,
        rho.p_value,
        ks.len()
    ))
}

// 9 ---------------------------------------------------------------------------

fn scaling_fits() -> Outcome {
    let (a, b) = (0.137, -0.291);
    let points: Vec<(f64, f64)> = [30.0, 100.0, 450.0, 2e3, 1.7e4, 9e5].iter().map(|&x| (x, a * f64::log10(x) + b)).collect();
    let fit = fit_loglinear(&points, XKind::Trials).map_err(fail)?;
    check((fit.slope - a).abs() < 1e-9 && (fit.intercept - b).abs() < 1e-9, format!("recovered {} {}", fit.slope, fit.intercept))?;
    for r_star in [0.05, 0.2, 0.5] {
        let x = solve_threshold(&fit, r_star).map_err(fail)?;
        let back = predict_at(&fit, x);
        check((back - r_star).abs() < 1e-12, format!("round trip {r_star} → {back}"))?;
    }

    // Ridge on growing training subsets of each synthetic device.
    let sizes = [30usize, 60, 120, 240];
    let mut slopes = Vec::new();
    for device in [DeviceKind::Eeg, DeviceKind::Meg, DeviceKind::Fmri3T, DeviceKind::Fmri7T] {
        let mut cfg = preset(device);
        cfg.seed = 9;
        let synth = generate_continuous(&cfg).map_err(fail)?;
        let mut report = PreprocessReport::default();
        let epochs = preprocess_recordings(&synth.raw, cfg.sampling, cfg.window, &mut report).map_err(fail)?;
        let (trials, embeddings) = (&synth.trials, &synth.embeddings);
        let full = make_splits(trials, &cfg.test_categories(), 0.2, cfg.seed).map_err(fail)?;
        let mut curve = Vec::new();
        for n in sizes {
            let keep: std::collections::BTreeSet<usize> =
                matched_trials_by_design(ImageDesign::Shared, trials, &full.train_valid(), n, cfg.seed)
                    .map_err(fail)?
                    .into_iter()
                    .collect();
            let splits = SplitAssignment { train: keep.iter().copied().collect(), valid: Vec::new(), test: full.test.clone() };
            let ridge = RidgeDecoder::fit(&epochs, trials, embeddings, &splits, &decoding_alpha_grid())
                .map_err(fail)?;
            let (ids, pred) = ridge.predict(&epochs, &splits.test).map_err(fail)?;
            let preds = prediction_set(trials, &ids, &pred, &pred).map_err(fail)?;
            let r = score_predictions(&preds, embeddings, &ridge.stats, AveragingScope::SingleTrial).map_err(fail)?.r;
            curve.push((keep.len() as f64, r));
        }
        check(curve.windows(2).all(|w| w[0].1 < w[1].1), format!("{device:?} curve not increasing: {curve:?}"))?;
        let plateau = detect_plateau(&curve, 0.5, 0.25).map_err(fail)?;
        check(!plateau.plateau, format!("{device:?}: plateau reported on an increasing curve"))?;
        slopes.push(format!("{}={:.3}", device.as_str(), fit_loglinear(&curve, XKind::Trials).map_err(fail)?.slope));
    }
    Ok(format!("planted fit exact, round trip < 1e-12; increasing curves, no plateau (slopes {})", slopes.join(" ")))
}

// 10 --------------------------------------------------------------------------

/// Two-sided p-value by enumerating all 2^n sign flips of midranked |d|.
fn enumerated_wilcoxon(d: &[f64]) -> f64 {
    let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let ranks: Vec<f64> = abs
        .iter()
        .map(|&a| {
            let below = abs.iter().filter(|&&b| b < a).count() as f64;
            let equal = abs.iter().filter(|&&b| b == a).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect();
    let observed: f64 = d.iter().zip(&ranks).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();
    let n = d.len();
    let (mut le, mut ge) = (0u64, 0u64);
    for mask in 0u32..(1 << n) {
        let w: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
        if w <= observed + 1e-9 {
            le += 1;
        }
        if w >= observed - 1e-9 {
            ge += 1;
        }
    }
    let total = (1u64 << n) as f64;
    (2.0 * (le.min(ge) as f64) / total).min(1.0)
}

fn wilcoxon_exact() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut cases = 0;
    let mut worst: f64 = 0.0;
    for n in 5..=12 {
        for trial in 0..6 {
            // Rounded values produce ties on some draws.
            let a: Vec<f64> = (0..n).map(|_| (rng.random_range(-2.0..3.0f64) * 4.0).round() / 4.0).collect();
            let b: Vec<f64> = (0..n).map(|_| (rng.random_range(-2.0..2.0f64) * 4.0).round() / 4.0).collect();
            let d: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).filter(|v| *v != 0.0).collect();
            if d.is_empty() {
                continue;
            }
            let got = wilcoxon_signed_rank(&a, &b).map_err(fail)?.p_value;
            let oracle = enumerated_wilcoxon(&d);
            worst = worst.max((got - oracle).abs());
            check((got - oracle).abs() < 1e-10, format!("n={n} trial {trial}: {got} vs {oracle}"))?;
            cases += 1;
        }
    }
    Ok(format!("{cases} samples with n in 5..=12, max |Δp| {worst:.1e}"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("parameter counts", parameter_counts),
        ("acquisition costs", acquisition_costs),
        ("loss closed forms", loss_closed_forms),
        ("gradient suite", gradient_suite),
        ("ridge oracle", ridge_oracle),
        ("epoch shapes", epoch_shapes),
        ("device ordering and deep gain", device_ordering_and_deep_gain),
        ("test-time averaging", repetition_averaging),
        ("scaling fits", scaling_fits),
        ("Wilcoxon exact p", wilcoxon_exact),
    ];
    // `ACCEPTANCE_ONLY=7,9` runs a subset.
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let mut results = BTreeMap::new();
    for (i, (name, f)) in criteria.iter().enumerate() {
        if only.as_ref().is_some_and(|o| !o.contains(&(i + 1))) {
            continue;
        }
        let outcome = f();
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d.clone()),
            Err(e) => ("FAIL", e.clone()),
        };
        println!("[{tag}] {:>2}. {name}: {detail}", i + 1);
        results.insert(i + 1, outcome.is_ok());
    }
    let failed: Vec<_> = results.iter().filter(|(_, ok)| !**ok).map(|(i, _)| *i).collect();
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
