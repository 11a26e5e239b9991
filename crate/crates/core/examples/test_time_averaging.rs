//! Effect of averaging repeated test responses on ridge decoding of
//! synthetic 3T fMRI: the three averaging scopes, then R as a function of
//! the number of averaged repetitions with its rank correlation.
//!
//! `cargo run --example test_time_averaging`

use neurodec::dataset::{make_splits, DeviceKind};
use neurodec::eval::{average_k_repetitions, pearson_featurewise, spearman, AveragingScope, Head};
use neurodec::linear::decoding_alpha_grid;
use neurodec::pipeline::{per_subject_r, prediction_set, score_predictions, targets_for, RidgeDecoder};
use neurodec::synth::{generate, preset};

fn main() -> neurodec::Result<()> {
    let mut cfg = preset(DeviceKind::Fmri3T);
    cfg.snr = 0.15;
    let d = generate(&cfg)?;
    let splits = make_splits(&d.trials, &cfg.test_categories(), 0.2, 0)?;
    let ridge = RidgeDecoder::fit(&d.epochs, &d.trials, &d.embeddings, &splits, &decoding_alpha_grid())?;
    let (ids, pred) = ridge.predict(&d.epochs, &splits.test)?;
    let preds = prediction_set(&d.trials, &ids, &pred, &pred)?;
    for scope in [AveragingScope::SingleTrial, AveragingScope::SubjectAverage, AveragingScope::InstanceAverage] {
        let s = score_predictions(&preds, &d.embeddings, &ridge.stats, scope)?;
        println!("{scope:?}: R {:.4}, top-5 {:.3}", s.r, s.top5);
    }

    let single = preds.head(Head::Mse);
    let (mut ks, mut rs) = (Vec::new(), Vec::new());
    for k in [1usize, 2, 4, 8] {
        let avg = average_k_repetitions(&single, k, 0)?;
        let r = pearson_featurewise(&avg.data, &targets_for(&d.embeddings, &ridge.stats, &avg.image_ids())?)?;
        let subjects = per_subject_r(&avg, &d.embeddings, &ridge.stats)?;
        println!("k = {k}: R {r:.4}  per subject {:?}", subjects.values().map(|v| (v * 1e3).round() / 1e3).collect::<Vec<_>>());
        for v in subjects.into_values() {
            ks.push(k as f64);
            rs.push(v);
        }
    }
    let rho = spearman(&ks, &rs)?;
    println!("Spearman rho(k, R) = {:.3}, p = {:.2e}", rho.statistic, rho.p_value);
    Ok(())
}
