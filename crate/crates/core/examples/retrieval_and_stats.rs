//! Retrieval and reconstruction-style scores for ridge decoding of synthetic
//! 7T fMRI, and paired tests comparing full-window and late-window decoders
//! feature by feature.
//!
//! `cargo run --example retrieval_and_stats`

use std::collections::BTreeMap;

use neurodec::dataset::{make_splits, DeviceKind};
use neurodec::eval::{
    pearson_per_feature, reconstruction_metrics, retrieve_topk, topk_accuracy, welch_t_test, wilcoxon_signed_rank,
    Head, ReconMode, RepresentationProvider,
};
use neurodec::linear::decoding_alpha_grid;
use neurodec::pipeline::{prediction_set, targets_for, RidgeDecoder};
use neurodec::preprocess::{window_views, WindowMode};
use neurodec::synth::{generate, preset};

fn main() -> neurodec::Result<()> {
    let mut cfg = preset(DeviceKind::Fmri7T);
    cfg.snr = 0.2;
    let d = generate(&cfg)?;
    let splits = make_splits(&d.trials, &cfg.test_categories(), 0.2, 0)?;
    let grid = decoding_alpha_grid();

    let ridge = RidgeDecoder::fit(&d.epochs, &d.trials, &d.embeddings, &splits, &grid)?;
    let (ids, pred) = ridge.predict(&d.epochs, &splits.test)?;
    let preds = prediction_set(&d.trials, &ids, &pred, &pred)?;
    let test_images: Vec<usize> = preds.image_ids().into_iter().collect::<std::collections::BTreeSet<_>>().into_iter().collect();
    let candidates = neurodec::dataset::EmbeddingMatrix::new(test_images.clone(), d.embeddings.rows_for(&test_images)?)?;
    let clip = preds.head(Head::Clip);
    for k in [1, 5] {
        println!("top-{k} retrieval among {} images: {:.3}", test_images.len(), topk_accuracy(&clip, &candidates, k)?);
    }

    // Treat the best retrieved image as the "reconstruction" of each trial.
    let mut pairs = Vec::new();
    for (row, meta) in clip.data.rows().into_iter().zip(&clip.meta) {
        pairs.push((meta.image_id, retrieve_topk(row, &candidates, 1)?[0]));
    }
    let provider = RepresentationProvider::from_rows("embedding", &d.embeddings.image_ids, &d.embeddings.data)?;
    println!(
        "retrieved-image similarity: pointwise {:.3}, two-way {:.3}",
        reconstruction_metrics(&pairs, &provider, ReconMode::Pointwise)?,
        reconstruction_metrics(&pairs, &provider, ReconMode::TwoWay)?
    );

    // Full window vs the last TR only, compared on per-feature correlations.
    let views = window_views(&d.epochs, WindowMode::Sliding { width_s: 1.6 })?;
    let (label, late) = views.last().expect("at least one window");
    let late_ridge = RidgeDecoder::fit(late, &d.trials, &d.embeddings, &splits, &grid)?;
    let (_, late_pred) = late_ridge.predict(late, &splits.test)?;
    let targets = targets_for(&d.embeddings, &ridge.stats, &ids.iter().map(|&t| d.trials[t].image_id).collect::<Vec<_>>())?;
    let full_r = pearson_per_feature(&pred, &targets)?;
    let late_r = pearson_per_feature(&late_pred, &targets)?;
    let summary: BTreeMap<&str, f64> = [
        ("full", full_r.iter().sum::<f64>() / full_r.len() as f64),
        ("late", late_r.iter().sum::<f64>() / late_r.len() as f64),
    ]
    .into();
    println!("mean per-feature R: {summary:?} (late window [{:.1}, {:.1}] s)", label.start_s, label.end_s);
    let w = wilcoxon_signed_rank(&full_r, &late_r)?;
    let t = welch_t_test(&full_r, &late_r)?;
    println!("Wilcoxon W+ = {:.1}, p = {:.2e}", w.statistic, w.p_value);
    println!("Welch t = {:.2}, p = {:.2e}", t.statistic, t.p_value);
    Ok(())
}
