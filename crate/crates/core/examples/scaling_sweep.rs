//! Full-window ridge decoding on growing training subsets of every
//! preprocessed synthetic device, written as a metrics table ready for
//! `neurodec scale-fit`.
//!
//! `cargo run --release --example scaling_sweep -- [out.csv] [n_seeds]`

use std::collections::BTreeSet;

use neurodec::dataset::{make_splits, matched_trials_by_design, DeviceKind, ImageDesign, SplitAssignment};
use neurodec::eval::{write_metric_records, AveragingScope, MetricRecord};
use neurodec::linear::decoding_alpha_grid;
use neurodec::pipeline::{preprocess_recordings, prediction_set, score_predictions, RidgeDecoder};
use neurodec::preprocess::PreprocessReport;
use neurodec::synth::{generate_continuous, preset};

const SIZES: [usize; 5] = [30, 60, 120, 240, 480];

fn main() -> neurodec::Result<()> {
    env_logger::init();
    let mut args = std::env::args().skip(1);
    let out = args.next().unwrap_or_else(|| "synthetic_metrics.csv".into());
    let n_seeds: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(2);
    let mut records = Vec::new();
    for device in [DeviceKind::Eeg, DeviceKind::Meg, DeviceKind::Fmri3T, DeviceKind::Fmri7T] {
        for seed in 0..n_seeds {
            let mut cfg = preset(device);
            cfg.seed = seed;
            let synth = generate_continuous(&cfg)?;
            let mut report = PreprocessReport::default();
            let epochs = preprocess_recordings(&synth.raw, cfg.sampling, cfg.window, &mut report)?;
            let (trials, embeddings) = (&synth.trials, &synth.embeddings);
            let full = make_splits(trials, &cfg.test_categories(), 0.2, seed)?;
            for n in SIZES {
                let keep: BTreeSet<usize> =
                    matched_trials_by_design(ImageDesign::Shared, trials, &full.train_valid(), n, seed)?
                        .into_iter()
                        .collect();
                let splits = SplitAssignment {
                    train: full.train.iter().copied().filter(|i| keep.contains(i)).collect(),
                    valid: full.valid.iter().copied().filter(|i| keep.contains(i)).collect(),
                    test: full.test.clone(),
                };
                let ridge = RidgeDecoder::fit(&epochs, trials, embeddings, &splits, &decoding_alpha_grid())?;
                let (ids, pred) = ridge.predict(&epochs, &splits.test)?;
                let preds = prediction_set(trials, &ids, &pred, &pred)?;
                let s = score_predictions(&preds, embeddings, &ridge.stats, AveragingScope::SingleTrial)?;
                println!("{:<7} seed {seed} {:>5} trials  R {:.4}", device.as_str(), keep.len(), s.r);
                records.push(MetricRecord {
                    dataset: format!("synthetic-{}", device.as_str()),
                    device: device.as_str().into(),
                    subjects: "all".into(),
                    n_train_trials: keep.len(),
                    window_start: epochs.window.0,
                    window_end: epochs.window.1,
                    averaging: "single_trial".into(),
                    seed,
                    pearson_r: s.r,
                    top1: Some(s.top1),
                    top5: Some(s.top5),
                });
            }
        }
    }
    let file = std::fs::File::create(&out).map_err(|e| neurodec::Error::io(&out, e))?;
    write_metric_records(file, &records)?;
    println!("wrote {} rows to {out}", records.len());
    Ok(())
}
