//! Subject-specific ridge decoding at every timepoint of preprocessed
//! synthetic EEG, printed as a time course of the mean R.
//!
//! `cargo run --example ridge_time_course -- [seed]`

use neurodec::dataset::{make_splits, DeviceKind};
use neurodec::linear::decoding_alpha_grid;
use neurodec::pipeline::{mean_peak_r, preprocess_recordings, stepwise_subject_curves};
use neurodec::preprocess::PreprocessReport;
use neurodec::synth::{generate_continuous, preset};

fn main() -> neurodec::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let mut cfg = preset(DeviceKind::Eeg);
    cfg.seed = seed;
    let synth = generate_continuous(&cfg)?;
    let epochs = preprocess_recordings(&synth.raw, cfg.sampling, cfg.window, &mut PreprocessReport::default())?;
    let splits = make_splits(&synth.trials, &cfg.test_categories(), 0.2, seed)?;
    let curves = stepwise_subject_curves(&epochs, &synth.trials, &synth.embeddings, &splits, &decoding_alpha_grid())?;
    for (t, per_subject) in &curves {
        let mean = per_subject.values().sum::<f64>() / per_subject.len() as f64;
        let bar = "#".repeat((mean.max(0.0) * 100.0).round() as usize);
        println!("{t:>6.3} s  R {mean:>7.4}  {bar}");
    }
    let maps: Vec<_> = curves.into_iter().map(|(_, m)| m).collect();
    println!("mean per-subject peak R: {:.4}", mean_peak_r(&maps));
    Ok(())
}
