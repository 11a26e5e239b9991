//! Continuous synthetic recordings through the M/EEG and fMRI preprocessing
//! chains, then the three window views used for time-resolved decoding.
//!
//! `cargo run --example preprocessing`

use neurodec::dataset::DeviceKind;
use neurodec::pipeline::{preprocess_recordings, window_mode};
use neurodec::preprocess::{window_views, PreprocessReport};
use neurodec::synth::{generate_continuous, preset};

fn main() -> neurodec::Result<()> {
    for device in [DeviceKind::Eeg, DeviceKind::Fmri3T] {
        let mut cfg = preset(device);
        cfg.n_subjects = 2;
        let synth = generate_continuous(&cfg)?;
        let mut report = PreprocessReport::default();
        let epochs = preprocess_recordings(&synth.raw, cfg.sampling, cfg.window, &mut report)?;
        println!(
            "{}: {} epochs of {} channels x {} samples over [{}, {}] s",
            device.as_str(),
            epochs.n_trials(),
            epochs.channels(),
            epochs.timepoints(),
            epochs.window.0,
            epochs.window.1
        );
        println!(
            "    dropped {} trials, {} channels with zero spread",
            report.dropped_trials.len(),
            report.zero_iqr_channels.len()
        );
        let peak = epochs.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        println!("    largest |value| after scaling: {peak:.2}");
        for mode in ["full", "sliding", "growing"] {
            let views = window_views(&epochs, window_mode(mode, &epochs)?)?;
            let (first, last) = (&views[0].0, &views[views.len() - 1].0);
            println!(
                "    {mode:<8} {:>3} views, first [{:.2}, {:.2}] last [{:.2}, {:.2}], {} samples in the last",
                views.len(),
                first.start_s,
                first.end_s,
                last.start_s,
                last.end_s,
                views[views.len() - 1].1.timepoints()
            );
        }
    }
    Ok(())
}
