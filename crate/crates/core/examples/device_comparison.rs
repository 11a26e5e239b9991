//! Linear stepwise decoding on every synthetic device preset, then deep
//! sliding-window decoding on the EEG preset, reporting peak single-trial R.
//!
//! `cargo run --release --example device_comparison -- [seed]`

use std::time::Instant;

use neurodec::dataset::{make_splits, DeviceKind};
use neurodec::linear::decoding_alpha_grid;
use neurodec::pipeline::{
    desk_train_config, mean_peak_r, preprocess_recordings, sensor_positions, stepwise_subject_curves,
    windowed_deep_curves, window_mode,
};
use neurodec::preprocess::PreprocessReport;
use neurodec::synth::{generate_continuous, preset};

fn main() -> neurodec::Result<()> {
    env_logger::init();
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let start = Instant::now();
    for device in [DeviceKind::Eeg, DeviceKind::Meg, DeviceKind::Fmri3T, DeviceKind::Fmri7T] {
        let mut cfg = preset(device);
        cfg.seed = seed;
        let synth = generate_continuous(&cfg)?;
        let mut report = PreprocessReport::default();
        let epochs = preprocess_recordings(&synth.raw, cfg.sampling, cfg.window, &mut report)?;
        let splits = make_splits(&synth.trials, &cfg.test_categories(), 0.2, seed)?;
        let curves = stepwise_subject_curves(&epochs, &synth.trials, &synth.embeddings, &splits, &decoding_alpha_grid())?;
        let maps: Vec<_> = curves.into_iter().map(|(_, m)| m).collect();
        println!("{:<7} ridge peak R {:.4}  ({:.1}s)", device.as_str(), mean_peak_r(&maps), start.elapsed().as_secs_f64());
        if !device.is_fmri() {
            let positions = sensor_positions(&synth.raw);
            let mode = window_mode("sliding", &epochs)?;
            let deep = windowed_deep_curves(
                device,
                &epochs,
                positions.as_ref(),
                &synth.trials,
                &synth.embeddings,
                &splits,
                mode,
                &desk_train_config(seed),
            )?;
            let maps: Vec<_> = deep.into_iter().map(|(_, m)| m).collect();
            println!("{:<7} deep  peak R {:.4}  ({:.1}s)", device.as_str(), mean_peak_r(&maps), start.elapsed().as_secs_f64());
        }
    }
    Ok(())
}
