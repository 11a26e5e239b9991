//! Per-layer parameter counts of the full-size brain modules and of the
//! desk-scale models used on synthetic data.
//!
//! `cargo run --example model_sizes`

use neurodec::cli::thousands;
use neurodec::dataset::DeviceKind;
use neurodec::nn::{published_config, published_search_outcome, param_rows, ModelSize};
use neurodec::pipeline::desk_config;
use neurodec::synth::{generate, preset};

fn main() -> neurodec::Result<()> {
    for device in [DeviceKind::Eeg, DeviceKind::Meg, DeviceKind::Fmri7T] {
        for size in [ModelSize::Medium, ModelSize::Large] {
            let config = published_config(device, size);
            println!("{} {size:?}: {} parameters", device.as_str(), thousands(config.param_count()));
            for (name, n) in param_rows(&config) {
                println!("    {name:<30} {:>13}", thousands(n));
            }
            let search = published_search_outcome(device, size);
            println!(
                "    selected by search: {} parameters, batch {}, lr {:e}",
                thousands(search.config.param_count()),
                search.batch_size,
                search.lr
            );
        }
    }
    println!();
    for device in [DeviceKind::Eeg, DeviceKind::Meg, DeviceKind::Fmri3T, DeviceKind::Fmri7T] {
        let mut cfg = preset(device);
        cfg.n_images = 40;
        cfg.n_categories = 10;
        let d = generate(&cfg)?;
        let config = desk_config(device, &d.epochs, d.embeddings.dim(), cfg.n_subjects);
        println!(
            "desk {:<7} input {} x {}: {} parameters",
            device.as_str(),
            d.epochs.channels(),
            d.epochs.timepoints(),
            thousands(config.param_count())
        );
    }
    Ok(())
}
