//! Recording time and acquisition cost of the public datasets, then the data
//! and money a synthetic scaling curve needs to reach a target R.
//!
//! `cargo run --example acquisition_costs -- [target R]`

use std::path::Path;

use neurodec::dataset::published_datasets;
use neurodec::eval::read_metric_records;
use neurodec::scaling::{dataset_cost, fit_loglinear, recording_time, solve_threshold, x_value, CostTable, XKind};
use neurodec::synth::preset;

fn main() -> neurodec::Result<()> {
    let target: f64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0.5);
    let table = CostTable::default();
    println!("{:<18} {:>7} {:>10} {:>8} {:>10}", "dataset", "device", "trials", "hours", "cost");
    for spec in published_datasets() {
        let Some(counts) = spec.counts else { continue };
        println!(
            "{:<18} {:>7} {:>10} {:>8.1} {:>9.1}k",
            spec.name,
            spec.device.as_str(),
            counts.all_trials,
            recording_time(counts.all_trials as f64, spec.soa_seconds),
            dataset_cost(&spec, &table)? / 1000.0
        );
    }

    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/synthetic_metrics.csv");
    let file = std::fs::File::open(&path).map_err(|e| neurodec::Error::io(&path, e))?;
    let records = read_metric_records(file)?;
    println!("\nreaching R = {target} on the bundled synthetic curves:");
    for device in ["eeg", "meg", "fmri3t", "fmri7t"] {
        let rows: Vec<_> = records.iter().filter(|r| r.device == device).collect();
        let Some(kind) = rows.first().map(|r| r.device.clone()) else { continue };
        let device_kind = serde_json::from_value(serde_json::Value::String(kind)).map_err(neurodec::Error::Json)?;
        let (soa, rate) = (preset(device_kind).soa_seconds, table.rate(device_kind)?);
        let points: Vec<(f64, f64)> = rows.iter().map(|r| (r.n_train_trials as f64, r.pearson_r)).collect();
        let fit = fit_loglinear(&points, XKind::Trials)?;
        match solve_threshold(&fit, target) {
            Ok(trials) => println!(
                "    {device:<7} slope {:.3} per decade: {:>12.0} trials, {:>8.1} h, ${:>10.0}",
                fit.slope,
                trials,
                x_value(XKind::Hours, trials, soa, rate),
                x_value(XKind::Usd, trials, soa, rate)
            ),
            Err(e) => println!("    {device:<7} {e}"),
        }
    }
    Ok(())
}
