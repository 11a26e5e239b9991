//! Trains the M/EEG brain module on a reduced synthetic EEG preset, prints
//! the training history, saves a checkpoint and checks that the reloaded
//! model predicts identically.
//!
//! `cargo run --example deep_decoder`

use neurodec::dataset::{make_splits, DeviceKind};
use neurodec::eval::AveragingScope;
use neurodec::io::{Checkpoint, Decoder};
use neurodec::pipeline::{desk_config, desk_train_config, prediction_set, score_predictions, DeepDecoder};
use neurodec::preprocess::WindowLabel;
use neurodec::synth::{generate, preset};

fn main() -> neurodec::Result<()> {
    let mut cfg = preset(DeviceKind::Eeg);
    cfg.n_images = 240;
    cfg.n_categories = 60;
    cfg.snr = 0.5;
    let d = generate(&cfg)?;
    let splits = make_splits(&d.trials, &cfg.test_categories(), 0.2, 0)?;
    let config = desk_config(DeviceKind::Eeg, &d.epochs, d.embeddings.dim(), cfg.n_subjects);
    println!("model: {} parameters", config.param_count());
    let mut train_cfg = desk_train_config(0);
    train_cfg.max_epochs = 15;
    let deep = DeepDecoder::fit(
        config,
        Some(&d.forward.positions),
        &d.epochs,
        &d.trials,
        &d.embeddings,
        &splits,
        &train_cfg,
    )?;
    for e in &deep.outcome.history {
        println!(
            "epoch {:>2}  train {:.4}  valid {:.4}  valid R {:.4}",
            e.epoch, e.train_loss, e.valid_loss, e.valid_r
        );
    }
    println!("best epoch {} (valid R {:.4})", deep.outcome.best_epoch, deep.outcome.best_valid_r);

    let (ids, mse, clip) = deep.predict(&d.epochs, &d.trials, &splits.test)?;
    let preds = prediction_set(&d.trials, &ids, &mse, &clip)?;
    for scope in [AveragingScope::SingleTrial, AveragingScope::SubjectAverage, AveragingScope::InstanceAverage] {
        let s = score_predictions(&preds, &d.embeddings, &deep.stats, scope)?;
        println!("{scope:?}: R {:.4}  top-1 {:.3}  top-5 {:.3}", s.r, s.top1, s.top5);
    }

    let dir = std::env::temp_dir().join(format!("neurodec-deep-{}", std::process::id()));
    let window = WindowLabel { start_s: d.epochs.window.0, end_s: d.epochs.window.1 };
    Checkpoint { device: DeviceKind::Eeg, window, decoder: Decoder::Deep(deep) }.write(&dir)?;
    let Decoder::Deep(back) = Checkpoint::read(&dir)?.decoder else {
        unreachable!("checkpoint kind is preserved")
    };
    let (_, mse2, clip2) = back.predict(&d.epochs, &d.trials, &splits.test)?;
    println!("reloaded predictions identical: {}", mse == mse2 && clip == clip2);
    std::fs::remove_dir_all(&dir).map_err(|e| neurodec::Error::io(&dir, e))?;
    Ok(())
}
