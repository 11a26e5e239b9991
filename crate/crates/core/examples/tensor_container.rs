//! Writes synthetic epochs to a tensor container in both float widths,
//! prints its manifest and checks the round trip.
//!
//! `cargo run --example tensor_container`

use neurodec::dataset::DeviceKind;
use neurodec::io::{Dtype, TensorContainer, MANIFEST_FILE};
use neurodec::synth::{generate, preset};

fn main() -> neurodec::Result<()> {
    let mut cfg = preset(DeviceKind::Meg);
    cfg.n_images = 20;
    cfg.n_categories = 5;
    cfg.n_test_images = 4;
    cfg.n_subjects = 1;
    let d = generate(&cfg)?;

    let mut c = TensorContainer::new();
    c.insert("epochs", d.epochs.data.clone().into_dyn(), Dtype::Float64)?;
    c.insert("epochs_f32", d.epochs.data.clone().into_dyn(), Dtype::Float32)?;
    c.insert_f64("embeddings", d.embeddings.data.clone().into_dyn())?;
    c.attributes.insert("device".into(), serde_json::json!(cfg.device));

    let dir = std::env::temp_dir().join(format!("neurodec-tensors-{}", std::process::id()));
    c.write(&dir)?;
    println!("{}", std::fs::read_to_string(dir.join(MANIFEST_FILE)).map_err(|e| neurodec::Error::io(&dir, e))?);

    let back = TensorContainer::read(&dir)?;
    println!("float64 round trip exact: {}", back.get("epochs")? == c.get("epochs")?);
    let narrowed = d.epochs.data.mapv(|v| v as f32 as f64).into_dyn();
    println!("float32 round trip equals f32 rounding: {}", back.get("epochs_f32")? == &narrowed);
    std::fs::remove_dir_all(&dir).map_err(|e| neurodec::Error::io(&dir, e))?;
    Ok(())
}
