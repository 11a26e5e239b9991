//! On-disk formats: raw little-endian tensor containers, dataset stores,
//! decoder checkpoints and run manifests.

mod checkpoint;
mod manifest;
mod store;
mod tensor;

pub use checkpoint::{Checkpoint, CheckpointMeta, Decoder, DecoderMeta, MODEL_FILE};
pub use manifest::{config_hash, git_describe, RunManifest};
pub use store::{
    read_embeddings, read_json, read_trials, write_embeddings, write_json, write_report, write_trials, EpochStore,
    RawStore, EVENTS_FILE, REPORT_FILE, SYNTH_CONFIG_FILE, TRIALS_FILE,
};
pub use tensor::{ContainerManifest, Dtype, Tensor, TensorContainer, TensorEntry, MANIFEST_FILE};
