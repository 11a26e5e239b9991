//! Decoding metrics, test-time averaging, retrieval, reconstruction scores
//! and significance tests.

mod averaging;
mod metrics;
mod recon;
mod retrieval;
mod stats;

pub use averaging::{average_k_repetitions, average_predictions, AveragingScope, Head, PredictionMeta, PredictionSet};
pub use metrics::{pearson, pearson_featurewise, pearson_per_feature};
pub use recon::{reconstruction_metrics, renormalize_predictions, ReconMode, RepresentationProvider};
pub use retrieval::{retrieve_topk, topk_accuracy};
pub use stats::{spearman, welch_t_test, wilcoxon_signed_rank, TestResult};

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One row of a results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub dataset: String,
    pub device: String,
    pub subjects: String,
    pub n_train_trials: usize,
    pub window_start: f64,
    pub window_end: f64,
    pub averaging: String,
    pub seed: u64,
    pub pearson_r: f64,
    pub top1: Option<f64>,
    pub top5: Option<f64>,
}

pub fn write_metric_records<W: Write>(writer: W, records: &[MetricRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("<metric table>", e))?;
    Ok(())
}

pub fn read_metric_records<R: Read>(reader: R) -> Result<Vec<MetricRecord>> {
    let mut r = csv::Reader::from_reader(reader);
    Ok(r.deserialize().collect::<std::result::Result<Vec<_>, _>>()?)
}
