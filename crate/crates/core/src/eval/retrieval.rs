use ndarray::ArrayView1;

use super::{Head, PredictionSet};
use crate::dataset::EmbeddingMatrix;
use crate::error::{Error, Result};

fn unit(v: ArrayView1<f64>, what: &str) -> Result<Vec<f64>> {
    let norm = v.dot(&v).sqrt();
    if norm == 0.0 {
        return Err(Error::contract(format!("{what} has zero norm; cosine similarity undefined")));
    }
    Ok(v.iter().map(|x| x / norm).collect())
}

/// Ranks candidate images by cosine similarity to `pred`, best first, and
/// returns the first `k` image ids. Ties go to the lower image id.
pub fn retrieve_topk(pred: ArrayView1<f64>, candidates: &EmbeddingMatrix, k: usize) -> Result<Vec<usize>> {
    if k > candidates.image_ids.len() {
        return Err(Error::arg(format!(
            "k = {k} exceeds the {} candidates",
            candidates.image_ids.len()
        )));
    }
    let p = unit(pred, "prediction")?;
    let mut scored = Vec::with_capacity(candidates.image_ids.len());
    for (row, &id) in candidates.data.rows().into_iter().zip(&candidates.image_ids) {
        let c = unit(row, "candidate embedding")?;
        let sim: f64 = p.iter().zip(&c).map(|(a, b)| a * b).sum();
        scored.push((sim, id));
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    Ok(scored.into_iter().take(k).map(|(_, id)| id).collect())
}

/// Fraction of CLIP-head predictions whose true image is among the `k` best
/// candidates.
pub fn topk_accuracy(preds: &PredictionSet, candidates: &EmbeddingMatrix, k: usize) -> Result<f64> {
    let clip = preds.head(Head::Clip);
    if clip.is_empty() {
        return Err(Error::contract("no CLIP-head predictions to rank"));
    }
    let mut hits = 0usize;
    for (row, meta) in clip.data.rows().into_iter().zip(&clip.meta) {
        if retrieve_topk(row, candidates, k)?.contains(&meta.image_id) {
            hits += 1;
        }
    }
    Ok(hits as f64 / clip.len() as f64)
}
