//! Geo-verification: pick the candidate whose GPS embedding is closest to
//! the query image in the shared image–GPS space.

use serde::{Deserialize, Serialize};

use crate::align::{image_gps_embeddings, normalize, AlignmentModel};
use crate::error::{Error, Result};
use crate::geodesy::GeoPoint;
use crate::nn::{dot, Matrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub chosen: GeoPoint,
    pub chosen_index: usize,
    pub scores: Vec<f32>,
}

/// Index of the maximum score; the lowest index wins ties.
pub fn argmax(scores: &[f32]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        if best.is_none_or(|b| s > scores[b]) {
            best = Some(i);
        }
    }
    best
}

/// Scores each candidate by the cosine between the query image's GPS-space
/// embedding and the candidate's GPS embedding, then takes the argmax.
pub fn verify(image_emb: &[f32], candidates: &[GeoPoint], model: &AlignmentModel<f32>) -> Result<Verdict> {
    if candidates.is_empty() {
        return Err(Error::usage("cannot verify an empty candidate pool"));
    }
    let image = Matrix::from_vec(1, image_emb.len(), image_emb.to_vec())?;
    let e_img = image_gps_embeddings(&image, model)?;
    let mut e_gps = model.gps_encoder.infer(candidates)?;
    for r in 0..e_gps.rows() {
        normalize(e_gps.row_mut(r))?;
    }
    let scores: Vec<f32> = (0..e_gps.rows()).map(|r| dot(e_img.row(0), e_gps.row(r))).collect();
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::data("non-finite verification score"));
    }
    let chosen_index = argmax(&scores).expect("pool is non-empty");
    Ok(Verdict { chosen: candidates[chosen_index], chosen_index, scores })
}
