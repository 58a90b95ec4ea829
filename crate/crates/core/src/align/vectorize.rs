use super::model::AlignmentModel;
use crate::data::MetadataRecord;
use crate::error::{Error, Result};
use crate::nn::Matrix;

/// Scales `v` to unit length, accumulating the norm in double precision.
pub fn normalize(v: &mut [f32]) -> Result<()> {
    let norm = v.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(Error::usage("cannot normalize a zero or non-finite vector"));
    }
    for x in v.iter_mut() {
        *x = (*x as f64 / norm) as f32;
    }
    Ok(())
}

fn check_width(images: &Matrix<f32>, model: &AlignmentModel<f32>) -> Result<()> {
    if images.cols() != model.dims().image_dim {
        return Err(Error::usage(format!(
            "image embeddings are {} wide, model expects {}",
            images.cols(),
            model.dims().image_dim
        )));
    }
    Ok(())
}

/// Database vectors for a batch of raw image embeddings: the raw embedding,
/// its text-space and GPS-space projections, each unit-normalized, then
/// concatenated and normalized again.
pub fn vectorize_images(images: &Matrix<f32>, model: &AlignmentModel<f32>) -> Result<Matrix<f32>> {
    check_width(images, model)?;
    let text = model.image_to_text.infer(images)?;
    let gps = model.image_to_gps.infer(images)?;
    let width = model.dims().database_dim();
    let mut out = Vec::with_capacity(images.rows() * width);
    for r in 0..images.rows() {
        let start = out.len();
        for segment in [images.row(r), text.row(r), gps.row(r)] {
            let seg_start = out.len();
            out.extend_from_slice(segment);
            normalize(&mut out[seg_start..])
                .map_err(|_| Error::usage(format!("row {r}: a segment has zero norm")))?;
        }
        normalize(&mut out[start..])?;
    }
    Matrix::from_vec(images.rows(), width, out)
}

pub fn vectorize_image(image_emb: &[f32], model: &AlignmentModel<f32>) -> Result<Vec<f32>> {
    let m = Matrix::from_vec(1, image_emb.len(), image_emb.to_vec())?;
    Ok(vectorize_images(&m, model)?.into_vec())
}

/// Unit-normalized image embeddings in the GPS space.
pub fn image_gps_embeddings(
    images: &Matrix<f32>,
    model: &AlignmentModel<f32>,
) -> Result<Matrix<f32>> {
    check_width(images, model)?;
    let mut out = model.image_to_gps.infer(images)?;
    for r in 0..out.rows() {
        normalize(out.row_mut(r))?;
    }
    Ok(out)
}

/// "A photo taken from {city}, {county}, {country}." with missing parts
/// dropped; "A photo." when none are known.
pub fn text_description(record: &MetadataRecord) -> String {
    let parts: Vec<&str> = [&record.city, &record.county, &record.country]
        .into_iter()
        .filter_map(|p| p.as_deref().map(str::trim).filter(|s| !s.is_empty()))
        .collect();
    if parts.is_empty() {
        "A photo.".to_owned()
    } else {
        format!("A photo taken from {}.", parts.join(", "))
    }
}
