//! End-to-end orchestration: vectorize, retrieve, diversify, verify, score.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::align::{normalize, text_description, vectorize_image, vectorize_images, AlignmentModel};
use crate::data::MetadataRecord;
use crate::error::{Error, Result};
use crate::geodesy::{haversine_km, GeoPoint, ThresholdReport};
use crate::index::{IndexRecord, VectorIndex};
use crate::nn::Matrix;
use crate::rag::{generate_candidates, GenerationConfig, ImagePayload, IndexRetrieval, LmmClient};
use crate::seed;
use crate::verify::verify;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub generation: GenerationConfig,
    /// Queries processed concurrently.
    pub query_workers: usize,
    /// Seed of the sample that dissimilar references are drawn from.
    pub negative_seed: u64,
    /// Leave failed queries out of the accuracy denominator instead of
    /// counting them as misses. They are listed in the output either way.
    pub exclude_failed: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self { generation: GenerationConfig::default(), query_workers: 1, negative_seed: 0, exclude_failed: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub img_id: String,
    /// Raw image embedding.
    pub embedding: Vec<f32>,
    pub truth: Option<GeoPoint>,
    pub image: Option<Arc<ImagePayload>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub img_id: String,
    pub pred_lat: f64,
    pub pred_lon: f64,
    #[serde(default)]
    pub chosen_provenance: String,
    #[serde(default)]
    pub pool_size: usize,
    #[serde(default)]
    pub dropped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryFailure {
    pub img_id: String,
    pub error: String,
    /// The model endpoint failed, as opposed to bad data.
    pub transport: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineOutput {
    pub predictions: Vec<Prediction>,
    pub failures: Vec<QueryFailure>,
    /// Present when at least one query has a ground truth.
    pub report: Option<ThresholdReport>,
}

/// Index records for a database: one vectorized image per metadata row,
/// with the row position as id.
pub fn database_records(
    images: &Matrix<f32>,
    records: &[MetadataRecord],
    model: &AlignmentModel<f32>,
) -> Result<Vec<IndexRecord>> {
    if images.rows() != records.len() {
        return Err(Error::usage(format!(
            "{} embeddings for {} metadata records",
            images.rows(),
            records.len()
        )));
    }
    let vectors = vectorize_images(images, model)?;
    Ok(records
        .iter()
        .enumerate()
        .map(|(i, r)| IndexRecord {
            id: i as u64,
            vector: vectors.row(i).to_vec(),
            point: r.point,
            text: text_description(r),
        })
        .collect())
}

/// Index over unit-normalized raw embeddings, for the retrieval comparison.
pub fn raw_records(images: &Matrix<f32>, records: &[MetadataRecord]) -> Result<Vec<IndexRecord>> {
    if images.rows() != records.len() {
        return Err(Error::usage("embedding and metadata counts differ"));
    }
    records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut vector = images.row(i).to_vec();
            normalize(&mut vector)?;
            Ok(IndexRecord { id: i as u64, vector, point: r.point, text: text_description(r) })
        })
        .collect()
}

fn run_query(
    i: usize,
    q: &Query,
    model: &AlignmentModel<f32>,
    index: &VectorIndex,
    client: &dyn LmmClient,
    config: &PipelineConfig,
) -> Result<Prediction> {
    let vector = vectorize_image(&q.embedding, model)?;
    let retrieval = IndexRetrieval::new(index, config.negative_seed);
    let generation =
        GenerationConfig { seed: seed::derive(config.generation.seed, i as u64), ..config.generation.clone() };
    let pool = generate_candidates(client, q.image.clone(), &vector, &generation, &retrieval)?;
    if pool.is_empty() {
        return Err(Error::data(format!("all {} generations were dropped", pool.dropped.len())));
    }
    let verdict = verify(&q.embedding, &pool.points(), model)?;
    Ok(Prediction {
        img_id: q.img_id.clone(),
        pred_lat: verdict.chosen.lat(),
        pred_lon: verdict.chosen.lon(),
        chosen_provenance: pool.candidates[verdict.chosen_index].provenance.to_string(),
        pool_size: pool.len(),
        dropped: pool.dropped.len(),
    })
}

/// Runs every query through the pipeline. Per-query failures are collected,
/// not propagated.
pub fn run_pipeline(
    queries: &[Query],
    model: &AlignmentModel<f32>,
    index: &VectorIndex,
    client: &dyn LmmClient,
    config: &PipelineConfig,
) -> Result<PipelineOutput> {
    config.generation.prompts.validate()?;
    if config.query_workers == 0 {
        return Err(Error::usage("query_workers must be at least 1"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.query_workers)
        .build()
        .map_err(|e| Error::usage(format!("cannot start worker pool: {e}")))?;
    let outcomes: Vec<Result<Prediction>> = pool.install(|| {
        queries.par_iter().enumerate().map(|(i, q)| run_query(i, q, model, index, client, config)).collect()
    });

    let mut predictions = Vec::new();
    let mut failures = Vec::new();
    let mut errors_km = Vec::new();
    for (q, outcome) in queries.iter().zip(outcomes) {
        match outcome {
            Ok(p) => {
                if let Some(t) = q.truth {
                    let pred = GeoPoint::new(p.pred_lat, p.pred_lon)?;
                    errors_km.push(haversine_km(pred, t));
                }
                predictions.push(p);
            }
            Err(e) => {
                log::warn!("query {} failed: {e}", q.img_id);
                if q.truth.is_some() && !config.exclude_failed {
                    errors_km.push(f64::INFINITY);
                }
                failures.push(QueryFailure {
                    img_id: q.img_id.clone(),
                    error: e.to_string(),
                    transport: matches!(e, Error::Transport(_)),
                });
            }
        }
    }
    let report = if errors_km.is_empty() { None } else { Some(ThresholdReport::from_errors(&errors_km)?) };
    Ok(PipelineOutput { predictions, failures, report })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceStats {
    pub avg_km: f64,
    pub median_km: f64,
    pub max_km: f64,
    pub min_km: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalComparison {
    pub top_n: usize,
    pub raw: DistanceStats,
    pub aligned: DistanceStats,
}

pub const COMPARISON_TOP_N: [usize; 3] = [5, 10, 15];

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// For each query, the mean, median, max and min distance from its true
/// location to its `top_n` exact nearest records; each averaged over queries.
pub fn retrieval_distance_stats(
    index: &VectorIndex,
    queries: &Matrix<f32>,
    truths: &[GeoPoint],
    top_n: usize,
) -> Result<DistanceStats> {
    if queries.rows() != truths.len() || truths.is_empty() {
        return Err(Error::usage("need one ground truth per query and at least one query"));
    }
    let mut acc = [0f64; 4];
    for (i, &truth) in truths.iter().enumerate() {
        let hits = index.search_flat(queries.row(i), top_n)?;
        let mut d: Vec<f64> =
            hits.iter().map(|h| haversine_km(truth, index.get(h.id).expect("hit from index").point)).collect();
        d.sort_by(f64::total_cmp);
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        for (a, v) in acc.iter_mut().zip([mean, median(&d), d[d.len() - 1], d[0]]) {
            *a += v;
        }
    }
    let n = truths.len() as f64;
    Ok(DistanceStats { avg_km: acc[0] / n, median_km: acc[1] / n, max_km: acc[2] / n, min_km: acc[3] / n })
}

/// Raw and aligned retrieval distance statistics for each `top_n`.
/// `raw_queries` and `aligned_queries` must already be unit-normalized.
pub fn compare_retrieval(
    raw_index: &VectorIndex,
    raw_queries: &Matrix<f32>,
    aligned_index: &VectorIndex,
    aligned_queries: &Matrix<f32>,
    truths: &[GeoPoint],
    top_ns: &[usize],
) -> Result<Vec<RetrievalComparison>> {
    top_ns
        .iter()
        .map(|&top_n| {
            Ok(RetrievalComparison {
                top_n,
                raw: retrieval_distance_stats(raw_index, raw_queries, truths, top_n)?,
                aligned: retrieval_distance_stats(aligned_index, aligned_queries, truths, top_n)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::IndexRecord;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_setup(seed: u64) -> (VectorIndex, Matrix<f32>, Vec<GeoPoint>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = 5;
        let unit = |rng: &mut ChaCha8Rng| {
            let mut v: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            normalize(&mut v).unwrap();
            v
        };
        let mut idx = VectorIndex::new(dim).unwrap();
        let recs = (0..40)
            .map(|i| IndexRecord {
                id: i,
                vector: unit(&mut rng),
                point: GeoPoint::new(rng.random_range(-60.0..60.0), rng.random_range(-180.0..180.0)).unwrap(),
                text: String::new(),
            })
            .collect();
        idx.add(recs).unwrap();
        let q: Vec<f32> = (0..10).flat_map(|_| unit(&mut rng)).collect();
        let truths = (0..10).map(|_| GeoPoint::new(rng.random_range(-60.0..60.0), 0.0).unwrap()).collect();
        (idx, Matrix::from_vec(10, dim, q).unwrap(), truths)
    }

    #[test]
    fn identical_sides_give_identical_statistics() {
        let (idx, q, t) = random_setup(1);
        for c in compare_retrieval(&idx, &q, &idx, &q, &t, &COMPARISON_TOP_N).unwrap() {
            assert_eq!(c.raw, c.aligned);
        }
    }

    #[test]
    fn statistics_match_a_brute_force_loop() {
        let (idx, q, truths) = random_setup(2);
        let top_n = 6;
        let stats = retrieval_distance_stats(&idx, &q, &truths, top_n).unwrap();
        let (mut avg, mut med, mut max, mut min) = (0.0, 0.0, 0.0, 0.0);
        for (i, &t) in truths.iter().enumerate() {
            let mut scored: Vec<(f32, u64, GeoPoint)> = idx
                .iter()
                .map(|r| (r.vector.iter().zip(q.row(i)).map(|(a, b)| a * b).sum::<f32>(), r.id, r.point))
                .collect();
            scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
            let mut d: Vec<f64> = scored[..top_n].iter().map(|s| haversine_km(t, s.2)).collect();
            d.sort_by(|a, b| a.partial_cmp(b).unwrap());
            avg += d.iter().sum::<f64>() / top_n as f64;
            med += (d[2] + d[3]) / 2.0;
            max += d[5];
            min += d[0];
        }
        let n = truths.len() as f64;
        assert!((stats.avg_km - avg / n).abs() < 1e-9);
        assert!((stats.median_km - med / n).abs() < 1e-9);
        assert!((stats.max_km - max / n).abs() < 1e-9);
        assert!((stats.min_km - min / n).abs() < 1e-9);
    }

    #[test]
    fn median_of_odd_and_even() {
        assert_eq!(median(&[1.0, 2.0, 10.0]), 2.0);
        assert_eq!(median(&[1.0, 2.0, 4.0, 10.0]), 3.0);
    }
}
