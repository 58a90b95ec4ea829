use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::client::{ImagePayload, LmmClient, LmmRequest};
use super::parse::parse_coordinates;
use super::prompt::{render_prompt, PromptSet, PromptSpec};
use crate::error::{Error, Result};
use crate::geodesy::GeoPoint;
use crate::index::VectorIndex;
use crate::seed;

/// Sample size from which dissimilar references are drawn.
pub const NEGATIVE_SAMPLE_SIZE: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievedRef {
    pub id: u64,
    pub point: GeoPoint,
    pub score: f32,
}

/// Source of reference coordinates for a query vector.
pub trait Retrieval: Sync {
    /// Top-`k` most similar records, best first.
    fn similar(&self, query: &[f32], k: usize) -> Result<Vec<RetrievedRef>>;
    /// `k` dissimilar records, least similar first.
    fn dissimilar(&self, query: &[f32], k: usize) -> Result<Vec<RetrievedRef>>;
}

/// Retrieval over a [`VectorIndex`]; negatives are the lowest-scoring
/// records in a seeded sample of [`NEGATIVE_SAMPLE_SIZE`] records.
pub struct IndexRetrieval<'a> {
    pub index: &'a VectorIndex,
    pub negative_seed: u64,
    pub negative_sample: usize,
}

impl<'a> IndexRetrieval<'a> {
    pub fn new(index: &'a VectorIndex, negative_seed: u64) -> Self {
        Self { index, negative_seed, negative_sample: NEGATIVE_SAMPLE_SIZE }
    }

    fn resolve(&self, hits: Vec<crate::index::SearchHit>) -> Vec<RetrievedRef> {
        hits.into_iter()
            .map(|h| RetrievedRef {
                id: h.id,
                point: self.index.get(h.id).expect("hit ids come from the index").point,
                score: h.score,
            })
            .collect()
    }
}

impl Retrieval for IndexRetrieval<'_> {
    fn similar(&self, query: &[f32], k: usize) -> Result<Vec<RetrievedRef>> {
        Ok(self.resolve(self.index.search(query, k)?))
    }

    fn dissimilar(&self, query: &[f32], k: usize) -> Result<Vec<RetrievedRef>> {
        let hits = self.index.search_dissimilar(query, k, self.negative_sample, self.negative_seed)?;
        Ok(self.resolve(hits))
    }
}

/// Positives are the first `n_pos` similar hits, negatives the first
/// `n_neg` dissimilar ones.
pub fn select_references(
    similar: &[RetrievedRef],
    dissimilar: &[RetrievedRef],
    spec: PromptSpec,
) -> Result<(Vec<GeoPoint>, Vec<GeoPoint>)> {
    if similar.len() < spec.n_pos || dissimilar.len() < spec.n_neg {
        return Err(Error::usage(format!(
            "prompt needs {} similar and {} dissimilar references, index supplied {} and {}",
            spec.n_pos,
            spec.n_neg,
            similar.len(),
            dissimilar.len()
        )));
    }
    Ok((
        similar[..spec.n_pos].iter().map(|r| r.point).collect(),
        dissimilar[..spec.n_neg].iter().map(|r| r.point).collect(),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Provenance {
    Generated { k: usize, j: usize },
    Retrieved { rank: usize },
}

impl std::fmt::Display for Provenance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Provenance::Generated { k, j } => write!(f, "generated({k},{j})"),
            Provenance::Retrieved { rank } => write!(f, "retrieved({rank})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub point: GeoPoint,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedGeneration {
    pub k: usize,
    pub j: usize,
    pub reason: String,
}

/// Generated candidates in (k, j) order followed by retrieved ones by rank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePool {
    pub candidates: Vec<Candidate>,
    pub dropped: Vec<DroppedGeneration>,
}

impl CandidatePool {
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn points(&self) -> Vec<GeoPoint> {
        self.candidates.iter().map(|c| c.point).collect()
    }

    pub fn generated_count(&self) -> usize {
        self.candidates.iter().filter(|c| matches!(c.provenance, Provenance::Generated { .. })).count()
    }

    pub fn retrieved_count(&self) -> usize {
        self.len() - self.generated_count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    pub prompts: PromptSet,
    /// Concurrent LMM requests per query image.
    pub parallelism: usize,
    /// Base seed for per-request sampling seeds.
    pub seed: u64,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self { prompts: PromptSet::default(), parallelism: 4, seed: 0 }
    }
}

/// Builds the candidate pool for one query: K × N LMM requests plus the top
/// S retrieved coordinates. Unparsable answers are dropped and logged; a
/// client error fails the whole query. Retrieval is skipped entirely when no
/// prompt needs references and S = 0.
pub fn generate_candidates(
    client: &dyn LmmClient,
    image: Option<Arc<ImagePayload>>,
    query: &[f32],
    config: &GenerationConfig,
    retrieval: &dyn Retrieval,
) -> Result<CandidatePool> {
    let prompts = &config.prompts;
    prompts.validate()?;
    if config.parallelism == 0 {
        return Err(Error::usage("parallelism must be at least 1"));
    }
    let (n_sim, n_dis) = (prompts.positives_needed(), prompts.negatives_needed());
    let similar = if n_sim > 0 { retrieval.similar(query, n_sim)? } else { vec![] };
    let dissimilar = if n_dis > 0 { retrieval.dissimilar(query, n_dis)? } else { vec![] };

    let n = prompts.n_generations;
    let mut requests = Vec::with_capacity(prompts.specs.len() * n);
    for (k, &spec) in prompts.specs.iter().enumerate() {
        let (pos, neg) = select_references(&similar, &dissimilar, spec)?;
        let prompt = render_prompt(spec, &pos, &neg)?;
        for j in 0..n {
            requests.push(LmmRequest {
                prompt: prompt.clone(),
                image: image.clone(),
                temperature: prompts.temperature,
                seed: seed::derive(config.seed, (k * n + j) as u64),
                k,
                j,
                positives: pos.clone(),
                negatives: neg.clone(),
            });
        }
    }

    let results: Vec<Mutex<Option<Result<String>>>> = requests.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..config.parallelism.min(requests.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(req) = requests.get(i) else { break };
                let out = client.complete(req).map(|r| r.text);
                *results[i].lock().unwrap() = Some(out);
            });
        }
    });

    let mut pool = CandidatePool { candidates: vec![], dropped: vec![] };
    for (req, slot) in requests.iter().zip(results) {
        let text = slot.into_inner().unwrap().expect("every request ran")?;
        match parse_coordinates(&text) {
            Ok(point) => pool.candidates.push(Candidate {
                point,
                provenance: Provenance::Generated { k: req.k, j: req.j },
            }),
            Err(e) => {
                log::warn!("dropping generation (k={}, j={}): {e}", req.k, req.j);
                pool.dropped.push(DroppedGeneration { k: req.k, j: req.j, reason: e.to_string() });
            }
        }
    }
    if similar.len() < prompts.s_retrieved {
        return Err(Error::usage(format!(
            "S = {} but only {} records were retrieved",
            prompts.s_retrieved,
            similar.len()
        )));
    }
    for (rank, r) in similar[..prompts.s_retrieved].iter().enumerate() {
        pool.candidates.push(Candidate { point: r.point, provenance: Provenance::Retrieved { rank: rank + 1 } });
    }
    Ok(pool)
}
