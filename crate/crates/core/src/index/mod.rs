//! Inner-product vector store with exact search and an inverted-file
//! approximate search.

mod io;
mod kmeans;

pub use io::INDEX_FILE_VERSION;

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geodesy::GeoPoint;
use crate::nn::dot;

/// Allowed deviation of a stored or query vector's norm from 1.
pub const UNIT_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct IndexRecord {
    pub id: u64,
    pub vector: Vec<f32>,
    pub point: GeoPoint,
    pub text: String,
}

/// Borrowed view of a stored record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecordRef<'a> {
    pub id: u64,
    pub vector: &'a [f32],
    pub point: GeoPoint,
    pub text: &'a str,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub id: u64,
    pub score: f32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IvfParams {
    pub n_clusters: usize,
    pub kmeans_iters: usize,
    pub seed: u64,
    /// Lists probed per query by [`VectorIndex::search`].
    pub nprobe: usize,
}

impl Default for IvfParams {
    fn default() -> Self {
        Self { n_clusters: 32, kmeans_iters: 20, seed: 0, nprobe: 8 }
    }
}

impl IvfParams {
    fn validate(&self, n_records: usize) -> Result<()> {
        if self.n_clusters == 0 || self.n_clusters > n_records {
            return Err(Error::usage(format!(
                "n_clusters must be in [1, {n_records}], got {}",
                self.n_clusters
            )));
        }
        check_nprobe(self.nprobe, self.n_clusters)
    }
}

fn check_nprobe(nprobe: usize, n_clusters: usize) -> Result<()> {
    if nprobe == 0 || nprobe > n_clusters {
        return Err(Error::usage(format!("nprobe must be in [1, {n_clusters}], got {nprobe}")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
struct Ivf {
    params: IvfParams,
    centroids: Vec<f32>,
    /// Record positions per cluster, ascending.
    lists: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    dim: usize,
    ids: Vec<u64>,
    vectors: Vec<f32>,
    points: Vec<GeoPoint>,
    texts: Vec<String>,
    by_id: HashMap<u64, usize>,
    ivf: Option<Ivf>,
}

fn norm_error(v: &[f32]) -> f64 {
    let n = v.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
    (n - 1.0).abs()
}

/// Descending score, then ascending id.
fn rank(a: &SearchHit, b: &SearchHit) -> Ordering {
    b.score.total_cmp(&a.score).then(a.id.cmp(&b.id))
}

fn top_k(mut hits: Vec<SearchHit>, k: usize, order: impl Fn(&SearchHit, &SearchHit) -> Ordering) -> Vec<SearchHit> {
    if k < hits.len() {
        hits.select_nth_unstable_by(k, &order);
        hits.truncate(k);
    }
    hits.sort_unstable_by(order);
    hits
}

impl VectorIndex {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::usage("index dimension must be positive"));
        }
        Ok(Self {
            dim,
            ids: vec![],
            vectors: vec![],
            points: vec![],
            texts: vec![],
            by_id: HashMap::new(),
            ivf: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ivf_params(&self) -> Option<IvfParams> {
        self.ivf.as_ref().map(|i| i.params)
    }

    fn vector(&self, pos: usize) -> &[f32] {
        &self.vectors[pos * self.dim..(pos + 1) * self.dim]
    }

    pub fn record(&self, pos: usize) -> Option<RecordRef<'_>> {
        (pos < self.len()).then(|| RecordRef {
            id: self.ids[pos],
            vector: self.vector(pos),
            point: self.points[pos],
            text: &self.texts[pos],
        })
    }

    pub fn get(&self, id: u64) -> Option<RecordRef<'_>> {
        self.by_id.get(&id).and_then(|&p| self.record(p))
    }

    pub fn iter(&self) -> impl Iterator<Item = RecordRef<'_>> {
        (0..self.len()).filter_map(|p| self.record(p))
    }

    fn check_record(&self, r: &IndexRecord) -> Result<()> {
        if r.vector.len() != self.dim {
            return Err(Error::usage(format!(
                "record {} has {} dims, index has {}",
                r.id,
                r.vector.len(),
                self.dim
            )));
        }
        if r.vector.iter().any(|x| !x.is_finite()) || norm_error(&r.vector) > UNIT_TOLERANCE {
            return Err(Error::usage(format!("record {} vector is not unit norm", r.id)));
        }
        Ok(())
    }

    fn check_query(&self, query: &[f32], k: usize) -> Result<()> {
        if k == 0 {
            return Err(Error::usage("k must be at least 1"));
        }
        if query.len() != self.dim {
            return Err(Error::usage(format!(
                "query has {} dims, index has {}",
                query.len(),
                self.dim
            )));
        }
        if query.iter().any(|x| !x.is_finite()) || norm_error(query) > UNIT_TOLERANCE {
            return Err(Error::usage("query vector is not unit norm"));
        }
        Ok(())
    }

    /// Adds all records or none. With an IVF built, each new record joins the
    /// list of its nearest centroid.
    pub fn add(&mut self, records: Vec<IndexRecord>) -> Result<usize> {
        let mut fresh = HashSet::with_capacity(records.len());
        for r in &records {
            self.check_record(r)?;
            if self.by_id.contains_key(&r.id) || !fresh.insert(r.id) {
                return Err(Error::usage(format!("duplicate record id {}", r.id)));
            }
        }
        let n = records.len();
        for r in records {
            let pos = self.ids.len();
            self.by_id.insert(r.id, pos);
            self.ids.push(r.id);
            self.vectors.extend_from_slice(&r.vector);
            self.points.push(r.point);
            self.texts.push(r.text);
            if let Some(ivf) = &mut self.ivf {
                let c = kmeans::nearest(&ivf.centroids, self.dim, &self.vectors[pos * self.dim..]);
                ivf.lists[c].push(pos);
            }
        }
        Ok(n)
    }

    fn score(&self, query: &[f32], pos: usize) -> SearchHit {
        SearchHit { id: self.ids[pos], score: dot(query, self.vector(pos)).clamp(-1.0, 1.0) }
    }

    /// Exact top-`k` by inner product.
    pub fn search_flat(&self, query: &[f32], k: usize) -> Result<Vec<SearchHit>> {
        self.check_query(query, k)?;
        let hits = (0..self.len()).map(|p| self.score(query, p)).collect();
        Ok(top_k(hits, k, rank))
    }

    /// Clusters the stored vectors with seeded spherical k-means.
    pub fn build_ivf(&mut self, params: IvfParams) -> Result<()> {
        params.validate(self.len())?;
        let (centroids, assignment) = kmeans::spherical_kmeans(
            &self.vectors,
            self.dim,
            params.n_clusters,
            params.kmeans_iters,
            params.seed,
        );
        let mut lists = vec![Vec::new(); params.n_clusters];
        for (pos, &c) in assignment.iter().enumerate() {
            lists[c].push(pos);
        }
        self.ivf = Some(Ivf { params, centroids, lists });
        Ok(())
    }

    /// Top-`k` among records in the `nprobe` clusters nearest the query.
    pub fn search_ivf(&self, query: &[f32], k: usize, nprobe: usize) -> Result<Vec<SearchHit>> {
        let ivf = self.ivf.as_ref().ok_or_else(|| Error::usage("no IVF index has been built"))?;
        self.check_query(query, k)?;
        check_nprobe(nprobe, ivf.params.n_clusters)?;
        let probes = kmeans::nearest_n(&ivf.centroids, self.dim, query, nprobe);
        let hits = probes
            .into_iter()
            .flat_map(|c| ivf.lists[c].iter().map(|&p| self.score(query, p)))
            .collect();
        Ok(top_k(hits, k, rank))
    }

    /// IVF search with the built `nprobe` when an IVF exists, flat otherwise.
    pub fn search(&self, query: &[f32], k: usize) -> Result<Vec<SearchHit>> {
        match &self.ivf {
            Some(ivf) => self.search_ivf(query, k, ivf.params.nprobe),
            None => self.search_flat(query, k),
        }
    }

    /// The `k` lowest-scoring records among a seeded sample of at most
    /// `sample_size` records, ascending by score then id.
    pub fn search_dissimilar(
        &self,
        query: &[f32],
        k: usize,
        sample_size: usize,
        seed: u64,
    ) -> Result<Vec<SearchHit>> {
        self.check_query(query, k)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = sample_size.min(self.len());
        let hits = sample(&mut rng, self.len(), n).into_iter().map(|p| self.score(query, p)).collect();
        Ok(top_k(hits, k, |a, b| rank(b, a)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    pub(super) fn unit(v: &[f32]) -> Vec<f32> {
        let n = v.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
        v.iter().map(|&x| (x as f64 / n) as f32).collect()
    }

    pub(super) fn random_unit(dim: usize, rng: &mut impl Rng) -> Vec<f32> {
        unit(&(0..dim).map(|_| rng.sample::<f32, _>(StandardNormal)).collect::<Vec<_>>())
    }

    pub(super) fn rec(id: u64, vector: Vec<f32>) -> IndexRecord {
        IndexRecord { id, vector, point: GeoPoint::new(0.0, 0.0).unwrap(), text: format!("r{id}") }
    }

    pub(super) fn random_index(n: usize, dim: usize, seed: u64) -> VectorIndex {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = VectorIndex::new(dim).unwrap();
        idx.add((0..n as u64).map(|i| rec(i * 3 + 1, random_unit(dim, &mut rng))).collect()).unwrap();
        idx
    }

    fn basis(dim: usize, i: usize) -> Vec<f32> {
        let mut v = vec![0.0; dim];
        v[i] = 1.0;
        v
    }

    #[test]
    fn add_counts_and_self_retrieval() {
        let mut idx = VectorIndex::new(2048).unwrap();
        let n = idx.add((0..3).map(|i| rec(i, basis(2048, i as usize))).collect()).unwrap();
        assert_eq!(n, 3);
        let hits = idx.search_flat(&basis(2048, 1), 1).unwrap();
        assert_eq!(hits, vec![SearchHit { id: 1, score: 1.0 }]);
    }

    #[test]
    fn duplicate_or_bad_records_leave_index_unchanged() {
        let mut idx = VectorIndex::new(4).unwrap();
        idx.add(vec![rec(1, basis(4, 0))]).unwrap();
        let before = idx.clone();
        assert!(idx.add(vec![rec(2, basis(4, 1)), rec(1, basis(4, 2))]).is_err());
        assert!(idx.add(vec![rec(2, basis(4, 1)), rec(2, basis(4, 2))]).is_err());
        assert!(idx.add(vec![rec(3, vec![0.5; 4]), rec(4, vec![1.0; 4])]).is_err());
        assert!(idx.add(vec![rec(3, vec![1.0; 3])]).is_err());
        assert_eq!(idx, before);
        assert_eq!(idx.len(), 1);
    }

    #[test]
    fn hand_built_ordering() {
        // q = e0; a = e0, b = 0.6 e0 + 0.8 e1, c = -e0: scores 1, 0.6, -1.
        let dim = 2048;
        let mut b = vec![0.0; dim];
        b[0] = 0.6;
        b[1] = 0.8;
        let mut c = vec![0.0; dim];
        c[0] = -1.0;
        let mut idx = VectorIndex::new(dim).unwrap();
        idx.add(vec![rec(30, c), rec(20, b), rec(10, basis(dim, 0))]).unwrap();
        let hits = idx.search_flat(&basis(dim, 0), 3).unwrap();
        assert_eq!(hits.iter().map(|h| h.id).collect::<Vec<_>>(), vec![10, 20, 30]);
        assert_eq!(hits.iter().map(|h| h.score).collect::<Vec<_>>(), vec![1.0, 0.6, -1.0]);
    }

    #[test]
    fn ties_break_by_ascending_id_and_k_caps_at_size() {
        let mut idx = VectorIndex::new(2).unwrap();
        idx.add(vec![rec(9, basis(2, 0)), rec(4, basis(2, 0)), rec(7, basis(2, 1))]).unwrap();
        let hits = idx.search_flat(&basis(2, 0), 10).unwrap();
        assert_eq!(hits.iter().map(|h| h.id).collect::<Vec<_>>(), vec![4, 9, 7]);
    }

    #[test]
    fn rejects_bad_queries() {
        let idx = random_index(5, 8, 1);
        assert!(idx.search_flat(&[0.5; 8], 1).is_err());
        assert!(idx.search_flat(&basis(8, 0), 0).is_err());
        assert!(idx.search_flat(&basis(7, 0), 1).is_err());
        assert!(idx.search_ivf(&basis(8, 0), 1, 1).is_err());
    }

    #[test]
    fn ivf_with_all_probes_equals_flat() {
        let mut idx = random_index(300, 16, 2);
        idx.build_ivf(IvfParams { n_clusters: 7, kmeans_iters: 10, seed: 3, nprobe: 2 }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let q = random_unit(16, &mut rng);
            assert_eq!(idx.search_ivf(&q, 10, 7).unwrap(), idx.search_flat(&q, 10).unwrap());
        }
        assert!(idx.search_ivf(&basis(16, 0), 1, 0).is_err());
        assert!(idx.search_ivf(&basis(16, 0), 1, 8).is_err());
    }

    #[test]
    fn single_cluster_equals_flat() {
        let mut idx = random_index(50, 8, 5);
        idx.build_ivf(IvfParams { n_clusters: 1, kmeans_iters: 3, seed: 0, nprobe: 1 }).unwrap();
        let q = random_unit(8, &mut ChaCha8Rng::seed_from_u64(6));
        assert_eq!(idx.search(&q, 50).unwrap(), idx.search_flat(&q, 50).unwrap());
    }

    #[test]
    fn ivf_params_are_validated() {
        let mut idx = random_index(5, 4, 7);
        let p = IvfParams { n_clusters: 6, kmeans_iters: 3, seed: 0, nprobe: 1 };
        assert!(idx.build_ivf(p).is_err());
        assert!(idx.build_ivf(IvfParams { n_clusters: 2, nprobe: 3, ..p }).is_err());
        assert!(idx.build_ivf(IvfParams { n_clusters: 0, nprobe: 0, ..p }).is_err());
    }

    #[test]
    fn records_added_after_build_are_searchable() {
        let mut idx = random_index(40, 8, 8);
        idx.build_ivf(IvfParams { n_clusters: 4, kmeans_iters: 5, seed: 1, nprobe: 1 }).unwrap();
        let v = random_unit(8, &mut ChaCha8Rng::seed_from_u64(9));
        idx.add(vec![rec(1000, v.clone())]).unwrap();
        assert_eq!(idx.search_ivf(&v, 1, 1).unwrap()[0].id, 1000);
        assert_eq!(idx.search_ivf(&v, 41, 4).unwrap(), idx.search_flat(&v, 41).unwrap());
    }

    #[test]
    fn dissimilar_returns_lowest_scores_of_a_seeded_sample() {
        let idx = random_index(200, 8, 10);
        let q = random_unit(8, &mut ChaCha8Rng::seed_from_u64(11));
        let all = idx.search_dissimilar(&q, 5, 1000, 0).unwrap();
        let mut flat = idx.search_flat(&q, 200).unwrap();
        flat.reverse();
        assert_eq!(all.iter().map(|h| h.score).collect::<Vec<_>>(), flat[..5].iter().map(|h| h.score).collect::<Vec<_>>());
        let a = idx.search_dissimilar(&q, 3, 50, 42).unwrap();
        assert_eq!(a, idx.search_dissimilar(&q, 3, 50, 42).unwrap());
        assert!(a.windows(2).all(|w| w[0].score <= w[1].score));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn scores_are_bounded_and_sorted(seed in any::<u64>(), k in 1usize..40) {
            let idx = random_index(30, 6, seed);
            let q = random_unit(6, &mut ChaCha8Rng::seed_from_u64(seed ^ 1));
            let hits = idx.search_flat(&q, k).unwrap();
            prop_assert_eq!(hits.len(), k.min(30));
            for w in hits.windows(2) {
                prop_assert!(rank(&w[0], &w[1]) != Ordering::Greater);
            }
            for h in &hits {
                prop_assert!((-1.0..=1.0).contains(&h.score));
            }
        }
    }
}
