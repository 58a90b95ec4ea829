//! A seeded, desk-scale stand-in for a geotagged photo corpus.
//!
//! Clusters are scattered over the sphere. Each cluster has a visual
//! signature; clusters are arranged in look-alike groups whose signatures
//! share a common style direction, so raw image similarity confuses places
//! that are far apart. Text embeddings carry the cluster's country.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::embeddings::EmbeddingFile;
use super::metadata::MetadataRecord;
use crate::align::TriModalBatch;
use crate::error::{Error, Result};
use crate::geodesy::{destination, haversine_km, GeoPoint};
use crate::nn::Matrix;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticWorldConfig {
    pub seed: u64,
    pub n_clusters: usize,
    pub points_per_cluster: usize,
    /// Expected norm of the per-point noise relative to the unit signature.
    pub embedding_noise_sigma: f64,
    pub cluster_radius_km: f64,
    pub image_dim: usize,
    pub text_dim: usize,
    /// Clusters per look-alike group.
    pub lookalike_group_size: usize,
    /// Cosine between the signatures of two clusters in the same group.
    pub lookalike_similarity: f64,
    pub min_center_separation_km: f64,
}

impl Default for SyntheticWorldConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_clusters: 8,
            points_per_cluster: 256,
            embedding_noise_sigma: 1.0,
            cluster_radius_km: 50.0,
            image_dim: 768,
            text_dim: 768,
            lookalike_group_size: 2,
            lookalike_similarity: 0.99,
            min_center_separation_km: 3000.0,
        }
    }
}

impl SyntheticWorldConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::usage(format!("invalid synthetic world config: {what}")));
        if self.n_clusters == 0 || self.points_per_cluster == 0 {
            return bad("cluster and point counts must be positive");
        }
        if self.image_dim == 0 || self.text_dim == 0 {
            return bad("embedding dimensions must be positive");
        }
        if !(self.embedding_noise_sigma >= 0.0 && self.embedding_noise_sigma.is_finite()) {
            return bad("embedding_noise_sigma must be finite and non-negative");
        }
        if !(self.cluster_radius_km > 0.0 && self.cluster_radius_km < 2500.0) {
            return bad("cluster_radius_km must be in (0, 2500)");
        }
        if self.lookalike_group_size == 0 {
            return bad("lookalike_group_size must be positive");
        }
        if !(0.0..1.0).contains(&self.lookalike_similarity) {
            return bad("lookalike_similarity must be in [0, 1)");
        }
        if !(self.min_center_separation_km >= 0.0 && self.min_center_separation_km < 10_000.0) {
            return bad("min_center_separation_km must be in [0, 10000)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCluster {
    pub center: GeoPoint,
    pub group: usize,
    pub country: String,
    pub signature: Vec<f32>,
    pub text_signature: Vec<f32>,
}

/// Records with aligned image and text embeddings, row `i` for record `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSample {
    pub records: Vec<MetadataRecord>,
    pub image: Matrix<f32>,
    pub text: Matrix<f32>,
    pub cluster: Vec<usize>,
}

impl SyntheticSample {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn points(&self) -> Vec<GeoPoint> {
        self.records.iter().map(|r| r.point).collect()
    }

    pub fn ids(&self) -> Vec<String> {
        self.records.iter().map(|r| r.img_id.clone()).collect()
    }

    /// Rows `idx`, in that order.
    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            records: idx.iter().map(|&i| self.records[i].clone()).collect(),
            image: self.image.select_rows(idx),
            text: self.text.select_rows(idx),
            cluster: idx.iter().map(|&i| self.cluster[i]).collect(),
        }
    }

    pub fn batch(&self) -> Result<TriModalBatch<f32>> {
        TriModalBatch::new(self.image.clone(), self.text.clone(), self.points())
    }

    pub fn image_file(&self) -> Result<EmbeddingFile> {
        EmbeddingFile::new(self.ids(), self.image.clone())
    }

    pub fn text_file(&self) -> Result<EmbeddingFile> {
        EmbeddingFile::new(self.ids(), self.text.clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticWorld {
    pub config: SyntheticWorldConfig,
    pub clusters: Vec<SyntheticCluster>,
    pub database: SyntheticSample,
}

fn unit_gaussian(dim: usize, rng: &mut impl Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn uniform_on_band(rng: &mut impl Rng, max_abs_lat: f64) -> GeoPoint {
    let z_max = max_abs_lat.to_radians().sin();
    let z: f64 = rng.random_range(-z_max..=z_max);
    let lon: f64 = rng.random_range(-180.0..180.0);
    GeoPoint::new(z.asin().to_degrees(), lon).expect("band sample is in range")
}

/// Builds the clusters and the database sample for `config`.
pub fn synthesize_world(config: &SyntheticWorldConfig) -> Result<SyntheticWorld> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(config.seed, 0));

    let mut centers: Vec<GeoPoint> = Vec::with_capacity(config.n_clusters);
    let mut attempts = 0usize;
    while centers.len() < config.n_clusters {
        attempts += 1;
        if attempts > 100_000 {
            return Err(Error::usage(format!(
                "cannot place {} clusters {} km apart",
                config.n_clusters, config.min_center_separation_km
            )));
        }
        let c = uniform_on_band(&mut rng, 70.0);
        if centers.iter().all(|&o| haversine_km(o, c) >= config.min_center_separation_km) {
            centers.push(c);
        }
    }

    let n_groups = config.n_clusters.div_ceil(config.lookalike_group_size);
    let styles: Vec<Vec<f64>> = (0..n_groups).map(|_| unit_gaussian(config.image_dim, &mut rng)).collect();
    let (a, b) = (config.lookalike_similarity.sqrt(), (1.0 - config.lookalike_similarity).sqrt());
    let clusters = centers
        .into_iter()
        .enumerate()
        .map(|(c, center)| {
            let group = c % n_groups;
            let unique = unit_gaussian(config.image_dim, &mut rng);
            let mix: Vec<f64> = styles[group].iter().zip(&unique).map(|(s, u)| a * s + b * u).collect();
            let norm = mix.iter().map(|x| x * x).sum::<f64>().sqrt();
            let text = unit_gaussian(config.text_dim, &mut rng);
            SyntheticCluster {
                center,
                group,
                country: format!("Country {c}"),
                signature: mix.iter().map(|x| (x / norm) as f32).collect(),
                text_signature: text.into_iter().map(|x| x as f32).collect(),
            }
        })
        .collect();

    let mut world = SyntheticWorld {
        config: config.clone(),
        clusters,
        database: SyntheticSample {
            records: vec![],
            image: Matrix::zeros(0, config.image_dim),
            text: Matrix::zeros(0, config.text_dim),
            cluster: vec![],
        },
    };
    world.database = world.sample("db", config.points_per_cluster, 0);
    Ok(world)
}

impl SyntheticWorld {
    /// Fresh points from every cluster, drawn from an independent stream.
    /// Stream 0 is the database; use any other value for held-out queries.
    pub fn queries(&self, per_cluster: usize, stream: u64) -> Result<SyntheticSample> {
        if stream == 0 {
            return Err(Error::usage("query stream 0 is reserved for the database"));
        }
        if per_cluster == 0 {
            return Err(Error::usage("queries per cluster must be positive"));
        }
        Ok(self.sample(&format!("q{stream}"), per_cluster, stream))
    }

    /// The first `per_cluster` database records of every cluster.
    pub fn stored_queries(&self, per_cluster: usize) -> Result<SyntheticSample> {
        if per_cluster == 0 || per_cluster > self.config.points_per_cluster {
            return Err(Error::usage(format!(
                "stored queries per cluster must be in [1, {}]",
                self.config.points_per_cluster
            )));
        }
        let mut taken = vec![0usize; self.clusters.len()];
        let idx: Vec<usize> = (0..self.database.len())
            .filter(|&i| {
                let c = self.database.cluster[i];
                taken[c] += 1;
                taken[c] <= per_cluster
            })
            .collect();
        Ok(self.database.select(&idx))
    }

    fn sample(&self, prefix: &str, per_cluster: usize, stream: u64) -> SyntheticSample {
        let cfg = &self.config;
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(cfg.seed, stream + 1));
        let noise = Normal::new(0.0, cfg.embedding_noise_sigma / (cfg.image_dim as f64).sqrt())
            .expect("validated sigma");
        let n = self.clusters.len() * per_cluster;
        let mut records = Vec::with_capacity(n);
        let mut image = Vec::with_capacity(n * cfg.image_dim);
        let mut text = Vec::with_capacity(n * cfg.text_dim);
        let mut cluster_of = Vec::with_capacity(n);
        for (c, cl) in self.clusters.iter().enumerate() {
            for i in 0..per_cluster {
                let bearing = rng.random_range(0.0..360.0);
                let dist = cfg.cluster_radius_km * rng.random::<f64>().sqrt();
                let mut r = MetadataRecord::new(
                    format!("{prefix}/c{c:03}/{i:06}.jpg"),
                    destination(cl.center, bearing, dist),
                );
                r.city = Some(format!("City {c}"));
                r.county = Some(format!("County {c}"));
                r.country = Some(cl.country.clone());
                r.country_code = Some(format!("c{c}"));
                records.push(r);
                image.extend(cl.signature.iter().map(|&s| (s as f64 + noise.sample(&mut rng)) as f32));
                text.extend_from_slice(&cl.text_signature);
                cluster_of.push(c);
            }
        }
        SyntheticSample {
            records,
            image: Matrix::from_vec(n, cfg.image_dim, image).expect("sized above"),
            text: Matrix::from_vec(n, cfg.text_dim, text).expect("sized above"),
            cluster: cluster_of,
        }
    }
}
