//! GPS coordinate encoder: Mercator projection, hierarchical random Fourier
//! features, and one MLP branch per frequency scale, summed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geodesy::{GeoPoint, Mercator, PROJECTION_RADIUS_M};
use crate::nn::{Matrix, Mlp, MlpCache, MlpGrads, MlpSpec, Real};

/// Geometric ladder of RFF frequency scales.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HierarchySpec {
    pub n_hierarchies: usize,
    pub sigma_min: f64,
    pub sigma_max: f64,
}

impl Default for HierarchySpec {
    fn default() -> Self {
        Self { n_hierarchies: 3, sigma_min: 1.0, sigma_max: 256.0 }
    }
}

impl HierarchySpec {
    /// The per-branch scales. A single hierarchy uses `sigma_min` alone.
    pub fn sigmas(&self) -> Result<Vec<f64>> {
        if self.n_hierarchies == 1 {
            if !(self.sigma_min > 0.0 && self.sigma_min.is_finite()) {
                return Err(Error::usage(format!("sigma_min {} must be positive", self.sigma_min)));
            }
            return Ok(vec![self.sigma_min]);
        }
        sigma_schedule(self.n_hierarchies, self.sigma_min, self.sigma_max)
    }
}

/// `σ_k = 2^(log2 σ_min + (k-1)(log2 σ_max - log2 σ_min)/(n-1))` for k = 1..=n.
pub fn sigma_schedule(n: usize, sigma_min: f64, sigma_max: f64) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::usage(format!("sigma schedule needs n >= 2, got {n}")));
    }
    if !(sigma_min > 0.0 && sigma_min < sigma_max && sigma_max.is_finite()) {
        return Err(Error::usage(format!(
            "need 0 < sigma_min < sigma_max, got {sigma_min} and {sigma_max}"
        )));
    }
    let (lo, hi) = (sigma_min.log2(), sigma_max.log2());
    let step = (hi - lo) / (n - 1) as f64;
    let mut out: Vec<f64> = (0..n).map(|k| (lo + k as f64 * step).exp2()).collect();
    // Pin the endpoints exactly.
    out[0] = sigma_min;
    out[n - 1] = sigma_max;
    Ok(out)
}

/// Frozen Gaussian frequency matrix, `rows × 2`, entries ~ N(0, σ²).
#[derive(Debug, Clone, PartialEq)]
pub struct RffMatrix {
    pub sigma: f64,
    pub seed: u64,
    entries: Matrix<f32>,
}

impl RffMatrix {
    pub fn sample(rows: usize, sigma: f64, seed: u64) -> Result<Self> {
        let normal = Normal::new(0.0, sigma)
            .map_err(|e| Error::usage(format!("invalid RFF sigma {sigma}: {e}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows * 2).map(|_| normal.sample(&mut rng) as f32).collect();
        Ok(Self { sigma, seed, entries: Matrix::from_vec(rows, 2, data)? })
    }

    pub fn from_entries(sigma: f64, seed: u64, entries: Matrix<f32>) -> Result<Self> {
        if entries.cols() != 2 {
            return Err(Error::usage("RFF matrix must have two columns"));
        }
        Ok(Self { sigma, seed, entries })
    }

    pub fn rows(&self) -> usize {
        self.entries.rows()
    }

    pub fn entries(&self) -> &Matrix<f32> {
        &self.entries
    }
}

/// `[cos(2π·M·p), sin(2π·M·p)]` for one scaled plane point. Evaluated in
/// double precision; high-σ branches produce large phases.
pub fn rff_features(p: [f64; 2], m: &RffMatrix) -> Vec<f64> {
    let rows = m.rows();
    let mut out = vec![0.0; 2 * rows];
    for r in 0..rows {
        let row = m.entries.row(r);
        let phase = std::f64::consts::TAU * (row[0] as f64 * p[0] + row[1] as f64 * p[1]);
        let (s, c) = phase.sin_cos();
        out[r] = c;
        out[rows + r] = s;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Projection {
    #[default]
    Mercator,
    /// Equal Earth, kept only for projection comparisons.
    EqualEarth,
}

impl Projection {
    /// Projected coordinates divided by `πR`, so both axes lie in ≈[-1, 1].
    pub fn scaled(self, p: GeoPoint) -> [f64; 2] {
        let scale = std::f64::consts::PI * PROJECTION_RADIUS_M;
        match self {
            Projection::Mercator => {
                let q = Mercator::default().project(p);
                [q.x / scale, q.y / scale]
            }
            Projection::EqualEarth => {
                let (x, y) = equal_earth(p);
                [x * PROJECTION_RADIUS_M / scale, y * PROJECTION_RADIUS_M / scale]
            }
        }
    }
}

/// Equal Earth projection on the unit sphere.
fn equal_earth(p: GeoPoint) -> (f64, f64) {
    const A1: f64 = 1.340264;
    const A2: f64 = -0.081106;
    const A3: f64 = 0.000893;
    const A4: f64 = 0.003796;
    let (lam, phi) = (p.lon().to_radians(), p.lat().to_radians());
    let theta = (3f64.sqrt() / 2.0 * phi.sin()).asin();
    let t2 = theta * theta;
    let t6 = t2 * t2 * t2;
    let x = 2.0 * 3f64.sqrt() * lam * theta.cos()
        / (3.0 * (9.0 * A4 * t6 * t2 + 7.0 * A3 * t6 + 3.0 * A2 * t2 + A1));
    let y = theta * (A1 + A2 * t2 + t6 * (A3 + A4 * t2));
    (x, y)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GpsEncoderConfig {
    pub hierarchy: HierarchySpec,
    pub projection: Projection,
    /// Rows of each RFF matrix; features are twice this wide.
    pub rff_rows: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
}

impl Default for GpsEncoderConfig {
    fn default() -> Self {
        Self {
            hierarchy: HierarchySpec::default(),
            projection: Projection::Mercator,
            rff_rows: 256,
            hidden_dim: 1024,
            output_dim: 512,
        }
    }
}

impl GpsEncoderConfig {
    pub fn branch_spec(&self) -> Result<MlpSpec> {
        MlpSpec::new(&[2 * self.rff_rows, self.hidden_dim, self.output_dim])
    }
}

/// Per-hierarchy RFF seed derived from the encoder seed.
pub fn rff_seed(seed: u64, k: usize) -> u64 {
    crate::seed::derive(seed, k as u64)
}

/// A 512-wide location embedding produced by [`GpsEncoder::encode`].
#[derive(Debug, Clone, PartialEq)]
pub struct GpsEmbedding(Vec<f32>);

impl GpsEmbedding {
    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.0
    }
}

#[derive(Debug, Clone)]
pub struct GpsCache<T> {
    branches: Vec<MlpCache<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GpsEncoder<T> {
    config: GpsEncoderConfig,
    rff: Vec<RffMatrix>,
    branches: Vec<Mlp<T>>,
}

impl<T: Real> GpsEncoder<T> {
    /// Samples frozen RFF matrices and initializes the branches from `seed`.
    pub fn new(config: GpsEncoderConfig, seed: u64, rng: &mut impl rand::Rng) -> Result<Self> {
        let sigmas = config.hierarchy.sigmas()?;
        let spec = config.branch_spec()?;
        let rff = sigmas
            .iter()
            .enumerate()
            .map(|(k, &s)| RffMatrix::sample(config.rff_rows, s, rff_seed(seed, k)))
            .collect::<Result<Vec<_>>>()?;
        let branches = sigmas.iter().map(|_| Mlp::init(spec.clone(), rng)).collect();
        Ok(Self { config, rff, branches })
    }

    pub fn from_parts(
        config: GpsEncoderConfig,
        rff: Vec<RffMatrix>,
        branches: Vec<Mlp<T>>,
    ) -> Result<Self> {
        let spec = config.branch_spec()?;
        if rff.len() != branches.len() || rff.is_empty() {
            return Err(Error::usage("need one RFF matrix per branch"));
        }
        if rff.iter().any(|m| m.rows() != config.rff_rows)
            || branches.iter().any(|b| b.spec() != &spec)
        {
            return Err(Error::usage("encoder parts do not match the configuration"));
        }
        Ok(Self { config, rff, branches })
    }

    pub fn config(&self) -> &GpsEncoderConfig {
        &self.config
    }

    pub fn rff(&self) -> &[RffMatrix] {
        &self.rff
    }

    pub fn branches(&self) -> &[Mlp<T>] {
        &self.branches
    }

    pub fn branches_mut(&mut self) -> &mut [Mlp<T>] {
        &mut self.branches
    }

    pub fn output_dim(&self) -> usize {
        self.config.output_dim
    }

    pub fn cast<U: Real>(&self) -> GpsEncoder<U> {
        GpsEncoder {
            config: self.config.clone(),
            rff: self.rff.clone(),
            branches: self.branches.iter().map(Mlp::cast).collect(),
        }
    }

    /// RFF features of every point for hierarchy `k`, one row per point.
    pub fn features(&self, points: &[GeoPoint], k: usize) -> Matrix<T> {
        let m = &self.rff[k];
        let width = 2 * m.rows();
        let mut data = Vec::with_capacity(points.len() * width);
        for &p in points {
            let scaled = self.config.projection.scaled(p);
            data.extend(rff_features(scaled, m).into_iter().map(T::lit));
        }
        Matrix::from_vec(points.len(), width, data).unwrap()
    }

    pub fn forward(&self, points: &[GeoPoint]) -> Result<(Matrix<T>, GpsCache<T>)> {
        let mut sum = Matrix::zeros(points.len(), self.config.output_dim);
        let mut caches = Vec::with_capacity(self.branches.len());
        for (k, branch) in self.branches.iter().enumerate() {
            let (out, cache) = branch.forward(&self.features(points, k))?;
            sum.add_assign(&out)?;
            caches.push(cache);
        }
        Ok((sum, GpsCache { branches: caches }))
    }

    pub fn infer(&self, points: &[GeoPoint]) -> Result<Matrix<T>> {
        let mut sum = Matrix::zeros(points.len(), self.config.output_dim);
        for (k, branch) in self.branches.iter().enumerate() {
            sum.add_assign(&branch.infer(&self.features(points, k))?)?;
        }
        Ok(sum)
    }

    /// Gradients for the trainable branches. The RFF matrices receive none.
    pub fn backward(&self, cache: &GpsCache<T>, upstream: &Matrix<T>) -> Result<Vec<MlpGrads<T>>> {
        if cache.branches.len() != self.branches.len() {
            return Err(Error::usage("GPS cache has the wrong number of branches"));
        }
        self.branches
            .iter()
            .zip(&cache.branches)
            .map(|(b, c)| b.backward(c, upstream).map(|(g, _)| g))
            .collect()
    }
}

impl GpsEncoder<f32> {
    pub fn encode(&self, p: GeoPoint) -> GpsEmbedding {
        let out = self.infer(std::slice::from_ref(&p)).expect("encoder shapes are consistent");
        GpsEmbedding(out.into_vec())
    }
}
