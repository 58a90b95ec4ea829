use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geodesy::{destination, GeoPoint};

/// Raw image bytes sent alongside a prompt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImagePayload {
    pub media_type: String,
    pub data: Vec<u8>,
}

impl ImagePayload {
    /// Reads an image file, guessing the media type from its extension.
    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let media_type = match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase) {
            Some(e) if e == "png" => "image/png",
            Some(e) if e == "webp" => "image/webp",
            Some(e) if e == "gif" => "image/gif",
            _ => "image/jpeg",
        };
        Ok(Self { media_type: media_type.to_owned(), data: std::fs::read(path)? })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmmRequest {
    pub prompt: String,
    pub image: Option<Arc<ImagePayload>>,
    pub temperature: f64,
    /// Sampling seed; only the mock honours it.
    pub seed: u64,
    /// Prompt index k and generation index j.
    pub k: usize,
    pub j: usize,
    /// The references rendered into `prompt`, for clients that simulate a model.
    pub positives: Vec<GeoPoint>,
    pub negatives: Vec<GeoPoint>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LmmResponse {
    pub text: String,
    pub status: u16,
}

impl LmmResponse {
    pub fn ok(text: impl Into<String>) -> Self {
        Self { text: text.into(), status: 200 }
    }
}

/// A large multimodal model endpoint. Errors are transport failures; an
/// answer that cannot be parsed is still an `Ok` response.
pub trait LmmClient: Send + Sync {
    fn complete(&self, request: &LmmRequest) -> Result<LmmResponse>;
}

type ResponseFn = dyn Fn(&LmmRequest) -> Result<LmmResponse> + Send + Sync;

pub enum MockBehavior {
    /// Spherical centroid of the positives moved by a seeded 2-D Gaussian
    /// offset with `sigma_km` per axis; `landmark` when there are none.
    Centroid { sigma_km: f64, landmark: GeoPoint },
    /// The first positive verbatim; an unparsable refusal when there is none.
    EchoTop1,
    Custom(Box<ResponseFn>),
}

impl std::fmt::Debug for MockBehavior {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Centroid { sigma_km, landmark } => f
                .debug_struct("Centroid")
                .field("sigma_km", sigma_km)
                .field("landmark", landmark)
                .finish(),
            Self::EchoTop1 => f.write_str("EchoTop1"),
            Self::Custom(_) => f.write_str("Custom"),
        }
    }
}

/// Deterministic stand-in for an LMM.
#[derive(Debug)]
pub struct MockLmm {
    behavior: MockBehavior,
}

/// The Eiffel Tower, a typical zero-shot guess.
pub fn default_landmark() -> GeoPoint {
    GeoPoint::new(48.8584, 2.2945).expect("constant is valid")
}

impl MockLmm {
    pub fn centroid(sigma_km: f64) -> Result<Self> {
        if !(sigma_km >= 0.0 && sigma_km.is_finite()) {
            return Err(Error::usage("mock sigma_km must be finite and non-negative"));
        }
        Ok(Self { behavior: MockBehavior::Centroid { sigma_km, landmark: default_landmark() } })
    }

    pub fn echo_top1() -> Self {
        Self { behavior: MockBehavior::EchoTop1 }
    }

    pub fn from_fn(f: impl Fn(&LmmRequest) -> Result<LmmResponse> + Send + Sync + 'static) -> Self {
        Self { behavior: MockBehavior::Custom(Box::new(f)) }
    }

    pub fn with_landmark(mut self, point: GeoPoint) -> Self {
        if let MockBehavior::Centroid { landmark, .. } = &mut self.behavior {
            *landmark = point;
        }
        self
    }
}

fn answer(p: GeoPoint) -> LmmResponse {
    LmmResponse::ok(format!("{}, {}", p.lat(), p.lon()))
}

/// Normalized mean of the points as unit vectors; the first point if the
/// mean vanishes.
pub fn spherical_centroid(points: &[GeoPoint]) -> Option<GeoPoint> {
    let first = *points.first()?;
    let mut s = [0f64; 3];
    for p in points {
        let (lat, lon) = (p.lat().to_radians(), p.lon().to_radians());
        s[0] += lat.cos() * lon.cos();
        s[1] += lat.cos() * lon.sin();
        s[2] += lat.sin();
    }
    let norm = (s[0] * s[0] + s[1] * s[1] + s[2] * s[2]).sqrt();
    if norm < 1e-12 {
        return Some(first);
    }
    let lat = (s[2] / norm).clamp(-1.0, 1.0).asin().to_degrees();
    let lon = s[1].atan2(s[0]).to_degrees();
    GeoPoint::new(lat, lon).ok().or(Some(first))
}

impl LmmClient for MockLmm {
    fn complete(&self, req: &LmmRequest) -> Result<LmmResponse> {
        match &self.behavior {
            MockBehavior::Centroid { sigma_km, landmark } => {
                let Some(c) = spherical_centroid(&req.positives) else {
                    return Ok(answer(*landmark));
                };
                let mut rng = ChaCha8Rng::seed_from_u64(req.seed);
                let dx: f64 = rng.sample::<f64, _>(StandardNormal) * sigma_km;
                let dy: f64 = rng.sample::<f64, _>(StandardNormal) * sigma_km;
                let bearing = dx.atan2(dy).to_degrees();
                Ok(answer(destination(c, bearing, dx.hypot(dy))))
            }
            MockBehavior::EchoTop1 => Ok(match req.positives.first() {
                Some(&p) => answer(p),
                None => LmmResponse::ok("I cannot tell."),
            }),
            MockBehavior::Custom(f) => f(req),
        }
    }
}
