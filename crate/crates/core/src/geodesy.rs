//! Coordinates, Mercator projection, great-circle distance and the
//! threshold accuracy metric.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default projection radius in meters (WGS84 semi-major axis).
pub const PROJECTION_RADIUS_M: f64 = 6_378_137.0;

/// Mean Earth radius in kilometers used for haversine distances.
pub const MEAN_EARTH_RADIUS_KM: f64 = 6_371.008_8;

/// Latitudes are clamped to this magnitude before projecting; beyond it
/// Mercator `y` grows without bound.
pub const MERCATOR_MAX_LAT_DEG: f64 = 85.051_13;

/// Street, city, region, country and continent scale thresholds.
pub const THRESHOLDS_KM: [f64; 5] = [1.0, 25.0, 200.0, 750.0, 2500.0];

/// A latitude/longitude pair in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGeoPoint", into = "RawGeoPoint")]
pub struct GeoPoint {
    lat_deg: f64,
    lon_deg: f64,
}

#[derive(Serialize, Deserialize)]
struct RawGeoPoint {
    lat: f64,
    lon: f64,
}

impl TryFrom<RawGeoPoint> for GeoPoint {
    type Error = Error;

    fn try_from(raw: RawGeoPoint) -> Result<Self> {
        GeoPoint::new(raw.lat, raw.lon)
    }
}

impl From<GeoPoint> for RawGeoPoint {
    fn from(p: GeoPoint) -> Self {
        RawGeoPoint { lat: p.lat_deg, lon: p.lon_deg }
    }
}

impl GeoPoint {
    pub fn new(lat_deg: f64, lon_deg: f64) -> Result<Self> {
        if !lat_deg.is_finite() || !lon_deg.is_finite() {
            return Err(Error::InvalidCoordinate(format!(
                "non-finite coordinate ({lat_deg}, {lon_deg})"
            )));
        }
        if !(-90.0..=90.0).contains(&lat_deg) {
            return Err(Error::InvalidCoordinate(format!("latitude {lat_deg} outside [-90, 90]")));
        }
        if !(-180.0..=180.0).contains(&lon_deg) {
            return Err(Error::InvalidCoordinate(format!(
                "longitude {lon_deg} outside [-180, 180]"
            )));
        }
        Ok(Self { lat_deg, lon_deg })
    }

    pub fn lat(&self) -> f64 {
        self.lat_deg
    }

    pub fn lon(&self) -> f64 {
        self.lon_deg
    }
}

impl std::fmt::Display for GeoPoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({:.6}, {:.6})", self.lat_deg, self.lon_deg)
    }
}

/// Projected plane coordinates in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanePoint {
    pub x: f64,
    pub y: f64,
}

/// Mercator projection with a configurable radius and central meridian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mercator {
    pub radius_m: f64,
    pub lambda0_deg: f64,
}

impl Default for Mercator {
    fn default() -> Self {
        Self { radius_m: PROJECTION_RADIUS_M, lambda0_deg: 0.0 }
    }
}

impl Mercator {
    pub fn with_central_meridian(lambda0_deg: f64) -> Result<Self> {
        if !lambda0_deg.is_finite() || !(-180.0..=180.0).contains(&lambda0_deg) {
            return Err(Error::usage(format!("central meridian {lambda0_deg} outside [-180, 180]")));
        }
        Ok(Self { lambda0_deg, ..Self::default() })
    }

    pub fn project(&self, p: GeoPoint) -> PlanePoint {
        let lat = p.lat().clamp(-MERCATOR_MAX_LAT_DEG, MERCATOR_MAX_LAT_DEG).to_radians();
        let dlon = wrap_radians((p.lon() - self.lambda0_deg).to_radians());
        PlanePoint {
            x: self.radius_m * dlon,
            // ln(tan(π/4 + φ/2)), written in the odd-symmetric form.
            y: self.radius_m * lat.sin().abs().atanh().copysign(lat),
        }
    }

    /// Analytic inverse of [`Mercator::project`] for unclamped latitudes.
    pub fn unproject(&self, p: PlanePoint) -> Result<GeoPoint> {
        if !p.x.is_finite() || !p.y.is_finite() {
            return Err(Error::InvalidCoordinate(format!("non-finite plane point {p:?}")));
        }
        let lat = (p.y / self.radius_m).sinh().atan().to_degrees();
        let mut lon = self.lambda0_deg + (p.x / self.radius_m).to_degrees();
        if !(-180.0..=180.0).contains(&lon) {
            lon = wrap_radians(lon.to_radians()).to_degrees();
        }
        GeoPoint::new(lat.clamp(-90.0, 90.0), lon)
    }
}

/// Wraps an angle into (-π, π].
fn wrap_radians(a: f64) -> f64 {
    use std::f64::consts::PI;
    if (-PI..=PI).contains(&a) {
        return a;
    }
    let mut w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w == -PI {
        w = PI;
    }
    w
}

/// Projects with the default radius.
pub fn mercator_project(p: GeoPoint, lambda0_deg: f64) -> Result<PlanePoint> {
    Ok(Mercator::with_central_meridian(lambda0_deg)?.project(p))
}

pub fn mercator_unproject(p: PlanePoint, lambda0_deg: f64) -> Result<GeoPoint> {
    Mercator::with_central_meridian(lambda0_deg)?.unproject(p)
}

/// Great-circle distance on a sphere of radius [`MEAN_EARTH_RADIUS_KM`].
pub fn haversine_km(a: GeoPoint, b: GeoPoint) -> f64 {
    let (lat1, lat2) = (a.lat().to_radians(), b.lat().to_radians());
    let dlat = lat2 - lat1;
    let dlon = (b.lon() - a.lon()).to_radians();
    let cos_cos = lat1.cos() * lat2.cos();
    let h = (dlat / 2.0).sin().powi(2) + cos_cos * (dlon / 2.0).sin().powi(2);
    // 1 - h, written as the haversine to the antipode so it keeps full
    // precision when the points are nearly antipodal.
    let h_c = ((lat1 + lat2) / 2.0).sin().powi(2) + cos_cos * (dlon / 2.0).cos().powi(2);
    2.0 * MEAN_EARTH_RADIUS_KM * h.sqrt().atan2(h_c.sqrt())
}

/// The point reached by travelling `distance_km` along a great circle from
/// `start` with initial bearing `bearing_deg` (clockwise from north).
pub fn destination(start: GeoPoint, bearing_deg: f64, distance_km: f64) -> GeoPoint {
    let delta = distance_km / MEAN_EARTH_RADIUS_KM;
    let theta = bearing_deg.to_radians();
    let (lat1, lon1) = (start.lat().to_radians(), start.lon().to_radians());
    let sin_lat2 = lat1.sin() * delta.cos() + lat1.cos() * delta.sin() * theta.cos();
    let lat2 = sin_lat2.clamp(-1.0, 1.0).asin();
    let lon2 = lon1
        + (theta.sin() * delta.sin() * lat1.cos()).atan2(delta.cos() - lat1.sin() * sin_lat2);
    let lon_deg = (lon2.to_degrees() + 540.0).rem_euclid(360.0) - 180.0;
    GeoPoint { lat_deg: lat2.to_degrees().clamp(-90.0, 90.0), lon_deg: lon_deg.clamp(-180.0, 180.0) }
}

/// Fraction of predictions within each of [`THRESHOLDS_KM`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReport {
    pub thresholds_km: Vec<f64>,
    pub fractions: Vec<f64>,
    pub n_samples: usize,
}

impl ThresholdReport {
    /// Builds a report from per-sample errors in kilometers.
    pub fn from_errors(errors_km: &[f64]) -> Result<Self> {
        if errors_km.is_empty() {
            return Err(Error::usage("threshold accuracy needs at least one prediction"));
        }
        let n = errors_km.len();
        let fractions = THRESHOLDS_KM
            .iter()
            .map(|&t| errors_km.iter().filter(|&&e| e <= t).count() as f64 / n as f64)
            .collect();
        Ok(Self { thresholds_km: THRESHOLDS_KM.to_vec(), fractions, n_samples: n })
    }
}

pub fn threshold_accuracy(preds: &[GeoPoint], truths: &[GeoPoint]) -> Result<ThresholdReport> {
    if preds.len() != truths.len() {
        return Err(Error::usage(format!(
            "{} predictions but {} ground truths",
            preds.len(),
            truths.len()
        )));
    }
    let errors: Vec<f64> = preds.iter().zip(truths).map(|(&p, &t)| haversine_km(p, t)).collect();
    ThresholdReport::from_errors(&errors)
}
