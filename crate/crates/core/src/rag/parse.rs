//! Extraction of a latitude/longitude pair from free-form model output.

use std::sync::LazyLock;

use regex::Regex;
use thiserror::Error;

use crate::geodesy::GeoPoint;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CoordinateError {
    #[error("no coordinate pair found in response")]
    NotFound,
    #[error("coordinate pair ({lat}, {lon}) is out of range")]
    OutOfRange { lat: f64, lon: f64 },
}

const NUM: &str = r"([-+]?(?:\d+(?:\.\d*)?|\.\d+))\s*°?\s*([NSEW]\b|(?i:north|south|east|west)\b)?";

static LABELLED: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(&format!(
        r"(?s)\b(?i:lat|latitude)\b\s*(?i:is|=|:)?\s*{NUM}.*?\b(?i:lon|lng|long|longitude)\b\s*(?i:is|=|:)?\s*{NUM}"
    ))
    .unwrap()
});

static PAIR: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(&format!(r"{NUM}\s*[,;/]\s*{NUM}")).unwrap()
});

fn signed(value: &str, hemisphere: Option<&str>) -> Option<f64> {
    let v: f64 = value.parse().ok()?;
    let neg = hemisphere
        .and_then(|h| h.chars().next())
        .is_some_and(|c| matches!(c.to_ascii_uppercase(), 'S' | 'W'));
    Some(if neg { -v.abs() } else { v })
}

fn pair_from(caps: &regex::Captures<'_>) -> Option<(f64, f64)> {
    let lat = signed(caps.get(1)?.as_str(), caps.get(2).map(|m| m.as_str()))?;
    let lon = signed(caps.get(3)?.as_str(), caps.get(4).map(|m| m.as_str()))?;
    Some((lat, lon))
}

/// Finds the coordinate pair in a model response.
///
/// Accepts `"lat, lon"`, `"(lat, lon)"` and `"latitude: a ... longitude: b"`,
/// with optional degree signs and N/S/E/W suffixes. Labelled values win over
/// bare pairs. Among bare pairs the first in-range one in reading order is
/// returned; if pairs exist but none is in range the result is a range error.
pub fn parse_coordinates(text: &str) -> Result<GeoPoint, CoordinateError> {
    let mut first_bad = None;
    let candidates = LABELLED
        .captures_iter(text)
        .take(1)
        .chain(PAIR.captures_iter(text))
        .filter_map(|c| pair_from(&c));
    for (lat, lon) in candidates {
        match GeoPoint::new(lat, lon) {
            Ok(p) => return Ok(p),
            Err(_) => {
                first_bad.get_or_insert(CoordinateError::OutOfRange { lat, lon });
            }
        }
    }
    Err(first_bad.unwrap_or(CoordinateError::NotFound))
}
