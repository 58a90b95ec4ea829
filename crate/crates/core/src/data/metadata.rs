//! Geotagged image metadata with eight reverse-geocoded place levels, read
//! from CSV or JSON lines.

use std::collections::HashMap;
use std::io::{BufRead, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geodesy::GeoPoint;

/// Place-name columns, coarse order aside, as they appear in files.
pub const PLACE_FIELDS: [&str; 8] = [
    "neighbourhood",
    "city",
    "county",
    "state",
    "region",
    "country",
    "country_code",
    "continent",
];

const NA: &str = "NA";

/// Share of malformed rows above which ingestion fails outright.
pub const MAX_MALFORMED_FRACTION: f64 = 0.10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetadataRecord {
    pub img_id: String,
    pub point: GeoPoint,
    pub neighbourhood: Option<String>,
    pub city: Option<String>,
    pub county: Option<String>,
    pub state: Option<String>,
    pub region: Option<String>,
    pub country: Option<String>,
    pub country_code: Option<String>,
    pub continent: Option<String>,
}

impl MetadataRecord {
    pub fn new(img_id: impl Into<String>, point: GeoPoint) -> Self {
        Self {
            img_id: img_id.into(),
            point,
            neighbourhood: None,
            city: None,
            county: None,
            state: None,
            region: None,
            country: None,
            country_code: None,
            continent: None,
        }
    }

    pub fn place(&self, field: &str) -> Option<&str> {
        match field {
            "neighbourhood" => self.neighbourhood.as_deref(),
            "city" => self.city.as_deref(),
            "county" => self.county.as_deref(),
            "state" => self.state.as_deref(),
            "region" => self.region.as_deref(),
            "country" => self.country.as_deref(),
            "country_code" => self.country_code.as_deref(),
            "continent" => self.continent.as_deref(),
            _ => None,
        }
    }

    fn place_mut(&mut self, field: &str) -> Option<&mut Option<String>> {
        Some(match field {
            "neighbourhood" => &mut self.neighbourhood,
            "city" => &mut self.city,
            "county" => &mut self.county,
            "state" => &mut self.state,
            "region" => &mut self.region,
            "country" => &mut self.country,
            "country_code" => &mut self.country_code,
            "continent" => &mut self.continent,
            _ => return None,
        })
    }

    /// Builds a record from lower-cased column names to raw cell values.
    fn from_fields(fields: &HashMap<String, String>) -> std::result::Result<Self, String> {
        let get = |k: &str| fields.get(k).map(|s| s.trim()).filter(|s| !s.is_empty());
        let img_id = get("img_id").ok_or("missing IMG_ID")?;
        let num = |k: &str| -> std::result::Result<f64, String> {
            let raw = get(k).ok_or_else(|| format!("missing {}", k.to_uppercase()))?;
            raw.parse::<f64>().map_err(|_| format!("{} is not a number: {raw:?}", k.to_uppercase()))
        };
        let point = GeoPoint::new(num("lat")?, num("lon")?).map_err(|e| e.to_string())?;
        let mut rec = MetadataRecord::new(img_id, point);
        for f in PLACE_FIELDS {
            let v = get(f).filter(|v| *v != NA).map(str::to_owned);
            *rec.place_mut(f).unwrap() = v;
        }
        Ok(rec)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetadataFormat {
    Csv,
    Jsonl,
}

impl MetadataFormat {
    /// Guesses from the file extension; anything but `.jsonl`/`.json` is CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl" | "json" | "ndjson") => MetadataFormat::Jsonl,
            _ => MetadataFormat::Csv,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RowError {
    pub line: u64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestReport {
    pub records: Vec<MetadataRecord>,
    pub skipped: Vec<RowError>,
}

fn finish(records: Vec<MetadataRecord>, skipped: Vec<RowError>) -> Result<IngestReport> {
    let total = records.len() + skipped.len();
    if total == 0 {
        return Err(Error::data("metadata file contains no rows"));
    }
    if skipped.len() as f64 > MAX_MALFORMED_FRACTION * total as f64 {
        let first = skipped.first().map(|e| format!(" (line {}: {})", e.line, e.message));
        return Err(Error::data(format!(
            "{} of {total} metadata rows are malformed{}",
            skipped.len(),
            first.unwrap_or_default()
        )));
    }
    for e in &skipped {
        log::warn!("skipping metadata line {}: {}", e.line, e.message);
    }
    Ok(IngestReport { records, skipped })
}

fn ingest_csv(reader: impl Read) -> Result<IngestReport> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers: Vec<String> = match rdr.headers() {
        Ok(h) => h.iter().map(|s| s.trim().to_ascii_lowercase()).collect(),
        Err(e) => return Err(Error::data(format!("unreadable CSV header: {e}"))),
    };
    if headers.iter().all(|h| h.is_empty()) {
        return Err(Error::data("metadata file is empty"));
    }
    for required in ["img_id", "lat", "lon"] {
        if !headers.iter().any(|h| h == required) {
            return Err(Error::data(format!(
                "CSV header lacks the {} column",
                required.to_uppercase()
            )));
        }
    }
    let mut records = Vec::new();
    let mut skipped = Vec::new();
    for row in rdr.records() {
        match row {
            Ok(row) => {
                let line = row.position().map_or(0, |p| p.line());
                if row.len() != headers.len() {
                    skipped.push(RowError {
                        line,
                        message: format!("expected {} fields, found {}", headers.len(), row.len()),
                    });
                    continue;
                }
                let fields = headers.iter().cloned().zip(row.iter().map(str::to_owned)).collect();
                match MetadataRecord::from_fields(&fields) {
                    Ok(r) => records.push(r),
                    Err(message) => skipped.push(RowError { line, message }),
                }
            }
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                skipped.push(RowError { line, message: e.to_string() });
            }
        }
    }
    finish(records, skipped)
}

fn ingest_jsonl(reader: impl BufRead) -> Result<IngestReport> {
    let mut records = Vec::new();
    let mut skipped = Vec::new();
    for (i, line) in reader.split(b'\n').enumerate() {
        let line_no = i as u64 + 1;
        let raw = line?;
        let text = match std::str::from_utf8(&raw) {
            Ok(t) => t.trim(),
            Err(_) => {
                skipped.push(RowError { line: line_no, message: "invalid UTF-8".into() });
                continue;
            }
        };
        if text.is_empty() {
            continue;
        }
        let parsed: std::result::Result<HashMap<String, serde_json::Value>, _> =
            serde_json::from_str(text);
        let obj = match parsed {
            Ok(o) => o,
            Err(e) => {
                skipped.push(RowError { line: line_no, message: format!("invalid JSON: {e}") });
                continue;
            }
        };
        let fields: HashMap<String, String> = obj
            .into_iter()
            .filter_map(|(k, v)| {
                let v = match v {
                    serde_json::Value::String(s) => s,
                    serde_json::Value::Number(n) => n.to_string(),
                    serde_json::Value::Null => NA.to_owned(),
                    _ => return None,
                };
                Some((k.to_ascii_lowercase(), v))
            })
            .collect();
        match MetadataRecord::from_fields(&fields) {
            Ok(r) => records.push(r),
            Err(message) => skipped.push(RowError { line: line_no, message }),
        }
    }
    finish(records, skipped)
}

/// Parses metadata from an in-memory buffer.
pub fn ingest_metadata_bytes(bytes: &[u8], format: MetadataFormat) -> Result<IngestReport> {
    match format {
        MetadataFormat::Csv => ingest_csv(bytes),
        MetadataFormat::Jsonl => ingest_jsonl(bytes),
    }
}

/// Reads and validates a metadata file. Malformed rows are skipped and
/// reported with their line numbers; more than 10% malformed is an error.
pub fn ingest_metadata(path: &Path, format: MetadataFormat) -> Result<IngestReport> {
    let file = std::fs::File::open(path)?;
    match format {
        MetadataFormat::Csv => ingest_csv(std::io::BufReader::new(file)),
        MetadataFormat::Jsonl => ingest_jsonl(std::io::BufReader::new(file)),
    }
}

/// Reorders `records` to follow `ids`. Every id needs exactly one record;
/// records with other ids are ignored.
pub fn order_by_ids(ids: &[String], records: Vec<MetadataRecord>) -> Result<Vec<MetadataRecord>> {
    let mut by_id: HashMap<String, MetadataRecord> = HashMap::with_capacity(records.len());
    for r in records {
        if by_id.contains_key(&r.img_id) {
            return Err(Error::data(format!("duplicate metadata for {:?}", r.img_id)));
        }
        by_id.insert(r.img_id.clone(), r);
    }
    let unused = by_id.len().saturating_sub(ids.len());
    let mut out = Vec::with_capacity(ids.len());
    let mut missing = vec![];
    for id in ids {
        match by_id.remove(id) {
            Some(r) => out.push(r),
            None => missing.push(id.as_str()),
        }
    }
    if let Some(first) = missing.first() {
        return Err(Error::data(format!("{} embeddings have no metadata, first {first:?}", missing.len())));
    }
    if unused > 0 {
        log::info!("{unused} metadata records have no embedding");
    }
    Ok(out)
}

/// Writes records as CSV with missing places encoded as `NA`.
pub fn write_metadata_csv(records: &[MetadataRecord], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["IMG_ID", "LAT", "LON"];
    header.extend(PLACE_FIELDS);
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(&header).map_err(csv_err)?;
    for r in records {
        let mut row = vec![r.img_id.clone(), r.point.lat().to_string(), r.point.lon().to_string()];
        row.extend(PLACE_FIELDS.iter().map(|f| r.place(f).unwrap_or(NA).to_owned()));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}
