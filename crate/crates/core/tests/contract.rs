//! The embedding extractor's outputs, checked in under `fixtures/contract`,
//! must ingest cleanly.

use std::path::PathBuf;

use g3_core::data::{ingest_metadata, order_by_ids, EmbeddingFile, MetadataFormat};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/contract").join(name)
}

const IDS: [&str; 3] = ["4f/a0/3963216890.jpg", "12/9b/2206843421.jpg", "e1/07/5501829137.jpg"];

fn expected_row(row: usize, salt: usize) -> Vec<f32> {
    (0..4).map(|i| (((row * 7 + i * 3 + salt) % 16) as f32 - 8.0) / 8.0).collect()
}

#[test]
fn embedding_files_load_with_exact_values() {
    for (name, salt) in [("image.g3em", 1), ("text.g3em", 5)] {
        let file = EmbeddingFile::load(&fixture(name)).unwrap();
        assert_eq!(file.dim(), 4);
        assert_eq!(file.ids(), IDS);
        for row in 0..3 {
            assert_eq!(file.vectors().row(row), expected_row(row, salt).as_slice(), "{name} row {row}");
        }
    }
}

#[test]
fn embedding_files_re_encode_byte_for_byte() {
    for name in ["image.g3em", "text.g3em"] {
        let bytes = std::fs::read(fixture(name)).unwrap();
        assert_eq!(EmbeddingFile::from_bytes(&bytes).unwrap().to_bytes().unwrap(), bytes);
    }
}

#[test]
fn csv_and_jsonl_metadata_agree() {
    let csv = ingest_metadata(&fixture("metadata.csv"), MetadataFormat::Csv).unwrap();
    let jsonl = ingest_metadata(&fixture("metadata.jsonl"), MetadataFormat::Jsonl).unwrap();
    assert!(csv.skipped.is_empty() && jsonl.skipped.is_empty());
    assert_eq!(csv.records, jsonl.records);
    let solothurn = &csv.records[0];
    assert_eq!((solothurn.point.lat(), solothurn.point.lon()), (47.217578, 7.542092));
    assert_eq!(solothurn.place("city"), Some("Solothurn"));
    assert_eq!(solothurn.place("region"), None);
    assert_eq!(csv.records[2].place("county"), None);
}

#[test]
fn metadata_joins_the_embedding_ids() {
    let file = EmbeddingFile::load(&fixture("image.g3em")).unwrap();
    let mut records = ingest_metadata(&fixture("metadata.csv"), MetadataFormat::Csv).unwrap().records;
    records.reverse();
    let joined = order_by_ids(file.ids(), records).unwrap();
    let ids: Vec<&str> = joined.iter().map(|r| r.img_id.as_str()).collect();
    assert_eq!(ids, IDS);
}
