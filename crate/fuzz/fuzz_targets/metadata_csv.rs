#![no_main]

use g3_core::data::{ingest_metadata_bytes, MetadataFormat};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = ingest_metadata_bytes(data, MetadataFormat::Csv);
});
