#![no_main]

use g3_core::data::EmbeddingFile;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(file) = EmbeddingFile::from_bytes(data) {
        let bytes = file.to_bytes().unwrap();
        assert_eq!(EmbeddingFile::from_bytes(&bytes).unwrap().to_bytes().unwrap(), bytes);
    }
});
