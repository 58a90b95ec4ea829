#![no_main]

use g3_core::index::VectorIndex;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(index) = VectorIndex::from_bytes(data) {
        let bytes = index.to_bytes().unwrap();
        assert_eq!(VectorIndex::from_bytes(&bytes).unwrap().to_bytes().unwrap(), bytes);
        if let Some(r) = index.record(0) {
            let q = r.vector.to_vec();
            let _ = index.search(&q, 3);
        }
    }
});
