#![no_main]

use g3_core::align::AlignmentModel;
use g3_core::nn::TensorArchive;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(archive) = TensorArchive::from_bytes(data) {
        let bytes = archive.to_bytes().unwrap();
        assert_eq!(TensorArchive::from_bytes(&bytes).unwrap().to_bytes().unwrap(), bytes);
        let _ = AlignmentModel::<f32>::from_archive(&archive);
    }
});
