#![no_main]

use g3_core::rag::parse_coordinates;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if let Ok(p) = parse_coordinates(text) {
        assert!((-90.0..=90.0).contains(&p.lat()));
        assert!((-180.0..=180.0).contains(&p.lon()));
    }
});
