#![no_main]

use g3_core::rag::{extract_content, parse_coordinates};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|body: &str| {
    if let Ok(text) = extract_content(body) {
        let _ = parse_coordinates(&text);
    }
});
