#![no_main]
use libfuzzer_sys::fuzz_target;

use bilevel_core::instances::data::parse_csv_dataset;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = parse_csv_dataset(text);
    }
});
