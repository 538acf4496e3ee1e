#![no_main]
use libfuzzer_sys::fuzz_target;

use bilevel_bench::trace_io::parse_trace_csv;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = parse_trace_csv(text);
    }
});
