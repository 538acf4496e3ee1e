#![no_main]
use libfuzzer_sys::fuzz_target;

use bilevel_bench::config::RunConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(config) = RunConfig::from_toml_str(text) {
        // Anything that parses must serialize back to an equivalent config.
        let again = RunConfig::from_toml_str(&config.to_toml_string()).expect("reparse");
        assert_eq!(config.hash(), again.hash());
    }
});
