#![no_main]

use libfuzzer_sys::fuzz_target;
use plumekit::config::RunConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(config) = RunConfig::parse(text) {
            // Accepted configs serialize and re-parse to the same value.
            let again = RunConfig::parse(&config.to_config_string()).expect("round trip");
            assert_eq!(config, again);
        }
    }
});
