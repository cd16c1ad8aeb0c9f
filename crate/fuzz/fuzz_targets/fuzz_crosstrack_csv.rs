#![no_main]

use libfuzzer_sys::fuzz_target;
use plumekit::radiance::parse_crosstrack_csv;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(table) = parse_crosstrack_csv(text) {
            let again = parse_crosstrack_csv(&table.to_csv_string()).expect("round trip");
            assert_eq!(table, again);
        }
    }
});
