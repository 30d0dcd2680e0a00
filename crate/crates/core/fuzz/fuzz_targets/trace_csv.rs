#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(rows) = karma::csvio::parse_trace(text) {
            let n = rows.first().map_or(0, |r| r.flows.len());
            assert!(rows.iter().all(|r| r.flows.len() == n));
        }
    }
});
