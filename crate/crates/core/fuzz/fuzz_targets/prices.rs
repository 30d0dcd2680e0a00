#![no_main]

use libfuzzer_sys::fuzz_target;
use karma::response::PriceVector;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(p) = PriceVector::parse(text) {
            // Display and parse agree
            assert_eq!(PriceVector::parse(&p.to_string()).unwrap(), p);
        }
    }
});
