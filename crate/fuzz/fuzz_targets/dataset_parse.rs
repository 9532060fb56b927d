//! Dataset split parsing must never panic on arbitrary bytes; accepted
//! files are in canonical form and must re-serialize byte-identically.

#![no_main]

use libfuzzer_sys::fuzz_target;
use modlab_core::world::Dataset;

fuzz_target!(|data: &[u8]| {
    if let Ok(dataset) = Dataset::from_bytes(data) {
        assert_eq!(
            dataset.to_bytes(),
            data,
            "accepted dataset bytes are not canonical"
        );
    }
});
