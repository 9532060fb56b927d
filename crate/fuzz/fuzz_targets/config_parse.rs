//! Run-config parsing must never panic, and accepted configs must survive
//! a serialize/parse round trip unchanged.

#![no_main]

use libfuzzer_sys::fuzz_target;
use modlab_core::config::RunConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(config) = RunConfig::from_json(text) {
        let resolved = config.to_json();
        let back = RunConfig::from_json(&resolved).expect("resolved config must parse");
        assert_eq!(back, config, "resolved round trip changed the config");
    }
});
