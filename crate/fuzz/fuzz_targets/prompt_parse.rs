//! Prompt parsing must never panic, and accepted prompts must round-trip
//! through their canonical string.

#![no_main]

use libfuzzer_sys::fuzz_target;
use modlab_core::world::ToyPrompt;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(prompt) = ToyPrompt::parse(text) {
        let canonical = prompt.canonical();
        let back = ToyPrompt::parse(&canonical).expect("canonical form must parse");
        assert_eq!(back, prompt, "canonical round trip changed the prompt");
    }
});
