//! Checkpoint parsing must never panic on arbitrary bytes, and accepted
//! checkpoints must re-serialize to something that parses back equal.

#![no_main]

use libfuzzer_sys::fuzz_target;
use modlab_core::model::Checkpoint;

fuzz_target!(|data: &[u8]| {
    if let Ok(ckpt) = Checkpoint::from_bytes(data) {
        let bytes = ckpt.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).expect("serialized checkpoint must parse");
        assert_eq!(back, ckpt, "checkpoint round trip drifted");
    }
});
