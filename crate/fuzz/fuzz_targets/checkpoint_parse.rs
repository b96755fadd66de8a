//! Fuzzes the checkpoint container parser with arbitrary bytes. Parsing must
//! never panic; accepted inputs must re-serialize to a stable canonical form.

#![no_main]

use csg3dct::checkpoint::Checkpoint;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if data.len() > 1 << 20 {
        return;
    }
    if let Ok(ckpt) = Checkpoint::from_bytes(data) {
        // Canonical round-trip: serialize, reparse, serialize again.
        let bytes = ckpt.to_bytes();
        let again = Checkpoint::from_bytes(&bytes).expect("canonical form must reparse");
        assert_eq!(again.to_bytes(), bytes, "canonical serialization must be a fixed point");
        assert_eq!(again.len(), ckpt.len());
    }
});
