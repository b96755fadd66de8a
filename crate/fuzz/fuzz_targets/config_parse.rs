//! Fuzzes the `key = value` run-config parser. Parsing must never panic, and
//! every accepted config must validate and round-trip through its text form.

#![no_main]

use csg3dct::config::RunConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if data.len() > 1 << 16 {
        return;
    }
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = RunConfig::parse(text) {
        cfg.validate().expect("accepted configs must satisfy their invariants");
        let reparsed = RunConfig::parse(&cfg.to_text()).expect("serialized form must parse");
        assert_eq!(reparsed, cfg, "config text round-trip must be lossless");
    }
});
