//! Fuzzes the inflation-plan parser. Parsing must never panic; accepted
//! plans must satisfy the plan invariants and round-trip through text.

#![no_main]

use csg3dct::plan::InflationPlan;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if data.len() > 1 << 16 {
        return;
    }
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(plan) = InflationPlan::parse(text) {
        plan.validate().expect("accepted plans must satisfy their invariants");
        let reparsed = InflationPlan::parse(&plan.to_text()).expect("serialized form must parse");
        assert_eq!(reparsed, plan, "plan text round-trip must be lossless");
    }
});
