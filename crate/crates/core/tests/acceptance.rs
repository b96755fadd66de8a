//! Acceptance suite: every criterion runs at its stated tolerance, printing
//! one pass/fail line per criterion (visible with `--nocapture`). Criteria
//! with runtime budgets are timed sequentially inside the single test body.

use std::time::Instant;

use csg3dct::verify as v;
use csg3dct::Result;

struct Criterion {
    name: &'static str,
    budget_secs: Option<f64>,
    run: Box<dyn Fn() -> Result<String>>,
}

#[test]
fn acceptance_criteria() {
    let criteria: Vec<Criterion> = vec![
        Criterion {
            name: "1 gradient correctness: primitives < 1e-4, full tiny model < 1e-3",
            budget_secs: Some(120.0),
            run: Box::new(|| {
                let a = v::check_primitive_gradients()?;
                let b = v::check_full_model_gradients()?;
                Ok(format!("{a}; {b}"))
            }),
        },
        Criterion {
            name: "2 boring-video inflation equivalence < 1e-5",
            budget_secs: Some(30.0),
            run: Box::new(v::check_boring_video),
        },
        Criterion {
            name: "3 CA fusion == CLS row of full cross attention; cost ratio <= 0.01",
            budget_secs: None,
            run: Box::new(v::check_ca_equivalence),
        },
        Criterion {
            name: "4 factorization masks: exact zero cross-group gradients",
            budget_secs: None,
            run: Box::new(v::check_factorization_masks),
        },
        Criterion {
            name: "5 attention rows, mixing weights, temporal lengths, block contract",
            budget_secs: None,
            run: Box::new(v::check_attention_invariants),
        },
        Criterion {
            name: "6 end-to-end synthetic task >= 90% test accuracy within 20 epochs",
            budget_secs: Some(1800.0),
            run: Box::new(v::check_e2e_synthetic),
        },
        Criterion {
            name: "7 ablation directions: inflated >= scratch at epoch 5; CA/SWA >= none - 2pts",
            budget_secs: None,
            run: Box::new(|| {
                let a = v::check_ablation_init()?;
                let b = v::check_ablation_fusion()?;
                Ok(format!("{a}; {b}"))
            }),
        },
        Criterion {
            name: "8 checkpoint round-trip bitwise; 8-frame loads into 16-frame",
            budget_secs: None,
            run: Box::new(v::check_checkpoint_roundtrip),
        },
    ];

    let mut failures = Vec::new();
    for c in &criteria {
        let start = Instant::now();
        let outcome = (c.run)();
        let elapsed = start.elapsed().as_secs_f64();
        match outcome {
            Ok(details) => {
                let mut over_budget = false;
                if let Some(budget) = c.budget_secs {
                    if elapsed > budget {
                        over_budget = true;
                        failures.push(format!(
                            "criterion {}: passed checks but took {elapsed:.1}s > {budget:.0}s budget",
                            c.name
                        ));
                    }
                }
                println!(
                    "[{}] criterion {} ({elapsed:.1}s) {details}",
                    if over_budget { "FAIL" } else { "PASS" },
                    c.name
                );
            }
            Err(e) => {
                println!("[FAIL] criterion {} ({elapsed:.1}s) {e}", c.name);
                failures.push(format!("criterion {}: {e}", c.name));
            }
        }
    }
    assert!(
        failures.is_empty(),
        "{} acceptance criterion(s) failed:\n{}",
        failures.len(),
        failures.join("\n")
    );
}
