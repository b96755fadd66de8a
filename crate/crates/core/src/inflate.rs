//! 2D-to-3D weight inflation: temporal replication with 1/t scaling, so a
//! temporally constant clip reproduces the source model's activations and
//! the pretrained weights become a warm start for the video model.

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::plan::InflationPlan;
use crate::tensor::Tensor;

/// Inflate a 2D kernel `[Cout, Cin, k, k]` (a leading temporal axis of
/// length 1 is also accepted) to `[Cout, Cin, t, k, k]`: every temporal
/// slice is `k2d / t`, so the temporal sum reproduces the source kernel up
/// to one rounding per element (exactly, for power-of-two t).
pub fn inflate_conv_kernel(k2d: &Tensor<f32>, t: usize) -> Result<Tensor<f32>> {
    if t == 0 {
        return Err(Error::arg("inflate_conv_kernel", "t must be >= 1".to_string()));
    }
    let shape = k2d.shape();
    let (cout, cin, kh, kw) = match shape.len() {
        4 => (shape[0], shape[1], shape[2], shape[3]),
        5 if shape[2] == 1 => (shape[0], shape[1], shape[3], shape[4]),
        _ => {
            return Err(Error::shape(
                "inflate_conv_kernel",
                format!("want [Cout,Cin,k,k] (or temporal extent 1), got {shape:?}"),
            ))
        }
    };
    let plane = kh * kw;
    let scale = 1.0f32 / t as f32;
    let mut data = vec![0.0f32; cout * cin * t * plane];
    for oc in 0..cout * cin {
        let src = &k2d.data()[oc * plane..(oc + 1) * plane];
        for dt in 0..t {
            let dst = (oc * t + dt) * plane;
            for i in 0..plane {
                data[dst + i] = src[i] * scale;
            }
        }
    }
    Tensor::new(vec![cout, cin, t, kh, kw], data)
}

/// What happened to each target tensor during checkpoint inflation.
#[derive(Debug, Default, Clone)]
pub struct InflationReport {
    pub copied: Vec<String>,
    /// (name, t)
    pub inflated: Vec<(String, usize)>,
    /// (name, reason) — left at the target's fresh initialization.
    pub randomized: Vec<(String, String)>,
}

impl InflationReport {
    pub fn render(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("copied: {}\n", self.copied.len()));
        for n in &self.copied {
            s.push_str(&format!("  = {n}\n"));
        }
        s.push_str(&format!("inflated: {}\n", self.inflated.len()));
        for (n, t) in &self.inflated {
            s.push_str(&format!("  ^ {n} (t={t})\n"));
        }
        s.push_str(&format!("randomly initialized: {}\n", self.randomized.len()));
        for (n, why) in &self.randomized {
            s.push_str(&format!("  ! {n} ({why})\n"));
        }
        s
    }
}

/// Build the full 3D parameter set from a 2D checkpoint: plan-listed conv
/// kernels are inflated, everything else is copied verbatim when shapes
/// match, and anything unmatchable keeps the fresh initialization of
/// `target` (with a warning in the report).
pub fn inflate_checkpoint(
    src2d: &Checkpoint,
    plan: &InflationPlan,
    target: &Checkpoint,
) -> Result<(Checkpoint, InflationReport)> {
    plan.validate()?;
    for e in &plan.entries {
        if src2d.get(&e.src).is_none() {
            return Err(Error::Checkpoint(format!(
                "inflation plan needs source tensor {:?}, which is missing from the 2D checkpoint",
                e.src
            )));
        }
        if target.get(&e.dst).is_none() {
            return Err(Error::Checkpoint(format!(
                "inflation plan maps to {:?}, which is not a target parameter",
                e.dst
            )));
        }
    }

    let mut out = Checkpoint::new();
    let mut report = InflationReport::default();
    for (name, tgt) in target.iter() {
        if let Some(entry) = plan.entries.iter().find(|e| e.dst == name) {
            let src = src2d.get(&entry.src).expect("checked above");
            let inflated = inflate_conv_kernel(src, entry.t)?;
            if inflated.shape() != tgt.shape() {
                return Err(Error::Checkpoint(format!(
                    "{name}: inflated shape {:?} does not match target {:?}",
                    inflated.shape(),
                    tgt.shape()
                )));
            }
            out.insert(name, inflated)?;
            if entry.t == 1 {
                report.copied.push(name.to_string());
            } else {
                report.inflated.push((name.to_string(), entry.t));
            }
            continue;
        }
        match src2d.get(name) {
            Some(src) if src.shape() == tgt.shape() => {
                out.insert(name, src.clone())?;
                report.copied.push(name.to_string());
            }
            Some(src) => {
                report.randomized.push((
                    name.to_string(),
                    format!("shape {:?} in source vs {:?} in target", src.shape(), tgt.shape()),
                ));
                out.insert(name, tgt.clone())?;
            }
            None => {
                report.randomized.push((name.to_string(), "missing from source".to_string()));
                out.insert(name, tgt.clone())?;
            }
        }
    }
    Ok((out, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plan::PlanEntry;

    #[test]
    fn t1_inflation_preserves_bytes() {
        let k = Tensor::from_slice(&[1, 1, 2, 2], &[0.1, -0.2, 0.3, 0.7]).unwrap();
        let out = inflate_conv_kernel(&k, 1).unwrap();
        assert_eq!(out.shape(), &[1, 1, 1, 2, 2]);
        for (a, b) in k.data().iter().zip(out.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn ones_kernel_inflates_to_thirds_and_sums_back() {
        let k = Tensor::full(&[1, 1, 3, 3], 1.0f32);
        let out = inflate_conv_kernel(&k, 3).unwrap();
        assert_eq!(out.shape(), &[1, 1, 3, 3, 3]);
        for &v in out.data() {
            assert_eq!(v, 1.0f32 / 3.0);
        }
        // Temporal sum reproduces the source (1/3 is rounded, but summing the
        // identical slices is the same rounding for every element; for the
        // all-ones kernel the sum is exact).
        for i in 0..9 {
            let s: f32 = (0..3).map(|dt| out.data()[dt * 9 + i]).sum();
            assert_eq!(s, 1.0);
        }
    }

    #[test]
    fn power_of_two_temporal_sum_is_exact() {
        let vals: Vec<f32> = (0..8).map(|i| 0.1 * i as f32 - 0.33).collect();
        let k = Tensor::from_slice(&[2, 1, 2, 2], &vals).unwrap();
        for t in [1usize, 2, 4] {
            let out = inflate_conv_kernel(&k, t).unwrap();
            for oc in 0..2 {
                for i in 0..4 {
                    let s: f32 = (0..t).map(|dt| out.data()[(oc * t + dt) * 4 + i]).sum();
                    assert_eq!(s.to_bits(), vals[oc * 4 + i].to_bits(), "t={t}");
                }
            }
        }
    }

    #[test]
    fn odd_t_temporal_sum_is_within_rounding() {
        let vals: Vec<f32> = (0..4).map(|i| 0.017 * (i as f32 + 1.0)).collect();
        let k = Tensor::from_slice(&[1, 1, 2, 2], &vals).unwrap();
        let out = inflate_conv_kernel(&k, 3).unwrap();
        for i in 0..4 {
            let s: f32 = (0..3).map(|dt| out.data()[dt * 4 + i]).sum();
            let rel = ((s - vals[i]) / vals[i]).abs();
            assert!(rel < 1e-6, "temporal sum off by {rel}");
        }
    }

    #[test]
    fn zero_t_is_rejected() {
        let k = Tensor::full(&[1, 1, 3, 3], 1.0f32);
        assert!(inflate_conv_kernel(&k, 0).is_err());
    }

    #[test]
    fn missing_source_tensor_is_a_hard_error_naming_it() {
        let src = Checkpoint::new();
        let mut target = Checkpoint::new();
        target.insert("conv.weight", Tensor::zeros(&[1, 1, 3, 3, 3])).unwrap();
        let plan = InflationPlan {
            entries: vec![PlanEntry { src: "conv.weight".into(), dst: "conv.weight".into(), t: 3, stage: 3 }],
        };
        let err = inflate_checkpoint(&src, &plan, &target).unwrap_err().to_string();
        assert!(err.contains("conv.weight"), "{err}");
    }

    #[test]
    fn shape_incompatible_extra_tensor_is_randomized_with_warning() {
        let mut src = Checkpoint::new();
        src.insert("fc.weight", Tensor::zeros(&[2, 3])).unwrap();
        let mut target = Checkpoint::new();
        target.insert("fc.weight", Tensor::full(&[2, 5], 0.25)).unwrap();
        let plan = InflationPlan::default();
        let (out, report) = inflate_checkpoint(&src, &plan, &target).unwrap();
        assert_eq!(report.randomized.len(), 1);
        assert_eq!(out.get("fc.weight").unwrap().data(), target.get("fc.weight").unwrap().data());
    }
}
