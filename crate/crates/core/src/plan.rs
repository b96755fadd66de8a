//! Inflation plan: which 2D kernel feeds which 3D kernel, at what temporal
//! size, with stage tags enforcing that only c3..c5 get temporal extent.
//!
//! File format, one mapping per line (`#` comments):
//!
//! ```text
//! c3.block0.conv2.weight -> c3.block0.conv2.weight t=3 stage=c3
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::ConvLayerSpec;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlanEntry {
    /// Tensor name in the 2D source checkpoint.
    pub src: String,
    /// Conv kernel name in the 3D target model.
    pub dst: String,
    /// Temporal size of the inflated kernel (>= 1).
    pub t: usize,
    /// Stage tag 1..=5.
    pub stage: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct InflationPlan {
    pub entries: Vec<PlanEntry>,
}

impl InflationPlan {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let err = |what: &str| Error::Plan(format!("line {}: {what}: {raw:?}", ln + 1));
            let (src, rest) = line.split_once("->").ok_or_else(|| err("expected `src -> dst t=N stage=cK`"))?;
            let mut fields = rest.split_whitespace();
            let dst = fields.next().ok_or_else(|| err("missing destination name"))?;
            let mut t: Option<usize> = None;
            let mut stage: Option<usize> = None;
            for f in fields {
                if let Some(v) = f.strip_prefix("t=") {
                    t = Some(v.parse().map_err(|_| err("bad t="))?);
                } else if let Some(v) = f.strip_prefix("stage=c") {
                    stage = Some(v.parse().map_err(|_| err("bad stage="))?);
                } else {
                    return Err(err("unknown field"));
                }
            }
            let entry = PlanEntry {
                src: src.trim().to_string(),
                dst: dst.to_string(),
                t: t.ok_or_else(|| err("missing t="))?,
                stage: stage.ok_or_else(|| err("missing stage="))?,
            };
            if entry.src.is_empty() || entry.dst.is_empty() {
                return Err(err("empty tensor name"));
            }
            entries.push(entry);
        }
        let plan = Self { entries };
        plan.validate()?;
        Ok(plan)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for e in &self.entries {
            s.push_str(&format!("{} -> {} t={} stage=c{}\n", e.src, e.dst, e.t, e.stage));
        }
        s
    }

    /// Structural invariants: t >= 1, stages in 1..=5, temporal extent only in
    /// the last three stages, no duplicate destinations.
    pub fn validate(&self) -> Result<()> {
        let mut seen: Vec<&str> = Vec::new();
        for e in &self.entries {
            if e.t == 0 {
                return Err(Error::Plan(format!("{}: t must be >= 1", e.dst)));
            }
            if !(1..=5).contains(&e.stage) {
                return Err(Error::Plan(format!("{}: stage c{} out of range", e.dst, e.stage)));
            }
            if e.t > 1 && e.stage < 3 {
                return Err(Error::Plan(format!(
                    "{}: temporal inflation (t={}) is only permitted in stages c3..c5, got c{}",
                    e.dst, e.t, e.stage
                )));
            }
            if seen.contains(&e.dst.as_str()) {
                return Err(Error::Plan(format!("{}: duplicate destination", e.dst)));
            }
            seen.push(&e.dst);
        }
        Ok(())
    }

    /// Every conv layer of the target model must appear exactly once, with a
    /// matching temporal size and stage tag.
    pub fn validate_against(&self, specs: &[ConvLayerSpec]) -> Result<()> {
        self.validate()?;
        for spec in specs {
            let hits: Vec<&PlanEntry> = self.entries.iter().filter(|e| e.dst == spec.name).collect();
            if hits.len() != 1 {
                return Err(Error::Plan(format!(
                    "conv layer {} appears {} times in the plan (want exactly once)",
                    spec.name,
                    hits.len()
                )));
            }
            let e = hits[0];
            if e.t != spec.temporal {
                return Err(Error::Plan(format!(
                    "{}: plan t={} but the target kernel has temporal extent {}",
                    spec.name, e.t, spec.temporal
                )));
            }
            if e.stage != spec.stage {
                return Err(Error::Plan(format!(
                    "{}: plan stage c{} but the layer sits in c{}",
                    spec.name, e.stage, spec.stage
                )));
            }
        }
        for e in &self.entries {
            if !specs.iter().any(|s| s.name == e.dst) {
                return Err(Error::Plan(format!("{}: not a conv layer of the target model", e.dst)));
            }
        }
        Ok(())
    }

    /// The canonical plan for a model: every conv kernel maps from its own
    /// name in the per-frame source, with the temporal size the layer
    /// actually has.
    pub fn for_specs(specs: &[ConvLayerSpec]) -> Self {
        Self {
            entries: specs
                .iter()
                .map(|s| PlanEntry { src: s.name.clone(), dst: s.name.clone(), t: s.temporal, stage: s.stage })
                .collect(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrips_through_text() {
        let plan = InflationPlan {
            entries: vec![
                PlanEntry { src: "a.weight".into(), dst: "a.weight".into(), t: 1, stage: 1 },
                PlanEntry { src: "b.weight".into(), dst: "b.weight".into(), t: 3, stage: 4 },
            ],
        };
        let back = InflationPlan::parse(&plan.to_text()).unwrap();
        assert_eq!(back, plan);
    }

    #[test]
    fn temporal_inflation_outside_c3_to_c5_is_rejected() {
        let text = "x.weight -> x.weight t=3 stage=c2\n";
        let err = InflationPlan::parse(text).unwrap_err().to_string();
        assert!(err.contains("c3..c5"), "{err}");
    }

    #[test]
    fn duplicate_destinations_are_rejected() {
        let text = "a -> x t=1 stage=c1\nb -> x t=1 stage=c1\n";
        assert!(InflationPlan::parse(text).is_err());
    }

    #[test]
    fn comments_and_gaps_are_ignored() {
        let text = "# header\n\n a.w -> b.w t=1 stage=c5 # tail\n";
        let plan = InflationPlan::parse(text).unwrap();
        assert_eq!(plan.entries.len(), 1);
        assert_eq!(plan.entries[0].t, 1);
    }

    #[test]
    fn zero_t_is_rejected() {
        assert!(InflationPlan::parse("a -> b t=0 stage=c3\n").is_err());
    }
}
