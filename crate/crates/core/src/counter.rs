use indexmap::IndexMap;

/// Multiply-add counter, incremented by the forward path of the dense ops
/// (convolution, matmul, linear). Attention code tags its score and value
/// matmuls separately so tests can isolate them.
#[derive(Debug, Clone, Default)]
pub struct OpCounter {
    total: u64,
    by_op: IndexMap<&'static str, u64>,
}

impl OpCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, op: &'static str, madds: u64) {
        self.total += madds;
        *self.by_op.entry(op).or_insert(0) += madds;
    }

    /// Total multiply-adds recorded so far.
    pub fn multiply_adds(&self) -> u64 {
        self.total
    }

    /// Count attributed to one op tag (0 if never seen).
    pub fn of(&self, op: &str) -> u64 {
        self.by_op.get(op).copied().unwrap_or(0)
    }

    pub fn breakdown(&self) -> impl Iterator<Item = (&'static str, u64)> + '_ {
        self.by_op.iter().map(|(k, v)| (*k, *v))
    }

    pub fn reset(&mut self) {
        self.total = 0;
        self.by_op.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_are_monotone_and_broken_down() {
        let mut c = OpCounter::new();
        let mut last = 0;
        for i in 1..=10u64 {
            c.add(if i % 2 == 0 { "matmul" } else { "conv3d" }, i);
            assert!(c.multiply_adds() >= last);
            last = c.multiply_adds();
        }
        assert_eq!(c.multiply_adds(), 55);
        assert_eq!(c.of("matmul") + c.of("conv3d"), 55);
        assert_eq!(c.of("unseen"), 0);
    }
}
