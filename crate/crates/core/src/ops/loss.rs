//! Classification loss.

use crate::element::Element;
use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

impl<T: Element> Tape<T> {
    /// Mean cross-entropy of logits `[N, K]` against integer labels; fused
    /// log-softmax keeps it stable for large-margin logits.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let tz = self.value(logits).clone();
        let s = tz.shape();
        if s.len() != 2 {
            return Err(Error::shape("cross_entropy", format!("logits must be [N, K], got {s:?}")));
        }
        let (n, k) = (s[0], s[1]);
        if labels.len() != n {
            return Err(Error::shape(
                "cross_entropy",
                format!("{n} logit rows vs {} labels", labels.len()),
            ));
        }
        for (i, &y) in labels.iter().enumerate() {
            if y >= k {
                return Err(Error::arg("cross_entropy", format!("label {y} at row {i} >= classes {k}")));
            }
        }

        let z = tz.data();
        let inv_n = T::of_f64(1.0 / n as f64);
        let mut probs = vec![T::zero(); n * k];
        let mut loss = T::zero();
        for i in 0..n {
            let row = &z[i * k..(i + 1) * k];
            let mut mx = row[0];
            for &v in &row[1..] {
                if v > mx {
                    mx = v;
                }
            }
            let mut sum = T::zero();
            for j in 0..k {
                let e = (row[j] - mx).exp();
                probs[i * k + j] = e;
                sum += e;
            }
            for j in 0..k {
                probs[i * k + j] /= sum;
            }
            loss += sum.ln() + mx - row[labels[i]];
        }
        loss *= inv_n;

        let labels = labels.to_vec();
        let out = Tensor::scalar(loss);
        Ok(self.push("cross_entropy", out, vec![logits], || {
            Box::new(move |g, sink| {
                let gl = g[0] * inv_n;
                sink.accum(0, |dz| {
                    for i in 0..n {
                        for j in 0..k {
                            let onehot = if labels[i] == j { T::one() } else { T::zero() };
                            dz[i * k + j] += gl * (probs[i * k + j] - onehot);
                        }
                    }
                });
            })
        }))
    }
}
