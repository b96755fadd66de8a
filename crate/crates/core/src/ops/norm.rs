//! Softmax, layer norm, batch norm.

use super::axis_in_range;
use crate::element::Element;
use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Fresh batch statistics produced by a training-mode batch norm; the caller
/// folds them into the layer's running stats after the step.
pub struct BnUpdate<T> {
    pub mean: Tensor<T>,
    pub var: Tensor<T>,
}

impl<T: Element> Tape<T> {
    /// Max-shifted softmax along `axis`.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let ta = self.value(a).clone();
        let shape = ta.shape().to_vec();
        axis_in_range("softmax", axis, shape.len())?;
        let alen = shape[axis];
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();

        let mut data = vec![T::zero(); ta.numel()];
        let x = ta.data();
        for o in 0..outer {
            for i in 0..inner {
                let base = o * alen * inner + i;
                let mut mx = x[base];
                for j in 1..alen {
                    let v = x[base + j * inner];
                    if v > mx {
                        mx = v;
                    }
                }
                let mut sum = T::zero();
                for j in 0..alen {
                    let e = (x[base + j * inner] - mx).exp();
                    data[base + j * inner] = e;
                    sum += e;
                }
                for j in 0..alen {
                    data[base + j * inner] /= sum;
                }
            }
        }
        let y = Tensor::new(shape, data)?;
        let yc = y.clone();
        Ok(self.push("softmax", y, vec![a], || {
            Box::new(move |g, sink| {
                sink.accum(0, |d| {
                    let yv = yc.data();
                    for o in 0..outer {
                        for i in 0..inner {
                            let base = o * alen * inner + i;
                            let mut dot = T::zero();
                            for j in 0..alen {
                                let idx = base + j * inner;
                                dot += g[idx] * yv[idx];
                            }
                            for j in 0..alen {
                                let idx = base + j * inner;
                                d[idx] += yv[idx] * (g[idx] - dot);
                            }
                        }
                    }
                });
            })
        }))
    }

    /// Layer norm over the last axis; `gamma`/`beta` have that axis's length.
    pub fn layer_norm(&mut self, a: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let ta = self.value(a).clone();
        let tg = self.value(gamma).clone();
        let tb = self.value(beta).clone();
        let shape = ta.shape().to_vec();
        let d = *shape.last().ok_or_else(|| Error::shape("layer_norm", "rank 0 input".to_string()))?;
        if tg.shape() != [d] || tb.shape() != [d] {
            return Err(Error::shape(
                "layer_norm",
                format!("gamma {:?} / beta {:?} vs normalized axis {d}", tg.shape(), tb.shape()),
            ));
        }
        let rows = ta.numel() / d;
        let epsv = T::of_f64(eps);
        let inv_d = T::of_f64(1.0 / d as f64);

        let x = ta.data();
        let mut data = vec![T::zero(); ta.numel()];
        let mut xhat = vec![T::zero(); ta.numel()];
        let mut inv_std = vec![T::zero(); rows];
        for r in 0..rows {
            let row = &x[r * d..(r + 1) * d];
            let mut mean = T::zero();
            for &v in row {
                mean += v;
            }
            mean *= inv_d;
            let mut var = T::zero();
            for &v in row {
                let c = v - mean;
                var += c * c;
            }
            var *= inv_d;
            let istd = T::one() / (var + epsv).sqrt();
            inv_std[r] = istd;
            for j in 0..d {
                let h = (row[j] - mean) * istd;
                xhat[r * d + j] = h;
                data[r * d + j] = h * tg.data()[j] + tb.data()[j];
            }
        }
        let out = Tensor::new(shape, data)?;
        Ok(self.push("layer_norm", out, vec![a, gamma, beta], || {
            Box::new(move |g, sink| {
                sink.accum(0, |dx| {
                    for r in 0..rows {
                        let istd = inv_std[r];
                        let mut m1 = T::zero(); // mean of gamma*g
                        let mut m2 = T::zero(); // mean of gamma*g*xhat
                        for j in 0..d {
                            let gg = tg.data()[j] * g[r * d + j];
                            m1 += gg;
                            m2 += gg * xhat[r * d + j];
                        }
                        m1 *= inv_d;
                        m2 *= inv_d;
                        for j in 0..d {
                            let gg = tg.data()[j] * g[r * d + j];
                            dx[r * d + j] += istd * (gg - m1 - xhat[r * d + j] * m2);
                        }
                    }
                });
                sink.accum(1, |dg| {
                    for r in 0..rows {
                        for j in 0..d {
                            dg[j] += g[r * d + j] * xhat[r * d + j];
                        }
                    }
                });
                sink.accum(2, |db| {
                    for r in 0..rows {
                        for j in 0..d {
                            db[j] += g[r * d + j];
                        }
                    }
                });
            })
        }))
    }

    /// Batch norm over channel axis 1 of a rank >= 2 tensor. In training mode
    /// batch statistics (biased variance) normalize the input and the fresh
    /// stats are handed back for the caller's running-average update; in eval
    /// mode the provided running stats normalize and nothing is returned.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm(
        &mut self,
        a: Var,
        gamma: Var,
        beta: Var,
        running_mean: &Tensor<T>,
        running_var: &Tensor<T>,
        training: bool,
        eps: f64,
    ) -> Result<(Var, Option<BnUpdate<T>>)> {
        let ta = self.value(a).clone();
        let tg = self.value(gamma).clone();
        let tb = self.value(beta).clone();
        let shape = ta.shape().to_vec();
        if shape.len() < 2 {
            return Err(Error::shape("batch_norm", format!("want rank >= 2, got {shape:?}")));
        }
        let c = shape[1];
        for (what, s) in [("gamma", tg.shape()), ("beta", tb.shape()), ("running_mean", running_mean.shape()), ("running_var", running_var.shape())] {
            if s != [c] {
                return Err(Error::shape("batch_norm", format!("{what} {s:?} vs channels {c}")));
            }
        }
        let n = shape[0];
        let inner: usize = shape[2..].iter().product();
        let count = n * inner;
        let epsv = T::of_f64(eps);

        let (mean, var) = if training {
            let mut mean = vec![T::zero(); c];
            let mut var = vec![T::zero(); c];
            let x = ta.data();
            for b in 0..n {
                for ch in 0..c {
                    let base = (b * c + ch) * inner;
                    let mut acc = T::zero();
                    for i in 0..inner {
                        acc += x[base + i];
                    }
                    mean[ch] += acc;
                }
            }
            let invm = T::of_f64(1.0 / count as f64);
            for ch in 0..c {
                mean[ch] *= invm;
            }
            for b in 0..n {
                for ch in 0..c {
                    let base = (b * c + ch) * inner;
                    let mut acc = T::zero();
                    for i in 0..inner {
                        let d = x[base + i] - mean[ch];
                        acc += d * d;
                    }
                    var[ch] += acc;
                }
            }
            for ch in 0..c {
                var[ch] *= invm;
            }
            (mean, var)
        } else {
            (running_mean.data().to_vec(), running_var.data().to_vec())
        };

        let mut inv_std = vec![T::zero(); c];
        for ch in 0..c {
            inv_std[ch] = T::one() / (var[ch] + epsv).sqrt();
        }
        let x = ta.data();
        let mut data = vec![T::zero(); ta.numel()];
        for b in 0..n {
            for ch in 0..c {
                let base = (b * c + ch) * inner;
                let (m, istd) = (mean[ch], inv_std[ch]);
                let (gm, bt) = (tg.data()[ch], tb.data()[ch]);
                for i in 0..inner {
                    data[base + i] = (x[base + i] - m) * istd * gm + bt;
                }
            }
        }
        let out = Tensor::new(shape, data)?;
        let update = training.then(|| BnUpdate {
            mean: Tensor::new(vec![c], mean.clone()).expect("bn mean shape"),
            var: Tensor::new(vec![c], var.clone()).expect("bn var shape"),
        });

        let mean_c = mean;
        let istd_c = inv_std;
        let out_var = self.push("batch_norm", out, vec![a, gamma, beta], || {
            Box::new(move |g, sink| {
                let x = ta.data();
                let invm = T::of_f64(1.0 / count as f64);
                // Per-channel sums of g and g*xhat feed every input term.
                let mut sum_g = vec![T::zero(); c];
                let mut sum_gx = vec![T::zero(); c];
                for b in 0..n {
                    for ch in 0..c {
                        let base = (b * c + ch) * inner;
                        for i in 0..inner {
                            let xh = (x[base + i] - mean_c[ch]) * istd_c[ch];
                            sum_g[ch] += g[base + i];
                            sum_gx[ch] += g[base + i] * xh;
                        }
                    }
                }
                sink.accum(0, |dx| {
                    for b in 0..n {
                        for ch in 0..c {
                            let base = (b * c + ch) * inner;
                            let gm = tg.data()[ch];
                            let istd = istd_c[ch];
                            for i in 0..inner {
                                let xh = (x[base + i] - mean_c[ch]) * istd;
                                let term = if training {
                                    g[base + i] - sum_g[ch] * invm - xh * (sum_gx[ch] * invm)
                                } else {
                                    g[base + i]
                                };
                                dx[base + i] += gm * istd * term;
                            }
                        }
                    }
                });
                sink.accum(1, |dg| {
                    for ch in 0..c {
                        dg[ch] += sum_gx[ch];
                    }
                });
                sink.accum(2, |db| {
                    for ch in 0..c {
                        db[ch] += sum_g[ch];
                    }
                });
            })
        });
        Ok((out_var, update))
    }
}
