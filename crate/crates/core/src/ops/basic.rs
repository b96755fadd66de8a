//! Elementwise ops, scalar ops, and reductions.

use super::{axis_in_range, same_shape};
use crate::element::Element;
use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

impl<T: Element> Tape<T> {
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let ta = self.value(a).clone();
        let tb = self.value(b).clone();
        same_shape("add", &ta, &tb)?;
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x + y).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push("add", out, vec![a, b], || {
            Box::new(move |g, sink| {
                sink.accum(0, |d| d.iter_mut().zip(g).for_each(|(di, gi)| *di += *gi));
                sink.accum(1, |d| d.iter_mut().zip(g).for_each(|(di, gi)| *di += *gi));
            })
        }))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let ta = self.value(a).clone();
        let tb = self.value(b).clone();
        same_shape("sub", &ta, &tb)?;
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x - y).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push("sub", out, vec![a, b], || {
            Box::new(move |g, sink| {
                sink.accum(0, |d| d.iter_mut().zip(g).for_each(|(di, gi)| *di += *gi));
                sink.accum(1, |d| d.iter_mut().zip(g).for_each(|(di, gi)| *di -= *gi));
            })
        }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let ta = self.value(a).clone();
        let tb = self.value(b).clone();
        same_shape("mul", &ta, &tb)?;
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x * y).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push("mul", out, vec![a, b], || {
            Box::new(move |g, sink| {
                sink.accum(0, |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * tb.data()[i];
                    }
                });
                sink.accum(1, |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * ta.data()[i];
                    }
                });
            })
        }))
    }

    /// `a + b` where `b`'s shape is a suffix of `a`'s; `b` broadcasts over the
    /// leading axes (bias add, positional tables over a batch axis, ...).
    pub fn add_bcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let ta = self.value(a).clone();
        let tb = self.value(b).clone();
        let (sa, sb) = (ta.shape(), tb.shape());
        if sb.len() > sa.len() || &sa[sa.len() - sb.len()..] != sb {
            return Err(Error::shape(
                "add_bcast",
                format!("rhs {sb:?} is not a trailing suffix of lhs {sa:?}"),
            ));
        }
        let block = tb.numel();
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + tb.data()[i % block])
            .collect();
        let out = Tensor::new(sa.to_vec(), data)?;
        Ok(self.push("add_bcast", out, vec![a, b], || {
            Box::new(move |g, sink| {
                sink.accum(0, |d| d.iter_mut().zip(g).for_each(|(di, gi)| *di += *gi));
                sink.accum(1, |d| {
                    for (i, gi) in g.iter().enumerate() {
                        d[i % block] += *gi;
                    }
                });
            })
        }))
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Result<Var> {
        let ta = self.value(a).clone();
        let out = ta.map(|x| x + c);
        Ok(self.push("add_scalar", out, vec![a], || {
            Box::new(move |g, sink| {
                sink.accum(0, |d| d.iter_mut().zip(g).for_each(|(di, gi)| *di += *gi));
            })
        }))
    }

    pub fn mul_scalar(&mut self, a: Var, c: T) -> Result<Var> {
        let ta = self.value(a).clone();
        let out = ta.map(|x| x * c);
        Ok(self.push("mul_scalar", out, vec![a], || {
            Box::new(move |g, sink| {
                sink.accum(0, |d| d.iter_mut().zip(g).for_each(|(di, gi)| *di += *gi * c));
            })
        }))
    }

    /// `a * s` with `s` a one-element tensor on the tape (learnable mixing
    /// weights differentiate through this).
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var> {
        let ta = self.value(a).clone();
        let ts = self.value(s).clone();
        if ts.numel() != 1 {
            return Err(Error::shape("scale_by", format!("scale must be scalar, got {:?}", ts.shape())));
        }
        let sv = ts.item();
        let out = ta.map(|x| x * sv);
        Ok(self.push("scale_by", out, vec![a, s], || {
            Box::new(move |g, sink| {
                sink.accum(0, |d| d.iter_mut().zip(g).for_each(|(di, gi)| *di += *gi * sv));
                sink.accum(1, |d| {
                    let mut acc = T::zero();
                    for (gi, xi) in g.iter().zip(ta.data()) {
                        acc += *gi * *xi;
                    }
                    d[0] += acc;
                });
            })
        }))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a).clone();
        let out = ta.map(|x| if x > T::zero() { x } else { T::zero() });
        Ok(self.push("relu", out, vec![a], || {
            Box::new(move |g, sink| {
                sink.accum(0, |d| {
                    for i in 0..d.len() {
                        if ta.data()[i] > T::zero() {
                            d[i] += g[i];
                        }
                    }
                });
            })
        }))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a).clone();
        let c = T::of_f64(GELU_C);
        let ka = T::of_f64(GELU_A);
        let half = T::of_f64(0.5);
        let out = ta.map(|x| {
            let u = c * (x + ka * x * x * x);
            half * x * (T::one() + u.tanh())
        });
        Ok(self.push("gelu", out, vec![a], || {
            Box::new(move |g, sink| {
                sink.accum(0, |d| {
                    let three = T::of_f64(3.0);
                    for i in 0..d.len() {
                        let x = ta.data()[i];
                        let u = c * (x + ka * x * x * x);
                        let t = u.tanh();
                        let sech2 = T::one() - t * t;
                        let du = c * (T::one() + three * ka * x * x);
                        let dg = half * (T::one() + t) + half * x * sech2 * du;
                        d[i] += g[i] * dg;
                    }
                });
            })
        }))
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a).clone();
        let mut acc = T::zero();
        for &x in ta.data() {
            acc += x;
        }
        let out = Tensor::scalar(acc);
        Ok(self.push("sum_all", out, vec![a], || {
            Box::new(move |g, sink| {
                let gi = g[0];
                sink.accum(0, |d| d.iter_mut().for_each(|di| *di += gi));
            })
        }))
    }

    pub fn mean_all(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).numel();
        let s = self.sum_all(a)?;
        self.mul_scalar(s, T::of_f64(1.0 / n as f64))
    }

    /// Mean over the given axes (removed from the output shape).
    pub fn mean_axes(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let ta = self.value(a).clone();
        let rank = ta.shape().len();
        for &ax in axes {
            axis_in_range("mean_axes", ax, rank)?;
        }
        let mut reduce = vec![false; rank];
        for &ax in axes {
            reduce[ax] = true;
        }
        let out_shape: Vec<usize> = ta
            .shape()
            .iter()
            .enumerate()
            .filter(|(d, _)| !reduce[*d])
            .map(|(_, &s)| s)
            .collect();
        let out_shape = if out_shape.is_empty() { vec![1] } else { out_shape };
        let count: usize = ta
            .shape()
            .iter()
            .enumerate()
            .filter(|(d, _)| reduce[*d])
            .map(|(_, &s)| s)
            .product();
        let inv = T::of_f64(1.0 / count as f64);

        // For every input linear index, the linear index of its output cell.
        let in_shape = ta.shape().to_vec();
        let map_index = move |mut idx: usize| -> usize {
            let mut out = 0usize;
            let mut out_stride = 1usize;
            for pos in (0..in_shape.len()).rev() {
                let dim = in_shape[pos];
                let coord = idx % dim;
                idx /= dim;
                if !reduce[pos] {
                    out += coord * out_stride;
                    out_stride *= dim;
                }
            }
            out
        };

        let mut data = vec![T::zero(); out_shape.iter().product()];
        for (i, &x) in ta.data().iter().enumerate() {
            data[map_index(i)] += x;
        }
        for v in &mut data {
            *v *= inv;
        }
        let out = Tensor::new(out_shape, data)?;
        Ok(self.push("mean_axes", out, vec![a], || {
            Box::new(move |g, sink| {
                sink.accum(0, |d| {
                    for i in 0..d.len() {
                        d[i] += g[map_index(i)] * inv;
                    }
                });
            })
        }))
    }
}
