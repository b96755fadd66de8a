//! Shape-moving ops: views, permutations, concatenation, slicing, tiling,
//! nearest-neighbor upsampling.

use super::axis_in_range;
use crate::element::Element;
use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

impl<T: Element> Tape<T> {
    /// Zero-copy view of the same buffer under a new shape.
    pub fn reshape(&mut self, a: Var, new_shape: &[usize]) -> Result<Var> {
        let out = self.value(a).reshaped(new_shape)?;
        Ok(self.push("reshape", out, vec![a], || {
            Box::new(move |g, sink| {
                sink.accum(0, |d| d.iter_mut().zip(g).for_each(|(di, gi)| *di += *gi));
            })
        }))
    }

    /// Materialized axis permutation (`perm[i]` names the source axis that
    /// lands at output axis `i`).
    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let ta = self.value(a).clone();
        let rank = ta.shape().len();
        if perm.len() != rank {
            return Err(Error::arg("permute", format!("perm {perm:?} does not cover rank {rank}")));
        }
        let mut seen = vec![false; rank];
        for &p in perm {
            axis_in_range("permute", p, rank)?;
            if seen[p] {
                return Err(Error::arg("permute", format!("axis {p} repeated in {perm:?}")));
            }
            seen[p] = true;
        }
        let in_shape = ta.shape().to_vec();
        let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
        let in_strides = strides(&in_shape);
        let out_strides = strides(&out_shape);

        // For each output linear index, the source linear index.
        let perm_owned = perm.to_vec();
        let src_of = move |mut o: usize| -> usize {
            let mut src = 0usize;
            for d in 0..perm_owned.len() {
                let coord = o / out_strides[d];
                o %= out_strides[d];
                src += coord * in_strides[perm_owned[d]];
            }
            src
        };

        let mut data = vec![T::zero(); ta.numel()];
        for (o, slot) in data.iter_mut().enumerate() {
            *slot = ta.data()[src_of(o)];
        }
        let out = Tensor::new(out_shape, data)?;
        Ok(self.push("permute", out, vec![a], || {
            Box::new(move |g, sink| {
                sink.accum(0, |d| {
                    for (o, gi) in g.iter().enumerate() {
                        d[src_of(o)] += *gi;
                    }
                });
            })
        }))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::arg("concat", "no tensors given".to_string()));
        }
        let first = self.value(parts[0]).shape().to_vec();
        axis_in_range("concat", axis, first.len())?;
        let mut axis_total = 0usize;
        for &p in parts {
            let s = self.value(p).shape();
            if s.len() != first.len() {
                return Err(Error::shape("concat", format!("rank mismatch: {:?} vs {:?}", first, s)));
            }
            for (d, (&a, &b)) in first.iter().zip(s.iter()).enumerate() {
                if d != axis && a != b {
                    return Err(Error::shape(
                        "concat",
                        format!("axis {d} disagrees: {a} vs {b} (shapes {:?} vs {:?})", first, s),
                    ));
                }
            }
            axis_total += s[axis];
        }
        let mut out_shape = first.clone();
        out_shape[axis] = axis_total;

        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut data = vec![T::zero(); out_shape.iter().product()];
        let mut offsets = Vec::with_capacity(parts.len());
        let mut written = 0usize;
        let part_axis: Vec<usize> = parts.iter().map(|&p| self.value(p).shape()[axis]).collect();
        for (pi, &p) in parts.iter().enumerate() {
            let tp = self.value(p).clone();
            let rows = part_axis[pi] * inner;
            for o in 0..outer {
                let dst = o * axis_total * inner + written * inner;
                let src = o * rows;
                data[dst..dst + rows].copy_from_slice(&tp.data()[src..src + rows]);
            }
            offsets.push(written);
            written += part_axis[pi];
        }
        let out = Tensor::new(out_shape, data)?;
        Ok(self.push("concat", out, parts.to_vec(), || {
            Box::new(move |g, sink| {
                for pi in 0..part_axis.len() {
                    let rows = part_axis[pi] * inner;
                    let start = offsets[pi];
                    sink.accum(pi, |d| {
                        for o in 0..outer {
                            let src = o * axis_total * inner + start * inner;
                            let dst = o * rows;
                            for k in 0..rows {
                                d[dst + k] += g[src + k];
                            }
                        }
                    });
                }
            })
        }))
    }

    /// Contiguous range along one axis.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let ta = self.value(a).clone();
        let shape = ta.shape().to_vec();
        axis_in_range("slice", axis, shape.len())?;
        if start + len > shape[axis] || len == 0 {
            return Err(Error::arg(
                "slice",
                format!("range {start}..{} out of axis length {}", start + len, shape[axis]),
            ));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let axis_len = shape[axis];
        let mut data = vec![T::zero(); outer * len * inner];
        for o in 0..outer {
            let src = (o * axis_len + start) * inner;
            let dst = o * len * inner;
            data[dst..dst + len * inner].copy_from_slice(&ta.data()[src..src + len * inner]);
        }
        let out = Tensor::new(out_shape, data)?;
        Ok(self.push("slice", out, vec![a], || {
            Box::new(move |g, sink| {
                sink.accum(0, |d| {
                    for o in 0..outer {
                        let dst = (o * axis_len + start) * inner;
                        let src = o * len * inner;
                        for k in 0..len * inner {
                            d[dst + k] += g[src + k];
                        }
                    }
                });
            })
        }))
    }

    /// Tile an axis: output axis length is `times * len`, with the whole axis
    /// block repeated `times` times.
    pub fn repeat_axis(&mut self, a: Var, axis: usize, times: usize) -> Result<Var> {
        let ta = self.value(a).clone();
        let shape = ta.shape().to_vec();
        axis_in_range("repeat_axis", axis, shape.len())?;
        if times == 0 {
            return Err(Error::arg("repeat_axis", "times must be >= 1".to_string()));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let axis_len = shape[axis];
        let block = axis_len * inner;
        let mut out_shape = shape.clone();
        out_shape[axis] = axis_len * times;
        let mut data = vec![T::zero(); outer * block * times];
        for o in 0..outer {
            let src = o * block;
            for r in 0..times {
                let dst = (o * times + r) * block;
                data[dst..dst + block].copy_from_slice(&ta.data()[src..src + block]);
            }
        }
        let out = Tensor::new(out_shape, data)?;
        Ok(self.push("repeat_axis", out, vec![a], || {
            Box::new(move |g, sink| {
                sink.accum(0, |d| {
                    for o in 0..outer {
                        let dst = o * block;
                        for r in 0..times {
                            let src = (o * times + r) * block;
                            for k in 0..block {
                                d[dst + k] += g[src + k];
                            }
                        }
                    }
                });
            })
        }))
    }

    /// Nearest-neighbor spatial upsampling of `[N, C, T, H, W]` by integer
    /// factors on H and W; the temporal axis is untouched.
    pub fn upsample_nearest2d(&mut self, a: Var, fh: usize, fw: usize) -> Result<Var> {
        let ta = self.value(a).clone();
        let shape = ta.shape().to_vec();
        if shape.len() != 5 {
            return Err(Error::shape("upsample_nearest2d", format!("want rank 5, got {shape:?}")));
        }
        if fh == 0 || fw == 0 {
            return Err(Error::arg("upsample_nearest2d", "factors must be >= 1".to_string()));
        }
        let (n, c, t, h, w) = (shape[0], shape[1], shape[2], shape[3], shape[4]);
        let (oh, ow) = (h * fh, w * fw);
        let mut data = vec![T::zero(); n * c * t * oh * ow];
        for img in 0..n * c * t {
            let src_base = img * h * w;
            let dst_base = img * oh * ow;
            for y in 0..oh {
                let sy = y / fh;
                for x in 0..ow {
                    data[dst_base + y * ow + x] = ta.data()[src_base + sy * w + x / fw];
                }
            }
        }
        let out = Tensor::new(vec![n, c, t, oh, ow], data)?;
        Ok(self.push("upsample_nearest2d", out, vec![a], || {
            Box::new(move |g, sink| {
                sink.accum(0, |d| {
                    for img in 0..n * c * t {
                        let dst_base = img * h * w;
                        let src_base = img * oh * ow;
                        for y in 0..oh {
                            let sy = y / fh;
                            for x in 0..ow {
                                d[dst_base + sy * w + x / fw] += g[src_base + y * ow + x];
                            }
                        }
                    }
                });
            })
        }))
    }
}
