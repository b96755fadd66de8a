//! 3D convolution (cross-correlation) via im2col + GEMM, plus pooling.

use crate::element::Element;
use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy)]
struct ConvGeom {
    n: usize,
    cin: usize,
    t: usize,
    h: usize,
    w: usize,
    cout: usize,
    kt: usize,
    kh: usize,
    kw: usize,
    st: usize,
    sh: usize,
    sw: usize,
    pt: usize,
    ph: usize,
    pw: usize,
    to: usize,
    ho: usize,
    wo: usize,
}

fn out_len(op: &'static str, axis: &str, i: usize, k: usize, s: usize, p: usize) -> Result<usize> {
    if s == 0 {
        return Err(Error::arg(op, format!("{axis} stride must be >= 1")));
    }
    if k == 0 {
        return Err(Error::arg(op, format!("{axis} kernel must be >= 1")));
    }
    let padded = i + 2 * p;
    if padded < k {
        return Err(Error::shape(
            op,
            format!("{axis}: input {i} + 2*pad {p} shorter than kernel {k}"),
        ));
    }
    Ok((padded - k) / s + 1)
}

/// Fill `col` (shape K x L, K = cin*kt*kh*kw, L = to*ho*wo) from one sample.
fn im2col<T: Element>(x: &[T], g: ConvGeom, col: &mut [T]) {
    let l = g.to * g.ho * g.wo;
    let mut k_idx = 0usize;
    for ci in 0..g.cin {
        for dt in 0..g.kt {
            for dh in 0..g.kh {
                for dw in 0..g.kw {
                    let row = &mut col[k_idx * l..(k_idx + 1) * l];
                    let mut pos = 0usize;
                    for to in 0..g.to {
                        let ti = (to * g.st + dt) as isize - g.pt as isize;
                        let t_ok = ti >= 0 && (ti as usize) < g.t;
                        for ho in 0..g.ho {
                            let hi = (ho * g.sh + dh) as isize - g.ph as isize;
                            let h_ok = hi >= 0 && (hi as usize) < g.h;
                            for wo in 0..g.wo {
                                let wi = (wo * g.sw + dw) as isize - g.pw as isize;
                                row[pos] = if t_ok && h_ok && wi >= 0 && (wi as usize) < g.w {
                                    x[((ci * g.t + ti as usize) * g.h + hi as usize) * g.w
                                        + wi as usize]
                                } else {
                                    T::zero()
                                };
                                pos += 1;
                            }
                        }
                    }
                    k_idx += 1;
                }
            }
        }
    }
}

/// Scatter-add the column gradient back onto one input sample.
fn col2im<T: Element>(dcol: &[T], g: ConvGeom, dx: &mut [T]) {
    let l = g.to * g.ho * g.wo;
    let mut k_idx = 0usize;
    for ci in 0..g.cin {
        for dt in 0..g.kt {
            for dh in 0..g.kh {
                for dw in 0..g.kw {
                    let row = &dcol[k_idx * l..(k_idx + 1) * l];
                    let mut pos = 0usize;
                    for to in 0..g.to {
                        let ti = (to * g.st + dt) as isize - g.pt as isize;
                        let t_ok = ti >= 0 && (ti as usize) < g.t;
                        for ho in 0..g.ho {
                            let hi = (ho * g.sh + dh) as isize - g.ph as isize;
                            let h_ok = hi >= 0 && (hi as usize) < g.h;
                            for wo in 0..g.wo {
                                let wi = (wo * g.sw + dw) as isize - g.pw as isize;
                                if t_ok && h_ok && wi >= 0 && (wi as usize) < g.w {
                                    dx[((ci * g.t + ti as usize) * g.h + hi as usize) * g.w
                                        + wi as usize] += row[pos];
                                }
                                pos += 1;
                            }
                        }
                    }
                    k_idx += 1;
                }
            }
        }
    }
}

impl<T: Element> Tape<T> {
    /// Cross-correlation of `x: [N, Cin, T, H, W]` with `w: [Cout, Cin, kt, kh, kw]`.
    /// No bias (a batch norm follows every convolution in this model family).
    pub fn conv3d(
        &mut self,
        x: Var,
        w: Var,
        stride: (usize, usize, usize),
        padding: (usize, usize, usize),
    ) -> Result<Var> {
        let tx = self.value(x).clone();
        let tw = self.value(w).clone();
        let sx = tx.shape();
        let sw = tw.shape();
        if sx.len() != 5 {
            return Err(Error::shape("conv3d", format!("input must be [N,C,T,H,W], got {sx:?}")));
        }
        if sw.len() != 5 {
            return Err(Error::shape(
                "conv3d",
                format!("kernel must be [Cout,Cin,kt,kh,kw], got {sw:?}"),
            ));
        }
        if sx[1] != sw[1] {
            return Err(Error::shape(
                "conv3d",
                format!("in-channels disagree: input axis 1 is {} but kernel axis 1 is {}", sx[1], sw[1]),
            ));
        }
        let geom = ConvGeom {
            n: sx[0],
            cin: sx[1],
            t: sx[2],
            h: sx[3],
            w: sx[4],
            cout: sw[0],
            kt: sw[2],
            kh: sw[3],
            kw: sw[4],
            st: stride.0,
            sh: stride.1,
            sw: stride.2,
            pt: padding.0,
            ph: padding.1,
            pw: padding.2,
            to: out_len("conv3d", "temporal", sx[2], sw[2], stride.0, padding.0)?,
            ho: out_len("conv3d", "height", sx[3], sw[3], stride.1, padding.1)?,
            wo: out_len("conv3d", "width", sx[4], sw[4], stride.2, padding.2)?,
        };
        let k = geom.cin * geom.kt * geom.kh * geom.kw;
        let l = geom.to * geom.ho * geom.wo;
        let kernel_vol = geom.kt * geom.kh * geom.kw;
        let out_vol = geom.n * geom.cout * l;
        self.count("conv3d", 2 * (out_vol * kernel_vol * geom.cin) as u64);

        let in_sz = geom.cin * geom.t * geom.h * geom.w;
        let mut col = vec![T::zero(); k * l];
        let mut data = vec![T::zero(); out_vol];
        for s in 0..geom.n {
            im2col(&tx.data()[s * in_sz..(s + 1) * in_sz], geom, &mut col);
            T::gemm(
                geom.cout,
                k,
                l,
                T::one(),
                tw.data(),
                k as isize,
                1,
                &col,
                l as isize,
                1,
                T::zero(),
                &mut data[s * geom.cout * l..(s + 1) * geom.cout * l],
                l as isize,
                1,
            );
        }
        let out = Tensor::new(vec![geom.n, geom.cout, geom.to, geom.ho, geom.wo], data)?;
        Ok(self.push("conv3d", out, vec![x, w], || {
            Box::new(move |g, sink| {
                // The column buffer is rebuilt per sample rather than retained
                // from the forward pass.
                let mut col = vec![T::zero(); k * l];
                sink.accum(1, |dw| {
                    for s in 0..geom.n {
                        im2col(&tx.data()[s * in_sz..(s + 1) * in_sz], geom, &mut col);
                        // dW += g_s [Cout, L] @ col^T [L, K]
                        T::gemm(
                            geom.cout,
                            l,
                            k,
                            T::one(),
                            &g[s * geom.cout * l..(s + 1) * geom.cout * l],
                            l as isize,
                            1,
                            &col,
                            1,
                            l as isize,
                            T::one(),
                            dw,
                            k as isize,
                            1,
                        );
                    }
                });
                sink.accum(0, |dx| {
                    let mut dcol = vec![T::zero(); k * l];
                    for s in 0..geom.n {
                        // dcol = W^T [K, Cout] @ g_s [Cout, L]
                        T::gemm(
                            k,
                            geom.cout,
                            l,
                            T::one(),
                            tw.data(),
                            1,
                            k as isize,
                            &g[s * geom.cout * l..(s + 1) * geom.cout * l],
                            l as isize,
                            1,
                            T::zero(),
                            &mut dcol,
                            l as isize,
                            1,
                        );
                        col2im(&dcol, geom, &mut dx[s * in_sz..(s + 1) * in_sz]);
                    }
                });
            })
        }))
    }

    /// Average pooling without padding.
    pub fn avg_pool3d(
        &mut self,
        x: Var,
        kernel: (usize, usize, usize),
        stride: (usize, usize, usize),
    ) -> Result<Var> {
        let tx = self.value(x).clone();
        let sx = tx.shape();
        if sx.len() != 5 {
            return Err(Error::shape("avg_pool3d", format!("input must be [N,C,T,H,W], got {sx:?}")));
        }
        let (n, c, t, h, w) = (sx[0], sx[1], sx[2], sx[3], sx[4]);
        let to = out_len("avg_pool3d", "temporal", t, kernel.0, stride.0, 0)?;
        let ho = out_len("avg_pool3d", "height", h, kernel.1, stride.1, 0)?;
        let wo = out_len("avg_pool3d", "width", w, kernel.2, stride.2, 0)?;
        let vol = kernel.0 * kernel.1 * kernel.2;
        let inv = T::of_f64(1.0 / vol as f64);

        let mut data = vec![T::zero(); n * c * to * ho * wo];
        let xv = tx.data();
        let mut pos = 0usize;
        for img in 0..n * c {
            let base = img * t * h * w;
            for ot in 0..to {
                for oh in 0..ho {
                    for ow in 0..wo {
                        let mut acc = T::zero();
                        for dt in 0..kernel.0 {
                            for dh in 0..kernel.1 {
                                for dw in 0..kernel.2 {
                                    let idx = base
                                        + ((ot * stride.0 + dt) * h + oh * stride.1 + dh) * w
                                        + ow * stride.2
                                        + dw;
                                    acc += xv[idx];
                                }
                            }
                        }
                        data[pos] = acc * inv;
                        pos += 1;
                    }
                }
            }
        }
        let out = Tensor::new(vec![n, c, to, ho, wo], data)?;
        Ok(self.push("avg_pool3d", out, vec![x], || {
            Box::new(move |g, sink| {
                sink.accum(0, |dx| {
                    let mut pos = 0usize;
                    for img in 0..n * c {
                        let base = img * t * h * w;
                        for ot in 0..to {
                            for oh in 0..ho {
                                for ow in 0..wo {
                                    let gv = g[pos] * inv;
                                    pos += 1;
                                    for dt in 0..kernel.0 {
                                        for dh in 0..kernel.1 {
                                            for dw in 0..kernel.2 {
                                                let idx = base
                                                    + ((ot * stride.0 + dt) * h
                                                        + oh * stride.1
                                                        + dh)
                                                        * w
                                                    + ow * stride.2
                                                    + dw;
                                                dx[idx] += gv;
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                });
            })
        }))
    }

    /// Max pooling; padded positions never win (negative-infinity padding).
    /// Ties break toward the first window position for determinism.
    pub fn max_pool3d(
        &mut self,
        x: Var,
        kernel: (usize, usize, usize),
        stride: (usize, usize, usize),
        padding: (usize, usize, usize),
    ) -> Result<Var> {
        let tx = self.value(x).clone();
        let sx = tx.shape();
        if sx.len() != 5 {
            return Err(Error::shape("max_pool3d", format!("input must be [N,C,T,H,W], got {sx:?}")));
        }
        let (n, c, t, h, w) = (sx[0], sx[1], sx[2], sx[3], sx[4]);
        let to = out_len("max_pool3d", "temporal", t, kernel.0, stride.0, padding.0)?;
        let ho = out_len("max_pool3d", "height", h, kernel.1, stride.1, padding.1)?;
        let wo = out_len("max_pool3d", "width", w, kernel.2, stride.2, padding.2)?;

        let xv = tx.data();
        let mut data = vec![T::zero(); n * c * to * ho * wo];
        let mut argmax = vec![0u32; n * c * to * ho * wo];
        let mut pos = 0usize;
        for img in 0..n * c {
            let base = img * t * h * w;
            for ot in 0..to {
                for oh in 0..ho {
                    for ow in 0..wo {
                        let mut best = T::neg_infinity();
                        let mut best_idx = 0usize;
                        for dt in 0..kernel.0 {
                            let ti = (ot * stride.0 + dt) as isize - padding.0 as isize;
                            if ti < 0 || ti as usize >= t {
                                continue;
                            }
                            for dh in 0..kernel.1 {
                                let hi = (oh * stride.1 + dh) as isize - padding.1 as isize;
                                if hi < 0 || hi as usize >= h {
                                    continue;
                                }
                                for dw in 0..kernel.2 {
                                    let wi = (ow * stride.2 + dw) as isize - padding.2 as isize;
                                    if wi < 0 || wi as usize >= w {
                                        continue;
                                    }
                                    let idx = base
                                        + ((ti as usize) * h + hi as usize) * w
                                        + wi as usize;
                                    if xv[idx] > best {
                                        best = xv[idx];
                                        best_idx = idx;
                                    }
                                }
                            }
                        }
                        data[pos] = best;
                        argmax[pos] = best_idx as u32;
                        pos += 1;
                    }
                }
            }
        }
        let out = Tensor::new(vec![n, c, to, ho, wo], data)?;
        Ok(self.push("max_pool3d", out, vec![x], || {
            Box::new(move |g, sink| {
                sink.accum(0, |dx| {
                    for (pos, &gi) in g.iter().enumerate() {
                        dx[argmax[pos] as usize] += gi;
                    }
                });
            })
        }))
    }
}
