//! Matrix multiplication (optionally batched over leading axes) and the
//! fused linear layer.

use crate::element::Element;
use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Shapes and strides for one batched matmul problem.
#[derive(Clone, Copy)]
struct MatmulDims {
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
}

fn matmul_dims(sa: &[usize], sb: &[usize]) -> Result<MatmulDims> {
    if sa.len() < 2 || sb.len() < 2 {
        return Err(Error::shape("matmul", format!("need rank >= 2, got {sa:?} x {sb:?}")));
    }
    if sa.len() != sb.len() || sa[..sa.len() - 2] != sb[..sb.len() - 2] {
        return Err(Error::shape(
            "matmul",
            format!("leading batch axes must agree: {sa:?} x {sb:?}"),
        ));
    }
    let (m, ka) = (sa[sa.len() - 2], sa[sa.len() - 1]);
    let (kb, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
    if ka != kb {
        return Err(Error::shape(
            "matmul",
            format!("inner axes disagree: lhs {sa:?} (k={ka}) vs rhs {sb:?} (k={kb})"),
        ));
    }
    let batch: usize = sa[..sa.len() - 2].iter().product();
    Ok(MatmulDims { batch, m, k: ka, n })
}

impl<T: Element> Tape<T> {
    /// `a @ b` with identical leading batch axes. Counted as `2*m*k*n` per
    /// batch element under the tag "matmul".
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_tagged(a, b, "matmul")
    }

    /// Same as [`Tape::matmul`] but attributed to a custom counter tag, so
    /// attention score/value products can be isolated in measurements.
    pub fn matmul_tagged(&mut self, a: Var, b: Var, tag: &'static str) -> Result<Var> {
        let ta = self.value(a).clone();
        let tb = self.value(b).clone();
        let d = matmul_dims(ta.shape(), tb.shape())?;
        let MatmulDims { batch, m, k, n } = d;
        self.count(tag, 2 * (batch * m * k * n) as u64);

        let mut data = vec![T::zero(); batch * m * n];
        for i in 0..batch {
            T::gemm(
                m,
                k,
                n,
                T::one(),
                &ta.data()[i * m * k..(i + 1) * m * k],
                k as isize,
                1,
                &tb.data()[i * k * n..(i + 1) * k * n],
                n as isize,
                1,
                T::zero(),
                &mut data[i * m * n..(i + 1) * m * n],
                n as isize,
                1,
            );
        }
        let mut out_shape = ta.shape()[..ta.shape().len() - 2].to_vec();
        out_shape.push(m);
        out_shape.push(n);
        let out = Tensor::new(out_shape, data)?;
        Ok(self.push(tag, out, vec![a, b], || {
            Box::new(move |g, sink| {
                // dA = g @ B^T
                sink.accum(0, |da| {
                    for i in 0..batch {
                        T::gemm(
                            m,
                            n,
                            k,
                            T::one(),
                            &g[i * m * n..(i + 1) * m * n],
                            n as isize,
                            1,
                            &tb.data()[i * k * n..(i + 1) * k * n],
                            1,
                            n as isize,
                            T::one(),
                            &mut da[i * m * k..(i + 1) * m * k],
                            k as isize,
                            1,
                        );
                    }
                });
                // dB = A^T @ g
                sink.accum(1, |db| {
                    for i in 0..batch {
                        T::gemm(
                            k,
                            m,
                            n,
                            T::one(),
                            &ta.data()[i * m * k..(i + 1) * m * k],
                            1,
                            k as isize,
                            &g[i * m * n..(i + 1) * m * n],
                            n as isize,
                            1,
                            T::one(),
                            &mut db[i * k * n..(i + 1) * k * n],
                            n as isize,
                            1,
                        );
                    }
                });
            })
        }))
    }

    /// `y = x W^T + b` with `x: [..., in]`, `w: [out, in]`, optional
    /// `b: [out]`. Leading axes of `x` are flattened into rows.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let tx = self.value(x).clone();
        let tw = self.value(w).clone();
        let sx = tx.shape().to_vec();
        let sw = tw.shape();
        if sw.len() != 2 {
            return Err(Error::shape("linear", format!("weight must be [out, in], got {sw:?}")));
        }
        let (out_f, in_f) = (sw[0], sw[1]);
        if sx.is_empty() || sx[sx.len() - 1] != in_f {
            return Err(Error::shape(
                "linear",
                format!("input {sx:?} does not end in in-features {in_f}"),
            ));
        }
        let rows: usize = sx[..sx.len() - 1].iter().product();
        if let Some(bv) = b {
            let sb = self.value(bv).shape();
            if sb != [out_f] {
                return Err(Error::shape("linear", format!("bias {sb:?} vs out-features {out_f}")));
            }
        }
        self.count("linear", 2 * (rows * in_f * out_f) as u64);

        let tb = b.map(|bv| self.value(bv).clone());
        let mut data = vec![T::zero(); rows * out_f];
        // x [rows, in] @ w^T [in, out]
        T::gemm(
            rows,
            in_f,
            out_f,
            T::one(),
            tx.data(),
            in_f as isize,
            1,
            tw.data(),
            1,
            in_f as isize,
            T::zero(),
            &mut data,
            out_f as isize,
            1,
        );
        if let Some(tb) = &tb {
            for r in 0..rows {
                for o in 0..out_f {
                    data[r * out_f + o] += tb.data()[o];
                }
            }
        }
        let mut out_shape = sx[..sx.len() - 1].to_vec();
        out_shape.push(out_f);
        let out = Tensor::new(out_shape, data)?;

        let mut parents = vec![x, w];
        if let Some(bv) = b {
            parents.push(bv);
        }
        let has_bias = b.is_some();
        Ok(self.push("linear", out, parents, || {
            Box::new(move |g, sink| {
                // dx = g [rows, out] @ w [out, in]
                sink.accum(0, |dx| {
                    T::gemm(
                        rows,
                        out_f,
                        in_f,
                        T::one(),
                        g,
                        out_f as isize,
                        1,
                        tw.data(),
                        in_f as isize,
                        1,
                        T::one(),
                        dx,
                        in_f as isize,
                        1,
                    );
                });
                // dw = g^T [out, rows] @ x [rows, in]
                sink.accum(1, |dw| {
                    T::gemm(
                        out_f,
                        rows,
                        in_f,
                        T::one(),
                        g,
                        1,
                        out_f as isize,
                        tx.data(),
                        in_f as isize,
                        1,
                        T::one(),
                        dw,
                        in_f as isize,
                        1,
                    );
                });
                if has_bias {
                    sink.accum(2, |db| {
                        for r in 0..rows {
                            for o in 0..out_f {
                                db[o] += g[r * out_f + o];
                            }
                        }
                    });
                }
            })
        }))
    }
}
