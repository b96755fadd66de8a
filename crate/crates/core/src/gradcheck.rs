//! Finite-difference gradient verification.

use crate::element::Element;
use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Central-difference gradient estimate of a scalar-valued function:
/// `(f(x + h e_i) - f(x - h e_i)) / (2 h)` per coordinate. `f` must be
/// deterministic.
pub fn finite_diff_gradient<T: Element>(
    f: impl Fn(&Tensor<T>) -> T,
    x: &Tensor<T>,
    step: f64,
) -> Tensor<T> {
    assert!(step > 0.0, "finite_diff_gradient: step must be > 0");
    let h = T::of_f64(step);
    let two_h = T::of_f64(2.0 * step);
    let mut grad = vec![T::zero(); x.numel()];
    let mut probe = x.clone();
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let fp = f(&probe);
        probe.data_mut()[i] = orig - h;
        let fm = f(&probe);
        probe.data_mut()[i] = orig;
        grad[i] = (fp - fm) / two_h;
    }
    Tensor::new(x.shape().to_vec(), grad).expect("gradient shape mirrors input")
}

/// Worst mismatch between an analytic and a numeric gradient, as
/// `(index, analytic, numeric, err)` where `err` is the relative error with an
/// absolute floor for near-zero entries.
pub fn worst_mismatch<T: Element>(analytic: &Tensor<T>, numeric: &Tensor<T>) -> (usize, f64, f64, f64) {
    assert_eq!(analytic.shape(), numeric.shape());
    let mut worst = (0usize, 0.0f64, 0.0f64, 0.0f64);
    for i in 0..analytic.numel() {
        let a = analytic.data()[i].as_f64();
        let n = numeric.data()[i].as_f64();
        let scale = a.abs().max(n.abs());
        let err = if scale < 1e-7 { (a - n).abs() } else { (a - n).abs() / scale };
        if err > worst.3 {
            worst = (i, a, n, err);
        }
    }
    worst
}

/// Check the gradient of `build` (a forward pass from one input leaf to a
/// scalar) against central differences. Returns the worst relative error.
pub fn check_gradient<T: Element>(
    build: impl Fn(&mut Tape<T>, Var) -> Result<Var>,
    x: &Tensor<T>,
    step: f64,
) -> Result<f64> {
    let mut tape = Tape::new();
    let leaf = tape.leaf(x, true);
    let loss = build(&mut tape, leaf)?;
    let grads = tape.backward(loss)?;
    let analytic = grads
        .get(leaf)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(x.shape()));

    let numeric = finite_diff_gradient(
        |probe| {
            let mut t = Tape::new();
            let leaf = t.leaf(probe, true);
            let loss = build(&mut t, leaf).expect("forward must succeed on probed input");
            t.value(loss).item()
        },
        x,
        step,
    );
    let (_, _, _, err) = worst_mismatch(&analytic, &numeric);
    Ok(err)
}
