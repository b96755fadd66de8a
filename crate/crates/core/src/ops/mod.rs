//! Forward ops with their backward rules, implemented on [`Tape`].
//!
//! [`Tape`]: crate::tape::Tape

pub(crate) mod basic;
pub(crate) mod conv;
pub(crate) mod linalg;
pub(crate) mod loss;
pub mod norm;
pub(crate) mod shape;

use crate::element::Element;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub(crate) fn same_shape<T: Element>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("lhs {:?} vs rhs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

pub(crate) fn axis_in_range(op: &'static str, axis: usize, rank: usize) -> Result<()> {
    if axis >= rank {
        return Err(Error::arg(op, format!("axis {axis} out of range for rank {rank}")));
    }
    Ok(())
}
