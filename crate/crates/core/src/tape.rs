use std::sync::OnceLock;

use crate::counter::OpCounter;
use crate::element::Element;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

pub(crate) type GradFn<T> = Box<dyn Fn(&[T], &mut GradSink<'_, T>)>;

pub(crate) struct Node<T: Element> {
    pub(crate) value: Tensor<T>,
    pub(crate) parents: Vec<Var>,
    pub(crate) grad_fn: Option<GradFn<T>>,
    pub(crate) needs_grad: bool,
}

/// Reverse-mode tape. One tape records one forward pass; dropping it frees
/// the whole graph. Nodes are appended in execution order, which is already
/// a topological order, so backward is a single reverse sweep.
///
/// Everything is single-threaded and allocation-deterministic: identical
/// inputs replay to bitwise-identical values and gradients.
pub struct Tape<T: Element> {
    pub(crate) nodes: Vec<Node<T>>,
    recording: bool,
    counter: OpCounter,
    nan_trap: bool,
}

/// Accumulates gradient contributions into the parents of one node.
pub struct GradSink<'a, T: Element> {
    parent_ids: &'a [Var],
    parent_numels: &'a [usize],
    parent_needs: &'a [bool],
    slots: &'a mut [Option<Vec<T>>],
}

impl<'a, T: Element> GradSink<'a, T> {
    /// Run `f` over the gradient buffer of parent number `pos` (zero-filled on
    /// first touch). `f` must accumulate (`+=`), never overwrite. Parents whose
    /// subtree holds no grad-requiring leaf are skipped entirely.
    pub fn accum(&mut self, pos: usize, f: impl FnOnce(&mut [T])) {
        if !self.parent_needs[pos] {
            return;
        }
        let id = self.parent_ids[pos].0;
        let slot = &mut self.slots[id];
        if slot.is_none() {
            *slot = Some(vec![T::zero(); self.parent_numels[pos]]);
        }
        f(slot.as_mut().unwrap());
    }
}

/// Gradients of tape leaves, produced by [`Tape::backward`].
pub struct Gradients<T: Element> {
    pub(crate) slots: Vec<Option<Tensor<T>>>,
}

impl<T: Element> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.slots.get(v.0).and_then(|s| s.as_ref())
    }
}

fn nan_trap_enabled() -> bool {
    static FLAG: OnceLock<bool> = OnceLock::new();
    *FLAG.get_or_init(|| match std::env::var("CSG3DCT_NAN_TRAP") {
        Ok(v) => v != "0" && !v.is_empty(),
        Err(_) => cfg!(debug_assertions),
    })
}

impl<T: Element> Tape<T> {
    /// Tape that records backward functions (training / gradient checks).
    pub fn new() -> Self {
        Self { nodes: Vec::new(), recording: true, counter: OpCounter::new(), nan_trap: nan_trap_enabled() }
    }

    /// Tape that only materializes forward values.
    pub fn inference() -> Self {
        Self { recording: false, ..Self::new() }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn counter(&self) -> &OpCounter {
        &self.counter
    }

    pub fn reset_counter(&mut self) {
        self.counter.reset();
    }

    pub(crate) fn count(&mut self, op: &'static str, madds: u64) {
        self.counter.add(op, madds);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Bind an existing tensor as a graph input.
    pub fn leaf(&mut self, t: &Tensor<T>, requires_grad: bool) -> Var {
        let needs = self.recording && requires_grad;
        self.nodes.push(Node { value: t.clone(), parents: Vec::new(), grad_fn: None, needs_grad: needs });
        Var(self.nodes.len() - 1)
    }

    /// Bind a tensor that never receives a gradient.
    pub fn constant(&mut self, t: &Tensor<T>) -> Var {
        self.leaf(t, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Append an op result. `grad_fn` is built lazily so inference tapes never
    /// pay for closure captures.
    pub(crate) fn push(
        &mut self,
        op: &'static str,
        value: Tensor<T>,
        parents: Vec<Var>,
        grad_fn: impl FnOnce() -> GradFn<T>,
    ) -> Var {
        if self.nan_trap && !value.is_finite() {
            panic!("non-finite values produced by op `{op}` (shape {:?})", value.shape());
        }
        let needs = self.recording && parents.iter().any(|p| self.nodes[p.0].needs_grad);
        let grad_fn = if needs { Some(grad_fn()) } else { None };
        self.nodes.push(Node { value, parents, grad_fn, needs_grad: needs });
        Var(self.nodes.len() - 1)
    }

    /// Reverse sweep from a scalar loss. Returns the gradients of every
    /// grad-requiring leaf reachable from `loss`; intermediate gradients are
    /// freed as the sweep passes them.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let loss_node = &self.nodes[loss.0];
        if loss_node.value.numel() != 1 {
            return Err(Error::NonScalarLoss { shape: loss_node.value.shape().to_vec() });
        }
        if !self.recording {
            return Err(Error::arg("backward", "tape was created in inference mode".to_string()));
        }

        let mut slots: Vec<Option<Vec<T>>> = Vec::with_capacity(loss.0 + 1);
        slots.resize_with(loss.0 + 1, || None);
        slots[loss.0] = Some(vec![T::one()]);

        let mut parent_numels: Vec<usize> = Vec::new();
        let mut parent_needs: Vec<bool> = Vec::new();
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                slots[i] = None;
                continue;
            }
            if slots[i].is_none() {
                continue;
            }
            if let Some(grad_fn) = &node.grad_fn {
                let grad = slots[i].take().unwrap();
                parent_numels.clear();
                parent_needs.clear();
                for p in &node.parents {
                    parent_numels.push(self.nodes[p.0].value.numel());
                    parent_needs.push(self.nodes[p.0].needs_grad);
                }
                let mut sink = GradSink {
                    parent_ids: &node.parents,
                    parent_numels: &parent_numels,
                    parent_needs: &parent_needs,
                    slots: &mut slots,
                };
                grad_fn(&grad, &mut sink);
            }
            // Leaves keep their slot; it becomes the reported gradient.
        }

        let slots = slots
            .into_iter()
            .enumerate()
            .map(|(i, s)| {
                s.map(|buf| {
                    Tensor::new(self.nodes[i].value.shape().to_vec(), buf)
                        .expect("gradient buffer matches node shape")
                })
            })
            .collect();
        Ok(Gradients { slots })
    }
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}
