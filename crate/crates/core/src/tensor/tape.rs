//! The gradient tape: a topologically ordered record of primitive ops.

use std::cell::RefCell;
use std::collections::HashMap;

use super::Tensor;
use crate::error::TensorError;

/// Computes per-parent gradient contributions from the output gradient.
pub(crate) type BackFn = Box<dyn Fn(&[f64]) -> Vec<Vec<f64>>>;

struct Node {
    /// Output tensor of the op. Holding it keeps forward values alive for backward.
    tensor: Tensor,
    /// Indices of parent nodes; always strictly smaller than this node's index.
    parents: Vec<usize>,
    /// `None` for leaves.
    backward: Option<BackFn>,
}

#[derive(Default)]
struct TapeInner {
    nodes: Vec<Node>,
    index: HashMap<u64, usize>,
}

/// Gradients of a scalar loss with respect to leaf tensors, keyed by tensor id.
pub struct GradMap {
    grads: HashMap<u64, Vec<f64>>,
}

impl GradMap {
    pub fn get(&self, t: &Tensor) -> Option<&[f64]> {
        self.grads.get(&t.id()).map(|v| v.as_slice())
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

/// A per-sample recording of the forward computation.
///
/// Create with [`Tape::new`] for training or [`Tape::inference`] to skip
/// recording entirely. A tape is single-threaded; parallel workers each build
/// their own tape over shared read-only parameters.
pub struct Tape {
    inner: RefCell<TapeInner>,
    enabled: bool,
}

impl Tape {
    /// A recording tape.
    pub fn new() -> Self {
        Tape {
            inner: RefCell::new(TapeInner::default()),
            enabled: true,
        }
    }

    /// A non-recording tape: ops compute forward values only.
    pub fn inference() -> Self {
        Tape {
            inner: RefCell::new(TapeInner::default()),
            enabled: false,
        }
    }

    pub fn is_recording(&self) -> bool {
        self.enabled
    }

    /// Number of recorded nodes (including leaves).
    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drops all recorded nodes. Tensors held elsewhere stay valid.
    pub fn reset(&self) {
        let mut inner = self.inner.borrow_mut();
        inner.nodes.clear();
        inner.index.clear();
    }

    fn ensure_node(inner: &mut TapeInner, t: &Tensor) -> usize {
        if let Some(&ix) = inner.index.get(&t.id()) {
            return ix;
        }
        let ix = inner.nodes.len();
        inner.nodes.push(Node {
            tensor: t.clone(),
            parents: Vec::new(),
            backward: None,
        });
        inner.index.insert(t.id(), ix);
        ix
    }

    /// Records `out = op(parents)` with its backward rule. No-op on inference tapes.
    pub(crate) fn record(&self, out: &Tensor, parents: &[&Tensor], backward: BackFn) {
        if !self.enabled {
            return;
        }
        let mut inner = self.inner.borrow_mut();
        let parent_ixs: Vec<usize> = parents
            .iter()
            .map(|p| Self::ensure_node(&mut inner, p))
            .collect();
        let ix = inner.nodes.len();
        inner.nodes.push(Node {
            tensor: out.clone(),
            parents: parent_ixs,
            backward: Some(backward),
        });
        inner.index.insert(out.id(), ix);
    }

    /// Reverse pass from a scalar loss. Returns gradients for every leaf that
    /// was marked `requires_grad` and is reachable from the loss.
    pub fn backward(&self, loss: &Tensor) -> Result<GradMap, TensorError> {
        if loss.numel() != 1 {
            return Err(TensorError::NotScalar {
                op: "backward",
                shape: loss.shape().to_vec(),
            });
        }
        let inner = self.inner.borrow();
        let &loss_ix = inner
            .index
            .get(&loss.id())
            .ok_or(TensorError::NotOnTape(loss.id()))?;

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss_ix + 1];
        grads[loss_ix] = Some(vec![1.0]);

        for ix in (0..=loss_ix).rev() {
            let Some(g) = grads[ix].take() else { continue };
            let node = &inner.nodes[ix];
            if let Some(back) = &node.backward {
                let contribs = back(&g);
                debug_assert_eq!(contribs.len(), node.parents.len());
                for (&p, c) in node.parents.iter().zip(contribs) {
                    match &mut grads[p] {
                        Some(acc) => {
                            for (a, b) in acc.iter_mut().zip(&c) {
                                *a += b;
                            }
                        }
                        slot => *slot = Some(c),
                    }
                }
            } else if node.tensor.requires_grad_flag() {
                // leaf: keep its gradient for the result map
                grads[ix] = Some(g);
            }
        }

        let mut out = HashMap::new();
        for (ix, g) in grads.into_iter().enumerate() {
            if let Some(g) = g {
                let node = &inner.nodes[ix];
                if node.backward.is_none() && node.tensor.requires_grad_flag() {
                    out.insert(node.tensor.id(), g);
                }
            }
        }
        Ok(GradMap { grads: out })
    }
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}
