use std::cell::{Cell, RefCell};
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

static TAPE_COUNTER: AtomicU64 = AtomicU64::new(1);

/// Gradient callback: receives the output gradient and returns one gradient
/// buffer per recorded input, in input order.
pub(crate) type BackwardFn<T> = Box<dyn Fn(&[T]) -> Vec<Vec<T>>>;

struct Node<T: Scalar> {
    inputs: Vec<usize>,
    out: Tensor<T>,
    backward: Option<BackwardFn<T>>,
}

/// Append-only record of one forward pass. Nodes are stored in execution
/// order, so a single reverse sweep visits every node after all its users.
pub struct Tape<T: Scalar> {
    id: u64,
    recording: bool,
    nodes: RefCell<Vec<Node<T>>>,
    consumed: Cell<bool>,
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            id: TAPE_COUNTER.fetch_add(1, Ordering::Relaxed),
            recording: true,
            nodes: RefCell::new(Vec::new()),
            consumed: Cell::new(false),
        }
    }

    /// A tape that records nothing; forward passes run at full speed and
    /// `backward` is unavailable.
    pub fn no_grad() -> Self {
        Tape { recording: false, ..Tape::new() }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Node id of `t` on this tape, registering it as a leaf on first sight.
    pub(crate) fn ensure_node(&self, t: &Tensor<T>) -> usize {
        if let Some((tape_id, node_id)) = t.mark() {
            if tape_id == self.id {
                return node_id;
            }
        }
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node { inputs: Vec::new(), out: t.clone(), backward: None });
        t.set_mark(self.id, id);
        id
    }

    /// Record `out = op(inputs)` with its gradient callback.
    pub(crate) fn record(
        &self,
        inputs: &[&Tensor<T>],
        out: Tensor<T>,
        backward: BackwardFn<T>,
    ) -> Tensor<T> {
        if !self.recording {
            return out;
        }
        let ids: Vec<usize> = inputs.iter().map(|t| self.ensure_node(t)).collect();
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        out.set_mark(self.id, id);
        nodes.push(Node { inputs: ids, out: out.clone(), backward: Some(backward) });
        out
    }

    /// Reverse sweep from a scalar loss. Fills the grad slot of every
    /// `requires_grad` tensor reachable from it; gradients from multiple
    /// uses accumulate additively.
    pub fn backward(&self, loss: &Tensor<T>) -> Result<()> {
        if !self.recording {
            return Err(TensorError::Autograd("backward on a no-grad tape".into()));
        }
        if self.consumed.get() {
            return Err(TensorError::Autograd(
                "backward called twice on the same tape".into(),
            ));
        }
        if loss.numel() != 1 {
            return Err(TensorError::Autograd(format!(
                "loss must be a scalar, got shape {:?}",
                loss.shape()
            )));
        }
        let loss_node = match loss.mark() {
            Some((tape_id, node_id)) if tape_id == self.id => node_id,
            _ => return Err(TensorError::Autograd("loss is not on this tape".into())),
        };
        self.consumed.set(true);

        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Vec<T>>> = vec![None; nodes.len()];
        grads[loss_node] = Some(vec![T::one()]);

        for i in (0..nodes.len()).rev() {
            let node = &nodes[i];
            let Some(back) = &node.backward else { continue };
            // Take the output grad; nothing downstream reads it again.
            let Some(gout) = grads[i].take() else { continue };
            let input_grads = back(&gout);
            debug_assert_eq!(input_grads.len(), node.inputs.len());
            for (&inp, ig) in node.inputs.iter().zip(input_grads) {
                match &mut grads[inp] {
                    Some(acc) => {
                        for (a, g) in acc.iter_mut().zip(&ig) {
                            *a += *g;
                        }
                    }
                    None => grads[inp] = Some(ig),
                }
            }
            if node.out.requires_grad() {
                // Non-leaf tensor whose grad the caller asked to keep.
                node.out.accumulate_grad(&gout);
            }
        }
        // Leaves: whatever gradient reached them.
        for (i, node) in nodes.iter().enumerate() {
            if node.backward.is_none() && node.out.requires_grad() {
                if let Some(g) = &grads[i] {
                    node.out.accumulate_grad(g);
                }
            }
        }
        Ok(())
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Tape::new()
    }
}
