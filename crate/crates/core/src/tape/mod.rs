//! Reverse-mode differentiation over fused nodes.
//!
//! Every value computed while training lives on a [`Tape`]. A node records
//! the operation that produced it together with whatever that operation's
//! backward rule needs (its *saved* tensors). Hyperbolic primitives record
//! one node per call and carry a hand-derived vector-Jacobian product; the
//! elementary ops in [`elementary`] exist for glue code and for the naive
//! compositional mode that the memory comparison runs against.

pub mod elementary;
pub mod fd;

use std::collections::HashMap;
use std::fmt::Debug;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use fd::{fd_vjp, finite_difference_jacobian, relative_error};

pub type NodeId = usize;

/// How composite hyperbolic operations are recorded.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Mode {
    /// One node per primitive, hand-written backward.
    #[default]
    Fused,
    /// Primitives are spelled out in elementary nodes.
    Naive,
}

/// A recorded operation with its backward rule.
pub trait Op: Debug + Send + Sync {
    fn name(&self) -> &'static str;

    /// Vector-Jacobian products for each input, in input order. `None`
    /// marks inputs that receive no gradient (integer-like or constant).
    fn backward(&self, grad: &Tensor) -> Result<Vec<Option<Tensor>>>;

    /// Bytes retained for the backward pass.
    fn saved_bytes(&self) -> usize;
}

#[derive(Debug)]
struct Node {
    op: Option<Box<dyn Op>>,
    inputs: Vec<NodeId>,
    value: Tensor,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    mode: Mode,
    checks: bool,
}

/// Gradients of a backward pass, keyed by leaf node id.
#[derive(Debug, Default)]
pub struct GradMap {
    grads: HashMap<NodeId, Tensor>,
}

impl GradMap {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(&id)
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor> {
        self.grads.remove(&id)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::with_mode(Mode::Fused)
    }

    pub fn with_mode(mode: Mode) -> Self {
        Tape {
            nodes: Vec::new(),
            mode,
            checks: crate::debug_checks_enabled(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Turns the per-node finiteness checks on or off (they default to the
    /// `RESNET_DEBUG_CHECKS` environment variable).
    pub fn set_debug_checks(&mut self, on: bool) {
        self.checks = on;
    }

    pub fn debug_checks(&self) -> bool {
        self.checks
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op: None,
            inputs: Vec::new(),
            value,
            requires_grad,
        });
        self.nodes.len() - 1
    }

    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.leaf(value, false)
    }

    /// Appends a node computed by `op` from `inputs`.
    pub fn record(&mut self, op: Box<dyn Op>, inputs: &[NodeId], output: Tensor) -> Result<NodeId> {
        if let Some(&bad) = inputs.iter().find(|&&id| id >= self.nodes.len()) {
            return Err(Error::Structural(format!(
                "{} references node {bad} but the tape holds {} nodes",
                op.name(),
                self.nodes.len()
            )));
        }
        if self.checks && !output.is_finite() {
            return Err(Error::NonFinite(format!("output of {}", op.name())));
        }
        let requires_grad = inputs.iter().any(|&id| self.nodes[id].requires_grad);
        self.nodes.push(Node {
            op: Some(op),
            inputs: inputs.to_vec(),
            value: output,
            requires_grad,
        });
        Ok(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id].value.shape()
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id].requires_grad
    }

    pub fn op_name(&self, id: NodeId) -> Option<&'static str> {
        self.nodes[id].op.as_ref().map(|op| op.name())
    }

    /// Total bytes held by node ops for the backward pass.
    pub fn saved_bytes(&self) -> usize {
        self.nodes
            .iter()
            .filter_map(|n| n.op.as_ref())
            .map(|op| op.saved_bytes())
            .sum()
    }

    /// Backpropagates from a scalar root.
    pub fn backward(&self, root: NodeId) -> Result<GradMap> {
        self.check_id(root)?;
        let value = &self.nodes[root].value;
        if value.numel() != 1 {
            return Err(Error::contract(format!(
                "backward from non-scalar node of shape {:?} needs a seed gradient",
                value.shape()
            )));
        }
        self.backward_with_seed(root, Tensor::full(value.shape(), 1.0))
    }

    pub fn backward_with_seed(&self, root: NodeId, seed: Tensor) -> Result<GradMap> {
        self.check_id(root)?;
        if seed.shape() != self.nodes[root].value.shape() {
            return Err(Error::shape(format!(
                "seed {:?} for node of shape {:?}",
                seed.shape(),
                self.nodes[root].value.shape()
            )));
        }
        let mut pending: Vec<Option<Tensor>> = vec![None; root + 1];
        pending[root] = Some(seed);
        let mut out = GradMap::default();
        for id in (0..=root).rev() {
            let Some(grad) = pending[id].take() else {
                continue;
            };
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(op) = &node.op else {
                out.grads.insert(id, grad);
                continue;
            };
            let input_grads = op.backward(&grad)?;
            debug_assert_eq!(input_grads.len(), node.inputs.len(), "{}", op.name());
            for (&input, g) in node.inputs.iter().zip(input_grads) {
                let Some(g) = g else { continue };
                if !self.nodes[input].requires_grad {
                    continue;
                }
                if g.shape() != self.nodes[input].value.shape() {
                    return Err(Error::shape(format!(
                        "{} produced gradient {:?} for input of shape {:?}",
                        op.name(),
                        g.shape(),
                        self.nodes[input].value.shape()
                    )));
                }
                pending[input] = Some(match pending[input].take() {
                    None => g,
                    Some(acc) => acc.zip_map(&g, |a, b| a + b)?,
                });
            }
        }
        Ok(out)
    }

    fn check_id(&self, id: NodeId) -> Result<()> {
        if id >= self.nodes.len() {
            return Err(Error::Structural(format!(
                "node {id} not on tape of length {}",
                self.nodes.len()
            )));
        }
        Ok(())
    }
}

pub(crate) fn bytes_of(tensors: &[&Tensor]) -> usize {
    tensors.iter().map(|t| t.bytes()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_assigns_sequential_ids() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::scalar(1.0), true);
        assert_eq!(a, 0);
        let b = tape.leaf(Tensor::scalar(2.0), true);
        assert_eq!(b, 1);
        let before = tape.len();
        tape.add(a, b).unwrap();
        assert_eq!(tape.len(), before + 1);
    }

    #[test]
    fn unknown_input_is_structural_error() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::scalar(1.0), true);
        let err = tape
            .record(Box::new(elementary::Neg), &[a + 7], Tensor::scalar(0.0))
            .unwrap_err();
        assert!(matches!(err, Error::Structural(_)));
    }

    #[test]
    fn gradient_of_leaf_is_one() {
        let mut tape = Tape::new();
        let a = tape.param(Tensor::scalar(3.0));
        let grads = tape.backward(a).unwrap();
        assert_eq!(grads.get(a).unwrap().data(), &[1.0]);
    }

    #[test]
    fn fan_out_accumulates() {
        let mut tape = Tape::new();
        let a = tape.param(Tensor::scalar(3.0));
        let s = tape.add(a, a).unwrap();
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.get(a).unwrap().data(), &[2.0]);
    }

    #[test]
    fn non_scalar_root_needs_seed() {
        let mut tape = Tape::new();
        let a = tape.param(Tensor::vector(vec![1.0, 2.0]));
        let b = tape.scale(a, 2.0).unwrap();
        assert!(matches!(tape.backward(b), Err(Error::Contract(_))));
        let g = tape
            .backward_with_seed(b, Tensor::vector(vec![1.0, 1.0]))
            .unwrap();
        assert_eq!(g.get(a).unwrap().data(), &[2.0, 2.0]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::new();
        let a = tape.param(Tensor::scalar(3.0));
        let k = tape.constant(Tensor::scalar(4.0));
        let p = tape.mul(a, k).unwrap();
        let g = tape.backward(p).unwrap();
        assert_eq!(g.get(a).unwrap().data(), &[4.0]);
        assert!(g.get(k).is_none());
    }
}
