//! Tape-based reverse-mode automatic differentiation.
//!
//! Every operation applied to a [`Var`] is evaluated eagerly and appended to
//! the owning [`Tape`]. Because inputs always precede their consumers, the
//! node list is already topologically sorted and [`Tape::backward`] is a
//! single reverse sweep.

mod gradcheck;
mod ops;

use std::cell::RefCell;
use std::collections::hash_map::DefaultHasher;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use thiserror::Error;

use crate::scalar::Scalar;
use crate::tensor::{Tensor, TensorError};

pub use gradcheck::{gradcheck, gradcheck_with, GradcheckOptions, GradcheckReport, ParamCheck};
pub use ops::{Add, Concat, Contract, Mul, Norm2, Permute, Relu, Reshape, Scale, Sub, Sum};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AutodiffError {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("operation `{op}` mixes variables from different tapes")]
    CrossTape { op: &'static str },

    #[error("backward() needs an order-0 loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },

    #[error("variable belongs to a different tape")]
    ForeignVar,
}

pub type Result<T, E = AutodiffError> = std::result::Result<T, E>;

/// A differentiable primitive. `forward` may cache whatever `backward`
/// needs beyond the input and output values.
pub trait Primitive<T: Scalar>: fmt::Debug {
    fn name(&self) -> &'static str;

    fn forward(&mut self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>, TensorError>;

    /// Vector-Jacobian products for the inputs flagged in `needs`.
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad: &Tensor<T>,
        needs: &[bool],
    ) -> Vec<Option<Tensor<T>>>;

    /// Hash of the discrete branch decisions taken by `forward` (ReLU
    /// signs, pooling winners). Used to detect finite-difference steps that
    /// cross a kink.
    fn branch_signature(&self, _inputs: &[&Tensor<T>]) -> Option<u64> {
        None
    }
}

struct Node<T: Scalar> {
    op: Option<Box<dyn Primitive<T>>>,
    inputs: Vec<usize>,
    value: Rc<Tensor<T>>,
    requires_grad: bool,
}

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Append-only record of primitive applications. Single writer: a tape must
/// not be shared across threads while recording.
pub struct Tape<T: Scalar = f64> {
    id: u64,
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> fmt::Debug for Tape<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("id", &self.id).field("nodes", &self.len()).finish()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed), nodes: RefCell::new(Vec::new()) }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Registers a leaf value.
    pub fn leaf(&self, value: Tensor<T>, requires_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { op: None, inputs: Vec::new(), value: Rc::new(value), requires_grad });
        Var { tape: self, id: nodes.len() - 1 }
    }

    pub fn param(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf(value, true)
    }

    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf(value, false)
    }

    /// Evaluates `op` on the inputs and appends the result.
    pub fn record<'t>(&'t self, mut op: Box<dyn Primitive<T>>, inputs: &[Var<'t, T>]) -> Result<Var<'t, T>> {
        if inputs.iter().any(|v| !std::ptr::eq(v.tape, self)) {
            return Err(AutodiffError::CrossTape { op: op.name() });
        }
        let (values, requires_grad) = {
            let nodes = self.nodes.borrow();
            let values: Vec<Rc<Tensor<T>>> = inputs.iter().map(|v| Rc::clone(&nodes[v.id].value)).collect();
            let rg = inputs.iter().any(|v| nodes[v.id].requires_grad);
            (values, rg)
        };
        let refs: Vec<&Tensor<T>> = values.iter().map(|v| v.as_ref()).collect();
        let out = op.forward(&refs)?;
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            op: Some(op),
            inputs: inputs.iter().map(|v| v.id).collect(),
            value: Rc::new(out),
            requires_grad,
        });
        Ok(Var { tape: self, id: nodes.len() - 1 })
    }

    /// Names of the recorded primitives in recording order (`None` for leaves).
    pub fn op_names(&self) -> Vec<Option<&'static str>> {
        self.nodes.borrow().iter().map(|n| n.op.as_ref().map(|o| o.name())).collect()
    }

    /// Combined hash of every branch decision on the tape.
    pub fn branch_signature(&self) -> u64 {
        let nodes = self.nodes.borrow();
        let mut h = DefaultHasher::new();
        for (id, node) in nodes.iter().enumerate() {
            if let Some(op) = &node.op {
                let ins: Vec<&Tensor<T>> = node.inputs.iter().map(|&i| nodes[i].value.as_ref()).collect();
                if let Some(sig) = op.branch_signature(&ins) {
                    (id, sig).hash(&mut h);
                }
            }
        }
        h.finish()
    }

    /// Reverse sweep from an order-0 `loss`. Gradients are kept for leaves
    /// only; fan-out contributions accumulate by addition.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        if !std::ptr::eq(loss.tape, self) {
            return Err(AutodiffError::ForeignVar);
        }
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.order() != 0 {
            return Err(AutodiffError::NonScalarLoss { shape: root.value.shape().to_vec() });
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        if root.requires_grad {
            grads[loss.id] = Some(Tensor::scalar(T::one()));
        }
        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            let Some(op) = &node.op else { continue };
            let Some(g) = grads[id].take() else { continue };
            let needs: Vec<bool> = node.inputs.iter().map(|&i| nodes[i].requires_grad).collect();
            let ins: Vec<&Tensor<T>> = node.inputs.iter().map(|&i| nodes[i].value.as_ref()).collect();
            let contributions = op.backward(&ins, &node.value, &g, &needs);
            debug_assert_eq!(contributions.len(), node.inputs.len(), "{} backward arity", op.name());
            for ((&input, contribution), need) in node.inputs.iter().zip(contributions).zip(needs) {
                let Some(c) = contribution else { continue };
                if !need {
                    continue;
                }
                debug_assert_eq!(c.shape(), nodes[input].value.shape(), "{} gradient shape", op.name());
                match &mut grads[input] {
                    Some(acc) => acc.add_assign(&c).expect("gradient shapes agree"),
                    slot => *slot = Some(c),
                }
            }
        }
        Ok(Gradients { tape: self.id, grads })
    }
}

/// Leaf gradients produced by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients<T: Scalar> {
    tape: u64,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// d(loss)/d(var); `None` if `var` does not influence the loss or does
    /// not require gradients.
    pub fn get(&self, var: Var<'_, T>) -> Option<&Tensor<T>> {
        if var.tape.id != self.tape {
            return None;
        }
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, var: Var<'_, T>) -> Option<Tensor<T>> {
        if var.tape.id != self.tape {
            return None;
        }
        self.grads.get_mut(var.id).and_then(|g| g.take())
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T: Scalar = f64> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T: Scalar> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var(#{} on tape {})", self.id, self.tape.id)
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor<T>> {
        Rc::clone(&self.tape.nodes.borrow()[self.id].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    pub fn apply(&self, op: impl Primitive<T> + 'static, others: &[Var<'t, T>]) -> Result<Var<'t, T>> {
        let mut inputs = Vec::with_capacity(others.len() + 1);
        inputs.push(*self);
        inputs.extend_from_slice(others);
        self.tape.record(Box::new(op), &inputs)
    }

    fn unary(&self, op: impl Primitive<T> + 'static) -> Var<'t, T> {
        self.apply(op, &[]).expect("unary primitive on a live variable")
    }

    pub fn contract(&self, other: Var<'t, T>, axes_a: &[usize], axes_b: &[usize]) -> Result<Var<'t, T>> {
        self.apply(Contract::new(axes_a, axes_b), &[other])
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Var<'t, T>> {
        self.apply(Reshape::new(shape.into()), &[])
    }

    pub fn permute(&self, perm: &[usize]) -> Result<Var<'t, T>> {
        self.apply(Permute::new(perm), &[])
    }

    pub fn relu(&self) -> Var<'t, T> {
        self.unary(Relu)
    }

    pub fn add(&self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.apply(Add, &[other])
    }

    pub fn sub(&self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.apply(Sub, &[other])
    }

    pub fn mul(&self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.apply(Mul, &[other])
    }

    pub fn scale(&self, c: T) -> Var<'t, T> {
        self.unary(Scale(c))
    }

    pub fn sum(&self) -> Var<'t, T> {
        self.unary(Sum)
    }

    pub fn norm2(&self) -> Var<'t, T> {
        self.unary(Norm2)
    }

    /// Order-1 concatenation of the flattened inputs.
    pub fn concat(parts: &[Var<'t, T>]) -> Result<Var<'t, T>> {
        let first = parts.first().ok_or(TensorError::Geometry("concat of zero tensors".into()))?;
        first.tape.record(Box::new(Concat), parts)
    }
}
