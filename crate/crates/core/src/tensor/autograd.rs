use std::cell::{Ref, RefCell};
use std::fmt;
use std::rc::Rc;

use super::Tensor;
use crate::error::{Error, Result};
use crate::real::Real;

/// Adjoint of one recorded op: receives the output gradient and a mask of
/// which parents need a gradient, returns one entry per parent.
pub(crate) type BackwardFn<T> = Box<dyn Fn(&Tensor<T>, &[bool]) -> Vec<Option<Tensor<T>>>>;

struct Node<T: Real> {
    op: &'static str,
    value: Rc<Tensor<T>>,
    parents: Vec<usize>,
    requires_grad: bool,
    backward: Option<BackwardFn<T>>,
}

/// Ordered record of executed ops. Values are immutable once recorded, so
/// adjoint replay never observes later mutation.
///
/// A tape is single-owner (`!Send`); parameter tensors are copied onto it as
/// leaves for each forward pass.
pub struct Tape<T: Real = f32> {
    nodes: RefCell<Vec<Node<T>>>,
    leaf_grads: RefCell<Vec<Option<Tensor<T>>>>,
    grad_enabled: bool,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T: Real = f32> {
    pub(crate) tape: &'t Tape<T>,
    pub(crate) id: usize,
}

impl<T: Real> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            leaf_grads: RefCell::new(Vec::new()),
            grad_enabled: true,
        }
    }

    /// A tape that records values only; nothing on it requires a gradient.
    pub fn no_grad() -> Self {
        Tape {
            grad_enabled: false,
            ..Self::new()
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn clear(&mut self) {
        self.nodes.get_mut().clear();
        self.leaf_grads.get_mut().clear();
    }

    fn push(&self, node: Node<T>) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Trainable leaf.
    pub fn leaf(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(Node {
            op: "leaf",
            value: Rc::new(value),
            parents: Vec::new(),
            requires_grad: self.grad_enabled,
            backward: None,
        })
    }

    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(Node {
            op: "constant",
            value: Rc::new(value),
            parents: Vec::new(),
            requires_grad: false,
            backward: None,
        })
    }

    pub(crate) fn record<'t>(
        &'t self,
        op: &'static str,
        value: Tensor<T>,
        parents: &[Var<'t, T>],
        backward: impl Fn(&Tensor<T>, &[bool]) -> Vec<Option<Tensor<T>>> + 'static,
    ) -> Result<Var<'t, T>> {
        value.check_finite(op)?;
        for p in parents {
            self.owns(*p)?;
        }
        let requires_grad = self.grad_enabled && parents.iter().any(|p| p.requires_grad());
        Ok(self.push(Node {
            op,
            value: Rc::new(value),
            parents: parents.iter().map(|p| p.id).collect(),
            requires_grad,
            backward: requires_grad.then(|| Box::new(backward) as BackwardFn<T>),
        }))
    }

    fn owns(&self, v: Var<'_, T>) -> Result<()> {
        if std::ptr::eq(v.tape, self) {
            Ok(())
        } else {
            Err(Error::ForeignVar)
        }
    }

    /// Replays adjoints in reverse record order from a scalar `loss`,
    /// accumulating into the gradient buffers of every trainable leaf.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<()> {
        self.owns(loss)?;
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.len() != 1 {
            return Err(Error::NotScalar(root.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.id).map(|_| None).collect();
        grads[loss.id] = Some(Tensor::ones(root.value.shape()));

        let mut leaf_grads = self.leaf_grads.borrow_mut();
        if leaf_grads.len() < nodes.len() {
            leaf_grads.resize_with(nodes.len(), || None);
        }
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            match &node.backward {
                None => {
                    g.check_finite("backward")?;
                    match &mut leaf_grads[id] {
                        Some(acc) => acc.add_assign(&g),
                        slot @ None => *slot = Some(g),
                    }
                }
                Some(adjoint) => {
                    let needs: Vec<bool> = node
                        .parents
                        .iter()
                        .map(|&p| nodes[p].requires_grad)
                        .collect();
                    let pgrads = adjoint(&g, &needs);
                    debug_assert_eq!(pgrads.len(), node.parents.len(), "op {}", node.op);
                    for ((&p, pg), need) in node.parents.iter().zip(pgrads).zip(needs) {
                        let Some(pg) = pg else { continue };
                        if !need {
                            continue;
                        }
                        debug_assert_eq!(
                            pg.shape(),
                            nodes[p].value.shape(),
                            "adjoint of {} returned a mis-shaped gradient",
                            node.op
                        );
                        match &mut grads[p] {
                            Some(acc) => acc.add_assign(&pg),
                            slot @ None => *slot = Some(pg),
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Accumulated gradient of a leaf, if backward reached it.
    pub fn grad(&self, v: Var<'_, T>) -> Result<Option<Tensor<T>>> {
        self.owns(v)?;
        Ok(self.leaf_grads.borrow().get(v.id).cloned().flatten())
    }

    pub fn take_grad(&self, v: Var<'_, T>) -> Result<Option<Tensor<T>>> {
        self.owns(v)?;
        Ok(self
            .leaf_grads
            .borrow_mut()
            .get_mut(v.id)
            .and_then(Option::take))
    }

    pub fn zero_grads(&self) {
        self.leaf_grads.borrow_mut().iter_mut().for_each(|g| *g = None);
    }
}

impl<'t, T: Real> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor<T>> {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn with_value<R>(&self, f: impl FnOnce(&Tensor<T>) -> R) -> R {
        let nodes: Ref<'_, Vec<Node<T>>> = self.tape.nodes.borrow();
        f(&nodes[self.id].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.with_value(|v| v.shape().to_vec())
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    pub fn grad(&self) -> Option<Tensor<T>> {
        self.tape.grad(*self).ok().flatten()
    }
}
