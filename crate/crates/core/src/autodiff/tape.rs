//! Reverse-mode tape over hand-differentiated primitives.

use std::borrow::Cow;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// A differentiable operation. `forward` may stash intermediates in `self`
/// for use by `vjp`.
pub trait Primitive<T: Real> {
    fn name(&self) -> &'static str;

    fn forward(&mut self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>>;

    /// Gradients with respect to each input; entries whose `needs` flag is
    /// false may be `None`.
    fn vjp(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        upstream: &Tensor<T>,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Kind<T: Real> {
    Constant,
    Param(usize),
    Op(Box<dyn Primitive<T> + Send + 'static>, Vec<usize>),
}

struct Node<'a, T: Real> {
    kind: Kind<T>,
    value: Cow<'a, Tensor<T>>,
    requires_grad: bool,
}

/// One tape per forward pass; parameter values are borrowed, not copied.
pub struct Tape<'a, T: Real> {
    nodes: Vec<Node<'a, T>>,
}

/// Parameter-slot gradients produced by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    pub slots: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, slot: usize) -> Option<&Tensor<T>> {
        self.slots.get(slot).and_then(|g| g.as_ref())
    }
}

impl<T: Real> Default for Tape<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a, T: Real> Tape<'a, T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, kind: Kind<T>, value: Cow<'a, Tensor<T>>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            kind,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(Kind::Constant, Cow::Owned(value), false)
    }

    pub fn constant_ref(&mut self, value: &'a Tensor<T>) -> Var {
        self.push(Kind::Constant, Cow::Borrowed(value), false)
    }

    /// A leaf whose gradient is reported under `slot`.
    pub fn param(&mut self, slot: usize, value: &'a Tensor<T>) -> Var {
        self.push(Kind::Param(slot), Cow::Borrowed(value), true)
    }

    pub fn param_owned(&mut self, slot: usize, value: Tensor<T>) -> Var {
        self.push(Kind::Param(slot), Cow::Owned(value), true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn apply<P: Primitive<T> + Send + 'static>(&mut self, mut op: P, inputs: &[Var]) -> Result<Var> {
        let out = {
            let vals: Vec<&Tensor<T>> = inputs.iter().map(|v| &*self.nodes[v.0].value).collect();
            op.forward(&vals)?
        };
        if !out.all_finite() {
            return Err(Error::non_finite("diff_engine", format!("output of {} (node {})", op.name(), self.nodes.len())));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let ids = inputs.iter().map(|v| v.0).collect();
        Ok(self.push(Kind::Op(Box::new(op), ids), Cow::Owned(out), requires_grad))
    }

    /// Names of recorded operations in application order.
    pub fn op_names(&self) -> Vec<&'static str> {
        self.nodes
            .iter()
            .filter_map(|n| match &n.kind {
                Kind::Op(op, _) => Some(op.name()),
                _ => None,
            })
            .collect()
    }

    /// Back-propagates `seed · ∂root` to every parameter slot.
    pub fn backward(&self, root: Var, seed: &Tensor<T>) -> Result<Gradients<T>> {
        if seed.shape() != self.value(root).shape() {
            return Err(Error::dim("backward seed", self.value(root).len(), seed.len()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=root.0).map(|_| None).collect();
        grads[root.0] = Some(seed.clone());
        let mut slots: Vec<Option<Tensor<T>>> = Vec::new();
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            match &node.kind {
                Kind::Constant => {}
                Kind::Param(slot) => {
                    if slots.len() <= *slot {
                        slots.resize(*slot + 1, None);
                    }
                    match &mut slots[*slot] {
                        Some(acc) => acc.add_assign(&g),
                        s @ None => *s = Some(g),
                    }
                }
                Kind::Op(op, inputs) => {
                    let vals: Vec<&Tensor<T>> = inputs.iter().map(|&j| &*self.nodes[j].value).collect();
                    let needs: Vec<bool> = inputs.iter().map(|&j| self.nodes[j].requires_grad).collect();
                    let local = op.vjp(&vals, &node.value, &g, &needs)?;
                    for ((&j, gj), &need) in inputs.iter().zip(local).zip(&needs) {
                        let (Some(gj), true) = (gj, need) else { continue };
                        if gj.shape() != self.nodes[j].value.shape() {
                            return Err(Error::dim(op.name(), self.nodes[j].value.len(), gj.len()));
                        }
                        match &mut grads[j] {
                            Some(acc) => acc.add_assign(&gj),
                            s @ None => *s = Some(gj),
                        }
                    }
                }
            }
        }
        Ok(Gradients { slots })
    }

    /// Backward from a scalar root with seed 1.
    pub fn backward_scalar(&self, root: Var) -> Result<Gradients<T>> {
        self.backward(root, &Tensor::scalar(T::one()))
    }
}
