//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied to [`Var`] handles. Nodes are
//! appended in evaluation order, so the tape is already topologically sorted
//! and [`Graph::backward`] simply walks it in reverse.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::rc::Rc;

use crate::element::Float;
use crate::error::{Result, TensorError};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Vector-Jacobian product of one node: receives the gradient of the node
/// output and a mask of which parents need a gradient, and returns one
/// optional gradient per parent.
pub type BackwardFn<T> = Box<dyn Fn(&Tensor<T>, &[bool]) -> Vec<Option<Tensor<T>>>>;

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Leaf {
    No,
    Input,
    Param(ParamId),
}

struct Node<T> {
    value: Rc<Tensor<T>>,
    parents: Vec<usize>,
    backward: Option<BackwardFn<T>>,
    requires_grad: bool,
    leaf: Leaf,
}

pub struct Graph<'p, T: Float> {
    params: &'p ParamStore<T>,
    nodes: RefCell<Vec<Node<T>>>,
    param_vars: RefCell<BTreeMap<ParamId, Var>>,
    grad_enabled: bool,
}

impl<'p, T: Float> Graph<'p, T> {
    /// A graph that records backward closures.
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Self {
            params,
            nodes: RefCell::new(Vec::new()),
            param_vars: RefCell::new(BTreeMap::new()),
            grad_enabled: true,
        }
    }

    /// A forward-only graph; nothing is differentiable.
    pub fn inference(params: &'p ParamStore<T>) -> Self {
        Self { grad_enabled: false, ..Self::new(params) }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn params(&self) -> &'p ParamStore<T> {
        self.params
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.borrow().len()
    }

    fn push_leaf(&self, value: Tensor<T>, leaf: Leaf) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = self.grad_enabled && leaf != Leaf::No;
        nodes.push(Node {
            value: Rc::new(value),
            parents: Vec::new(),
            backward: None,
            requires_grad,
            leaf,
        });
        Var(nodes.len() - 1)
    }

    /// A value that never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var {
        self.push_leaf(value, Leaf::No)
    }

    /// A leaf whose gradient is reported by [`Graph::backward`].
    pub fn input(&self, value: Tensor<T>) -> Var {
        self.push_leaf(value, Leaf::Input)
    }

    /// The leaf bound to a stored parameter. Repeated calls with the same id
    /// return the same [`Var`], so shared weights accumulate one gradient.
    pub fn param(&self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.borrow().get(&id) {
            return v;
        }
        let v = self.push_leaf(self.params.get(id).clone(), Leaf::Param(id));
        self.param_vars.borrow_mut().insert(id, v);
        v
    }

    /// Parameters bound to this graph so far.
    pub fn bound_params(&self) -> Vec<ParamId> {
        self.param_vars.borrow().keys().copied().collect()
    }

    pub fn value(&self, v: Var) -> Rc<Tensor<T>> {
        Rc::clone(&self.nodes.borrow()[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    /// Records a new node computed from `parents`.
    ///
    /// `backward` is only kept when at least one parent needs a gradient.
    pub fn op(
        &self,
        value: Tensor<T>,
        parents: &[Var],
        backward: impl Fn(&Tensor<T>, &[bool]) -> Vec<Option<Tensor<T>>> + 'static,
    ) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = self.grad_enabled && parents.iter().any(|p| nodes[p.0].requires_grad);
        nodes.push(Node {
            value: Rc::new(value),
            parents: parents.iter().map(|p| p.0).collect(),
            backward: if requires_grad { Some(Box::new(backward)) } else { None },
            requires_grad,
            leaf: Leaf::No,
        });
        Var(nodes.len() - 1)
    }

    /// Gradients of the scalar `loss` with respect to every parameter and
    /// input leaf it depends on.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.0];
        if root.value.len() != 1 {
            return Err(TensorError::NonScalarLoss(root.value.shape().to_vec()));
        }
        let mut out = Gradients { params: BTreeMap::new(), inputs: BTreeMap::new() };
        if !root.requires_grad {
            return Ok(out);
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(root.value.shape()));
        for i in (0..=loss.0).rev() {
            let Some(grad) = grads[i].take() else { continue };
            let node = &nodes[i];
            match node.leaf {
                Leaf::Param(id) => {
                    out.params.insert(id, grad);
                    continue;
                }
                Leaf::Input => {
                    out.inputs.insert(i, grad);
                    continue;
                }
                Leaf::No => {}
            }
            let Some(backward) = &node.backward else { continue };
            let needs: Vec<bool> = node.parents.iter().map(|&p| nodes[p].requires_grad).collect();
            let parent_grads = backward(&grad, &needs);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for ((&p, g), &need) in node.parents.iter().zip(parent_grads).zip(&needs) {
                let (Some(g), true) = (g, need) else { continue };
                debug_assert_eq!(g.shape(), nodes[p].value.shape(), "gradient shape for node {p}");
                match &mut grads[p] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(out)
    }
}

/// Result of [`Graph::backward`].
#[derive(Clone, Debug, Default)]
pub struct Gradients<T> {
    params: BTreeMap<ParamId, Tensor<T>>,
    inputs: BTreeMap<usize, Tensor<T>>,
}

impl<T: Float> Gradients<T> {
    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params.get(&id)
    }

    pub fn input(&self, v: Var) -> Option<&Tensor<T>> {
        self.inputs.get(&v.0)
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor<T>)> {
        self.params.iter().map(|(&k, v)| (k, v))
    }

    /// Global L2 norm over all parameter gradients.
    pub fn param_norm(&self) -> f64 {
        self.params
            .values()
            .flat_map(|t| t.data().iter())
            .map(|v| v.to_f64_lossy().powi(2))
            .sum::<f64>()
            .sqrt()
    }
}
