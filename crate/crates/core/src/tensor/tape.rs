use std::cell::RefCell;
use std::rc::Rc;

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Computes input gradients from the output gradient. The flag slice says
/// which inputs are tracked; untracked slots may return `None`.
pub(crate) type BackwardFn<T> = Box<dyn Fn(&[T], &[bool]) -> Vec<Option<Vec<T>>>>;

struct Node<T> {
    inputs: Vec<Option<usize>>,
    backward: Option<BackwardFn<T>>,
}

/// Recording of one forward pass. Cheap to clone (shared handle).
///
/// Nodes are appended in execution order, so the recording order is a
/// topological order and backward simply walks it in reverse.
pub struct Tape<T> {
    nodes: Rc<RefCell<Vec<Node<T>>>>,
}

impl<T> Clone for Tape<T> {
    fn clone(&self) -> Self {
        Self {
            nodes: self.nodes.clone(),
        }
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Rc::new(RefCell::new(Vec::new())),
        }
    }

    /// Registers a tensor as a differentiable leaf.
    pub fn leaf(&self, value: Tensor<T>) -> Var<T> {
        let id = self.push(Node {
            inputs: Vec::new(),
            backward: None,
        });
        Var {
            value,
            node: Some((self.clone(), id)),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, node: Node<T>) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        nodes.len() - 1
    }

    fn same(&self, other: &Tape<T>) -> bool {
        Rc::ptr_eq(&self.nodes, &other.nodes)
    }
}

/// A tensor value, optionally tracked on a tape.
pub struct Var<T> {
    value: Tensor<T>,
    node: Option<(Tape<T>, usize)>,
}

impl<T> Clone for Var<T> {
    fn clone(&self) -> Self {
        Self {
            value: self.value.clone(),
            node: self.node.clone(),
        }
    }
}

impl<T: Scalar> std::fmt::Debug for Var<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var(node={:?}, {:?})", self.node_id(), self.value)
    }
}

impl<T: Scalar> Var<T> {
    /// An untracked value; operations on constants only record nodes when
    /// another input is tracked.
    pub fn constant(value: Tensor<T>) -> Self {
        Self { value, node: None }
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn data(&self) -> &[T] {
        self.value.data()
    }

    pub fn numel(&self) -> usize {
        self.value.numel()
    }

    pub fn requires_grad(&self) -> bool {
        self.node.is_some()
    }

    pub fn node_id(&self) -> Option<usize> {
        self.node.as_ref().map(|(_, id)| *id)
    }

    pub fn tape(&self) -> Option<&Tape<T>> {
        self.node.as_ref().map(|(t, _)| t)
    }

    /// Same value, no longer tracked.
    pub fn detach(&self) -> Self {
        Self::constant(self.value.clone())
    }

    /// Records `value` as the result of an operation over `inputs`.
    pub(crate) fn record(
        value: Tensor<T>,
        inputs: &[&Var<T>],
        backward: impl Fn(&[T], &[bool]) -> Vec<Option<Vec<T>>> + 'static,
    ) -> Var<T> {
        let Some(tape) = inputs.iter().find_map(|v| v.tape()).cloned() else {
            return Var::constant(value);
        };
        let ids = inputs
            .iter()
            .map(|v| match &v.node {
                Some((t, id)) => {
                    assert!(t.same(&tape), "inputs recorded on different tapes");
                    Some(*id)
                }
                None => None,
            })
            .collect();
        let id = tape.push(Node {
            inputs: ids,
            backward: Some(Box::new(backward)),
        });
        Var {
            value,
            node: Some((tape, id)),
        }
    }

    /// Reverse sweep from this scalar. Leaves that did not participate get
    /// zero gradients from [`Gradients::get`].
    pub fn backward(&self) -> Result<Gradients<T>> {
        if self.numel() != 1 {
            return Err(Error::NonScalarLoss(self.shape().to_vec()));
        }
        let Some((tape, root)) = &self.node else {
            return Ok(Gradients {
                tape: None,
                grads: Vec::new(),
            });
        };
        let nodes = tape.nodes.borrow();
        let mut grads: Vec<Option<Vec<T>>> = Vec::new();
        grads.resize_with(root + 1, || None);
        grads[*root] = Some(vec![T::one()]);
        for id in (0..=*root).rev() {
            let node = &nodes[id];
            let Some(backward) = &node.backward else {
                continue;
            };
            let Some(g) = grads[id].take() else {
                continue;
            };
            let needs: Vec<bool> = node.inputs.iter().map(Option::is_some).collect();
            let input_grads = backward(&g, &needs);
            debug_assert_eq!(input_grads.len(), node.inputs.len());
            for (slot, gin) in node.inputs.iter().zip(input_grads) {
                let (Some(j), Some(gin)) = (slot, gin) else {
                    continue;
                };
                match &mut grads[*j] {
                    Some(acc) => {
                        for (a, b) in acc.iter_mut().zip(gin) {
                            *a += b;
                        }
                    }
                    empty => *empty = Some(gin),
                }
            }
        }
        Ok(Gradients {
            tape: Some(tape.clone()),
            grads,
        })
    }
}

/// Gradients of one backward sweep, keyed by leaf.
pub struct Gradients<T> {
    tape: Option<Tape<T>>,
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient with respect to `var`, zeros when it did not contribute.
    pub fn get(&self, var: &Var<T>) -> Tensor<T> {
        self.try_get(var).unwrap_or_else(|| Tensor::zeros(var.shape()))
    }

    pub fn try_get(&self, var: &Var<T>) -> Option<Tensor<T>> {
        let (tape, id) = var.node.as_ref()?;
        if !self.tape.as_ref().is_some_and(|t| t.same(tape)) {
            return None;
        }
        let g = self.grads.get(*id)?.as_ref()?;
        Some(Tensor::from_parts(var.shape().to_vec(), g.clone()))
    }
}
