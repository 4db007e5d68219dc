use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use crate::real::Real;
use crate::tensor::Tensor;

/// Maps the upstream gradient of a node onto gradients for its inputs.
///
/// The flag slice tells which inputs actually need a gradient so that
/// expensive terms (for example the input gradient of a first-layer
/// convolution) can be skipped.
pub type BackwardFn<T> = Box<dyn Fn(&Tensor<T>, &[bool]) -> Vec<Option<Tensor<T>>>>;

struct Node<T> {
    parents: Vec<Option<usize>>,
    backward: Option<BackwardFn<T>>,
}

/// Records operations for reverse-mode differentiation.
///
/// Values live in the [`Var`] handles; the tape only keeps the graph and the
/// backward closures (which capture whatever they need).
pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
    grad_enabled: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: RefCell::new(Vec::new()), grad_enabled: true }
    }

    /// A tape that records nothing; every op returns an untracked value.
    pub fn no_grad() -> Self {
        Self { nodes: RefCell::new(Vec::new()), grad_enabled: false }
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

    /// A differentiable leaf (parameter or input we want gradients for).
    pub fn leaf(&self, value: Tensor<T>) -> Var<'_, T> {
        let id = if self.grad_enabled {
            let mut nodes = self.nodes.borrow_mut();
            nodes.push(Node { parents: Vec::new(), backward: None });
            Some(nodes.len() - 1)
        } else {
            None
        };
        Var { tape: self, id, value: Rc::new(value) }
    }

    /// A value that never receives gradients.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        Var { tape: self, id: None, value: Rc::new(value) }
    }

    /// Registers the result of an operation.
    pub fn op<'t>(
        &'t self,
        value: Tensor<T>,
        inputs: &[&Var<'t, T>],
        backward: impl Fn(&Tensor<T>, &[bool]) -> Vec<Option<Tensor<T>>> + 'static,
    ) -> Var<'t, T> {
        for v in inputs {
            debug_assert!(std::ptr::eq(v.tape, self), "mixing vars from different tapes");
        }
        let tracked = self.grad_enabled && inputs.iter().any(|v| v.id.is_some());
        let id = if tracked {
            let mut nodes = self.nodes.borrow_mut();
            nodes.push(Node {
                parents: inputs.iter().map(|v| v.id).collect(),
                backward: Some(Box::new(backward)),
            });
            Some(nodes.len() - 1)
        } else {
            None
        };
        Var { tape: self, id, value: Rc::new(value) }
    }

    /// Reverse sweep from `root`, seeded with ones.
    ///
    /// Only leaf gradients are retained in the result.
    pub fn backward(&self, root: &Var<'_, T>) -> Gradients<T> {
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        let Some(root_id) = root.id else {
            return Gradients { grads };
        };
        grads[root_id] = Some(Tensor::ones(root.value.shape().to_vec()));
        for i in (0..=root_id).rev() {
            let node = &nodes[i];
            let Some(backward) = node.backward.as_ref() else {
                continue;
            };
            let Some(g) = grads[i].take() else {
                continue;
            };
            let need: Vec<bool> = node.parents.iter().map(|p| p.is_some()).collect();
            let parent_grads = backward(&g, &need);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (p, pg) in node.parents.iter().zip(parent_grads) {
                if let (Some(p), Some(pg)) = (p, pg) {
                    match &mut grads[*p] {
                        Some(acc) => acc.add_assign(&pg),
                        slot @ None => *slot = Some(pg),
                    }
                }
            }
        }
        Gradients { grads }
    }
}

/// Leaf gradients produced by [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, var: &Var<'_, T>) -> Option<&Tensor<T>> {
        var.id.and_then(|i| self.grads.get(i)).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, var: &Var<'_, T>) -> Option<Tensor<T>> {
        var.id.and_then(|i| self.grads.get_mut(i)).and_then(|g| g.take())
    }

    /// Gradient of `var`, or zeros of its shape when it did not influence the root.
    pub fn get_or_zeros(&self, var: &Var<'_, T>) -> Tensor<T> {
        self.get(var).cloned().unwrap_or_else(|| Tensor::zeros(var.shape().to_vec()))
    }
}

/// Handle to a value, optionally tracked on a [`Tape`].
#[derive(Clone)]
pub struct Var<'t, T> {
    tape: &'t Tape<T>,
    id: Option<usize>,
    value: Rc<Tensor<T>>,
}

impl<T: Real> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var").field("id", &self.id).field("shape", &self.value.shape()).finish()
    }
}

impl<'t, T: Real> Var<'t, T> {
    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn value_rc(&self) -> Rc<Tensor<T>> {
        Rc::clone(&self.value)
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn dims5(&self) -> (usize, usize, usize, usize, usize) {
        self.value.dims5()
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn is_tracked(&self) -> bool {
        self.id.is_some()
    }

    /// Same value, cut from the graph.
    pub fn detach(&self) -> Var<'t, T> {
        Var { tape: self.tape, id: None, value: Rc::clone(&self.value) }
    }

    /// A constant on the same tape.
    pub fn constant_like(&self, value: Tensor<T>) -> Var<'t, T> {
        self.tape.constant(value)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn untracked_ops_record_nothing() {
        let tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::ones([3]));
        let b = a.add(&a);
        assert!(!b.is_tracked());
        assert!(tape.is_empty());
    }

    #[test]
    fn gradient_accumulates_over_fan_out() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_vec([2], vec![1.0, 2.0]));
        let y = x.mul(&x).add(&x).sum_all();
        let g = tape.backward(&y);
        assert_eq!(g.get(&x).unwrap().data(), &[3.0, 5.0]);
    }

    #[test]
    fn no_grad_tape_stays_empty() {
        let tape = Tape::<f32>::no_grad();
        let x = tape.leaf(Tensor::ones([4]));
        let _ = x.relu().sum_all();
        assert!(tape.is_empty());
    }
}
