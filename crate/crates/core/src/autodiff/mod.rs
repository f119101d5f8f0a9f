//! A small reverse-mode automatic differentiation tape.
//!
//! Every forward operation records its output value and a backward closure on
//! a [`Tape`]. [`Tape::backward`] then walks the records in reverse order and
//! accumulates gradients for every node that transitively depends on a
//! parameter. The same code runs in `f32` for training and in `f64` for the
//! finite-difference checks.

mod broadcast;
mod conv;
mod ops;

use std::cell::RefCell;
use std::rc::Rc;

use crate::tensor::{Scalar, Tensor};

pub use broadcast::{broadcast_shape, sum_to_shape};
pub use conv::{conv2d_forward, Conv2dSpec};

/// Inputs handed to a backward closure.
pub struct BackwardCtx<'a, T> {
    pub grad: &'a Tensor<T>,
    pub inputs: &'a [&'a Tensor<T>],
    pub output: &'a Tensor<T>,
    /// Whether each input requires a gradient.
    pub needs: &'a [bool],
}

type BackwardFn<T> = Box<dyn Fn(&BackwardCtx<'_, T>) -> Vec<Option<Tensor<T>>>>;

struct Node<T> {
    value: Rc<Tensor<T>>,
    parents: Vec<usize>,
    backward: Option<BackwardFn<T>>,
    requires_grad: bool,
}

/// Records operations for one forward/backward pass.
pub struct Tape<T: Scalar> {
    nodes: RefCell<Vec<Node<T>>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T: Scalar> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T: Scalar> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

/// A linear operator with a known adjoint, usable as a differentiable op.
pub trait LinearMap<T: Scalar> {
    fn apply(&self, x: &Tensor<T>) -> Tensor<T>;
    /// Applies the transpose of the operator to an output-shaped gradient.
    fn adjoint(&self, g: &Tensor<T>, input_shape: &[usize]) -> Tensor<T>;
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
        }
    }

    /// A value that never receives a gradient (data, targets, noise).
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push_node(value, Vec::new(), None, false)
    }

    /// A leaf that receives a gradient.
    pub fn param(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push_node(value, Vec::new(), None, true)
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push_node(
        &self,
        value: Tensor<T>,
        parents: Vec<usize>,
        backward: Option<BackwardFn<T>>,
        requires_grad: bool,
    ) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            value: Rc::new(value),
            parents,
            backward,
            requires_grad,
        });
        Var { tape: self, id }
    }

    pub(crate) fn record(
        &self,
        value: Tensor<T>,
        parents: &[Var<'_, T>],
        backward: impl Fn(&BackwardCtx<'_, T>) -> Vec<Option<Tensor<T>>> + 'static,
    ) -> Var<'_, T> {
        let requires_grad = {
            let nodes = self.nodes.borrow();
            parents.iter().any(|p| nodes[p.id].requires_grad)
        };
        let ids = parents.iter().map(|p| p.id).collect();
        let bw: Option<BackwardFn<T>> = if requires_grad {
            Some(Box::new(backward))
        } else {
            None
        };
        self.push_node(value, ids, bw, requires_grad)
    }

    fn value_of(&self, id: usize) -> Rc<Tensor<T>> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    /// Back-propagates from a single-element `loss`.
    pub fn backward(&self, loss: Var<'_, T>) -> Gradients<T> {
        let nodes = self.nodes.borrow();
        assert_eq!(nodes[loss.id].value.len(), 1, "backward needs a scalar loss");
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; nodes.len()];
        grads[loss.id] = Some(Tensor::full(nodes[loss.id].value.shape(), T::ONE));

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            let Some(bw) = node.backward.as_ref() else {
                continue;
            };
            let Some(g) = grads[id].take() else {
                continue;
            };
            let inputs: Vec<&Tensor<T>> = node.parents.iter().map(|&p| &*nodes[p].value).collect();
            let needs: Vec<bool> = node.parents.iter().map(|&p| nodes[p].requires_grad).collect();
            let ctx = BackwardCtx {
                grad: &g,
                inputs: &inputs,
                output: &node.value,
                needs: &needs,
            };
            let parent_grads = bw(&ctx);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (&p, pg) in node.parents.iter().zip(parent_grads) {
                if !nodes[p].requires_grad {
                    continue;
                }
                let Some(pg) = pg else { continue };
                debug_assert_eq!(pg.shape(), nodes[p].value.shape(), "gradient shape mismatch");
                match &mut grads[p] {
                    Some(acc) => acc.add_assign(&pg),
                    slot @ None => *slot = Some(pg),
                }
            }
        }
        Gradients { grads }
    }
}

/// Gradients produced by [`Tape::backward`], indexed by variable.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of a leaf variable, zeros if it did not influence the loss.
    pub fn wrt(&self, v: Var<'_, T>) -> Tensor<T> {
        match self.grads.get(v.id).and_then(|g| g.as_ref()) {
            Some(g) => g.clone(),
            None => Tensor::zeros(v.value().shape()),
        }
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn value(&self) -> Rc<Tensor<T>> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    /// Single-element value as `f64`.
    pub fn item(&self) -> f64 {
        let v = self.value();
        assert_eq!(v.len(), 1, "item() on a tensor of shape {:?}", v.shape());
        v.data()[0].to_f64()
    }

    pub fn apply_linear(self, op: Rc<dyn LinearMap<T>>) -> Var<'t, T> {
        let out = op.apply(&self.value());
        self.tape.record(out, &[self], move |ctx| {
            vec![Some(op.adjoint(ctx.grad, ctx.inputs[0].shape()))]
        })
    }
}

pub mod gradcheck {
    //! Central-difference gradient checking for `f64` graphs.

    use super::*;
    use rand::seq::index::sample;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Finite-difference step.
    pub const STEP: f64 = 1e-4;

    /// Compares analytic gradients of the scalar built by `f` against central
    /// differences on `n_samples` randomly chosen entries of every input.
    /// Returns the worst relative error seen.
    pub fn max_rel_error<F>(inputs: &[Tensor<f64>], f: F, n_samples: usize, seed: u64) -> f64
    where
        F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Var<'t, f64>,
    {
        let tape = Tape::new();
        let vars: Vec<_> = inputs.iter().map(|t| tape.param(t.clone())).collect();
        let loss = f(&tape, &vars);
        let grads = tape.backward(loss);
        let analytic: Vec<Tensor<f64>> = vars.iter().map(|&v| grads.wrt(v)).collect();

        let eval = |ins: &[Tensor<f64>]| -> f64 {
            let tape = Tape::new();
            let vars: Vec<_> = ins.iter().map(|t| tape.param(t.clone())).collect();
            f(&tape, &vars).item()
        };

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = 0.0f64;
        for (i, input) in inputs.iter().enumerate() {
            let n = input.len().min(n_samples);
            for j in sample(&mut rng, input.len(), n) {
                let mut plus = inputs.to_vec();
                plus[i].data_mut()[j] += STEP;
                let mut minus = inputs.to_vec();
                minus[i].data_mut()[j] -= STEP;
                let numeric = (eval(&plus) - eval(&minus)) / (2.0 * STEP);
                let a = analytic[i].data()[j];
                let denom = a.abs().max(numeric.abs()).max(1e-6);
                worst = worst.max((a - numeric).abs() / denom);
            }
        }
        worst
    }
}
