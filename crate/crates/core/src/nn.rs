//! Named parameter collections and the layer helpers the networks share.

use std::collections::BTreeMap;

use rand::Rng;

use crate::autodiff::{Conv2dSpec, Gradients, Tape, Var};
use crate::tensor::{Scalar, Tensor};

/// Ordered name → tensor map. Iteration order is the lexical order of names,
/// which keeps optimiser updates and checkpoints deterministic.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            tensors: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.values().all(Tensor::all_finite)
    }

    /// First parameter holding a NaN or infinity, if any.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.tensors
            .iter()
            .find(|(_, t)| !t.all_finite())
            .map(|(n, _)| n.as_str())
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    /// Parameters whose names start with `prefix`.
    pub fn subset(&self, prefix: &str) -> ParamStore<T> {
        ParamStore {
            tensors: self
                .tensors
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    pub fn extend(&mut self, other: ParamStore<T>) {
        self.tensors.extend(other.tensors);
    }
}

/// Parameters of a [`ParamStore`] placed on a tape.
pub struct Bound<'t, T: Scalar> {
    vars: BTreeMap<String, Var<'t, T>>,
}

impl<'t, T: Scalar> Bound<'t, T> {
    /// Binds every parameter as a gradient-receiving leaf.
    pub fn trainable(tape: &'t Tape<T>, store: &ParamStore<T>) -> Self {
        Self {
            vars: store.iter().map(|(k, v)| (k.clone(), tape.param(v.clone()))).collect(),
        }
    }

    /// Binds every parameter as a constant (inference or frozen networks).
    pub fn frozen(tape: &'t Tape<T>, store: &ParamStore<T>) -> Self {
        Self {
            vars: store.iter().map(|(k, v)| (k.clone(), tape.constant(v.clone()))).collect(),
        }
    }

    pub fn get(&self, name: &str) -> Var<'t, T> {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("parameter `{name}` is not bound"))
    }

    /// Replaces one binding, e.g. to differentiate w.r.t. a single tensor.
    pub fn with(mut self, name: &str, v: Var<'t, T>) -> Self {
        self.vars.insert(name.to_string(), v);
        self
    }

    pub fn try_get(&self, name: &str) -> Option<Var<'t, T>> {
        self.vars.get(name).copied()
    }

    pub fn grads(&self, g: &Gradients<T>) -> ParamStore<T> {
        ParamStore {
            tensors: self.vars.iter().map(|(k, &v)| (k.clone(), g.wrt(v))).collect(),
        }
    }

    /// `conv(x)` with `{name}.weight` and `{name}.bias`.
    pub fn conv(&self, name: &str, x: Var<'t, T>, spec: Conv2dSpec) -> Var<'t, T> {
        let w = self.get(&format!("{name}.weight"));
        let b = self.try_get(&format!("{name}.bias"));
        x.conv2d(w, b, spec)
    }

    /// Same-padded stride-1 convolution; kernel size read from the weight.
    pub fn conv_same(&self, name: &str, x: Var<'t, T>) -> Var<'t, T> {
        let k = self.get(&format!("{name}.weight")).value().dims4()[2];
        self.conv(name, x, Conv2dSpec::same(k))
    }

    /// Dense layer on `[N, F]` with `{name}.weight [F, O]` and `{name}.bias [1, O]`.
    pub fn linear(&self, name: &str, x: Var<'t, T>) -> Var<'t, T> {
        let w = self.get(&format!("{name}.weight"));
        let b = self.get(&format!("{name}.bias"));
        let xs = x.shape();
        let ws = w.shape();
        let y = x.reshape(&[1, xs[0], xs[1]]).bmm(w.reshape(&[1, ws[0], ws[1]]));
        y.reshape(&[xs[0], ws[1]]).add(b)
    }
}

/// Registers a convolution with uniform fan-in initialisation. With
/// `zero = true` both weight and bias start at zero.
pub fn init_conv<T: Scalar, R: Rng + ?Sized>(
    store: &mut ParamStore<T>,
    rng: &mut R,
    name: &str,
    cout: usize,
    cin: usize,
    kernel: usize,
    zero: bool,
) {
    let shape = [cout, cin, kernel, kernel];
    let weight = if zero {
        Tensor::zeros(&shape)
    } else {
        let bound = (3.0 / (cin * kernel * kernel) as f64).sqrt();
        Tensor::uniform(&shape, -bound, bound, rng)
    };
    store.insert(format!("{name}.weight"), weight);
    store.insert(format!("{name}.bias"), Tensor::zeros(&[cout]));
}

pub fn init_linear<T: Scalar, R: Rng + ?Sized>(
    store: &mut ParamStore<T>,
    rng: &mut R,
    name: &str,
    fan_in: usize,
    fan_out: usize,
) {
    let bound = (3.0 / fan_in as f64).sqrt();
    store.insert(format!("{name}.weight"), Tensor::uniform(&[fan_in, fan_out], -bound, bound, rng));
    store.insert(format!("{name}.bias"), Tensor::zeros(&[1, fan_out]));
}

/// Applies the same horizontal flip / quarter rotation to a `[1,C,H,W]`
/// tensor. `code` in `0..8`: bit 2 flips, bits 0–1 rotate by 90° steps.
pub fn dihedral<T: Scalar>(t: &Tensor<T>, code: u8) -> Tensor<T> {
    let [n, c, h, w] = t.dims4();
    let mut cur = t.clone();
    let (mut ch, mut cw) = (h, w);
    if code & 4 != 0 {
        let mut out = cur.clone();
        for p in 0..n * c {
            for y in 0..ch {
                for x in 0..cw {
                    out.data_mut()[(p * ch + y) * cw + x] = cur.data()[(p * ch + y) * cw + (cw - 1 - x)];
                }
            }
        }
        cur = out;
    }
    for _ in 0..(code & 3) {
        // rotate 90° clockwise
        let mut out = vec![T::ZERO; cur.len()];
        for p in 0..n * c {
            for y in 0..ch {
                for x in 0..cw {
                    let (ny, nx) = (x, ch - 1 - y);
                    out[(p * cw + ny) * ch + nx] = cur.data()[(p * ch + y) * cw + x];
                }
            }
        }
        std::mem::swap(&mut ch, &mut cw);
        cur = Tensor::new(&[n, c, ch, cw], out);
    }
    cur
}
