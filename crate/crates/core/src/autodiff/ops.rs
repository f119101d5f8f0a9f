//! Differentiable tensor operations.

use super::broadcast::{sum_to_shape, zip_broadcast};
use super::Var;
use crate::tensor::{Scalar, Tensor};

impl<'t, T: Scalar> Var<'t, T> {
    fn unary(
        self,
        f: impl Fn(T) -> T,
        // derivative given (input, output)
        df: impl Fn(T, T) -> T + 'static,
    ) -> Var<'t, T> {
        let out = self.value().map(f);
        self.tape.record(out, &[self], move |ctx| {
            let x = ctx.inputs[0].data();
            let y = ctx.output.data();
            let g: Vec<T> = ctx
                .grad
                .data()
                .iter()
                .enumerate()
                .map(|(i, &g)| g * df(x[i], y[i]))
                .collect();
            vec![Some(Tensor::new(ctx.inputs[0].shape(), g))]
        })
    }

    pub fn add(self, other: Var<'t, T>) -> Var<'t, T> {
        let out = zip_broadcast(&self.value(), &other.value(), |a, b| a + b);
        self.tape.record(out, &[self, other], |ctx| {
            vec![
                ctx.needs[0].then(|| sum_to_shape(ctx.grad, ctx.inputs[0].shape())),
                ctx.needs[1].then(|| sum_to_shape(ctx.grad, ctx.inputs[1].shape())),
            ]
        })
    }

    pub fn sub(self, other: Var<'t, T>) -> Var<'t, T> {
        let out = zip_broadcast(&self.value(), &other.value(), |a, b| a - b);
        self.tape.record(out, &[self, other], |ctx| {
            vec![
                ctx.needs[0].then(|| sum_to_shape(ctx.grad, ctx.inputs[0].shape())),
                ctx.needs[1].then(|| sum_to_shape(&ctx.grad.scale(-T::ONE), ctx.inputs[1].shape())),
            ]
        })
    }

    pub fn mul(self, other: Var<'t, T>) -> Var<'t, T> {
        let out = zip_broadcast(&self.value(), &other.value(), |a, b| a * b);
        self.tape.record(out, &[self, other], |ctx| {
            let (a, b) = (ctx.inputs[0], ctx.inputs[1]);
            vec![
                ctx.needs[0].then(|| sum_to_shape(&zip_broadcast(ctx.grad, b, |g, b| g * b), a.shape())),
                ctx.needs[1].then(|| sum_to_shape(&zip_broadcast(ctx.grad, a, |g, a| g * a), b.shape())),
            ]
        })
    }

    pub fn div(self, other: Var<'t, T>) -> Var<'t, T> {
        let out = zip_broadcast(&self.value(), &other.value(), |a, b| a / b);
        self.tape.record(out, &[self, other], |ctx| {
            let (a, b) = (ctx.inputs[0], ctx.inputs[1]);
            let ga = ctx.needs[0].then(|| sum_to_shape(&zip_broadcast(ctx.grad, b, |g, b| g / b), a.shape()));
            let gb = ctx.needs[1].then(|| {
                // d(a/b)/db = -(a/b)/b
                let gy = ctx.grad.zip_map(ctx.output, |g, y| -g * y);
                sum_to_shape(&zip_broadcast(&gy, b, |v, b| v / b), b.shape())
            });
            vec![ga, gb]
        })
    }

    pub fn scale(self, s: f64) -> Var<'t, T> {
        let s = T::from_f64(s);
        self.unary(move |x| x * s, move |_, _| s)
    }

    pub fn add_scalar(self, s: f64) -> Var<'t, T> {
        let s = T::from_f64(s);
        self.unary(move |x| x + s, |_, _| T::ONE)
    }

    /// `s - self`.
    pub fn rsub_scalar(self, s: f64) -> Var<'t, T> {
        let s = T::from_f64(s);
        self.unary(move |x| s - x, |_, _| -T::ONE)
    }

    pub fn square(self) -> Var<'t, T> {
        self.unary(|x| x * x, |x, _| x + x)
    }

    /// `1/√x`.
    pub fn rsqrt(self) -> Var<'t, T> {
        self.unary(|x| T::ONE / x.sqrt(), |x, y| -y / (x + x))
    }

    pub fn abs(self) -> Var<'t, T> {
        self.unary(
            |x| x.abs(),
            |x, _| {
                if x > T::ZERO {
                    T::ONE
                } else if x < T::ZERO {
                    -T::ONE
                } else {
                    T::ZERO
                }
            },
        )
    }

    pub fn sigmoid(self) -> Var<'t, T> {
        self.unary(|x| T::ONE / (T::ONE + (-x).exp()), |_, y| y * (T::ONE - y))
    }

    pub fn relu(self) -> Var<'t, T> {
        self.unary(
            |x| x.max(T::ZERO),
            |x, _| if x > T::ZERO { T::ONE } else { T::ZERO },
        )
    }

    /// SiLU `x·σ(x)`.
    pub fn silu(self) -> Var<'t, T> {
        self.unary(
            |x| x / (T::ONE + (-x).exp()),
            |x, _| {
                let s = T::ONE / (T::ONE + (-x).exp());
                s * (T::ONE + x * (T::ONE - s))
            },
        )
    }

    /// Clamp with a pass-through gradient inside `[lo, hi]` and zero outside.
    pub fn clamp(self, lo: f64, hi: f64) -> Var<'t, T> {
        let (lo, hi) = (T::from_f64(lo), T::from_f64(hi));
        self.unary(
            move |x| x.max(lo).min(hi),
            move |x, _| if x >= lo && x <= hi { T::ONE } else { T::ZERO },
        )
    }

    pub fn sum(self) -> Var<'t, T> {
        let out = Tensor::scalar(self.value().sum());
        self.tape.record(out, &[self], |ctx| {
            vec![Some(Tensor::full(ctx.inputs[0].shape(), ctx.grad.data()[0]))]
        })
    }

    pub fn mean(self) -> Var<'t, T> {
        let n = self.value().len() as f64;
        self.sum().scale(1.0 / n)
    }

    pub fn reshape(self, shape: &[usize]) -> Var<'t, T> {
        let out = (*self.value()).clone().reshape(shape);
        self.tape.record(out, &[self], |ctx| {
            vec![Some(ctx.grad.clone().reshape(ctx.inputs[0].shape()))]
        })
    }

    /// Channels `start..start+len` of a 4-D tensor.
    pub fn narrow_channels(self, start: usize, len: usize) -> Var<'t, T> {
        let out = self.value().narrow_channels(start, len);
        self.tape.record(out, &[self], move |ctx| {
            let [n, c, h, w] = ctx.inputs[0].dims4();
            let plane = h * w;
            let mut g = vec![T::ZERO; n * c * plane];
            for b in 0..n {
                let dst = (b * c + start) * plane;
                let src = b * len * plane;
                g[dst..dst + len * plane].copy_from_slice(&ctx.grad.data()[src..src + len * plane]);
            }
            vec![Some(Tensor::new(&[n, c, h, w], g))]
        })
    }

    /// Concatenation along the channel axis of 4-D tensors.
    pub fn cat_channels(parts: &[Var<'t, T>]) -> Var<'t, T> {
        let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let refs: Vec<&Tensor<T>> = values.iter().map(|v| &**v).collect();
        let out = Tensor::cat_channels(&refs);
        let widths: Vec<usize> = values.iter().map(|v| v.dims4()[1]).collect();
        parts[0].tape.record(out, parts, move |ctx| {
            let mut start = 0;
            widths
                .iter()
                .enumerate()
                .map(|(i, &c)| {
                    let g = ctx.needs[i].then(|| ctx.grad.narrow_channels(start, c));
                    start += c;
                    g
                })
                .collect()
        })
    }

    /// Mean over H and W: `[N,C,H,W] -> [N,C,1,1]`.
    pub fn global_avg_pool(self) -> Var<'t, T> {
        let x = self.value();
        let [n, c, h, w] = x.dims4();
        let plane = h * w;
        let inv = T::from_f64(1.0 / plane as f64);
        let out: Vec<T> = x.data().chunks(plane).map(|p| p.iter().copied().sum::<T>() * inv).collect();
        self.tape.record(Tensor::new(&[n, c, 1, 1], out), &[self], move |ctx| {
            let g: Vec<T> = ctx
                .grad
                .data()
                .iter()
                .flat_map(|&g| std::iter::repeat_n(g * inv, plane))
                .collect();
            vec![Some(Tensor::new(&[n, c, h, w], g))]
        })
    }

    /// Max over H and W: `[N,C,H,W] -> [N,C,1,1]`.
    pub fn global_max_pool(self) -> Var<'t, T> {
        let x = self.value();
        let [n, c, h, w] = x.dims4();
        let plane = h * w;
        let argmax: Vec<usize> = x.data().chunks(plane).map(first_argmax).collect();
        let out: Vec<T> = argmax
            .iter()
            .enumerate()
            .map(|(i, &j)| x.data()[i * plane + j])
            .collect();
        self.tape.record(Tensor::new(&[n, c, 1, 1], out), &[self], move |ctx| {
            let mut g = vec![T::ZERO; n * c * plane];
            for (i, &j) in argmax.iter().enumerate() {
                g[i * plane + j] = ctx.grad.data()[i];
            }
            vec![Some(Tensor::new(&[n, c, h, w], g))]
        })
    }

    /// Mean over channels: `[N,C,H,W] -> [N,1,H,W]`.
    pub fn channel_mean(self) -> Var<'t, T> {
        let x = self.value();
        let [n, c, h, w] = x.dims4();
        let plane = h * w;
        let inv = T::from_f64(1.0 / c as f64);
        let mut out = vec![T::ZERO; n * plane];
        for b in 0..n {
            for ch in 0..c {
                let src = &x.data()[(b * c + ch) * plane..(b * c + ch + 1) * plane];
                for (o, &v) in out[b * plane..(b + 1) * plane].iter_mut().zip(src) {
                    *o += v * inv;
                }
            }
        }
        self.tape.record(Tensor::new(&[n, 1, h, w], out), &[self], move |ctx| {
            let mut g = vec![T::ZERO; n * c * plane];
            for b in 0..n {
                let gb = &ctx.grad.data()[b * plane..(b + 1) * plane];
                for ch in 0..c {
                    for (d, &v) in g[(b * c + ch) * plane..(b * c + ch + 1) * plane].iter_mut().zip(gb) {
                        *d = v * inv;
                    }
                }
            }
            vec![Some(Tensor::new(&[n, c, h, w], g))]
        })
    }

    /// Max over channels: `[N,C,H,W] -> [N,1,H,W]`.
    pub fn channel_max(self) -> Var<'t, T> {
        let x = self.value();
        let [n, c, h, w] = x.dims4();
        let plane = h * w;
        let mut out = vec![T::ZERO; n * plane];
        let mut arg = vec![0usize; n * plane];
        for b in 0..n {
            for p in 0..plane {
                let mut best = x.data()[b * c * plane + p];
                let mut bi = 0;
                for ch in 1..c {
                    let v = x.data()[(b * c + ch) * plane + p];
                    if v > best {
                        best = v;
                        bi = ch;
                    }
                }
                out[b * plane + p] = best;
                arg[b * plane + p] = bi;
            }
        }
        self.tape.record(Tensor::new(&[n, 1, h, w], out), &[self], move |ctx| {
            let mut g = vec![T::ZERO; n * c * plane];
            for b in 0..n {
                for p in 0..plane {
                    g[(b * c + arg[b * plane + p]) * plane + p] = ctx.grad.data()[b * plane + p];
                }
            }
            vec![Some(Tensor::new(&[n, c, h, w], g))]
        })
    }

    /// Batched matrix product `[B,M,K] x [B,K,N] -> [B,M,N]`.
    pub fn bmm(self, other: Var<'t, T>) -> Var<'t, T> {
        let (a, b) = (self.value(), other.value());
        let (bs, m, k) = dims3(&a);
        let (bs2, k2, n) = dims3(&b);
        assert!(bs == bs2 && k == k2, "bmm shape mismatch {:?} x {:?}", a.shape(), b.shape());
        let mut out = vec![T::ZERO; bs * m * n];
        for i in 0..bs {
            unsafe {
                T::gemm(
                    m,
                    k,
                    n,
                    T::ONE,
                    a.data()[i * m * k..].as_ptr(),
                    k as isize,
                    1,
                    b.data()[i * k * n..].as_ptr(),
                    n as isize,
                    1,
                    T::ZERO,
                    out[i * m * n..].as_mut_ptr(),
                    n as isize,
                    1,
                );
            }
        }
        self.tape.record(Tensor::new(&[bs, m, n], out), &[self, other], move |ctx| {
            let (a, b, g) = (ctx.inputs[0].data(), ctx.inputs[1].data(), ctx.grad.data());
            let da = ctx.needs[0].then(|| {
                let mut da = vec![T::ZERO; bs * m * k];
                for i in 0..bs {
                    // dA = dC (m×n) · Bᵀ (n×k)
                    unsafe {
                        T::gemm(
                            m,
                            n,
                            k,
                            T::ONE,
                            g[i * m * n..].as_ptr(),
                            n as isize,
                            1,
                            b[i * k * n..].as_ptr(),
                            1,
                            n as isize,
                            T::ZERO,
                            da[i * m * k..].as_mut_ptr(),
                            k as isize,
                            1,
                        );
                    }
                }
                Tensor::new(&[bs, m, k], da)
            });
            let db = ctx.needs[1].then(|| {
                let mut db = vec![T::ZERO; bs * k * n];
                for i in 0..bs {
                    // dB = Aᵀ (k×m) · dC (m×n)
                    unsafe {
                        T::gemm(
                            k,
                            m,
                            n,
                            T::ONE,
                            a[i * m * k..].as_ptr(),
                            1,
                            k as isize,
                            g[i * m * n..].as_ptr(),
                            n as isize,
                            1,
                            T::ZERO,
                            db[i * k * n..].as_mut_ptr(),
                            n as isize,
                            1,
                        );
                    }
                }
                Tensor::new(&[bs, k, n], db)
            });
            vec![da, db]
        })
    }

    /// Swaps the last two axes of a 3-D tensor.
    pub fn transpose_last2(self) -> Var<'t, T> {
        let out = transpose3(&self.value());
        self.tape.record(out, &[self], |ctx| vec![Some(transpose3(ctx.grad))])
    }

    /// Softmax over the last axis.
    pub fn softmax_last(self) -> Var<'t, T> {
        let x = self.value();
        let last = *x.shape().last().expect("softmax on a scalar");
        let mut out = Vec::with_capacity(x.len());
        for row in x.data().chunks(last) {
            let m = row.iter().copied().fold(row[0], |a, b| a.max(b));
            let e: Vec<T> = row.iter().map(|&v| (v - m).exp()).collect();
            let s: T = e.iter().copied().sum();
            out.extend(e.into_iter().map(|v| v / s));
        }
        self.tape.record(Tensor::new(x.shape(), out), &[self], move |ctx| {
            let mut g = Vec::with_capacity(ctx.grad.len());
            for (gr, yr) in ctx.grad.data().chunks(last).zip(ctx.output.data().chunks(last)) {
                let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                g.extend(gr.iter().zip(yr).map(|(&gi, &yi)| yi * (gi - dot)));
            }
            vec![Some(Tensor::new(ctx.inputs[0].shape(), g))]
        })
    }

    /// Nearest-neighbour 2x upsampling of a 4-D tensor.
    pub fn upsample2(self) -> Var<'t, T> {
        let x = self.value();
        let [n, c, h, w] = x.dims4();
        let mut out = vec![T::ZERO; n * c * 4 * h * w];
        for (pi, plane) in x.data().chunks(h * w).enumerate() {
            let dst = &mut out[pi * 4 * h * w..(pi + 1) * 4 * h * w];
            for y in 0..2 * h {
                for xx in 0..2 * w {
                    dst[y * 2 * w + xx] = plane[(y / 2) * w + xx / 2];
                }
            }
        }
        self.tape.record(Tensor::new(&[n, c, 2 * h, 2 * w], out), &[self], move |ctx| {
            let mut g = vec![T::ZERO; n * c * h * w];
            for (pi, gp) in ctx.grad.data().chunks(4 * h * w).enumerate() {
                let dst = &mut g[pi * h * w..(pi + 1) * h * w];
                for y in 0..2 * h {
                    for xx in 0..2 * w {
                        dst[(y / 2) * w + xx / 2] += gp[y * 2 * w + xx];
                    }
                }
            }
            vec![Some(Tensor::new(&[n, c, h, w], g))]
        })
    }
}

fn first_argmax<T: Scalar>(xs: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate() {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

fn dims3<T: Scalar>(t: &Tensor<T>) -> (usize, usize, usize) {
    assert_eq!(t.ndim(), 3, "expected a 3-D tensor, got {:?}", t.shape());
    (t.shape()[0], t.shape()[1], t.shape()[2])
}

fn transpose3<T: Scalar>(t: &Tensor<T>) -> Tensor<T> {
    let (b, m, n) = dims3(t);
    let mut out = vec![T::ZERO; b * m * n];
    for i in 0..b {
        for r in 0..m {
            for c in 0..n {
                out[(i * n + c) * m + r] = t.data()[(i * m + r) * n + c];
            }
        }
    }
    Tensor::new(&[b, n, m], out)
}
