//! 2-D convolution (cross-correlation) via im2col and GEMM.

use super::Var;
use crate::tensor::{Scalar, Tensor};

/// Stride and symmetric zero padding of a convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: usize,
    pub padding: usize,
}

impl Conv2dSpec {
    /// Stride 1 with "same" padding for an odd kernel.
    pub fn same(kernel: usize) -> Self {
        Self {
            stride: 1,
            padding: kernel / 2,
        }
    }

    fn out_dim(&self, input: usize, kernel: usize) -> usize {
        (input + 2 * self.padding - kernel) / self.stride + 1
    }
}

struct Geometry {
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    spec: Conv2dSpec,
}

impl Geometry {
    fn new(x: [usize; 4], wt: [usize; 4], spec: Conv2dSpec) -> Self {
        let [_, cin, h, w] = x;
        let [_, wcin, kh, kw] = wt;
        assert_eq!(cin, wcin, "conv2d: input has {cin} channels, kernel expects {wcin}");
        assert!(h + 2 * spec.padding >= kh && w + 2 * spec.padding >= kw);
        Self {
            cin,
            h,
            w,
            kh,
            kw,
            ho: spec.out_dim(h, kh),
            wo: spec.out_dim(w, kw),
            spec,
        }
    }

    fn k(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn p(&self) -> usize {
        self.ho * self.wo
    }

    /// Column matrix `[cin*kh*kw, ho*wo]` for one image.
    fn im2col<T: Scalar>(&self, x: &[T], col: &mut [T]) {
        let (s, pad) = (self.spec.stride as isize, self.spec.padding as isize);
        let p = self.p();
        for c in 0..self.cin {
            let plane = &x[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (c * self.kh + ky) * self.kw + kx;
                    let dst = &mut col[row * p..(row + 1) * p];
                    for oy in 0..self.ho {
                        let iy = oy as isize * s + ky as isize - pad;
                        let line = &mut dst[oy * self.wo..(oy + 1) * self.wo];
                        if iy < 0 || iy >= self.h as isize {
                            line.fill(T::ZERO);
                            continue;
                        }
                        let src = &plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for (ox, d) in line.iter_mut().enumerate() {
                            let ix = ox as isize * s + kx as isize - pad;
                            *d = if ix < 0 || ix >= self.w as isize {
                                T::ZERO
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im<T: Scalar>(&self, col: &[T], dx: &mut [T]) {
        let (s, pad) = (self.spec.stride as isize, self.spec.padding as isize);
        let p = self.p();
        for c in 0..self.cin {
            let plane = &mut dx[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (c * self.kh + ky) * self.kw + kx;
                    let src = &col[row * p..(row + 1) * p];
                    for oy in 0..self.ho {
                        let iy = oy as isize * s + ky as isize - pad;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let line = &mut plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for ox in 0..self.wo {
                            let ix = ox as isize * s + kx as isize - pad;
                            if ix >= 0 && ix < self.w as isize {
                                line[ix as usize] += src[oy * self.wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Plain (non-recording) convolution: `x [N,Cin,H,W]`, `weight [Cout,Cin,kh,kw]`,
/// optional `bias [Cout]`.
pub fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: Conv2dSpec,
) -> Tensor<T> {
    let [n, _, _, _] = x.dims4();
    let cout = weight.dims4()[0];
    let g = Geometry::new(x.dims4(), weight.dims4(), spec);
    let (k, p) = (g.k(), g.p());
    let in_sz = g.cin * g.h * g.w;
    let mut out = vec![T::ZERO; n * cout * p];
    let mut col = vec![T::ZERO; k * p];
    for b in 0..n {
        let xb = &x.data()[b * in_sz..(b + 1) * in_sz];
        let ob = &mut out[b * cout * p..(b + 1) * cout * p];
        if let Some(bias) = bias {
            for (co, chunk) in ob.chunks_mut(p).enumerate() {
                chunk.fill(bias.data()[co]);
            }
        }
        g.im2col(xb, &mut col);
        // SAFETY: all matrices are dense row-major buffers of the stated sizes.
        unsafe {
            T::gemm(
                cout,
                k,
                p,
                T::ONE,
                weight.data().as_ptr(),
                k as isize,
                1,
                col.as_ptr(),
                p as isize,
                1,
                if bias.is_some() { T::ONE } else { T::ZERO },
                ob.as_mut_ptr(),
                p as isize,
                1,
            );
        }
    }
    Tensor::new(&[n, cout, g.ho, g.wo], out)
}

fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    grad: &Tensor<T>,
    spec: Conv2dSpec,
    needs_x: bool,
    needs_w: bool,
) -> (Option<Tensor<T>>, Option<Tensor<T>>) {
    let [n, _, _, _] = x.dims4();
    let cout = weight.dims4()[0];
    let g = Geometry::new(x.dims4(), weight.dims4(), spec);
    let (k, p) = (g.k(), g.p());
    let in_sz = g.cin * g.h * g.w;
    let mut dx = needs_x.then(|| vec![T::ZERO; x.len()]);
    let mut dw = needs_w.then(|| vec![T::ZERO; weight.len()]);
    let mut col = vec![T::ZERO; k * p];
    for b in 0..n {
        let gb = &grad.data()[b * cout * p..(b + 1) * cout * p];
        if let Some(dw) = dw.as_mut() {
            g.im2col(&x.data()[b * in_sz..(b + 1) * in_sz], &mut col);
            // dW += dOut (cout×p) · colᵀ (p×k)
            unsafe {
                T::gemm(
                    cout,
                    p,
                    k,
                    T::ONE,
                    gb.as_ptr(),
                    p as isize,
                    1,
                    col.as_ptr(),
                    1,
                    p as isize,
                    T::ONE,
                    dw.as_mut_ptr(),
                    k as isize,
                    1,
                );
            }
        }
        if let Some(dx) = dx.as_mut() {
            // dcol = Wᵀ (k×cout) · dOut (cout×p)
            unsafe {
                T::gemm(
                    k,
                    cout,
                    p,
                    T::ONE,
                    weight.data().as_ptr(),
                    1,
                    k as isize,
                    gb.as_ptr(),
                    p as isize,
                    1,
                    T::ZERO,
                    col.as_mut_ptr(),
                    p as isize,
                    1,
                );
            }
            g.col2im(&col, &mut dx[b * in_sz..(b + 1) * in_sz]);
        }
    }
    (
        dx.map(|d| Tensor::new(x.shape(), d)),
        dw.map(|d| Tensor::new(weight.shape(), d)),
    )
}

impl<'t, T: Scalar> Var<'t, T> {
    /// Convolution with weight `[Cout, Cin, kh, kw]` and optional bias `[Cout]`.
    pub fn conv2d(self, weight: Var<'t, T>, bias: Option<Var<'t, T>>, spec: Conv2dSpec) -> Var<'t, T> {
        let bias_val = bias.map(|b| b.value());
        let out = conv2d_forward(&self.value(), &weight.value(), bias_val.as_deref(), spec);
        let mut parents = vec![self, weight];
        parents.extend(bias);
        self.tape.record(out, &parents, move |ctx| {
            let (dx, dw) = conv2d_backward(
                ctx.inputs[0],
                ctx.inputs[1],
                ctx.grad,
                spec,
                ctx.needs[0],
                ctx.needs[1],
            );
            let mut grads = vec![dx, dw];
            if ctx.inputs.len() == 3 {
                let [n, cout, ho, wo] = ctx.grad.dims4();
                let plane = ho * wo;
                let mut db = vec![T::ZERO; cout];
                for b in 0..n {
                    for (co, acc) in db.iter_mut().enumerate() {
                        let start = (b * cout + co) * plane;
                        *acc += ctx.grad.data()[start..start + plane].iter().copied().sum::<T>();
                    }
                }
                grads.push(Some(Tensor::new(&[cout], db)));
            }
            grads
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck::max_rel_error;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, b: &[f64], spec: Conv2dSpec) -> Tensor<f64> {
        let [n, cin, h, wd] = x.dims4();
        let [cout, _, kh, kw] = w.dims4();
        let ho = (h + 2 * spec.padding - kh) / spec.stride + 1;
        let wo = (wd + 2 * spec.padding - kw) / spec.stride + 1;
        let mut out = vec![0.0; n * cout * ho * wo];
        for bi in 0..n {
            for co in 0..cout {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = b[co];
                        for ci in 0..cin {
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let iy = (oy * spec.stride + ky) as isize - spec.padding as isize;
                                    let ix = (ox * spec.stride + kx) as isize - spec.padding as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                        continue;
                                    }
                                    acc += x.data()[((bi * cin + ci) * h + iy as usize) * wd + ix as usize]
                                        * w.data()[((co * cin + ci) * kh + ky) * kw + kx];
                                }
                            }
                        }
                        out[((bi * cout + co) * ho + oy) * wo + ox] = acc;
                    }
                }
            }
        }
        Tensor::new(&[n, cout, ho, wo], out)
    }

    #[test]
    fn matches_direct_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for spec in [
            Conv2dSpec::same(3),
            Conv2dSpec { stride: 2, padding: 1 },
            Conv2dSpec { stride: 1, padding: 0 },
        ] {
            let x = Tensor::<f64>::randn(&[2, 3, 7, 6], 1.0, &mut rng);
            let w = Tensor::<f64>::randn(&[4, 3, 3, 3], 1.0, &mut rng);
            let b = Tensor::<f64>::randn(&[4], 1.0, &mut rng);
            let fast = conv2d_forward(&x, &w, Some(&b), spec);
            let slow = naive_conv(&x, &w, b.data(), spec);
            assert_eq!(fast.shape(), slow.shape());
            for (a, e) in fast.data().iter().zip(slow.data()) {
                assert!((a - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Tensor::<f64>::randn(&[2, 2, 6, 6], 1.0, &mut rng);
        let w = Tensor::<f64>::randn(&[3, 2, 3, 3], 0.5, &mut rng);
        let b = Tensor::<f64>::randn(&[3], 0.5, &mut rng);
        for spec in [Conv2dSpec::same(3), Conv2dSpec { stride: 2, padding: 1 }] {
            let err = max_rel_error(
                &[x.clone(), w.clone(), b.clone()],
                |_, v| v[0].conv2d(v[1], Some(v[2]), spec).square().sum(),
                8,
                1,
            );
            assert!(err < 1e-6, "rel err {err}");
        }
    }
}
