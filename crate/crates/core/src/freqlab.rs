//! Frequency-domain primitives: ideal radial Fourier masks, the low/high
//! Fourier split, an orthonormal 2-D FFT spectrum, and the single-level
//! orthonormal Haar wavelet transform.
//!
//! All routines operate on `[N, C, H, W]` tensors plane by plane. The Fourier
//! and Haar operators are linear, so each also implements
//! [`LinearMap`](crate::autodiff::LinearMap) and can sit inside a
//! differentiable graph.

use std::cell::RefCell;
use std::rc::Rc;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::autodiff::{LinearMap, Var};
use crate::error::{ensure, Result};
use crate::tensor::{Scalar, Tensor};

/// Default cutoff of the low-pass disc as a fraction of `min(h, w) / 2`.
pub const DEFAULT_CUTOFF_RATIO: f64 = 0.25;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Unnormalised 2-D DFT of one `h×w` plane, in place.
fn fft2_inplace(buf: &mut [Complex<f64>], h: usize, w: usize, inverse: bool) {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        let (row_fft, col_fft) = if inverse {
            (p.plan_fft_inverse(w), p.plan_fft_inverse(h))
        } else {
            (p.plan_fft_forward(w), p.plan_fft_forward(h))
        };
        for row in buf.chunks_mut(w) {
            row_fft.process(row);
        }
        let mut col = vec![Complex::new(0.0, 0.0); h];
        for x in 0..w {
            for y in 0..h {
                col[y] = buf[y * w + x];
            }
            col_fft.process(&mut col);
            for y in 0..h {
                buf[y * w + x] = col[y];
            }
        }
    });
}

fn plane_to_complex<T: Scalar>(plane: &[T]) -> Vec<Complex<f64>> {
    plane.iter().map(|&v| Complex::new(v.to_f64(), 0.0)).collect()
}

/// Complementary binary masks on the centred spectrum.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralMaskPair {
    height: usize,
    width: usize,
    cutoff_ratio: f64,
    /// `1` where the centred bin is low frequency, row-major in centred order.
    low: Vec<u8>,
    high: Vec<u8>,
}

impl SpectralMaskPair {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn cutoff_ratio(&self) -> f64 {
        self.cutoff_ratio
    }

    /// Low mask in centred (fft-shifted) layout.
    pub fn low(&self) -> &[u8] {
        &self.low
    }

    pub fn high(&self) -> &[u8] {
        &self.high
    }

    /// Mask value for the unshifted FFT bin `(ky, kx)`.
    fn low_at_unshifted(&self, ky: usize, kx: usize) -> bool {
        let sy = (ky + self.height / 2) % self.height;
        let sx = (kx + self.width / 2) % self.width;
        self.low[sy * self.width + sx] == 1
    }

    /// Low and high masks laid out in unshifted FFT order.
    fn unshifted(&self) -> (Vec<f64>, Vec<f64>) {
        let mut low = vec![0.0; self.height * self.width];
        for ky in 0..self.height {
            for kx in 0..self.width {
                low[ky * self.width + kx] = if self.low_at_unshifted(ky, kx) { 1.0 } else { 0.0 };
            }
        }
        let high = low.iter().map(|v| 1.0 - v).collect();
        (low, high)
    }
}

/// Ideal radial low-pass on the centred spectrum: a bin is low iff its
/// distance from the centre `(h/2, w/2)` is at most
/// `cutoff_ratio * min(h, w) / 2`. The high mask is the exact complement.
pub fn make_masks(h: usize, w: usize, cutoff_ratio: f64) -> Result<SpectralMaskPair> {
    ensure!(
        h >= 2 && w >= 2 && h % 2 == 0 && w % 2 == 0,
        InvalidArgument,
        "mask dimensions must be even and positive, got {h}x{w}"
    );
    ensure!(
        cutoff_ratio > 0.0 && cutoff_ratio < 1.0,
        InvalidArgument,
        "cutoff ratio must lie in (0, 1), got {cutoff_ratio}"
    );
    let radius = cutoff_ratio * h.min(w) as f64 / 2.0;
    let (cy, cx) = ((h / 2) as f64, (w / 2) as f64);
    let mut low = vec![0u8; h * w];
    for y in 0..h {
        for x in 0..w {
            let d = ((y as f64 - cy).powi(2) + (x as f64 - cx).powi(2)).sqrt();
            low[y * w + x] = u8::from(d <= radius);
        }
    }
    let high = low.iter().map(|&v| 1 - v).collect();
    Ok(SpectralMaskPair {
        height: h,
        width: w,
        cutoff_ratio,
        low,
        high,
    })
}

/// Low and high frequency parts of a spatial map.
#[derive(Clone, Debug)]
pub struct FrequencyPair<T> {
    pub low: Tensor<T>,
    pub high: Tensor<T>,
}

/// Real part of `F⁻¹(mask ⊙ F(x))` for every plane of `x`.
fn masked_filter<T: Scalar>(x: &Tensor<T>, mask: &[f64]) -> Tensor<T> {
    let [_, _, h, w] = x.dims4();
    let norm = 1.0 / (h * w) as f64;
    let mut out = Vec::with_capacity(x.len());
    for plane in x.data().chunks(h * w) {
        let mut buf = plane_to_complex(plane);
        fft2_inplace(&mut buf, h, w, false);
        for (c, &m) in buf.iter_mut().zip(mask) {
            *c *= m;
        }
        fft2_inplace(&mut buf, h, w, true);
        out.extend(buf.iter().map(|c| T::from_f64(c.re * norm)));
    }
    Tensor::new(x.shape(), out)
}

fn check_mask_dims<T: Scalar>(x: &Tensor<T>, masks: &SpectralMaskPair) -> Result<()> {
    ensure!(x.ndim() == 4, Shape, "expected [N,C,H,W], got {:?}", x.shape());
    let [_, _, h, w] = x.dims4();
    ensure!(
        (h, w) == (masks.height, masks.width),
        Shape,
        "map is {h}x{w} but masks are {}x{}",
        masks.height,
        masks.width
    );
    Ok(())
}

/// Splits `x` into `F⁻¹(M_l ⊙ F(x))` and `F⁻¹(M_h ⊙ F(x))`, discarding the
/// (round-off sized) imaginary residue.
pub fn split_frequency<T: Scalar>(x: &Tensor<T>, masks: &SpectralMaskPair) -> Result<FrequencyPair<T>> {
    check_mask_dims(x, masks)?;
    let [_, _, h, w] = x.dims4();
    let (low_mask, high_mask) = masks.unshifted();
    let mut low = Vec::with_capacity(x.len());
    let mut high = Vec::with_capacity(x.len());
    let norm = 1.0 / (h * w) as f64;
    for plane in x.data().chunks(h * w) {
        let mut spec = plane_to_complex(plane);
        fft2_inplace(&mut spec, h, w, false);
        for (mask, dst) in [(&low_mask, &mut low), (&high_mask, &mut high)] {
            let mut buf: Vec<_> = spec.iter().zip(mask.iter()).map(|(c, &m)| c * m).collect();
            fft2_inplace(&mut buf, h, w, true);
            dst.extend(buf.iter().map(|c| T::from_f64(c.re * norm)));
        }
    }
    Ok(FrequencyPair {
        low: Tensor::new(x.shape(), low),
        high: Tensor::new(x.shape(), high),
    })
}

/// One side of the Fourier split as a differentiable linear operator.
///
/// The operator `Re F⁻¹ M F` with a conjugate-symmetric binary mask is real
/// symmetric, so it is its own adjoint.
pub struct FourierMask {
    mask: Vec<f64>,
    height: usize,
    width: usize,
}

impl FourierMask {
    pub fn low(masks: &SpectralMaskPair) -> Rc<Self> {
        Rc::new(Self {
            mask: masks.unshifted().0,
            height: masks.height,
            width: masks.width,
        })
    }

    pub fn high(masks: &SpectralMaskPair) -> Rc<Self> {
        Rc::new(Self {
            mask: masks.unshifted().1,
            height: masks.height,
            width: masks.width,
        })
    }
}

impl<T: Scalar> LinearMap<T> for FourierMask {
    fn apply(&self, x: &Tensor<T>) -> Tensor<T> {
        let [_, _, h, w] = x.dims4();
        assert_eq!((h, w), (self.height, self.width), "fourier mask dimension mismatch");
        masked_filter(x, &self.mask)
    }

    fn adjoint(&self, g: &Tensor<T>, _input_shape: &[usize]) -> Tensor<T> {
        masked_filter(g, &self.mask)
    }
}

/// Orthonormal 2-D DFT (`1/√(HW)` scaling) returning real parts in channels
/// `0..C` and imaginary parts in `C..2C`.
pub struct Spectrum;

/// Bins whose imaginary part vanishes for every real input. They are
/// emitted as exact zeros so rounding residue cannot reach an `abs` kink.
fn self_conjugate(idx: usize, h: usize, w: usize) -> bool {
    let (y, x) = (idx / w, idx % w);
    (y == 0 || 2 * y == h) && (x == 0 || 2 * x == w)
}

impl<T: Scalar> LinearMap<T> for Spectrum {
    fn apply(&self, x: &Tensor<T>) -> Tensor<T> {
        let [n, c, h, w] = x.dims4();
        let plane = h * w;
        let norm = 1.0 / (plane as f64).sqrt();
        let mut out = vec![T::ZERO; 2 * x.len()];
        for b in 0..n {
            for ch in 0..c {
                let src = &x.data()[(b * c + ch) * plane..(b * c + ch + 1) * plane];
                let mut buf = plane_to_complex(src);
                fft2_inplace(&mut buf, h, w, false);
                let re = (b * 2 * c + ch) * plane;
                let im = (b * 2 * c + c + ch) * plane;
                for (i, v) in buf.iter().enumerate() {
                    out[re + i] = T::from_f64(v.re * norm);
                    if !self_conjugate(i, h, w) {
                        out[im + i] = T::from_f64(v.im * norm);
                    }
                }
            }
        }
        Tensor::new(&[n, 2 * c, h, w], out)
    }

    fn adjoint(&self, g: &Tensor<T>, input_shape: &[usize]) -> Tensor<T> {
        // d/dx Σ g_re Re(Fx) + g_im Im(Fx) = Re(F* (g_re + i g_im)) with the
        // unnormalised inverse transform F*.
        let [n, c, h, w] = [input_shape[0], input_shape[1], input_shape[2], input_shape[3]];
        let plane = h * w;
        let norm = 1.0 / (plane as f64).sqrt();
        let mut out = vec![T::ZERO; n * c * plane];
        for b in 0..n {
            for ch in 0..c {
                let re = &g.data()[(b * 2 * c + ch) * plane..][..plane];
                let im = &g.data()[(b * 2 * c + c + ch) * plane..][..plane];
                let mut buf: Vec<Complex<f64>> = re
                    .iter()
                    .zip(im)
                    .enumerate()
                    .map(|(k, (&r, &i))| {
                        let i = if self_conjugate(k, h, w) { 0.0 } else { i.to_f64() };
                        Complex::new(r.to_f64(), i)
                    })
                    .collect();
                fft2_inplace(&mut buf, h, w, true);
                let dst = &mut out[(b * c + ch) * plane..][..plane];
                for (d, v) in dst.iter_mut().zip(&buf) {
                    *d = T::from_f64(v.re * norm);
                }
            }
        }
        Tensor::new(input_shape, out)
    }
}

/// Haar sub-bands, each `[N, C, H/2, W/2]`.
#[derive(Clone, Debug, PartialEq)]
pub struct WaveletBands<T> {
    pub ll: Tensor<T>,
    pub lh: Tensor<T>,
    pub hl: Tensor<T>,
    pub hh: Tensor<T>,
}

fn check_even<T: Scalar>(x: &Tensor<T>) -> Result<()> {
    ensure!(x.ndim() == 4, Shape, "expected [N,C,H,W], got {:?}", x.shape());
    let [_, _, h, w] = x.dims4();
    ensure!(
        h % 2 == 0 && w % 2 == 0 && h > 0 && w > 0,
        Shape,
        "Haar transform needs even dimensions, got {h}x{w}"
    );
    Ok(())
}

/// Stacked bands `[N, 4C, H/2, W/2]` in (ll, lh, hl, hh) channel blocks.
fn haar_forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = x.dims4();
    let (h2, w2) = (h / 2, w / 2);
    let half = T::from_f64(0.5);
    let band = h2 * w2;
    let mut out = vec![T::ZERO; x.len()];
    for b in 0..n {
        for ch in 0..c {
            let src = &x.data()[(b * c + ch) * h * w..][..h * w];
            let dst = |k: usize| (b * 4 * c + k * c + ch) * band;
            let (o_ll, o_lh, o_hl, o_hh) = (dst(0), dst(1), dst(2), dst(3));
            for i in 0..h2 {
                for j in 0..w2 {
                    let a = src[2 * i * w + 2 * j];
                    let bb = src[2 * i * w + 2 * j + 1];
                    let cc = src[(2 * i + 1) * w + 2 * j];
                    let d = src[(2 * i + 1) * w + 2 * j + 1];
                    let p = i * w2 + j;
                    out[o_ll + p] = (a + bb + cc + d) * half;
                    out[o_lh + p] = (a - bb + cc - d) * half;
                    out[o_hl + p] = (a + bb - cc - d) * half;
                    out[o_hh + p] = (a - bb - cc + d) * half;
                }
            }
        }
    }
    Tensor::new(&[n, 4 * c, h2, w2], out)
}

fn haar_inverse<T: Scalar>(bands: &Tensor<T>) -> Tensor<T> {
    let [n, c4, h2, w2] = bands.dims4();
    let c = c4 / 4;
    let (h, w) = (2 * h2, 2 * w2);
    let half = T::from_f64(0.5);
    let band = h2 * w2;
    let mut out = vec![T::ZERO; bands.len()];
    for b in 0..n {
        for ch in 0..c {
            let src = |k: usize| &bands.data()[(b * 4 * c + k * c + ch) * band..][..band];
            let (ll, lh, hl, hh) = (src(0), src(1), src(2), src(3));
            let dst = &mut out[(b * c + ch) * h * w..][..h * w];
            for i in 0..h2 {
                for j in 0..w2 {
                    let p = i * w2 + j;
                    let (s, x, y, z) = (ll[p], lh[p], hl[p], hh[p]);
                    dst[2 * i * w + 2 * j] = (s + x + y + z) * half;
                    dst[2 * i * w + 2 * j + 1] = (s - x + y - z) * half;
                    dst[(2 * i + 1) * w + 2 * j] = (s + x - y - z) * half;
                    dst[(2 * i + 1) * w + 2 * j + 1] = (s - x - y + z) * half;
                }
            }
        }
    }
    Tensor::new(&[n, c, h, w], out)
}

/// Single-level orthonormal 2-D Haar transform. For each 2×2 block
/// `(a, b; c, d)`: `ll = (a+b+c+d)/2`, `lh = (a−b+c−d)/2`,
/// `hl = (a+b−c−d)/2`, `hh = (a−b−c+d)/2`.
pub fn haar_dwt<T: Scalar>(x: &Tensor<T>) -> Result<WaveletBands<T>> {
    check_even(x)?;
    let c = x.dims4()[1];
    let stacked = haar_forward(x);
    Ok(WaveletBands {
        ll: stacked.narrow_channels(0, c),
        lh: stacked.narrow_channels(c, c),
        hl: stacked.narrow_channels(2 * c, c),
        hh: stacked.narrow_channels(3 * c, c),
    })
}

/// Exact inverse of [`haar_dwt`].
pub fn haar_idwt<T: Scalar>(bands: &WaveletBands<T>) -> Result<Tensor<T>> {
    let s = bands.ll.shape();
    ensure!(
        bands.lh.shape() == s && bands.hl.shape() == s && bands.hh.shape() == s,
        Shape,
        "wavelet bands disagree in shape"
    );
    let stacked = Tensor::cat_channels(&[&bands.ll, &bands.lh, &bands.hl, &bands.hh]);
    Ok(haar_inverse(&stacked))
}

/// Haar analysis as a differentiable operator producing stacked bands.
/// Orthonormal, so the adjoint is the synthesis transform.
pub struct HaarAnalysis;

impl<T: Scalar> LinearMap<T> for HaarAnalysis {
    fn apply(&self, x: &Tensor<T>) -> Tensor<T> {
        haar_forward(x)
    }

    fn adjoint(&self, g: &Tensor<T>, _input_shape: &[usize]) -> Tensor<T> {
        haar_inverse(g)
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    /// Haar bands `[ll, lh, hl, hh]` of an even-sized `[N,C,H,W]` variable.
    pub fn haar_bands(self) -> Result<[Var<'t, T>; 4]> {
        check_even(&self.value())?;
        let c = self.value().dims4()[1];
        let stacked = self.apply_linear(Rc::new(HaarAnalysis));
        Ok(std::array::from_fn(|k| stacked.narrow_channels(k * c, c)))
    }

    /// Low and high Fourier components under `masks`.
    pub fn frequency_split(self, masks: &SpectralMaskPair) -> Result<(Var<'t, T>, Var<'t, T>)> {
        check_mask_dims(&self.value(), masks)?;
        Ok((
            self.apply_linear(FourierMask::low(masks)),
            self.apply_linear(FourierMask::high(masks)),
        ))
    }

    /// Orthonormal spectrum, real parts then imaginary parts along channels.
    pub fn spectrum(self) -> Var<'t, T> {
        self.apply_linear(Rc::new(Spectrum))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck::max_rel_error;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_map(shape: &[usize], seed: u64) -> Tensor<f64> {
        Tensor::uniform(shape, 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn masks_are_exact_complements() {
        for (h, w, r) in [(8, 8, 0.5), (64, 64, 0.25), (16, 32, 0.9), (64, 48, 0.1)] {
            let m = make_masks(h, w, r).unwrap();
            assert!(m.low().iter().zip(m.high()).all(|(a, b)| a + b == 1));
            // DC sits at the centre of the shifted spectrum
            assert_eq!(m.low()[(h / 2) * w + w / 2], 1);
        }
    }

    #[test]
    fn near_unit_cutoff_fills_inscribed_disc() {
        let m = make_masks(8, 8, 0.999).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                let d = ((y as f64 - 4.0).powi(2) + (x as f64 - 4.0).powi(2)).sqrt();
                let low = m.low()[y * 8 + x] == 1;
                if d <= 3.99 {
                    assert!(low, "({y},{x}) inside the disc");
                }
                if d > 4.0 {
                    assert!(!low, "({y},{x}) outside the disc");
                }
            }
        }
        assert_eq!(m.high()[0], 1, "corner stays high");
    }

    #[test]
    fn low_count_matches_enumeration() {
        let m = make_masks(64, 64, 0.25).unwrap();
        let mut brute = 0;
        for y in 0..64i32 {
            for x in 0..64i32 {
                if (y - 32).pow(2) + (x - 32).pow(2) <= 64 {
                    brute += 1;
                }
            }
        }
        let count = m.low().iter().filter(|&&v| v == 1).count();
        assert_eq!(count, brute);
        assert_eq!(count, 197);
    }

    #[test]
    fn rejects_degenerate_masks() {
        assert!(make_masks(7, 8, 0.25).is_err());
        assert!(make_masks(8, 8, 0.0).is_err());
        assert!(make_masks(8, 8, 1.0).is_err());
        let m = make_masks(8, 8, 0.25).unwrap();
        assert!(split_frequency(&Tensor::<f64>::zeros(&[1, 1, 8, 10]), &m).is_err());
    }

    #[test]
    fn constant_map_is_all_low() {
        let m = make_masks(16, 16, 0.25).unwrap();
        let x = Tensor::<f64>::full(&[1, 2, 16, 16], 0.37);
        let s = split_frequency(&x, &m).unwrap();
        assert!(s.low.data().iter().all(|v| (v - 0.37).abs() < 1e-12));
        assert!(s.high.max_abs() < 1e-12);
    }

    #[test]
    fn checkerboard_is_all_high() {
        let m = make_masks(16, 16, 0.25).unwrap();
        let data: Vec<f64> = (0..256).map(|i| if (i / 16 + i % 16) % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let x = Tensor::new(&[1, 1, 16, 16], data);
        // its spectrum is a single Nyquist bin
        let spec = <Spectrum as LinearMap<f64>>::apply(&Spectrum, &x);
        let nonzero: Vec<usize> = (0..256).filter(|&i| spec.data()[i].abs() > 1e-9).collect();
        assert_eq!(nonzero, vec![8 * 16 + 8]);
        let s = split_frequency(&x, &m).unwrap();
        assert!(s.low.max_abs() < 1e-12);
        assert!(s.high.zip_map(&x, |a, b| a - b).max_abs() < 1e-12);
    }

    #[test]
    fn split_reconstructs_and_is_linear() {
        let m = make_masks(32, 32, 0.25).unwrap();
        let x = rand_map(&[2, 2, 32, 32], 1);
        let y = rand_map(&[2, 2, 32, 32], 2);
        let sx = split_frequency(&x, &m).unwrap();
        let sum = sx.low.zip_map(&sx.high, |a, b| a + b);
        assert!(sum.zip_map(&x, |a, b| a - b).max_abs() < 1e-12);

        let combo = x.zip_map(&y, |a, b| 2.0 * a - 0.5 * b);
        let sc = split_frequency(&combo, &m).unwrap();
        let sy = split_frequency(&y, &m).unwrap();
        let expect = sx.low.zip_map(&sy.low, |a, b| 2.0 * a - 0.5 * b);
        assert!(sc.low.zip_map(&expect, |a, b| a - b).max_abs() < 1e-12);
    }

    #[test]
    fn haar_constant_and_reconstruction() {
        let c = Tensor::<f64>::full(&[1, 1, 8, 8], 0.3);
        let b = haar_dwt(&c).unwrap();
        assert!(b.ll.data().iter().all(|v| (v - 0.6).abs() < 1e-15));
        assert_eq!(b.lh.max_abs() + b.hl.max_abs() + b.hh.max_abs(), 0.0);

        let x = rand_map(&[2, 3, 8, 12], 5);
        let bands = haar_dwt(&x).unwrap();
        let back = haar_idwt(&bands).unwrap();
        assert!(back.zip_map(&x, |a, b| a - b).max_abs() < 1e-12);
        let e_in: f64 = x.data().iter().map(|v| v * v).sum();
        let e_out: f64 = [&bands.ll, &bands.lh, &bands.hl, &bands.hh]
            .iter()
            .flat_map(|t| t.data())
            .map(|v| v * v)
            .sum();
        assert!((e_in - e_out).abs() < 1e-9);
        assert!(haar_dwt(&Tensor::<f64>::zeros(&[1, 1, 7, 8])).is_err());
    }

    #[test]
    fn haar_block_formula() {
        let x = Tensor::<f64>::from_f64(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 5.0]);
        let b = haar_dwt(&x).unwrap();
        assert_eq!(b.ll.data(), &[5.5]);
        assert_eq!(b.lh.data(), &[-1.5]);
        assert_eq!(b.hl.data(), &[-2.5]);
        assert_eq!(b.hh.data(), &[0.5]);
    }

    #[test]
    fn linear_operators_have_correct_adjoints() {
        let m = make_masks(8, 8, 0.4).unwrap();
        let x = rand_map(&[1, 2, 8, 8], 9);
        let err = max_rel_error(
            &[x],
            |tape, v| {
                let w = tape.constant(rand_map(&[1, 2, 8, 8], 10));
                let (lo, hi) = v[0].frequency_split(&m).unwrap();
                let spec = v[0].spectrum();
                let w2 = tape.constant(rand_map(&[1, 4, 8, 8], 11));
                let bands = v[0].haar_bands().unwrap();
                lo.mul(w)
                    .sum()
                    .add(hi.square().sum())
                    .add(spec.mul(w2).sum())
                    .add(bands[0].square().sum())
                    .add(bands[3].abs().sum())
            },
            16,
            7,
        );
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn spectrum_is_orthonormal() {
        let x = rand_map(&[1, 1, 8, 8], 12);
        let s = <Spectrum as LinearMap<f64>>::apply(&Spectrum, &x);
        let e_in: f64 = x.data().iter().map(|v| v * v).sum();
        let e_out: f64 = s.data().iter().map(|v| v * v).sum();
        assert!((e_in - e_out).abs() < 1e-9);
    }
}
