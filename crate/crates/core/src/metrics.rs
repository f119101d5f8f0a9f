//! PSNR and Gaussian-window SSIM.
//!
//! SSIM uses an 11×11 Gaussian window (σ = 1.5), `C1 = (0.01·peak)²`,
//! `C2 = (0.03·peak)²`, and averages the SSIM map over valid window positions
//! and then over channels. The same graph code serves the reporting path
//! (`f64`, no gradients) and the training losses.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{LinearMap, Tape, Var};
use crate::colorlab::Image;
use crate::error::{ensure, Result};
use crate::tensor::{Scalar, Tensor};
use crate::weathersim::{DatasetManifest, WeatherKind};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
/// Finite stand-in for the infinite PSNR of identical images in reports.
pub const PSNR_CAP_DB: f64 = 100.0;

pub fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut g: [f64; SSIM_WINDOW] =
        std::array::from_fn(|i| (-((i as f64 - r).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp());
    let s: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= s);
    g
}

/// Mean squared error between two images of equal size.
pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    ensure!(
        a.same_dims(b),
        Shape,
        "{}x{} vs {}x{}",
        a.height(),
        a.width(),
        b.height(),
        b.width()
    );
    let n = a.pixels().len() as f64;
    Ok(a.pixels().iter().zip(b.pixels()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / n)
}

/// `10·log10(peak² / MSE)`; `+∞` when the images are identical.
pub fn psnr(a: &Image, b: &Image, peak: f64) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?, peak))
}

pub fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    }
}

/// Caps infinite PSNR at [`PSNR_CAP_DB`] for reporting.
pub fn capped(psnr_db: f64) -> f64 {
    psnr_db.min(PSNR_CAP_DB)
}

/// Channel-averaged SSIM of two RGB images with unit peak.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    ensure!(
        a.same_dims(b),
        Shape,
        "{}x{} vs {}x{}",
        a.height(),
        a.width(),
        b.height(),
        b.width()
    );
    ssim_tensors(&a.to_tensor::<f64>(), &b.to_tensor::<f64>(), 1.0)
}

/// SSIM of two `[N, C, H, W]` tensors (mean over batch, channels and window
/// positions).
pub fn ssim_tensors<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, peak: f64) -> Result<f64> {
    let tape = Tape::new();
    let v = tape.constant(a.clone()).ssim(tape.constant(b.clone()), peak)?;
    Ok(v.item())
}

/// Separable "valid" Gaussian filtering of every plane.
struct GaussianValid {
    taps: [f64; SSIM_WINDOW],
}

impl<T: Scalar> LinearMap<T> for GaussianValid {
    fn apply(&self, x: &Tensor<T>) -> Tensor<T> {
        let [n, c, h, w] = x.dims4();
        let (ho, wo) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
        let taps: Vec<T> = self.taps.iter().map(|&t| T::from_f64(t)).collect();
        let mut out = Vec::with_capacity(n * c * ho * wo);
        let mut tmp = vec![T::ZERO; h * wo];
        for plane in x.data().chunks(h * w) {
            for y in 0..h {
                let row = &plane[y * w..(y + 1) * w];
                for xo in 0..wo {
                    tmp[y * wo + xo] = taps.iter().zip(&row[xo..]).map(|(&t, &v)| t * v).sum();
                }
            }
            for yo in 0..ho {
                for xo in 0..wo {
                    let mut acc = T::ZERO;
                    for (k, &t) in taps.iter().enumerate() {
                        acc += t * tmp[(yo + k) * wo + xo];
                    }
                    out.push(acc);
                }
            }
        }
        Tensor::new(&[n, c, ho, wo], out)
    }

    fn adjoint(&self, g: &Tensor<T>, input_shape: &[usize]) -> Tensor<T> {
        let [n, c, ho, wo] = g.dims4();
        let (h, w) = (input_shape[2], input_shape[3]);
        let taps: Vec<T> = self.taps.iter().map(|&t| T::from_f64(t)).collect();
        let mut out = vec![T::ZERO; n * c * h * w];
        let mut tmp = vec![T::ZERO; h * wo];
        for (pi, gp) in g.data().chunks(ho * wo).enumerate() {
            tmp.fill(T::ZERO);
            for yo in 0..ho {
                for xo in 0..wo {
                    let v = gp[yo * wo + xo];
                    for (k, &t) in taps.iter().enumerate() {
                        tmp[(yo + k) * wo + xo] += t * v;
                    }
                }
            }
            let dst = &mut out[pi * h * w..(pi + 1) * h * w];
            for y in 0..h {
                for xo in 0..wo {
                    let v = tmp[y * wo + xo];
                    for (k, &t) in taps.iter().enumerate() {
                        dst[y * w + xo + k] += t * v;
                    }
                }
            }
        }
        Tensor::new(input_shape, out)
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    /// Differentiable mean SSIM against `other`.
    pub fn ssim(self, other: Var<'t, T>, peak: f64) -> Result<Var<'t, T>> {
        Ok(self.ssim_map(other, peak)?.mean())
    }

    /// Per-sample mean SSIM, shape `[N, 1, 1, 1]`.
    pub fn ssim_per_sample(self, other: Var<'t, T>, peak: f64) -> Result<Var<'t, T>> {
        Ok(self.ssim_map(other, peak)?.global_avg_pool().channel_mean())
    }

    /// SSIM at every valid window position, `[N, C, H−10, W−10]`.
    pub fn ssim_map(self, other: Var<'t, T>, peak: f64) -> Result<Var<'t, T>> {
        let (sa, sb) = (self.shape(), other.shape());
        ensure!(sa == sb, Shape, "ssim operands {sa:?} vs {sb:?}");
        ensure!(sa.len() == 4, Shape, "ssim expects [N,C,H,W], got {sa:?}");
        ensure!(
            sa[2] >= SSIM_WINDOW && sa[3] >= SSIM_WINDOW,
            Shape,
            "image {}x{} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window",
            sa[2],
            sa[3]
        );
        let win: Rc<dyn LinearMap<T>> = Rc::new(GaussianValid { taps: gaussian_window() });
        let blur = |v: Var<'t, T>| v.apply_linear(Rc::clone(&win));
        let c1 = (SSIM_K1 * peak).powi(2);
        let c2 = (SSIM_K2 * peak).powi(2);

        let mu_a = blur(self);
        let mu_b = blur(other);
        let mu_aa = mu_a.square();
        let mu_bb = mu_b.square();
        let mu_ab = mu_a.mul(mu_b);
        let var_a = blur(self.square()).sub(mu_aa);
        let var_b = blur(other.square()).sub(mu_bb);
        let cov = blur(self.mul(other)).sub(mu_ab);

        let num = mu_ab.scale(2.0).add_scalar(c1).mul(cov.scale(2.0).add_scalar(c2));
        let den = mu_aa.add(mu_bb).add_scalar(c1).mul(var_a.add(var_b).add_scalar(c2));
        Ok(num.div(den))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricMeans {
    pub psnr: f64,
    pub ssim: f64,
    pub n: usize,
}

impl MetricMeans {
    fn of<'a>(items: impl Iterator<Item = &'a ImageScore>) -> Self {
        let mut m = MetricMeans::default();
        for s in items {
            m.psnr += s.psnr;
            m.ssim += s.ssim;
            m.n += 1;
        }
        if m.n > 0 {
            m.psnr /= m.n as f64;
            m.ssim /= m.n as f64;
        }
        m
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageScore {
    pub id: String,
    pub kind: WeatherKind,
    pub severity: u8,
    /// Capped at [`PSNR_CAP_DB`].
    pub psnr: f64,
    pub ssim: f64,
}

/// Per-image scores with per-kind and overall arithmetic means.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub overall: MetricMeans,
    pub per_kind: BTreeMap<WeatherKind, MetricMeans>,
    pub n_images: usize,
    pub images: Vec<ImageScore>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub missing: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

impl MetricReport {
    /// Aggregates scores; order of `images` does not affect the means
    /// beyond floating-point summation order, which is fixed by sorting.
    pub fn from_scores(mut images: Vec<ImageScore>) -> Result<Self> {
        ensure!(!images.is_empty(), InvalidArgument, "no image pairs to evaluate");
        images.sort_by(|a, b| a.id.cmp(&b.id));
        let overall = MetricMeans::of(images.iter());
        let mut per_kind = BTreeMap::new();
        for kind in WeatherKind::ALL {
            let m = MetricMeans::of(images.iter().filter(|s| s.kind == kind));
            if m.n > 0 {
                per_kind.insert(kind, m);
            }
        }
        Ok(Self {
            overall,
            per_kind,
            n_images: images.len(),
            images,
            missing: Vec::new(),
            config_hash: None,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<12} {:>4} {:>9} {:>7}", "kind", "n", "PSNR", "SSIM");
        for (kind, m) in &self.per_kind {
            let _ = writeln!(out, "{:<12} {:>4} {:>9.3} {:>7.4}", kind.name(), m.n, m.psnr, m.ssim);
        }
        let o = &self.overall;
        let _ = writeln!(out, "{:<12} {:>4} {:>9.3} {:>7.4}", "overall", o.n, o.psnr, o.ssim);
        for m in &self.missing {
            let _ = writeln!(out, "missing: {m}");
        }
        out
    }
}

/// Scores one restored image against its clean reference.
pub fn score(id: &str, kind: WeatherKind, severity: u8, restored: &Image, clean: &Image) -> Result<ImageScore> {
    Ok(ImageScore {
        id: id.to_string(),
        kind,
        severity,
        psnr: capped(psnr(restored, clean, 1.0)?),
        ssim: ssim(restored, clean)?,
    })
}

/// Compares `restored_dir/<degraded file name>` with the clean image of each
/// manifest entry. Entries without a restored file are listed and skipped.
pub fn evaluate(restored_dir: &Path, manifest_path: &Path) -> Result<MetricReport> {
    let manifest = DatasetManifest::read(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut scores = Vec::new();
    let mut missing = Vec::new();
    for e in &manifest.entries {
        let name = Path::new(&e.degraded_path).file_name().unwrap_or_default();
        let restored = restored_dir.join(name);
        if !restored.exists() {
            log::warn!("no restored image for {}", e.degraded_path);
            missing.push(e.degraded_path.clone());
            continue;
        }
        let clean_path = Path::new(&e.clean_path);
        let clean_path = if clean_path.is_absolute() { clean_path.to_path_buf() } else { base.join(clean_path) };
        let id = Path::new(name).file_stem().unwrap_or_default().to_string_lossy().into_owned();
        scores.push(score(&id, e.kind, e.severity, &Image::read_png(&restored)?, &Image::read_png(&clean_path)?)?);
    }
    let mut report = MetricReport::from_scores(scores)?;
    missing.sort();
    report.missing = missing;
    Ok(report)
}
