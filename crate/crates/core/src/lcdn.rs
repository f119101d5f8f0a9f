//! Lumina–chroma decomposition network.
//!
//! The degraded image is split into luminance `Y` and chrominance `(Cb, Cr)`.
//! The luminance restoration module (LRM) predicts a residual correction of
//! `Y` with a small gated-convolution backbone. The frequency chrominance
//! restoration module (FCRM) lifts chroma into a feature map, splits it with
//! complementary Fourier masks, gates the low band spatially and the high band
//! per channel, fuses both gates over the chroma features, mixes channels with
//! cross-attention and finally modulates the input chroma multiplicatively.
//! Both branches are trained jointly with
//! `L_res = η·L1 + θ·(1 − SSIM) + λ·L1(spectrum)`.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::checkpoint::{self, CheckpointMeta};
use crate::colorlab::{rgb_to_ycbcr_tensor, ycbcr_to_rgb_tensor, Image};
use crate::error::{ensure, Error, Result};
use crate::freqlab::{make_masks, DEFAULT_CUTOFF_RATIO};
use crate::nn::{dihedral, init_conv, Bound, ParamStore};
use crate::optim::{Adam, AdamConfig, CosineSchedule};
use crate::tensor::{Scalar, Tensor};
use crate::weathersim::ImagePair;

/// Weights of the three terms of the restoration loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub eta: f64,
    pub theta: f64,
    pub lambda: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            eta: 1.0,
            theta: 0.5,
            lambda: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LcdnConfig {
    /// Feature width of the luminance backbone.
    pub lrm_width: usize,
    pub lrm_blocks: usize,
    /// Chroma feature channels inside FCRM (attention tokens).
    pub fcrm_features: usize,
    /// Channel-gate reduction ratio.
    pub reduction: usize,
    /// Spatial-gate kernel size.
    pub spatial_kernel: usize,
    pub cutoff_ratio: f64,
}

impl Default for LcdnConfig {
    fn default() -> Self {
        Self {
            lrm_width: 16,
            lrm_blocks: 4,
            fcrm_features: 16,
            reduction: 4,
            spatial_kernel: 7,
            cutoff_ratio: DEFAULT_CUTOFF_RATIO,
        }
    }
}

impl LcdnConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.lrm_width > 0 && self.lrm_width % 2 == 0, Config, "lrm_width must be even and positive");
        ensure!(self.fcrm_features > 0, Config, "fcrm_features must be positive");
        ensure!(
            self.reduction > 0 && self.fcrm_features >= self.reduction,
            Config,
            "channel gate has {} channels, fewer than the reduction ratio {}",
            self.fcrm_features,
            self.reduction
        );
        ensure!(self.spatial_kernel % 2 == 1, Config, "spatial_kernel must be odd");
        ensure!(
            self.cutoff_ratio > 0.0 && self.cutoff_ratio < 1.0,
            Config,
            "cutoff_ratio must lie in (0, 1)"
        );
        Ok(())
    }
}

/// Initialises both branches. Parameters are prefixed `lrm.` (θ_Y) and
/// `fcrm.` (θ_C). The LRM tail starts at zero and `W_o` starts as the
/// constant-one projection, so a fresh network is the identity on YCbCr.
pub fn init_params<T: Scalar>(cfg: &LcdnConfig, seed: u64) -> Result<ParamStore<T>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ParamStore::new();
    let w = cfg.lrm_width;
    init_conv(&mut p, &mut rng, "lrm.stem", w, 1, 3, false);
    for i in 0..cfg.lrm_blocks {
        let b = format!("lrm.block{i}");
        init_conv(&mut p, &mut rng, &format!("{b}.conv"), 2 * w, w, 3, false);
        init_conv(&mut p, &mut rng, &format!("{b}.sca"), w, w, 1, false);
        init_conv(&mut p, &mut rng, &format!("{b}.proj"), w, w, 1, false);
        init_conv(&mut p, &mut rng, &format!("{b}.ffn_in"), 2 * w, w, 1, false);
        init_conv(&mut p, &mut rng, &format!("{b}.ffn_out"), w, w, 1, false);
        p.insert(format!("{b}.beta"), Tensor::ones(&[1, w, 1, 1]));
        p.insert(format!("{b}.gamma"), Tensor::ones(&[1, w, 1, 1]));
    }
    init_conv(&mut p, &mut rng, "lrm.tail", 1, w, 3, true);

    let f = cfg.fcrm_features;
    init_conv(&mut p, &mut rng, "fcrm.embed", f, 2, 3, false);
    init_conv(&mut p, &mut rng, "fcrm.w_s", 1, 2, cfg.spatial_kernel, false);
    init_conv(&mut p, &mut rng, "fcrm.w_c1", f / cfg.reduction, f, 1, false);
    init_conv(&mut p, &mut rng, "fcrm.w_c2", f, f / cfg.reduction, 1, false);
    init_conv(&mut p, &mut rng, "fcrm.w_q", f, f, 1, false);
    init_conv(&mut p, &mut rng, "fcrm.w_k", 2 * f, f, 1, false);
    init_conv(&mut p, &mut rng, "fcrm.w_o", 2, f, 1, true);
    p.insert("fcrm.w_o.bias", Tensor::ones(&[2]));
    Ok(p)
}

fn check_finite<T: Scalar>(v: Var<'_, T>, layer: &str) -> Result<()> {
    let val = v.value();
    if val.all_finite() {
        return Ok(());
    }
    let bad = val.data().iter().filter(|x| !x.is_finite()).count();
    Err(Error::NonFinite(format!(
        "{layer}: {bad} of {} activations are not finite",
        val.len()
    )))
}

/// Per-pixel normalisation over channels, no affine part.
fn channel_norm<'t, T: Scalar>(x: Var<'t, T>) -> Var<'t, T> {
    let centred = x.sub(x.channel_mean());
    centred.mul(centred.square().channel_mean().add_scalar(1e-6).rsqrt())
}

/// Residual luminance restoration: `x_lum + f(x_lum; θ_Y)`.
pub fn lrm_forward<'t, T: Scalar>(p: &Bound<'t, T>, cfg: &LcdnConfig, x_lum: Var<'t, T>) -> Result<Var<'t, T>> {
    let s = x_lum.shape();
    ensure!(s.len() == 4 && s[1] == 1, Shape, "LRM expects [N,1,H,W], got {s:?}");
    check_finite(x_lum, "lrm input")?;
    let w = cfg.lrm_width;
    let mut x = p.conv_same("lrm.stem", x_lum);
    for i in 0..cfg.lrm_blocks {
        let b = format!("lrm.block{i}");
        // gated spatial mixing with simplified channel attention
        let y = p.conv_same(&format!("{b}.conv"), channel_norm(x));
        let y = y.narrow_channels(0, w).mul(y.narrow_channels(w, w));
        let att = p.conv_same(&format!("{b}.sca"), y.global_avg_pool());
        let y = p.conv_same(&format!("{b}.proj"), y.mul(att));
        x = x.add(y.mul(p.get(&format!("{b}.beta"))));
        // gated pointwise feed-forward
        let z = p.conv_same(&format!("{b}.ffn_in"), channel_norm(x));
        let z = z.narrow_channels(0, w).mul(z.narrow_channels(w, w));
        x = x.add(p.conv_same(&format!("{b}.ffn_out"), z).mul(p.get(&format!("{b}.gamma"))));
        check_finite(x, &format!("lrm block {i}"))?;
    }
    Ok(x_lum.add(p.conv_same("lrm.tail", x)))
}

/// `S_l = σ(W_s ∗ cat(max_c(X_l), mean_c(X_l)))`, shape `[N,1,H,W]`.
pub fn spatial_gate<'t, T: Scalar>(p: &Bound<'t, T>, x_low: Var<'t, T>) -> Var<'t, T> {
    let pooled = Var::cat_channels(&[x_low.channel_max(), x_low.channel_mean()]);
    p.conv_same("fcrm.w_s", pooled).sigmoid()
}

/// `S_h = σ(W_c2 ∗ ReLU(W_c1 ∗ (AvgPool(X_h) + MaxPool(X_h))))`, shape `[N,C,1,1]`.
pub fn channel_gate<'t, T: Scalar>(p: &Bound<'t, T>, x_high: Var<'t, T>) -> Var<'t, T> {
    let pooled = x_high.global_avg_pool().add(x_high.global_max_pool());
    let hidden = p.conv_same("fcrm.w_c1", pooled).relu();
    p.conv_same("fcrm.w_c2", hidden).sigmoid()
}

/// `F = S_l ⊙ X + S_h ⊙ X` with broadcasting of both gates.
pub fn fuse_bands<'t, T: Scalar>(x: Var<'t, T>, s_low: Var<'t, T>, s_high: Var<'t, T>) -> Result<Var<'t, T>> {
    let xs = x.shape();
    let (ls, hs) = (s_low.shape(), s_high.shape());
    ensure!(
        crate::autodiff::broadcast_shape(&xs, &ls).as_deref() == Some(&xs[..])
            && crate::autodiff::broadcast_shape(&xs, &hs).as_deref() == Some(&xs[..]),
        Shape,
        "gates {ls:?} and {hs:?} do not broadcast over {xs:?}"
    );
    Ok(x.mul(s_low).add(x.mul(s_high)))
}

/// Channel cross-attention. Tokens are channels and features are the
/// flattened spatial positions: `Q = W_q ∗ F`, `K, V = split(W_k ∗ X)`,
/// `α = softmax(QKᵀ/√d)` with `d = H·W`, `z = W_o ∗ (αV)`.
pub fn cross_attention<'t, T: Scalar>(
    p: &Bound<'t, T>,
    fused: Var<'t, T>,
    x: Var<'t, T>,
) -> Result<Var<'t, T>> {
    let [n, c, h, w] = x.value().dims4();
    ensure!(fused.shape() == x.shape(), Shape, "fused {:?} vs chroma {:?}", fused.shape(), x.shape());
    let kv = p.conv_same("fcrm.w_k", x);
    ensure!(kv.shape()[1] == 2 * c, Shape, "W_k yields {} channels, expected {}", kv.shape()[1], 2 * c);
    let d = h * w;
    let q = p.conv_same("fcrm.w_q", fused).reshape(&[n, c, d]);
    let k = kv.narrow_channels(0, c).reshape(&[n, c, d]);
    let v = kv.narrow_channels(c, c).reshape(&[n, c, d]);
    let alpha = q.bmm(k.transpose_last2()).scale(1.0 / (d as f64).sqrt()).softmax_last();
    let mixed = alpha.bmm(v).reshape(&[n, c, h, w]);
    Ok(p.conv_same("fcrm.w_o", mixed))
}

/// Full FCRM on `[N,2,H,W]` chroma: returns `z ⊗ X_chrom`.
pub fn fcrm_forward<'t, T: Scalar>(p: &Bound<'t, T>, cfg: &LcdnConfig, x_chrom: Var<'t, T>) -> Result<Var<'t, T>> {
    let s = x_chrom.shape();
    ensure!(s.len() == 4 && s[1] == 2, Shape, "FCRM expects [N,2,H,W], got {s:?}");
    let masks = make_masks(s[2], s[3], cfg.cutoff_ratio)?;
    let feat = p.conv_same("fcrm.embed", x_chrom);
    let (low, high) = feat.frequency_split(&masks)?;
    let s_low = spatial_gate(p, low);
    let s_high = channel_gate(p, high);
    let fused = fuse_bands(feat, s_low, s_high)?;
    let z = cross_attention(p, fused, feat)?;
    check_finite(z, "fcrm modulation")?;
    Ok(z.mul(x_chrom))
}

/// Restores a `[N,3,H,W]` YCbCr tensor; output is unclamped YCbCr.
pub fn lcdn_forward<'t, T: Scalar>(p: &Bound<'t, T>, cfg: &LcdnConfig, ycc: Var<'t, T>) -> Result<Var<'t, T>> {
    let s = ycc.shape();
    ensure!(s.len() == 4 && s[1] == 3, Shape, "LCDN expects [N,3,H,W] YCbCr, got {s:?}");
    let lum = lrm_forward(p, cfg, ycc.narrow_channels(0, 1))?;
    let chrom = fcrm_forward(p, cfg, ycc.narrow_channels(1, 2))?;
    Ok(Var::cat_channels(&[lum, chrom]))
}

/// `η·mean|p−t| + θ·(1 − SSIM(p, t)) + λ·mean|Spec(p) − Spec(t)|` where
/// `Spec` is the orthonormal 2-D DFT with real and imaginary parts compared
/// separately. Terms with zero weight are skipped.
pub fn restoration_loss<'t, T: Scalar>(pred: Var<'t, T>, target: Var<'t, T>, w: &LossWeights) -> Result<Var<'t, T>> {
    ensure!(
        pred.shape() == target.shape(),
        Shape,
        "prediction {:?} vs target {:?}",
        pred.shape(),
        target.shape()
    );
    let diff = pred.sub(target);
    let mut loss = diff.abs().mean().scale(w.eta);
    if w.theta != 0.0 {
        let ssim = pred.ssim(target, 1.0)?;
        loss = loss.add(ssim.rsub_scalar(1.0).scale(w.theta));
    }
    if w.lambda != 0.0 {
        loss = loss.add(diff.spectrum().abs().mean().scale(w.lambda));
    }
    Ok(loss)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LcdnTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_floor: f64,
    pub adam: AdamConfig,
    pub weights: LossWeights,
    /// Random flips and quarter rotations of each training pair.
    pub augment: bool,
    pub seed: u64,
    /// Checkpoint period in steps (0 disables intermediate checkpoints).
    pub checkpoint_every: usize,
    pub log_every: usize,
}

impl Default for LcdnTrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 4,
            lr: 2e-4,
            lr_floor: 1e-7,
            adam: AdamConfig::default(),
            weights: LossWeights::default(),
            augment: true,
            seed: 0,
            checkpoint_every: 500,
            log_every: 100,
        }
    }
}

/// Trained LCDN parameters plus per-step loss history.
pub struct LcdnRun {
    pub params: ParamStore<f32>,
    pub history: Vec<f64>,
}

/// Joint training of θ_Y and θ_C on (degraded, clean) pairs.
///
/// A non-finite loss or parameter aborts with [`Error::Numeric`]; the last
/// checkpoint written to `ckpt_dir` is left untouched in that case.
pub fn train_lcdn(
    pairs: &[ImagePair],
    model: &LcdnConfig,
    cfg: &LcdnTrainConfig,
    ckpt_dir: Option<&Path>,
    config_hash: &str,
) -> Result<LcdnRun> {
    ensure!(!pairs.is_empty(), InvalidArgument, "training set is empty");
    ensure!(cfg.batch_size > 0, Config, "batch_size must be positive");
    let mut params = init_params::<f32>(model, cfg.seed)?;
    let data: Vec<(Tensor<f32>, Tensor<f32>)> = pairs
        .iter()
        .map(|p| {
            (
                rgb_to_ycbcr_tensor(&p.degraded.to_tensor::<f32>()),
                rgb_to_ycbcr_tensor(&p.clean.to_tensor::<f32>()),
            )
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6c63_646e);
    let mut adam = Adam::new(cfg.adam);
    let sched = CosineSchedule {
        base: cfg.lr,
        floor: cfg.lr_floor,
        total_steps: cfg.steps,
    };
    let model_json = serde_json::to_value(model)?;
    let meta = |step: usize| CheckpointMeta::new("lcdn", step, config_hash).with_model(model_json.clone());
    let mut history = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let mut xs = Vec::with_capacity(cfg.batch_size);
        let mut ys = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            let i = rng.random_range(0..data.len());
            let code = if cfg.augment { rng.random_range(0..8u8) } else { 0 };
            xs.push(dihedral(&data[i].0, code));
            ys.push(dihedral(&data[i].1, code));
        }
        let tape = Tape::new();
        let bound = Bound::trainable(&tape, &params);
        let x = tape.constant(Tensor::stack_batch(&xs));
        let y = tape.constant(Tensor::stack_batch(&ys));
        let pred = lcdn_forward(&bound, model, x).map_err(|e| Error::Numeric {
            step,
            detail: e.to_string(),
        })?;
        let loss = restoration_loss(pred, y, &cfg.weights)?;
        let value = loss.item();
        if !value.is_finite() {
            return Err(Error::Numeric {
                step,
                detail: format!("restoration loss is {value}"),
            });
        }
        let grads = bound.grads(&tape.backward(loss));
        adam.step(&mut params, &grads, sched.lr(step));
        if let Some(name) = params.first_non_finite() {
            return Err(Error::Numeric {
                step,
                detail: format!("parameter {name} became non-finite"),
            });
        }
        history.push(value);
        if cfg.log_every > 0 && step % cfg.log_every == 0 {
            log::info!("lcdn step {step} loss {value:.5} lr {:.2e}", sched.lr(step));
        }
        if let Some(dir) = ckpt_dir {
            if cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 {
                checkpoint::save(dir, &params, &meta(step + 1))?;
            }
        }
    }
    if let Some(dir) = ckpt_dir {
        checkpoint::save(dir, &params, &meta(cfg.steps))?;
    }
    Ok(LcdnRun { params, history })
}

/// Runs a trained LCDN on one RGB image and returns the unclamped YCbCr
/// output as `[1,3,H,W]`.
pub fn restore_ycbcr(params: &ParamStore<f32>, cfg: &LcdnConfig, degraded: &Image) -> Result<Tensor<f32>> {
    let tape = Tape::new();
    let bound = Bound::frozen(&tape, params);
    let x = tape.constant(rgb_to_ycbcr_tensor(&degraded.to_tensor::<f32>()));
    Ok((*lcdn_forward(&bound, cfg, x)?.value()).clone())
}

/// LCDN-only restoration to RGB, clamped at emission.
pub fn restore_rgb(params: &ParamStore<f32>, cfg: &LcdnConfig, degraded: &Image) -> Result<Image> {
    let ycc = restore_ycbcr(params, cfg, degraded)?;
    Ok(Image::from_tensor(&ycbcr_to_rgb_tensor(&ycc))?.clamped())
}
