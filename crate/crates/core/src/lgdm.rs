//! Luminance-guided diffusion model.
//!
//! A small conditional U-Net predicts the noise added to a YCbCr target (or
//! to its luminance only) given the LCDN-restored luminance as condition.
//! Training minimises `L_denoise + L_dts`; inference starts from the coarse
//! LCDN output noised to step `τ` and runs DDIM back to step 0.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Conv2dSpec, Tape, Var};
use crate::checkpoint::{self, CheckpointMeta};
use crate::colorlab::{rgb_to_ycbcr_tensor, ycbcr_to_rgb_tensor, Image};
use crate::error::{ensure, Error, Result};
use crate::lcdn::{restore_ycbcr, LcdnConfig};
use crate::nn::{dihedral, init_conv, init_linear, Bound, ParamStore};
use crate::optim::{ema_update, Adam, AdamConfig, CosineSchedule};
use crate::tensor::{Scalar, Tensor};
use crate::weathersim::ImagePair;

pub const BETA_START: f64 = 1e-4;
pub const BETA_END: f64 = 0.02;
/// Guard range applied to `x̂_{0|t}` before the wavelet losses.
pub const X0_GUARD: (f64, f64) = (-1.0, 2.0);
const MIN_ALPHA_BAR: f64 = 1e-12;

/// Linear β schedule with cumulative products and DDPM posterior σ.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha_bar: Vec<f64>,
    sigma: Vec<f64>,
}

impl NoiseSchedule {
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        ensure!(steps >= 2, InvalidArgument, "schedule needs at least 2 steps, got {steps}");
        ensure!(
            0.0 < beta_start && beta_start < beta_end && beta_end < 1.0,
            InvalidArgument,
            "need 0 < beta_start < beta_end < 1, got {beta_start}, {beta_end}"
        );
        let beta: Vec<f64> = (0..steps)
            .map(|i| beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64)
            .collect();
        let mut alpha_bar = Vec::with_capacity(steps);
        let mut acc = 1.0;
        for b in &beta {
            acc *= 1.0 - b;
            alpha_bar.push(acc);
        }
        let sigma = (0..steps)
            .map(|i| {
                let prev = if i == 0 { 1.0 } else { alpha_bar[i - 1] };
                ((1.0 - prev) / (1.0 - alpha_bar[i]) * beta[i]).sqrt()
            })
            .collect();
        Ok(Self { beta, alpha_bar, sigma })
    }

    /// `T`.
    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    fn check(&self, t: usize) -> Result<()> {
        ensure!(
            (1..=self.steps()).contains(&t),
            InvalidArgument,
            "timestep {t} outside 1..={}",
            self.steps()
        );
        Ok(())
    }

    /// β_t for `t` in `1..=T`.
    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    /// ᾱ_t, with ᾱ_0 = 1.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    pub fn sigma(&self, t: usize) -> f64 {
        self.sigma[t - 1]
    }
}

pub fn make_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    NoiseSchedule::linear(steps, beta_start, beta_end)
}

/// `√ᾱ_t·x0 + √(1−ᾱ_t)·eps`.
pub fn q_sample<T: Scalar>(x0: &Tensor<T>, t: usize, eps: &Tensor<T>, s: &NoiseSchedule) -> Result<Tensor<T>> {
    s.check(t)?;
    ensure!(x0.shape() == eps.shape(), Shape, "x0 {:?} vs eps {:?}", x0.shape(), eps.shape());
    let ab = s.alpha_bar(t);
    let (a, b) = (T::from_f64(ab.sqrt()), T::from_f64((1.0 - ab).sqrt()));
    Ok(x0.zip_map(eps, |x, e| a * x + b * e))
}

/// One forward kernel step `√(1−β_t)·x_{t−1} + √β_t·z`.
pub fn q_step<T: Scalar>(x_prev: &Tensor<T>, t: usize, z: &Tensor<T>, s: &NoiseSchedule) -> Result<Tensor<T>> {
    s.check(t)?;
    let b = s.beta(t);
    let (a, c) = (T::from_f64((1.0 - b).sqrt()), T::from_f64(b.sqrt()));
    Ok(x_prev.zip_map(z, |x, e| a * x + c * e))
}

/// Exact inversion `(x_t − √(1−ᾱ_t)·eps_hat) / √ᾱ_t` (no guard clamp).
pub fn predict_x0<T: Scalar>(x_t: &Tensor<T>, eps_hat: &Tensor<T>, t: usize, s: &NoiseSchedule) -> Result<Tensor<T>> {
    s.check(t)?;
    let ab = s.alpha_bar(t);
    ensure!(ab >= MIN_ALPHA_BAR, InvalidArgument, "alpha_bar({t}) = {ab:e} underflows");
    let (a, b) = (T::from_f64(1.0 / ab.sqrt()), T::from_f64((1.0 - ab).sqrt()));
    Ok(x_t.zip_map(eps_hat, |x, e| (x - b * e) * a))
}

/// `e^{−k·t/T}`.
pub fn omega(t: usize, steps: usize, k: f64) -> f64 {
    (-k * t as f64 / steps as f64).exp()
}

/// Per-sample coefficient tensor `[N,1,1,1]`.
fn per_sample<'t, T: Scalar>(tape: &'t Tape<T>, v: &[f64]) -> Var<'t, T> {
    tape.constant(Tensor::from_f64(&[v.len(), 1, 1, 1], v))
}

/// `x̂_{0|t}` inside the graph, one timestep per batch item, guard-clamped.
pub fn predict_x0_var<'t, T: Scalar>(
    x_t: Var<'t, T>,
    eps_hat: Var<'t, T>,
    ts: &[usize],
    s: &NoiseSchedule,
) -> Result<Var<'t, T>> {
    ensure!(ts.len() == x_t.shape()[0], Shape, "{} timesteps for batch {}", ts.len(), x_t.shape()[0]);
    for &t in ts {
        s.check(t)?;
    }
    let tape = x_t.tape();
    let inv: Vec<f64> = ts.iter().map(|&t| 1.0 / s.alpha_bar(t).sqrt()).collect();
    let noise: Vec<f64> = ts.iter().map(|&t| (1.0 - s.alpha_bar(t)).sqrt()).collect();
    let x0 = x_t.sub(eps_hat.mul(per_sample(tape, &noise))).mul(per_sample(tape, &inv));
    Ok(x0.clamp(X0_GUARD.0, X0_GUARD.1))
}

/// Dynamic time-step loss, averaged over the batch:
/// `ω_t·MSE(ll) + (1−ω_t)·(1 − SSIM(cat(lh, hl, hh)))` per sample.
pub fn dts_loss<'t, T: Scalar>(
    x0_hat: Var<'t, T>,
    x0: Var<'t, T>,
    ts: &[usize],
    steps: usize,
    k: f64,
) -> Result<Var<'t, T>> {
    ensure!(x0_hat.shape() == x0.shape(), Shape, "{:?} vs {:?}", x0_hat.shape(), x0.shape());
    ensure!(ts.len() == x0.shape()[0], Shape, "{} timesteps for batch {}", ts.len(), x0.shape()[0]);
    ensure!(k >= 0.0, InvalidArgument, "k must be nonnegative, got {k}");
    let tape = x0.tape();
    let [a_ll, a_lh, a_hl, a_hh] = x0_hat.haar_bands()?;
    let [b_ll, b_lh, b_hl, b_hh] = x0.haar_bands()?;
    let low = a_ll.sub(b_ll).square().global_avg_pool().channel_mean();
    let high_a = Var::cat_channels(&[a_lh, a_hl, a_hh]);
    let high_b = Var::cat_channels(&[b_lh, b_hl, b_hh]);
    let w: Vec<f64> = ts.iter().map(|&t| omega(t, steps, k)).collect();
    let w_high: Vec<f64> = w.iter().map(|v| 1.0 - v).collect();
    let mut loss = low.mul(per_sample(tape, &w));
    if w_high.iter().any(|&v| v != 0.0) {
        let high = high_a.ssim_per_sample(high_b, 1.0)?.rsub_scalar(1.0);
        loss = loss.add(high.mul(per_sample(tape, &w_high)));
    }
    Ok(loss.mean())
}

/// `mean((eps_hat − eps)²)`.
pub fn denoise_loss<'t, T: Scalar>(eps_hat: Var<'t, T>, eps: Var<'t, T>) -> Result<Var<'t, T>> {
    ensure!(eps_hat.shape() == eps.shape(), Shape, "{:?} vs {:?}", eps_hat.shape(), eps.shape());
    Ok(eps_hat.sub(eps).square().mean())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConditionMode {
    /// The restored luminance itself (one channel).
    Identity,
    /// Two 3×3 convolutions to 16 channels.
    Conv,
}

/// Which channels are diffused.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DiffusionChannels {
    Ycbcr,
    /// Luminance only; chroma is taken from the LCDN output.
    Luma,
}

impl DiffusionChannels {
    pub fn count(self) -> usize {
        match self {
            DiffusionChannels::Ycbcr => 3,
            DiffusionChannels::Luma => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LgdmConfig {
    /// Number of diffusion steps `T`.
    pub timesteps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub base_channels: usize,
    pub time_dim: usize,
    pub condition: ConditionMode,
    pub channels: DiffusionChannels,
    /// DTS decay rate.
    pub k: f64,
    /// Prior spread of clean pixels around the skip mean (restored luminance for Y, neutral chroma).
    pub sigma_data: f64,
}

impl Default for LgdmConfig {
    fn default() -> Self {
        Self {
            timesteps: 200,
            beta_start: BETA_START,
            beta_end: BETA_END,
            base_channels: 16,
            time_dim: 64,
            condition: ConditionMode::Identity,
            channels: DiffusionChannels::Ycbcr,
            k: 5.0,
            sigma_data: 0.05,
        }
    }
}

pub const CONDITION_FEATURES: usize = 16;

impl LgdmConfig {
    pub fn schedule(&self) -> Result<NoiseSchedule> {
        make_schedule(self.timesteps, self.beta_start, self.beta_end).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn cond_channels(&self) -> usize {
        match self.condition {
            ConditionMode::Identity => 1,
            ConditionMode::Conv => CONDITION_FEATURES,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule()?;
        ensure!(self.base_channels > 0 && self.time_dim >= 4 && self.time_dim % 2 == 0, Config, "bad denoiser widths");
        ensure!(self.k >= 0.0, Config, "k must be nonnegative");
        ensure!(self.sigma_data > 0.0, Config, "sigma_data must be positive");
        Ok(())
    }
}

fn init_resblock<R: Rng>(p: &mut ParamStore<f32>, rng: &mut R, name: &str, cin: usize, cout: usize, tdim: usize) {
    init_conv(p, rng, &format!("{name}.conv1"), cout, cin, 3, false);
    init_linear(p, rng, &format!("{name}.temb"), tdim, cout);
    init_conv(p, rng, &format!("{name}.conv2"), cout, cout, 3, false);
    // start each residual branch small
    if let Some(w) = p.get_mut(&format!("{name}.conv2.weight")) {
        *w = w.scale(0.1);
    }
    if cin != cout {
        init_conv(p, rng, &format!("{name}.skip"), cout, cin, 1, false);
    }
}

/// Denoiser (`unet.`) and condition encoder (`cond.`) parameters.
pub fn init_params(cfg: &LgdmConfig, seed: u64) -> Result<ParamStore<f32>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ParamStore::new();
    let (c, td) = (cfg.base_channels, cfg.time_dim);
    if cfg.condition == ConditionMode::Conv {
        init_conv(&mut p, &mut rng, "cond.conv1", CONDITION_FEATURES, 1, 3, false);
        init_conv(&mut p, &mut rng, "cond.conv2", CONDITION_FEATURES, CONDITION_FEATURES, 3, false);
    }
    let cin = cfg.channels.count() + cfg.cond_channels();
    init_linear(&mut p, &mut rng, "unet.time1", td, td);
    init_linear(&mut p, &mut rng, "unet.time2", td, td);
    init_conv(&mut p, &mut rng, "unet.head", c, cin, 3, false);
    init_resblock(&mut p, &mut rng, "unet.down1", c, c, td);
    init_conv(&mut p, &mut rng, "unet.downsample", 2 * c, c, 3, false);
    init_resblock(&mut p, &mut rng, "unet.down2", 2 * c, 2 * c, td);
    init_resblock(&mut p, &mut rng, "unet.mid", 2 * c, 2 * c, td);
    init_conv(&mut p, &mut rng, "unet.upsample", c, 2 * c, 3, false);
    init_resblock(&mut p, &mut rng, "unet.up1", 2 * c, c, td);
    init_conv(&mut p, &mut rng, "unet.out", cfg.channels.count(), c, 3, true);
    Ok(p)
}

/// Sinusoidal embedding of integer timesteps, `[N, dim]`.
pub fn timestep_embedding<T: Scalar>(ts: &[usize], dim: usize) -> Tensor<T> {
    let half = dim / 2;
    let mut out = Vec::with_capacity(ts.len() * dim);
    for &t in ts {
        let freqs = (0..half).map(|i| (-(10_000f64.ln()) * i as f64 / half as f64).exp());
        let angles: Vec<f64> = freqs.map(|f| t as f64 * f).collect();
        out.extend(angles.iter().map(|a| T::from_f64(a.sin())));
        out.extend(angles.iter().map(|a| T::from_f64(a.cos())));
    }
    Tensor::new(&[ts.len(), dim], out)
}

fn resblock<'t, T: Scalar>(p: &Bound<'t, T>, name: &str, x: Var<'t, T>, temb: Var<'t, T>) -> Var<'t, T> {
    let h = p.conv_same(&format!("{name}.conv1"), x.silu());
    let t = p.linear(&format!("{name}.temb"), temb);
    let ts = t.shape();
    let h = h.add(t.reshape(&[ts[0], ts[1], 1, 1]));
    let h = p.conv_same(&format!("{name}.conv2"), h.silu());
    let skip = match p.try_get(&format!("{name}.skip.weight")) {
        Some(_) => p.conv_same(&format!("{name}.skip"), x),
        None => x,
    };
    skip.add(h)
}

/// Condition encoder `G` applied to restored luminance `[N,1,H,W]`.
pub fn encode_condition<'t, T: Scalar>(p: &Bound<'t, T>, cfg: &LgdmConfig, lum: Var<'t, T>) -> Var<'t, T> {
    match cfg.condition {
        ConditionMode::Identity => lum,
        ConditionMode::Conv => {
            let h = p.conv_same("cond.conv1", lum).silu();
            p.conv_same("cond.conv2", h)
        }
    }
}

/// `ε_θ(x_t, t, G(cond))`.
pub fn denoiser_forward<'t, T: Scalar>(
    p: &Bound<'t, T>,
    cfg: &LgdmConfig,
    x_t: Var<'t, T>,
    ts: &[usize],
    cond_lum: Var<'t, T>,
) -> Result<Var<'t, T>> {
    let (xs, cs) = (x_t.shape(), cond_lum.shape());
    ensure!(
        xs.len() == 4 && xs[1] == cfg.channels.count(),
        Shape,
        "denoiser expects [N,{},H,W], got {xs:?}",
        cfg.channels.count()
    );
    ensure!(
        cs == [xs[0], 1, xs[2], xs[3]],
        Shape,
        "condition {cs:?} does not match input {xs:?}"
    );
    ensure!(
        xs[2] % 2 == 0 && xs[3] % 2 == 0 && xs[2] >= 16 && xs[3] >= 16,
        Shape,
        "denoiser needs even H, W >= 16, got {}x{}",
        xs[2],
        xs[3]
    );
    ensure!(ts.len() == xs[0], Shape, "{} timesteps for batch {}", ts.len(), xs[0]);
    let tape = x_t.tape();
    let temb = tape.constant(timestep_embedding(ts, cfg.time_dim));
    let temb = p.linear("unet.time2", p.linear("unet.time1", temb).silu());

    // x̂0 = m + c_skip·(x̃ − m) + c_out·F, with x̃ = x_t/√ᾱ the noisy image at unit scale
    let sched = cfg.schedule()?;
    let sd2 = cfg.sigma_data * cfg.sigma_data;
    let (mut inv_a, mut c_skip, mut c_out, mut c_in, mut eps_a, mut eps_b) = (vec![], vec![], vec![], vec![], vec![], vec![]);
    for &t in ts {
        sched.check(t)?;
        let ab = sched.alpha_bar(t);
        let s2 = (1.0 - ab) / ab;
        inv_a.push(1.0 / ab.sqrt());
        c_skip.push(sd2 / (s2 + sd2));
        c_out.push((s2 * sd2 / (s2 + sd2)).sqrt());
        c_in.push(1.0 / (s2 + sd2).sqrt());
        eps_a.push(1.0 / (1.0 - ab).sqrt());
        eps_b.push((ab / (1.0 - ab)).sqrt());
    }
    let mean = if xs[1] == 1 {
        cond_lum
    } else {
        let neutral = tape.constant(Tensor::full(&[xs[0], xs[1] - 1, xs[2], xs[3]], T::from_f64(0.5)));
        Var::cat_channels(&[cond_lum, neutral])
    };
    let centred = x_t.mul(per_sample(tape, &inv_a)).sub(mean);

    let cond = encode_condition(p, cfg, cond_lum);
    let h0 = p.conv_same("unet.head", Var::cat_channels(&[centred.mul(per_sample(tape, &c_in)), cond]));
    let skip = resblock(p, "unet.down1", h0, temb);
    let h = p.conv(
        "unet.downsample",
        skip,
        Conv2dSpec {
            stride: 2,
            padding: 1,
        },
    );
    let h = resblock(p, "unet.down2", h, temb);
    let h = resblock(p, "unet.mid", h, temb);
    let h = p.conv_same("unet.upsample", h.upsample2());
    let h = resblock(p, "unet.up1", Var::cat_channels(&[h, skip]), temb);
    let f = p.conv_same("unet.out", h.silu());
    let x0 = mean.add(centred.mul(per_sample(tape, &c_skip))).add(f.mul(per_sample(tape, &c_out)));
    Ok(x_t.mul(per_sample(tape, &eps_a)).sub(x0.mul(per_sample(tape, &eps_b))))
}

/// Anything that predicts the injected noise for a batch at one timestep.
pub trait NoisePredictor<T: Scalar> {
    fn predict(&self, x_t: &Tensor<T>, t: usize, cond_lum: &Tensor<T>) -> Result<Tensor<T>>;
}

/// The trained network as a [`NoisePredictor`].
pub struct Denoiser<'a, T: Scalar> {
    pub params: &'a ParamStore<T>,
    pub cfg: &'a LgdmConfig,
}

impl<T: Scalar> NoisePredictor<T> for Denoiser<'_, T> {
    fn predict(&self, x_t: &Tensor<T>, t: usize, cond_lum: &Tensor<T>) -> Result<Tensor<T>> {
        let tape = Tape::new();
        let b = Bound::frozen(&tape, self.params);
        let ts = vec![t; x_t.shape()[0]];
        let out = denoiser_forward(&b, self.cfg, tape.constant(x_t.clone()), &ts, tape.constant(cond_lum.clone()))?;
        Ok((*out.value()).clone())
    }
}

/// DDIM sampling controls.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleConfig {
    /// Start step; `0` returns the coarse input, `T` starts from pure noise.
    pub tau: Option<usize>,
    pub n_steps: usize,
    pub eta_ddim: f64,
    pub seed: u64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            tau: None,
            n_steps: 20,
            eta_ddim: 0.0,
            seed: 0,
        }
    }
}

/// `n` timesteps spaced uniformly in `1..=tau`, ending at `tau`, ascending.
pub fn ddim_timesteps(tau: usize, n: usize) -> Result<Vec<usize>> {
    ensure!(n >= 1 && n <= tau, InvalidArgument, "n_steps {n} must lie in 1..={tau}");
    Ok((1..=n).map(|j| (tau * j + n / 2) / n).collect())
}

fn randn_like<T: Scalar>(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<T> {
    let data = (0..shape.iter().product())
        .map(|_| T::from_f64(rng.sample::<f64, _>(StandardNormal)))
        .collect();
    Tensor::new(shape, data)
}

#[allow(clippy::too_many_arguments)]
/// Come-closer DDIM: noise `coarse` to step `tau` (pure noise when
/// `tau = T`) and integrate back to step 0 over `n_steps` strided steps.
pub fn ddim_sample<T: Scalar>(
    model: &dyn NoisePredictor<T>,
    cond_lum: &Tensor<T>,
    coarse: &Tensor<T>,
    sched: &NoiseSchedule,
    tau: usize,
    n_steps: usize,
    eta_ddim: f64,
    seed: u64,
) -> Result<Tensor<T>> {
    ensure!(tau <= sched.steps(), InvalidArgument, "tau {tau} exceeds T = {}", sched.steps());
    if tau == 0 {
        return Ok(coarse.clone());
    }
    let ts = ddim_timesteps(tau, n_steps)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eps0 = randn_like::<T>(coarse.shape(), &mut rng);
    let mut x = if tau == sched.steps() {
        eps0
    } else {
        q_sample(coarse, tau, &eps0, sched)?
    };
    for (j, &t) in ts.iter().enumerate().rev() {
        let t_prev = if j == 0 { 0 } else { ts[j - 1] };
        let (ab, ab_prev) = (sched.alpha_bar(t), sched.alpha_bar(t_prev));
        let eps = model.predict(&x, t, cond_lum)?;
        if !eps.all_finite() {
            return Err(Error::NonFinite(format!("noise prediction at step {t}")));
        }
        let x0 = predict_x0(&x, &eps, t, sched)?.map(|v| {
            T::from_f64(v.to_f64().clamp(X0_GUARD.0, X0_GUARD.1))
        });
        let sigma = eta_ddim * ((1.0 - ab_prev) / (1.0 - ab) * (1.0 - ab / ab_prev)).sqrt();
        let dir = (1.0 - ab_prev - sigma * sigma).max(0.0).sqrt();
        let (ca, cd) = (T::from_f64(ab_prev.sqrt()), T::from_f64(dir));
        x = x0.zip_map(&eps, |a, e| ca * a + cd * e);
        if sigma > 0.0 && t_prev > 0 {
            let z = randn_like::<T>(x.shape(), &mut rng);
            let s = T::from_f64(sigma);
            x = x.zip_map(&z, |a, e| a + s * e);
        }
    }
    Ok(x)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainTarget {
    /// Ground-truth clean image.
    Clean,
    /// The frozen LCDN output.
    Coarse,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LgdmTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_floor: f64,
    pub adam: AdamConfig,
    pub ema_decay: f64,
    pub target: TrainTarget,
    /// Include `L_dts` (otherwise `L_denoise` alone).
    pub use_dts: bool,
    pub augment: bool,
    pub seed: u64,
    pub checkpoint_every: usize,
    pub log_every: usize,
}

impl Default for LgdmTrainConfig {
    fn default() -> Self {
        Self {
            steps: 5000,
            batch_size: 4,
            lr: 2e-4,
            lr_floor: 1e-7,
            adam: AdamConfig::default(),
            ema_decay: 0.995,
            target: TrainTarget::Clean,
            use_dts: true,
            augment: true,
            seed: 0,
            checkpoint_every: 1000,
            log_every: 100,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LgdmStepLog {
    pub denoise: f64,
    pub dts: f64,
}

pub struct LgdmRun {
    pub params: ParamStore<f32>,
    pub ema: ParamStore<f32>,
    pub history: Vec<LgdmStepLog>,
}

/// Training examples: (target, condition luminance), each `[1,C,H,W]`.
pub fn prepare_examples(
    pairs: &[ImagePair],
    lcdn: &ParamStore<f32>,
    lcdn_cfg: &LcdnConfig,
    cfg: &LgdmConfig,
    target: TrainTarget,
) -> Result<Vec<(Tensor<f32>, Tensor<f32>)>> {
    pairs
        .iter()
        .map(|p| {
            let coarse = restore_ycbcr(lcdn, lcdn_cfg, &p.degraded)?;
            let x0 = match target {
                TrainTarget::Clean => rgb_to_ycbcr_tensor(&p.clean.to_tensor::<f32>()),
                TrainTarget::Coarse => coarse.clone(),
            };
            let x0 = x0.narrow_channels(0, cfg.channels.count());
            Ok((x0, coarse.narrow_channels(0, 1)))
        })
        .collect()
}

/// Trains the denoiser against a frozen LCDN.
pub fn train_lgdm(
    examples: &[(Tensor<f32>, Tensor<f32>)],
    model: &LgdmConfig,
    cfg: &LgdmTrainConfig,
    ckpt_dir: Option<&Path>,
    config_hash: &str,
) -> Result<LgdmRun> {
    ensure!(!examples.is_empty(), InvalidArgument, "training set is empty");
    ensure!(cfg.batch_size > 0, Config, "batch_size must be positive");
    ensure!((0.0..1.0).contains(&cfg.ema_decay), Config, "ema_decay must lie in [0, 1)");
    let sched = model.schedule()?;
    let steps_t = sched.steps();
    let mut params = init_params(model, cfg.seed)?;
    let mut ema = params.clone();
    let mut adam = Adam::new(cfg.adam);
    let lr = CosineSchedule {
        base: cfg.lr,
        floor: cfg.lr_floor,
        total_steps: cfg.steps,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6c67_646d);
    let mut history = Vec::with_capacity(cfg.steps);
    let model_json = serde_json::to_value(model)?;
    let save = |dir: &Path, params: &ParamStore<f32>, ema: &ParamStore<f32>, step: usize| -> Result<()> {
        let meta = CheckpointMeta::new("lgdm", step, config_hash).with_model(model_json.clone());
        checkpoint::save(&dir.join("model"), params, &meta)?;
        let meta = CheckpointMeta::new("lgdm-ema", step, config_hash).with_model(model_json.clone());
        checkpoint::save(&dir.join("ema"), ema, &meta)
    };
    for step in 0..cfg.steps {
        let mut x0s = Vec::with_capacity(cfg.batch_size);
        let mut conds = Vec::with_capacity(cfg.batch_size);
        let mut xts = Vec::with_capacity(cfg.batch_size);
        let mut epss = Vec::with_capacity(cfg.batch_size);
        let mut ts = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            let i = rng.random_range(0..examples.len());
            let code = if cfg.augment { rng.random_range(0..8u8) } else { 0 };
            let x0 = dihedral(&examples[i].0, code);
            let t = rng.random_range(1..=steps_t);
            let eps = randn_like::<f32>(x0.shape(), &mut rng);
            xts.push(q_sample(&x0, t, &eps, &sched)?);
            conds.push(dihedral(&examples[i].1, code));
            x0s.push(x0);
            epss.push(eps);
            ts.push(t);
        }
        let tape = Tape::new();
        let bound = Bound::trainable(&tape, &params);
        let x_t = tape.constant(Tensor::stack_batch(&xts));
        let eps = tape.constant(Tensor::stack_batch(&epss));
        let x0 = tape.constant(Tensor::stack_batch(&x0s));
        let cond = tape.constant(Tensor::stack_batch(&conds));
        let eps_hat = denoiser_forward(&bound, model, x_t, &ts, cond)?;
        let l_den = denoise_loss(eps_hat, eps)?;
        let (loss, dts_value) = if cfg.use_dts {
            let x0_hat = predict_x0_var(x_t, eps_hat, &ts, &sched)?;
            let l_dts = dts_loss(x0_hat, x0, &ts, steps_t, model.k)?;
            (l_den.add(l_dts), l_dts.item())
        } else {
            (l_den, 0.0)
        };
        let value = loss.item();
        if !value.is_finite() {
            return Err(Error::Numeric {
                step,
                detail: format!("diffusion loss is {value}"),
            });
        }
        let grads = bound.grads(&tape.backward(loss));
        adam.step(&mut params, &grads, lr.lr(step));
        if let Some(name) = params.first_non_finite() {
            return Err(Error::Numeric {
                step,
                detail: format!("parameter {name} became non-finite"),
            });
        }
        ema_update(&mut ema, &params, cfg.ema_decay);
        history.push(LgdmStepLog {
            denoise: l_den.item(),
            dts: dts_value,
        });
        if cfg.log_every > 0 && step % cfg.log_every == 0 {
            log::info!("lgdm step {step} denoise {:.5} dts {dts_value:.5}", l_den.item());
        }
        if let Some(dir) = ckpt_dir {
            if cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 {
                save(dir, &params, &ema, step + 1)?;
            }
        }
    }
    if let Some(dir) = ckpt_dir {
        save(dir, &params, &ema, cfg.steps)?;
    }
    Ok(LgdmRun { params, ema, history })
}

/// Full pipeline on one RGB image: LCDN, then DDIM refinement, then RGB.
pub fn restore_lcdiff(
    lcdn: &ParamStore<f32>,
    lcdn_cfg: &LcdnConfig,
    denoiser: &ParamStore<f32>,
    cfg: &LgdmConfig,
    sample: &SampleConfig,
    degraded: &Image,
) -> Result<Image> {
    let sched = cfg.schedule()?;
    let coarse = restore_ycbcr(lcdn, lcdn_cfg, degraded)?;
    let tau = sample.tau.unwrap_or(sched.steps() / 2);
    let ycc = if tau == 0 {
        coarse
    } else {
        let cond = coarse.narrow_channels(0, 1);
        let nc = cfg.channels.count();
        let start = coarse.narrow_channels(0, nc);
        let model = Denoiser { params: denoiser, cfg };
        let refined = ddim_sample(
            &model,
            &cond,
            &start,
            &sched,
            tau,
            sample.n_steps.min(tau),
            sample.eta_ddim,
            sample.seed,
        )?;
        if nc == 3 {
            refined
        } else {
            Tensor::cat_channels(&[&refined, &coarse.narrow_channels(1, 2)])
        }
    };
    Ok(Image::from_tensor(&ycbcr_to_rgb_tensor(&ycc))?.clamped())
}
