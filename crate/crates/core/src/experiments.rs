//! Toy datasets, the luminance-swap study, the k sweep and plotting.

use std::fmt::Write as _;
use std::path::Path;

use plotters::prelude::*;
use serde::{Deserialize, Serialize};

use crate::colorlab::{rgb_to_ycbcr, swap_luminance, ycbcr_to_rgb, Image};
use crate::config::DataConfig;
#[cfg(test)]
use crate::config::Pairing;
use crate::error::{Error, Result};
use crate::lcdn::{restore_rgb, LcdnConfig};
use crate::lgdm::{omega, restore_lcdiff, train_lgdm, LgdmConfig, LgdmTrainConfig, SampleConfig};
use crate::metrics::{capped, psnr, score, ImageScore, MetricReport};
use crate::nn::ParamStore;
use crate::tensor::Tensor;
use crate::weathersim::{clean_scene, synth_pairs, ImagePair, WeatherKind};

/// Seed offset separating held-out scenes from training scenes.
pub const HELDOUT_OFFSET: u64 = 1_000_003;

fn read_clean_dir(dir: &Path) -> Result<Vec<Image>> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    files.iter().map(Image::read_png).collect()
}

/// Pairs for the configured pairing rule.
pub fn make_pairs(data: &DataConfig, cleans: &[Image], seed: u64) -> Result<Vec<ImagePair>> {
    synth_pairs(cleans, &data.kinds, &data.severities, data.pairing, seed)
}

pub struct ToySets {
    pub train: Vec<ImagePair>,
    pub heldout: Vec<ImagePair>,
}

/// Clean scenes for training and held-out evaluation: the configured
/// directory split in order, or generated toy scenes.
pub fn clean_splits(data: &DataConfig, seed: u64) -> Result<(Vec<Image>, Vec<Image>)> {
    match &data.clean_dir {
        Some(dir) => {
            let all = read_clean_dir(dir)?;
            if all.len() < data.n_train + data.n_heldout {
                return Err(Error::Missing(format!(
                    "{} holds {} PNGs, need {}",
                    dir.display(),
                    all.len(),
                    data.n_train + data.n_heldout
                )));
            }
            let heldout = all[data.n_train..data.n_train + data.n_heldout].to_vec();
            Ok((all[..data.n_train].to_vec(), heldout))
        }
        None => {
            let gen = |base: u64, n: usize| -> Result<Vec<Image>> {
                (0..n as u64).map(|i| clean_scene(data.size, data.size, base.wrapping_add(i))).collect()
            };
            Ok((gen(seed, data.n_train)?, gen(seed.wrapping_add(HELDOUT_OFFSET), data.n_heldout)?))
        }
    }
}

pub fn toy_sets(data: &DataConfig, seed: u64) -> Result<ToySets> {
    let (train, heldout) = clean_splits(data, seed)?;
    Ok(ToySets {
        train: make_pairs(data, &train, seed)?,
        heldout: make_pairs(data, &heldout, seed.wrapping_add(HELDOUT_OFFSET))?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwapRow {
    pub id: String,
    pub kind: WeatherKind,
    pub severity: u8,
    /// Clean chroma with degraded luminance, against clean.
    pub degraded_y_psnr: f64,
    /// Degraded chroma with clean luminance, against clean.
    pub clean_y_psnr: f64,
}

impl SwapRow {
    pub fn ordered(&self) -> bool {
        self.clean_y_psnr > self.degraded_y_psnr
    }
}

pub fn swap_experiment(pairs: &[ImagePair]) -> Result<Vec<SwapRow>> {
    pairs
        .iter()
        .map(|p| {
            let d = rgb_to_ycbcr(&p.degraded)?;
            let c = rgb_to_ycbcr(&p.clean)?;
            let (clean_y, degraded_y) = swap_luminance(&d, &c)?;
            Ok(SwapRow {
                id: p.id.clone(),
                kind: p.kind,
                severity: p.severity,
                degraded_y_psnr: capped(psnr(&ycbcr_to_rgb(&degraded_y)?, &p.clean, 1.0)?),
                clean_y_psnr: capped(psnr(&ycbcr_to_rgb(&clean_y)?, &p.clean, 1.0)?),
            })
        })
        .collect()
}

pub fn swap_table(rows: &[SwapRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<28} {:>12} {:>12}", "pair", "degraded-Y", "clean-Y");
    for r in rows {
        let mark = if r.ordered() { "" } else { "  !" };
        let _ = writeln!(out, "{:<28} {:>12.3} {:>12.3}{mark}", r.id, r.degraded_y_psnr, r.clean_y_psnr);
    }
    let n = rows.iter().filter(|r| r.ordered()).count();
    let _ = writeln!(out, "clean-Y ahead on {n} of {} pairs", rows.len());
    out
}

/// Mean `|ΔY|` and mean `|ΔCb| + |ΔCr|` between clean and degraded.
pub fn channel_deltas(pair: &ImagePair) -> Result<(f64, f64)> {
    let a = rgb_to_ycbcr(&pair.clean)?;
    let b = rgb_to_ycbcr(&pair.degraded)?;
    let n = a.lum().len() as f64;
    let dy = a.lum().iter().zip(b.lum()).map(|(x, y)| (x - y).abs()).sum::<f64>() / n;
    let dc = a.chrom().iter().zip(b.chrom()).map(|(x, y)| (x - y).abs()).sum::<f64>() / n;
    Ok((dy, dc))
}

/// Restored image for every pair: LCDN alone when `lgdm` is `None`.
pub fn restore_pairs(
    pairs: &[ImagePair],
    lcdn: &ParamStore<f32>,
    lcdn_cfg: &LcdnConfig,
    lgdm: Option<(&ParamStore<f32>, &LgdmConfig)>,
    sample: &SampleConfig,
) -> Result<Vec<Image>> {
    pairs
        .iter()
        .map(|p| match lgdm {
            Some((g, gcfg)) => restore_lcdiff(lcdn, lcdn_cfg, g, gcfg, sample, &p.degraded),
            None => restore_rgb(lcdn, lcdn_cfg, &p.degraded),
        })
        .collect()
}

pub fn report_for(pairs: &[ImagePair], restored: &[Image]) -> Result<MetricReport> {
    let scores: Vec<ImageScore> = pairs
        .iter()
        .zip(restored)
        .map(|(p, r)| score(&p.id, p.kind, p.severity, r, &p.clean))
        .collect::<Result<_>>()?;
    MetricReport::from_scores(scores)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub k: f64,
    pub psnr: f64,
    pub ssim: f64,
    /// ω at `t = 0, T/20, …, T`.
    pub omega: Vec<f64>,
    pub final_denoise: f64,
}

pub fn omega_curve(steps: usize, k: f64) -> Vec<f64> {
    (0..=20).map(|j| omega(steps * j / 20, steps, k)).collect()
}

/// Trains one denoiser per `k` and scores full restoration on `eval`.
#[allow(clippy::too_many_arguments)]
pub fn ablate_k(
    examples: &[(Tensor<f32>, Tensor<f32>)],
    eval: &[ImagePair],
    lcdn: &ParamStore<f32>,
    lcdn_cfg: &LcdnConfig,
    lgdm_cfg: &LgdmConfig,
    train_cfg: &LgdmTrainConfig,
    sample: &SampleConfig,
    ks: &[f64],
    config_hash: &str,
) -> Result<Vec<AblationRow>> {
    ks.iter()
        .map(|&k| {
            let cfg = LgdmConfig { k, ..lgdm_cfg.clone() };
            let run = train_lgdm(examples, &cfg, train_cfg, None, config_hash)?;
            let restored = restore_pairs(eval, lcdn, lcdn_cfg, Some((&run.ema, &cfg)), sample)?;
            let report = report_for(eval, &restored)?;
            let tail = run.history.len().div_ceil(10).max(1);
            let final_denoise = run.history.iter().rev().take(tail).map(|h| h.denoise).sum::<f64>() / tail as f64;
            log::info!("k = {k}: PSNR {:.3} SSIM {:.4}", report.overall.psnr, report.overall.ssim);
            Ok(AblationRow {
                k,
                psnr: report.overall.psnr,
                ssim: report.overall.ssim,
                omega: omega_curve(cfg.timesteps, k),
                final_denoise,
            })
        })
        .collect()
}

pub fn ablation_table(rows: &[AblationRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:>4} {:>9} {:>7} {:>10} {:>10}", "k", "PSNR", "SSIM", "omega(T)", "denoise");
    for r in rows {
        let _ = writeln!(
            out,
            "{:>4} {:>9.3} {:>7.4} {:>10.6} {:>10.5}",
            r.k,
            r.psnr,
            r.ssim,
            r.omega.last().copied().unwrap_or(f64::NAN),
            r.final_denoise
        );
    }
    out
}

fn plot_err(e: impl std::fmt::Display) -> Error {
    Error::InvalidArgument(format!("plot: {e}"))
}

/// Line chart of named series.
pub fn plot_lines(path: &Path, title: &str, x_label: &str, y_label: &str, series: &[(String, Vec<(f64, f64)>)]) -> Result<()> {
    let pts = series.iter().flat_map(|(_, s)| s.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in pts.filter(|(x, y)| x.is_finite() && y.is_finite()) {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if x0 > x1 {
        return Err(Error::InvalidArgument("plot: no finite points".into()));
    }
    let pad = ((y1 - y0) * 0.05).max(1e-9);
    let root = SVGBackend::new(path, (720, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(56)
        .build_cartesian_2d(x0..x1.max(x0 + 1e-9), (y0 - pad)..(y1 + pad))
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc(x_label)
        .y_desc(y_label)
        .draw()
        .map_err(plot_err)?;
    for (i, (name, s)) in series.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        chart
            .draw_series(LineSeries::new(s.iter().copied(), color.stroke_width(2)))
            .map_err(plot_err)?
            .label(name.as_str())
            .legend(move |(x, y)| PathElement::new([(x, y), (x + 16, y)], color.stroke_width(2)));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)
}

/// Bar chart, one bar per label.
pub fn plot_bars(path: &Path, title: &str, y_label: &str, bars: &[(String, f64)]) -> Result<()> {
    if bars.is_empty() {
        return Err(Error::InvalidArgument("plot: no bars".into()));
    }
    let lo = bars.iter().map(|b| b.1).fold(f64::MAX, f64::min).min(0.0);
    let hi = bars.iter().map(|b| b.1).fold(f64::MIN, f64::max).max(lo + 1e-9);
    let root = SVGBackend::new(path, (720, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let n = bars.len();
    let labels: Vec<String> = bars.iter().map(|b| b.0.clone()).collect();
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(56)
        .build_cartesian_2d(0f64..n as f64, lo..hi * 1.05)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .disable_x_mesh()
        .x_labels(n)
        .x_label_formatter(&|x| labels.get(x.floor() as usize).cloned().unwrap_or_default())
        .y_desc(y_label)
        .draw()
        .map_err(plot_err)?;
    chart
        .draw_series(bars.iter().enumerate().map(|(i, b)| {
            Rectangle::new([(i as f64 + 0.15, lo), (i as f64 + 0.85, b.1)], Palette99::pick(i).filled())
        }))
        .map_err(plot_err)?;
    root.present().map_err(plot_err)
}

/// ω curves per k and PSNR against k.
pub fn plot_ablation(dir: &Path, rows: &[AblationRow]) -> Result<()> {
    let series: Vec<(String, Vec<(f64, f64)>)> = rows
        .iter()
        .map(|r| {
            let n = (r.omega.len() - 1) as f64;
            (format!("k = {}", r.k), r.omega.iter().enumerate().map(|(j, &w)| (j as f64 / n, w)).collect())
        })
        .collect();
    plot_lines(&dir.join("omega_curves.svg"), "DTS weight per k", "t / T", "omega", &series)?;
    let psnr: Vec<(f64, f64)> = rows.iter().map(|r| (r.k, r.psnr)).collect();
    plot_lines(&dir.join("psnr_vs_k.svg"), "PSNR against k", "k", "PSNR (dB)", &[("PSNR".to_string(), psnr)])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn swap_rows_and_table() {
        let data = DataConfig {
            n_train: 2,
            n_heldout: 1,
            size: 32,
            ..DataConfig::default()
        };
        let sets = toy_sets(&data, 3).unwrap();
        assert_eq!(sets.train.len(), 14);
        assert_eq!(sets.heldout.len(), 7);
        let rows = swap_experiment(&sets.train).unwrap();
        assert!(rows.iter().all(SwapRow::ordered), "{}", swap_table(&rows));
        assert!(swap_table(&rows).contains("14 of 14"));
    }

    #[test]
    fn cycle_pairing_assigns_one_kind_per_scene() {
        let data = DataConfig {
            n_train: 9,
            n_heldout: 0,
            size: 16,
            pairing: Pairing::Cycle,
            ..DataConfig::default()
        };
        let sets = toy_sets(&data, 1).unwrap();
        assert_eq!(sets.train.len(), 9);
        assert_eq!(sets.train[7].kind, WeatherKind::Densefog);
        assert_eq!(sets.train[6].kind, WeatherKind::Rainfog);
    }

    #[test]
    fn omega_curves_are_monotone() {
        for k in [0.0, 1.0, 3.0, 5.0, 7.0] {
            let c = omega_curve(200, k);
            assert_eq!(c[0], 1.0);
            assert!(c.windows(2).all(|w| if k > 0.0 { w[1] < w[0] } else { w[1] == w[0] }));
        }
    }

    #[test]
    fn plots_are_written() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.svg");
        plot_lines(&p, "t", "x", "y", &[("s".into(), vec![(0.0, 1.0), (1.0, 0.5)])]).unwrap();
        assert!(std::fs::read_to_string(&p).unwrap().contains("<svg"));
        let q = dir.path().join("b.svg");
        plot_bars(&q, "t", "y", &[("a".into(), 1.0), ("b".into(), 2.0)]).unwrap();
        assert!(std::fs::metadata(&q).unwrap().len() > 0);
    }
}
