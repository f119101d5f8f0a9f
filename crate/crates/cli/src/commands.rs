use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use lcdiff::checkpoint::{self, Manifest};
use lcdiff::colorlab::Image;
use lcdiff::config::RunConfig;
use lcdiff::experiments::{
    ablate_k, ablation_table, channel_deltas, plot_ablation, plot_bars, plot_lines, swap_experiment, swap_table,
    toy_sets, AblationRow, HELDOUT_OFFSET,
};
use lcdiff::lcdn::{restore_rgb, train_lcdn, LcdnConfig};
use lcdiff::lgdm::{prepare_examples, restore_lcdiff, train_lgdm, LgdmConfig, LgdmStepLog, SampleConfig};
use lcdiff::metrics::{evaluate, MetricReport};
use lcdiff::nn::ParamStore;
use lcdiff::weathersim::{build_dataset, load_pairs, DatasetManifest, WeatherKind};
use lcdiff::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::rundir::{self, write};
use crate::{Cli, Command};

const TRAIN_MANIFEST: &str = "data/train/manifest.json";
const HELDOUT_MANIFEST: &str = "data/heldout/manifest.json";
const LCDN_CKPT: &str = "lcdn";
const LGDM_EMA_CKPT: &str = "lgdm/ema";
const RESTORED: &str = "restored";
const RESTORE_SOURCE: &str = "source.json";

#[derive(Serialize, Deserialize)]
struct RestoreSource {
    manifest: Option<PathBuf>,
}

#[derive(Serialize, Deserialize)]
struct LcdnHistory {
    loss: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct LgdmHistory {
    steps: Vec<LgdmStepLog>,
}

#[derive(Serialize)]
struct SwapReport<'a> {
    config_hash: &'a str,
    rows: &'a [lcdiff::experiments::SwapRow],
    ordered: usize,
    /// Mean `|ΔY|` and `|ΔCb|+|ΔCr|` per kind.
    dominance: BTreeMap<WeatherKind, (f64, f64)>,
}

#[derive(Serialize, Deserialize)]
struct AblationReport {
    config_hash: String,
    rows: Vec<AblationRow>,
}

/// Applies the command's overrides, then runs it in a new run directory.
pub fn run(cli: &Cli, mut cfg: RunConfig) -> Result<PathBuf> {
    match &cli.command {
        Command::TrainLcdn { steps: Some(s), .. } => cfg.lcdn_train.steps = *s,
        Command::TrainLgdm { steps, k, .. } => {
            if let Some(s) = steps {
                cfg.lgdm_train.steps = *s;
            }
            if let Some(k) = k {
                cfg.lgdm.k = *k;
            }
        }
        Command::Restore { tau, steps, .. } => {
            if tau.is_some() {
                cfg.sample.tau = *tau;
            }
            if let Some(s) = steps {
                cfg.sample.n_steps = *s;
            }
        }
        Command::AblateK { steps, k, .. } => {
            if let Some(s) = steps {
                cfg.ablation.steps = *s;
            }
            if let Some(k) = k {
                cfg.ablation.ks = k.clone();
            }
        }
        _ => {}
    }
    cfg.validate()?;
    let base = rundir::base_dir(&cli.global.out);
    let hash = cfg.hash();
    let dir = rundir::create(&base, &hash)?;
    write(&dir.join("config.toml"), cfg.to_toml()?)?;
    log::info!("run directory {}", dir.display());
    let ctx = Ctx {
        cfg,
        hash,
        base,
        dir: dir.clone(),
    };
    match &cli.command {
        Command::Synth => ctx.synth()?,
        Command::TrainLcdn { data, .. } => ctx.train_lcdn(data.as_deref())?,
        Command::TrainLgdm { data, lcdn, .. } => ctx.train_lgdm(data.as_deref(), lcdn.as_deref())?,
        Command::Restore {
            input, data, lcdn, lgdm, ..
        } => ctx.restore(input.as_deref(), data.as_deref(), lcdn.as_deref(), lgdm.as_deref())?,
        Command::Eval { restored, data } => ctx.eval(restored.as_deref(), data.as_deref())?,
        Command::SwapExp { data } => ctx.swap_exp(data.as_deref())?,
        Command::AblateK {
            data, heldout, lcdn, ..
        } => ctx.ablate_k(data.as_deref(), heldout.as_deref(), lcdn.as_deref())?,
        Command::Plot { run } => ctx.plot(run)?,
    }
    Ok(dir)
}

struct Ctx {
    cfg: RunConfig,
    hash: String,
    base: PathBuf,
    dir: PathBuf,
}

/// Model configuration stored in a checkpoint, or `fallback` for
/// checkpoints written without one.
fn model_config<C: serde::de::DeserializeOwned>(m: &Manifest, fallback: &C) -> Result<C>
where
    C: Clone,
{
    if m.meta.model.is_null() {
        return Ok(fallback.clone());
    }
    serde_json::from_value(m.meta.model.clone())
        .map_err(|e| Error::Config(format!("checkpoint model configuration: {e}")))
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)?)
}

impl Ctx {
    fn find(&self, explicit: Option<&Path>, rel: &str, what: &str, hint: &str) -> Result<PathBuf> {
        rundir::resolve(explicit, &self.base, rel, what, hint)
    }

    fn train_manifest(&self, explicit: Option<&Path>) -> Result<PathBuf> {
        self.find(explicit, TRAIN_MANIFEST, "training manifest", "run `lcdiff synth` or pass --data")
    }

    fn heldout_manifest(&self, explicit: Option<&Path>) -> Result<PathBuf> {
        self.find(explicit, HELDOUT_MANIFEST, "held-out manifest", "run `lcdiff synth` or pass --data")
    }

    fn load_lcdn(&self, explicit: Option<&Path>) -> Result<(ParamStore<f32>, LcdnConfig)> {
        let dir = self.find(explicit, LCDN_CKPT, "LCDN checkpoint", "run `lcdiff train-lcdn` or pass --lcdn")?;
        let (params, manifest) = checkpoint::load(&dir)?;
        Ok((params, model_config(&manifest, &self.cfg.lcdn)?))
    }

    fn load_lgdm(&self, explicit: Option<&Path>) -> Result<(ParamStore<f32>, LgdmConfig)> {
        let dir = self.find(explicit, LGDM_EMA_CKPT, "LGDM checkpoint", "run `lcdiff train-lgdm` or pass --lgdm")?;
        let (params, manifest) = checkpoint::load(&dir)?;
        Ok((params, model_config(&manifest, &self.cfg.lgdm)?))
    }

    fn synth(&self) -> Result<()> {
        let (train, heldout) = lcdiff::experiments::clean_splits(&self.cfg.data, self.cfg.seed)?;
        let data = self.dir.join("data");
        let d = &self.cfg.data;
        for (split, cleans, seed) in [
            ("train", &train, self.cfg.seed),
            ("heldout", &heldout, self.cfg.seed.wrapping_add(HELDOUT_OFFSET)),
        ] {
            let clean_dir = data.join(format!("clean_{split}"));
            std::fs::create_dir_all(&clean_dir).map_err(|e| rundir::io(&clean_dir, e))?;
            for (i, img) in cleans.iter().enumerate() {
                img.write_png(clean_dir.join(format!("clean_{i:03}.png")))?;
            }
            let out = data.join(split);
            let m = build_dataset(&clean_dir, &out, &d.kinds, &d.severities, d.pairing, seed)?;
            log::info!("{split}: {} pairs in {}", m.entries.len(), out.display());
        }
        Ok(())
    }

    fn train_lcdn(&self, data: Option<&Path>) -> Result<()> {
        let manifest = self.train_manifest(data)?;
        let pairs = load_pairs(&manifest)?;
        log::info!("training LCDN on {} pairs for {} steps", pairs.len(), self.cfg.lcdn_train.steps);
        let run = train_lcdn(&pairs, &self.cfg.lcdn, &self.cfg.lcdn_train, Some(&self.dir.join(LCDN_CKPT)), &self.hash)?;
        write(&self.dir.join("lcdn_history.json"), to_json(&LcdnHistory { loss: run.history.clone() })?)?;
        plot_lcdn_history(&self.dir.join("lcdn_loss.svg"), &run.history)
    }

    fn train_lgdm(&self, data: Option<&Path>, lcdn: Option<&Path>) -> Result<()> {
        let (lcdn, lcdn_cfg) = self.load_lcdn(lcdn)?;
        let pairs = load_pairs(&self.train_manifest(data)?)?;
        let examples = prepare_examples(&pairs, &lcdn, &lcdn_cfg, &self.cfg.lgdm, self.cfg.lgdm_train.target)?;
        log::info!("training LGDM on {} examples for {} steps", examples.len(), self.cfg.lgdm_train.steps);
        let run = train_lgdm(&examples, &self.cfg.lgdm, &self.cfg.lgdm_train, Some(&self.dir.join("lgdm")), &self.hash)?;
        write(&self.dir.join("lgdm_history.json"), to_json(&LgdmHistory { steps: run.history.clone() })?)?;
        plot_lgdm_history(&self.dir.join("lgdm_loss.svg"), &run.history)
    }

    fn restore(&self, input: Option<&Path>, data: Option<&Path>, lcdn: Option<&Path>, lgdm: Option<&Path>) -> Result<()> {
        let (lcdn, lcdn_cfg) = self.load_lcdn(lcdn)?;
        let tau = self.cfg.tau();
        let refiner = if tau == 0 { None } else { Some(self.load_lgdm(lgdm)?) };
        let sample = SampleConfig {
            tau: Some(tau),
            ..self.cfg.sample
        };
        let (jobs, manifest): (Vec<PathBuf>, Option<PathBuf>) = match input {
            Some(p) => (vec![p.to_path_buf()], None),
            None => {
                let m = self.heldout_manifest(data)?;
                let base = m.parent().unwrap_or(Path::new(".")).to_path_buf();
                let entries = DatasetManifest::read(&m)?.entries;
                let abs = std::fs::canonicalize(&m).map_err(|e| rundir::io(&m, e))?;
                (entries.iter().map(|e| base.join(&e.degraded_path)).collect(), Some(abs))
            }
        };
        let out = self.dir.join(RESTORED);
        std::fs::create_dir_all(&out).map_err(|e| rundir::io(&out, e))?;
        for path in &jobs {
            let degraded = Image::read_png(path)?;
            let restored = match &refiner {
                None => restore_rgb(&lcdn, &lcdn_cfg, &degraded)?,
                Some((g, gcfg)) => restore_lcdiff(&lcdn, &lcdn_cfg, g, gcfg, &sample, &degraded)?,
            };
            let name = path.file_name().ok_or_else(|| Error::InvalidArgument(format!("{} has no file name", path.display())))?;
            restored.write_png(out.join(name))?;
        }
        log::info!("restored {} images with tau {tau}", jobs.len());
        write(&out.join(RESTORE_SOURCE), to_json(&RestoreSource { manifest })?)
    }

    fn eval(&self, restored: Option<&Path>, data: Option<&Path>) -> Result<()> {
        let restored = self.find(restored, RESTORED, "restored images", "run `lcdiff restore` or pass --restored")?;
        let manifest = match data {
            Some(p) => p.to_path_buf(),
            None => {
                let src = restored.join(RESTORE_SOURCE);
                let text = std::fs::read(&src).map_err(|e| rundir::io(&src, e))?;
                let source: RestoreSource = serde_json::from_slice(&text)?;
                source
                    .manifest
                    .ok_or_else(|| Error::Missing("restored images have no dataset manifest; pass --data".into()))?
            }
        };
        let mut report = evaluate(&restored, &manifest)?;
        report.config_hash = Some(self.hash.clone());
        write(&self.dir.join("report.json"), report.to_json()?)?;
        let table = report.to_table();
        print!("{table}");
        write(&self.dir.join("report.txt"), table)
    }

    fn swap_exp(&self, data: Option<&Path>) -> Result<()> {
        let pairs = match data {
            Some(m) => load_pairs(m)?,
            None => toy_sets(&self.cfg.data, self.cfg.seed)?.train,
        };
        let rows = swap_experiment(&pairs)?;
        let mut sums: BTreeMap<WeatherKind, (f64, f64, usize)> = BTreeMap::new();
        for p in &pairs {
            let (dy, dc) = channel_deltas(p)?;
            let e = sums.entry(p.kind).or_default();
            e.0 += dy;
            e.1 += dc;
            e.2 += 1;
        }
        let dominance = sums.into_iter().map(|(k, (y, c, n))| (k, (y / n as f64, c / n as f64))).collect();
        let report = SwapReport {
            config_hash: &self.hash,
            rows: &rows,
            ordered: rows.iter().filter(|r| r.ordered()).count(),
            dominance,
        };
        write(&self.dir.join("swap.json"), to_json(&report)?)?;
        let table = swap_table(&rows);
        print!("{table}");
        write(&self.dir.join("swap.txt"), table)
    }

    fn ablate_k(&self, data: Option<&Path>, heldout: Option<&Path>, lcdn: Option<&Path>) -> Result<()> {
        let (lcdn, lcdn_cfg) = self.load_lcdn(lcdn)?;
        let train = load_pairs(&self.train_manifest(data)?)?;
        let eval = load_pairs(&self.heldout_manifest(heldout)?)?;
        let examples = prepare_examples(&train, &lcdn, &lcdn_cfg, &self.cfg.lgdm, self.cfg.lgdm_train.target)?;
        let train_cfg = lcdiff::lgdm::LgdmTrainConfig {
            steps: self.cfg.ablation.steps,
            ..self.cfg.lgdm_train.clone()
        };
        let sample = SampleConfig {
            tau: Some(self.cfg.tau()),
            ..self.cfg.sample
        };
        let rows = ablate_k(
            &examples,
            &eval,
            &lcdn,
            &lcdn_cfg,
            &self.cfg.lgdm,
            &train_cfg,
            &sample,
            &self.cfg.ablation.ks,
            &self.hash,
        )?;
        let report = AblationReport {
            config_hash: self.hash.clone(),
            rows,
        };
        write(&self.dir.join("ablation.json"), to_json(&report)?)?;
        let table = ablation_table(&report.rows);
        print!("{table}");
        write(&self.dir.join("ablation.txt"), table)?;
        plot_ablation(&self.dir, &report.rows)
    }

    fn plot(&self, runs: &[PathBuf]) -> Result<()> {
        let pick = |name: &str| -> Option<PathBuf> {
            if runs.is_empty() {
                rundir::latest(&self.base, name)
            } else {
                runs.iter().map(|r| r.join(name)).find(|p| p.exists())
            }
        };
        let read = |p: &Path| -> Result<Vec<u8>> { std::fs::read(p).map_err(|e| rundir::io(p, e)) };
        let mut drawn = 0;
        if let Some(p) = pick("lcdn_history.json") {
            let h: LcdnHistory = serde_json::from_slice(&read(&p)?)?;
            plot_lcdn_history(&self.dir.join("lcdn_loss.svg"), &h.loss)?;
            drawn += 1;
        }
        if let Some(p) = pick("lgdm_history.json") {
            let h: LgdmHistory = serde_json::from_slice(&read(&p)?)?;
            plot_lgdm_history(&self.dir.join("lgdm_loss.svg"), &h.steps)?;
            drawn += 1;
        }
        if let Some(p) = pick("report.json") {
            let r: MetricReport = serde_json::from_slice(&read(&p)?)?;
            let psnr: Vec<(String, f64)> = r.per_kind.iter().map(|(k, m)| (k.name().to_string(), m.psnr)).collect();
            let ssim: Vec<(String, f64)> = r.per_kind.iter().map(|(k, m)| (k.name().to_string(), m.ssim)).collect();
            plot_bars(&self.dir.join("psnr_per_kind.svg"), "PSNR per weather kind", "PSNR (dB)", &psnr)?;
            plot_bars(&self.dir.join("ssim_per_kind.svg"), "SSIM per weather kind", "SSIM", &ssim)?;
            drawn += 1;
        }
        if let Some(p) = pick("ablation.json") {
            let a: AblationReport = serde_json::from_slice(&read(&p)?)?;
            plot_ablation(&self.dir, &a.rows)?;
            drawn += 1;
        }
        if drawn == 0 {
            return Err(Error::Missing(format!(
                "nothing to plot under {}; train, eval or ablate-k first",
                self.base.display()
            )));
        }
        Ok(())
    }
}

/// Mean over consecutive windows so long runs stay readable.
fn smoothed(values: &[f64]) -> Vec<(f64, f64)> {
    let w = (values.len() / 200).max(1);
    values
        .chunks(w)
        .enumerate()
        .map(|(i, c)| ((i * w) as f64, c.iter().sum::<f64>() / c.len() as f64))
        .collect()
}

fn plot_lcdn_history(path: &Path, loss: &[f64]) -> Result<()> {
    plot_lines(path, "LCDN restoration loss", "step", "loss", &[("L_res".to_string(), smoothed(loss))])
}

fn plot_lgdm_history(path: &Path, h: &[LgdmStepLog]) -> Result<()> {
    let denoise: Vec<f64> = h.iter().map(|s| s.denoise).collect();
    let dts: Vec<f64> = h.iter().map(|s| s.dts).collect();
    plot_lines(
        path,
        "LGDM losses",
        "step",
        "loss",
        &[("L_denoise".to_string(), smoothed(&denoise)), ("L_dts".to_string(), smoothed(&dts))],
    )
}
