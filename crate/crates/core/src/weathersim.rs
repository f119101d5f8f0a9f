//! Procedural weather degradations and paired toy datasets.
//!
//! Every recipe is a function of the clean image, an intensity in `[0, 1]`
//! (severity / 5) and a generator seeded from `(kind, seed)`. Random layouts
//! (streak positions, droplets, noise lattices) are shared across severities
//! of the same seed and only their count or strength grows with severity, so
//! a higher severity never removes damage a lower one introduced.
//!
//! Scene geometry is proxied: depth grows towards the top of the frame, the
//! top quarter of rows is sky and the bottom quarter is street.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::colorlab::Image;
use crate::error::{ensure, Error, Result};

pub const AIRLIGHT: f64 = 0.8;
pub const MAX_SEVERITY: u8 = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeatherKind {
    Densefog,
    Overcast,
    Glare,
    Rainstreaks,
    Raindrops,
    Puddles,
    Rainfog,
}

impl WeatherKind {
    pub const ALL: [WeatherKind; 7] = [
        WeatherKind::Densefog,
        WeatherKind::Overcast,
        WeatherKind::Glare,
        WeatherKind::Rainstreaks,
        WeatherKind::Raindrops,
        WeatherKind::Puddles,
        WeatherKind::Rainfog,
    ];

    pub fn name(self) -> &'static str {
        match self {
            WeatherKind::Densefog => "densefog",
            WeatherKind::Overcast => "overcast",
            WeatherKind::Glare => "glare",
            WeatherKind::Rainstreaks => "rainstreaks",
            WeatherKind::Raindrops => "raindrops",
            WeatherKind::Puddles => "puddles",
            WeatherKind::Rainfog => "rainfog",
        }
    }

    fn salt(self) -> u64 {
        0x9e37_79b9_7f4a_7c15u64.wrapping_mul(self as u64 + 1)
    }
}

impl fmt::Display for WeatherKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for WeatherKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        WeatherKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown weather kind `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeatherSpec {
    pub kind: WeatherKind,
    pub severity: u8,
    pub seed: u64,
}

impl WeatherSpec {
    pub fn new(kind: WeatherKind, severity: u8, seed: u64) -> Result<Self> {
        ensure!(
            (1..=MAX_SEVERITY).contains(&severity),
            InvalidArgument,
            "severity {severity} outside 1..={MAX_SEVERITY}"
        );
        Ok(Self { kind, severity, seed })
    }

    pub fn intensity(&self) -> f64 {
        self.severity as f64 / MAX_SEVERITY as f64
    }
}

/// Degrades `clean` according to `spec`.
pub fn synthesize(clean: &Image, spec: &WeatherSpec) -> Result<Image> {
    let spec = WeatherSpec::new(spec.kind, spec.severity, spec.seed)?;
    Ok(synthesize_with_intensity(clean, spec.kind, spec.intensity(), spec.seed))
}

/// Degradation at a continuous intensity; intensity 0 returns `clean`.
pub fn synthesize_with_intensity(clean: &Image, kind: WeatherKind, intensity: f64, seed: u64) -> Image {
    let i = intensity.clamp(0.0, 1.0);
    if i == 0.0 {
        return clean.clone();
    }
    let mut img = clean.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ kind.salt());
    match kind {
        WeatherKind::Densefog => {
            desaturate_all(&mut img, 0.25 * i);
            fog(&mut img, 4.0 * i);
        }
        WeatherKind::Overcast => overcast(&mut img, i),
        WeatherKind::Glare => glare(&mut img, i, &mut rng),
        WeatherKind::Rainstreaks => rain_streaks(&mut img, i, &mut rng),
        WeatherKind::Raindrops => raindrops(&mut img, i, &mut rng),
        WeatherKind::Puddles => puddles(&mut img, i, &mut rng),
        WeatherKind::Rainfog => {
            overcast(&mut img, 0.6 * i);
            puddles(&mut img, 0.8 * i, &mut rng);
            rain_streaks(&mut img, 0.8 * i, &mut rng);
            raindrops(&mut img, 0.6 * i, &mut rng);
            fog(&mut img, 2.5 * i);
        }
    }
    img.clamped()
}

fn luma(p: [f64; 3]) -> f64 {
    0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]
}

fn mix(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

fn for_each_pixel(img: &mut Image, mut f: impl FnMut(usize, usize, [f64; 3]) -> [f64; 3]) {
    for y in 0..img.height() {
        for x in 0..img.width() {
            let p = img.get(y, x);
            img.set(y, x, f(y, x, p));
        }
    }
}

/// Normalised depth proxy: 1 at the top row, 0 at the bottom row.
fn depth(y: usize, h: usize) -> f64 {
    1.0 - y as f64 / (h - 1) as f64
}

fn sky_rows(h: usize) -> usize {
    h / 4
}

fn desaturate_all(img: &mut Image, amount: f64) {
    for_each_pixel(img, |_, _, p| {
        let l = luma(p);
        p.map(|c| mix(c, l, amount))
    });
}

/// Atmospheric scattering `I·tr + A·(1−tr)` with `tr = exp(−β·depth)`.
fn fog(img: &mut Image, beta: f64) {
    let h = img.height();
    for_each_pixel(img, |y, _, p| {
        let tr = (-beta * depth(y, h)).exp();
        p.map(|c| c * tr + AIRLIGHT * (1.0 - tr))
    });
}

/// Desaturation, dimming and a gray sky band.
fn overcast(img: &mut Image, i: f64) {
    let h = img.height();
    let sky = sky_rows(h);
    let gray = 0.62;
    for_each_pixel(img, |y, _, p| {
        let l = luma(p);
        let mut q = p.map(|c| mix(c, l, 0.6 * i) * (1.0 - 0.35 * i));
        if y < sky {
            // soft edge over the lowest rows of the sky band
            let edge = ((sky - y) as f64 / 3.0).min(1.0);
            q = q.map(|c| mix(c, gray, 0.9 * i * edge));
        }
        q
    });
}

/// Screen-blended Gaussian bloom centred in the sky band.
fn glare(img: &mut Image, i: f64, rng: &mut ChaCha8Rng) {
    let (h, w) = (img.height() as f64, img.width() as f64);
    let cy = rng.random_range(0.0..h * 0.25);
    let cx = rng.random_range(0.2 * w..0.8 * w);
    let sigma = w * (0.12 + 0.18 * i);
    let amp = 0.95 * i;
    for_each_pixel(img, |y, x, p| {
        let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
        let g = amp * (-d2 / (2.0 * sigma * sigma)).exp();
        p.map(|c| 1.0 - (1.0 - c) * (1.0 - g))
    });
}

const MAX_STREAKS_PER_4096: usize = 220;

/// Oriented line particles blended towards a light gray.
fn rain_streaks(img: &mut Image, i: f64, rng: &mut ChaCha8Rng) {
    let (h, w) = (img.height(), img.width());
    let max = MAX_STREAKS_PER_4096 * h * w / 4096;
    let angle = rng.random_range(-0.35f64..0.35);
    let (dy, dx) = (angle.cos(), angle.sin());
    // the layout is drawn in full so it does not depend on the intensity
    let particles: Vec<(f64, f64, f64)> = (0..max)
        .map(|_| {
            (
                rng.random_range(0.0..h as f64),
                rng.random_range(0.0..w as f64),
                rng.random_range(0.5..1.0),
            )
        })
        .collect();
    let count = (max as f64 * i).round() as usize;
    let len = 4.0 + 10.0 * i;
    let alpha = 0.15 + 0.45 * i;
    let mut coverage = vec![0.0f64; h * w];
    for &(py, px, weight) in &particles[..count] {
        let steps = (len * 2.0) as usize;
        for s in 0..=steps {
            let t = s as f64 / steps as f64 * len;
            let (y, x) = ((py + t * dy).round(), (px + t * dx).round());
            if y >= 0.0 && x >= 0.0 && (y as usize) < h && (x as usize) < w {
                let c = &mut coverage[y as usize * w + x as usize];
                *c = c.max(weight);
            }
        }
    }
    for_each_pixel(img, |y, x, p| {
        let a = alpha * coverage[y * w + x];
        p.map(|c| mix(c, 0.88, a))
    });
}

fn box_blur(img: &Image, radius: usize) -> Image {
    let (h, w) = (img.height(), img.width());
    let mut out = img.clone();
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0; 3];
            let mut n = 0.0;
            for yy in y.saturating_sub(radius)..(y + radius + 1).min(h) {
                for xx in x.saturating_sub(radius)..(x + radius + 1).min(w) {
                    let p = img.get(yy, xx);
                    for c in 0..3 {
                        acc[c] += p[c];
                    }
                    n += 1.0;
                }
            }
            out.set(y, x, acc.map(|v| v / n));
        }
    }
    out
}

const MAX_DROPS: usize = 14;

/// Lens droplets: blurred, brightened discs with soft rims.
fn raindrops(img: &mut Image, i: f64, rng: &mut ChaCha8Rng) {
    let (h, w) = (img.height() as f64, img.width() as f64);
    let scale = w.min(h) / 64.0;
    let drops: Vec<(f64, f64, f64)> = (0..MAX_DROPS)
        .map(|_| {
            (
                rng.random_range(0.0..h),
                rng.random_range(0.0..w),
                rng.random_range(2.5..6.5) * scale,
            )
        })
        .collect();
    let count = (MAX_DROPS as f64 * i).round() as usize;
    if count == 0 {
        return;
    }
    let blurred = box_blur(img, 2);
    let mut mask = vec![0.0f64; img.height() * img.width()];
    let iw = img.width();
    for &(cy, cx, r) in &drops[..count] {
        for (idx, m) in mask.iter_mut().enumerate() {
            let (y, x) = ((idx / iw) as f64, (idx % iw) as f64);
            let d = ((y - cy).powi(2) + (x - cx).powi(2)).sqrt();
            let v = ((r - d) / 1.5).clamp(0.0, 1.0);
            *m = m.max(v);
        }
    }
    let strength = 0.5 + 0.5 * i;
    for_each_pixel(img, |y, x, p| {
        let m = mask[y * iw + x] * strength;
        let b = blurred.get(y, x);
        std::array::from_fn(|c| mix(p[c], (b[c] + 0.25).min(1.0), m))
    });
}

/// Smoothly interpolated lattice noise in `[0, 1]`.
fn value_noise(h: usize, w: usize, cell: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let gh = h / cell + 2;
    let gw = w / cell + 2;
    let lattice: Vec<f64> = (0..gh * gw).map(|_| rng.random::<f64>()).collect();
    let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        let fy = y as f64 / cell as f64;
        let (y0, ty) = (fy as usize, smooth(fy.fract()));
        for x in 0..w {
            let fx = x as f64 / cell as f64;
            let (x0, tx) = (fx as usize, smooth(fx.fract()));
            let g = |yy: usize, xx: usize| lattice[yy * gw + xx];
            let top = mix(g(y0, x0), g(y0, x0 + 1), tx);
            let bot = mix(g(y0 + 1, x0), g(y0 + 1, x0 + 1), tx);
            out[y * w + x] = mix(top, bot, ty);
        }
    }
    out
}

/// Dark wet patches on the street band that mirror the scene's luminance.
fn puddles(img: &mut Image, i: f64, rng: &mut ChaCha8Rng) {
    let (h, w) = (img.height(), img.width());
    let noise = value_noise(h, w, (w / 6).max(2), rng);
    let street = h - h / 4;
    let threshold = 1.0 - 0.75 * i;
    let src = img.clone();
    for_each_pixel(img, |y, x, p| {
        if y < street || i == 0.0 {
            return p;
        }
        let m = ((noise[y * w + x] - threshold) / 0.08).clamp(0.0, 1.0) * i.sqrt();
        // reflection of the row mirrored about the street edge
        let ry = (2 * street).saturating_sub(y + 1).min(h - 1);
        let refl = luma(src.get(ry, x));
        p.map(|c| mix(c, 0.45 * c + 0.3 * refl, m))
    });
}

/// Toy outdoor scene: sky gradient, horizon buildings, road and texture.
pub fn clean_scene(height: usize, width: usize, seed: u64) -> Result<Image> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = Image::filled(height, width, [0.0; 3])?;
    let (h, w) = (height as f64, width as f64);
    let horizon = rng.random_range(0.3..0.5) * h;
    let sky_top = [rng.random_range(0.45..0.6), rng.random_range(0.6..0.72), rng.random_range(0.78..0.9)];
    let sky_bot = [0.82, 0.85, 0.88];
    let ground = rng.random_range(0.3..0.42);
    let tint = [rng.random_range(-0.04..0.04), rng.random_range(-0.04..0.04), rng.random_range(-0.04..0.04)];
    // buildings: muted colours along the horizon
    let buildings: Vec<(f64, f64, f64, [f64; 3])> = (0..rng.random_range(3..6))
        .map(|_| {
            let x0 = rng.random_range(0.0..w);
            let bw = rng.random_range(0.1..0.3) * w;
            let top = horizon - rng.random_range(0.05..0.3) * h;
            let base = rng.random_range(0.25..0.6);
            let col = [
                base + rng.random_range(-0.08..0.08),
                base + rng.random_range(-0.08..0.08),
                base + rng.random_range(-0.08..0.08),
            ];
            (x0, bw, top, col)
        })
        .collect();
    let freq = rng.random_range(0.3..0.8);
    let phase = rng.random_range(0.0..6.28);
    let lane = rng.random_range(0.4..0.6) * w;
    for y in 0..height {
        for x in 0..width {
            let (fy, fx) = (y as f64, x as f64);
            let mut p = if fy < horizon {
                let t = fy / horizon;
                std::array::from_fn(|c| mix(sky_top[c], sky_bot[c], t))
            } else {
                let t = (fy - horizon) / (h - horizon);
                let g = ground * (0.8 + 0.4 * t);
                [g + tint[0], g + tint[1], g + tint[2]]
            };
            for &(x0, bw, top, col) in &buildings {
                if fx >= x0 && fx < x0 + bw && fy >= top && fy < horizon + 2.0 {
                    // window grid texture
                    let win = ((fx - x0) as usize / 3 % 2 == 0) && (fy as usize / 3 % 2 == 0);
                    let k = if win { 1.12 } else { 0.95 };
                    p = col.map(|c| c * k);
                }
            }
            if fy >= horizon {
                // lane marking converging towards the horizon
                let spread = (fy - horizon) / (h - horizon);
                if (fx - lane).abs() < 0.6 + 1.2 * spread && (fy as usize / 4) % 2 == 0 {
                    p = [0.85, 0.83, 0.7];
                }
                let tex = 0.03 * ((fx * freq + phase).sin() * (fy * freq * 1.3).cos());
                p = p.map(|c| c + tex);
            }
            img.set(y, x, p);
        }
    }
    Ok(img.clamped())
}

/// How clean scenes are combined with weather kinds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pairing {
    /// Every clean scene with every kind and severity.
    Product,
    /// Clean scene `i` with kind `i mod kinds` and severity `i mod severities`.
    Cycle,
}

impl Pairing {
    /// `(kind, severity)` combinations applied to clean scene `index`.
    pub fn plan(self, index: usize, kinds: &[WeatherKind], severities: &[u8]) -> Vec<(WeatherKind, u8)> {
        match self {
            Pairing::Product => kinds
                .iter()
                .flat_map(|&k| severities.iter().map(move |&s| (k, s)))
                .collect(),
            Pairing::Cycle => vec![(kinds[index % kinds.len()], severities[index % severities.len()])],
        }
    }
}

/// One (degraded, clean) training or evaluation pair.
#[derive(Clone, Debug)]
pub struct ImagePair {
    pub clean: Image,
    pub degraded: Image,
    pub kind: WeatherKind,
    pub severity: u8,
    pub id: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub clean_path: String,
    pub degraded_path: String,
    pub kind: WeatherKind,
    pub severity: u8,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub entries: Vec<ManifestEntry>,
}

pub const DATASET_MANIFEST: &str = "manifest.json";

impl DatasetManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_vec_pretty(self)?).map_err(|e| Error::io(path, e))
    }
}

/// Writes `n` toy clean scenes as `clean_XXX.png` into `dir`.
pub fn write_clean_scenes(dir: &Path, n: usize, size: usize, seed: u64) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    (0..n)
        .map(|k| {
            let path = dir.join(format!("clean_{k:03}.png"));
            clean_scene(size, size, seed.wrapping_add(k as u64))?.write_png(&path)?;
            Ok(path)
        })
        .collect()
}

fn png_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    Ok(files)
}

/// Per-pair seed derived from the dataset seed and the clean image index.
pub fn pair_seed(seed: u64, clean_index: usize) -> u64 {
    seed.wrapping_mul(0x100_0000_01b3).wrapping_add(clean_index as u64)
}

/// Degrades every clean PNG in `clean_dir` for each kind and severity,
/// writing PNGs and `manifest.json` under `out_dir`. Manifest paths are
/// relative to `out_dir` when possible.
pub fn build_dataset(
    clean_dir: &Path,
    out_dir: &Path,
    kinds: &[WeatherKind],
    severities: &[u8],
    pairing: Pairing,
    seed: u64,
) -> Result<DatasetManifest> {
    let cleans = png_files(clean_dir)?;
    ensure!(!cleans.is_empty(), InvalidArgument, "no PNG images in {}", clean_dir.display());
    ensure!(!kinds.is_empty() && !severities.is_empty(), InvalidArgument, "no kinds or severities selected");
    let deg_dir = out_dir.join("degraded");
    fs::create_dir_all(&deg_dir).map_err(|e| Error::io(&deg_dir, e))?;
    let clean_root = fs::canonicalize(clean_dir).map_err(|e| Error::io(clean_dir, e))?;
    let out_root = fs::canonicalize(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut entries = Vec::new();
    for (ci, clean_path) in cleans.iter().enumerate() {
        let clean = Image::read_png(clean_path)?;
        let stem = clean_path.file_stem().unwrap_or_default().to_string_lossy();
        let s = pair_seed(seed, ci);
        for (kind, severity) in pairing.plan(ci, kinds, severities) {
            let spec = WeatherSpec::new(kind, severity, s)?;
            let name = format!("{stem}_{kind}_s{severity}.png");
            synthesize(&clean, &spec)?.write_png(deg_dir.join(&name))?;
            let abs_clean = clean_root.join(clean_path.file_name().unwrap_or_default());
            let clean_rel = relative_to(&abs_clean, &out_root);
            entries.push(ManifestEntry {
                clean_path: clean_rel.to_string_lossy().into_owned(),
                degraded_path: format!("degraded/{name}"),
                kind,
                severity,
                seed: s,
            });
        }
    }
    let manifest = DatasetManifest { version: 1, entries };
    manifest.write(&out_dir.join(DATASET_MANIFEST))?;
    Ok(manifest)
}

/// `path` relative to `base` (both absolute), climbing with `..` as needed.
fn relative_to(path: &Path, base: &Path) -> PathBuf {
    let p: Vec<_> = path.components().collect();
    let b: Vec<_> = base.components().collect();
    let common = p.iter().zip(&b).take_while(|(x, y)| x == y).count();
    let mut out = PathBuf::new();
    for _ in common..b.len() {
        out.push("..");
    }
    for c in &p[common..] {
        out.push(c);
    }
    out
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Loads every pair listed in a dataset manifest.
pub fn load_pairs(manifest_path: &Path) -> Result<Vec<ImagePair>> {
    let manifest = DatasetManifest::read(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    manifest
        .entries
        .iter()
        .map(|e| {
            Ok(ImagePair {
                clean: Image::read_png(resolve(base, &e.clean_path))?,
                degraded: Image::read_png(resolve(base, &e.degraded_path))?,
                kind: e.kind,
                severity: e.severity,
                id: Path::new(&e.degraded_path)
                    .file_stem()
                    .unwrap_or_default()
                    .to_string_lossy()
                    .into_owned(),
            })
        })
        .collect()
}

/// Builds pairs in memory, matching what [`build_dataset`] writes for
/// scenes named `clean_XXX.png`.
pub fn synth_pairs(
    cleans: &[Image],
    kinds: &[WeatherKind],
    severities: &[u8],
    pairing: Pairing,
    seed: u64,
) -> Result<Vec<ImagePair>> {
    let mut out = Vec::new();
    for (ci, clean) in cleans.iter().enumerate() {
        let s = pair_seed(seed, ci);
        for (kind, severity) in pairing.plan(ci, kinds, severities) {
            let degraded = synthesize(clean, &WeatherSpec::new(kind, severity, s)?)?;
            out.push(ImagePair {
                clean: clean.clone(),
                degraded,
                kind,
                severity,
                id: format!("clean_{ci:03}_{kind}_s{severity}"),
            });
        }
    }
    Ok(out)
}
