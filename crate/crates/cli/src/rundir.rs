//! Run directories: `<out>/<config hash>-<UTC timestamp>`, plus lookup of
//! artifacts left by earlier stages.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::SystemTime;

use lcdiff::{Error, Result};

pub const OUT_ENV: &str = "LCDIFF_OUT";

/// `LCDIFF_OUT` when set, else the `--out` flag.
pub fn base_dir(flag: &Path) -> PathBuf {
    match std::env::var_os(OUT_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => flag.to_path_buf(),
    }
}

fn timestamp() -> String {
    humantime::format_rfc3339_seconds(SystemTime::now())
        .to_string()
        .replace(['-', ':'], "")
}

/// Creates a fresh run directory under `base`.
pub fn create(base: &Path, hash: &str) -> Result<PathBuf> {
    let stem = format!("{hash}-{}", timestamp());
    let mut dir = base.join(&stem);
    let mut n = 2;
    while dir.exists() {
        dir = base.join(format!("{stem}-{n}"));
        n += 1;
    }
    fs::create_dir_all(&dir).map_err(|e| io(&dir, e))?;
    Ok(dir)
}

/// Run directories under `base`, newest first.
fn runs_newest_first(base: &Path) -> Vec<PathBuf> {
    let Ok(entries) = fs::read_dir(base) else { return Vec::new() };
    let mut runs: Vec<(String, PathBuf)> = entries
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .filter_map(|e| {
            let name = e.file_name().to_string_lossy().into_owned();
            let (_, stamp) = name.split_once('-')?;
            Some((stamp.to_string(), e.path()))
        })
        .collect();
    runs.sort();
    runs.into_iter().rev().map(|(_, p)| p).collect()
}

/// Newest `<run>/<rel>` that exists under `base`.
pub fn latest(base: &Path, rel: &str) -> Option<PathBuf> {
    runs_newest_first(base).into_iter().map(|r| r.join(rel)).find(|p| p.exists())
}

/// The explicit path when given (it must exist), otherwise the newest
/// matching artifact of an earlier run.
pub fn resolve(explicit: Option<&Path>, base: &Path, rel: &str, what: &str, hint: &str) -> Result<PathBuf> {
    match explicit {
        Some(p) if p.exists() => Ok(p.to_path_buf()),
        Some(p) => Err(Error::Missing(format!("{what} not found at {}", p.display()))),
        None => {
            let found = latest(base, rel).ok_or_else(|| {
                Error::Missing(format!("no {what} under {}; {hint}", base.display()))
            })?;
            log::info!("using {what} {}", found.display());
            Ok(found)
        }
    }
}

pub fn io(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| io(path, e))
}
