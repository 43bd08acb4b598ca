use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use geoskill::metrics::EvalReport;
use geoskill::scene_sim::{DemoSequence, GenConfig};
use geoskill::servo::Trajectory;
use geoskill::trainer::TrainedKernel;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

#[derive(Debug, Serialize, Deserialize)]
pub struct DemoFile {
    pub config: RunConfig,
    pub demo: DemoSequence<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct KernelFile {
    pub config: RunConfig,
    pub demo: PathBuf,
    /// Generator settings of the training demo; servo scenes reuse its appearance.
    #[serde(default)]
    pub demo_gen: Option<GenConfig>,
    pub kernel: TrainedKernel<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ReportFile {
    pub config: RunConfig,
    pub demo: PathBuf,
    pub model: PathBuf,
    /// Perturbation applied on top of the demo file, if any.
    pub perturbation: Option<String>,
    pub report: EvalReport<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ServoFile {
    pub config: RunConfig,
    pub model: Option<PathBuf>,
    pub trajectory: Trajectory<f64>,
}

/// Accepts the wrapped file written by this tool or the bare payload.
#[derive(Deserialize)]
#[serde(untagged)]
enum Wrapped<W, P> {
    Wrapped(W),
    Bare(P),
}

fn read_json<T: DeserializeOwned>(path: &Path, what: &str) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {what} {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {what} {}", path.display()))
}

pub fn read_demo(path: &Path) -> Result<DemoSequence<f64>> {
    Ok(match read_json::<Wrapped<DemoFile, DemoSequence<f64>>>(path, "demo")? {
        Wrapped::Wrapped(f) => f.demo,
        Wrapped::Bare(d) => d,
    })
}

/// The kernel plus the generator config of its training demo, when known.
pub fn read_kernel(path: &Path) -> Result<(TrainedKernel<f64>, Option<GenConfig>)> {
    Ok(match read_json::<Wrapped<KernelFile, TrainedKernel<f64>>>(path, "trained kernel")? {
        Wrapped::Wrapped(f) => (f.kernel, f.demo_gen),
        Wrapped::Bare(k) => (k, None),
    })
}

/// Fails early when `path` cannot be written into.
pub fn check_output(path: &Path) -> Result<()> {
    let parent = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    if !parent.is_dir() {
        bail!("output directory {} does not exist", parent.display());
    }
    if path.is_dir() {
        bail!("output {} is a directory", path.display());
    }
    Ok(())
}

/// Writes through a sibling temp file and renames, so readers never see a
/// partial artifact.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming {} to {}", tmp.display(), path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

/// `dir/name.csv` style sibling of `path` with its extension replaced.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}
