//! JSON experiment configurations. Unknown fields are rejected so typos fail
//! loudly instead of silently falling back to defaults.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use dynpat::grid::Grid2D;
use dynpat::phantom::PhantomConfig;
use dynpat::recon::Recipe;

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    /// Defaults to the 100 x 100, 20 mm, 472-step set-up.
    #[serde(default)]
    pub grid: Option<Grid2D>,
    pub sensors: usize,
    /// Defaults to the bundled three-tube phantom.
    #[serde(default)]
    pub phantom: Option<PhantomConfig>,
    pub sigma: f64,
    /// rSP sub-sampling factor; 1 keeps every sensor in every frame.
    pub subsampling: usize,
    #[serde(default)]
    pub schedule_seed: u64,
    #[serde(default)]
    pub noise_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconstructConfig {
    /// Output directory of `simulate`, relative to the config file.
    pub data_dir: PathBuf,
    pub recipe: Recipe,
    /// Defaults to the study's alpha-hat for the data's sub-sampling factor.
    #[serde(default)]
    pub alpha: Option<f64>,
    /// TVTVL2 only; defaults to alpha.
    #[serde(default)]
    pub beta: Option<f64>,
    /// TVTVL2 only; defaults to 1.
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default)]
    pub iters: Option<usize>,
    #[serde(default)]
    pub alternations: Option<usize>,
    /// Write the iterate every this many outer iterations.
    #[serde(default)]
    pub snapshot_every: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    /// Image volume (for instance a TV-fbf reconstruction), relative to the
    /// config file.
    pub images: PathBuf,
    /// First frame of each frame pair to assemble a motion system for.
    pub frames: Vec<usize>,
    /// Weight of the motion misfit inside the system (already step-scaled).
    pub gamma: f64,
    #[serde(default = "default_rho")]
    pub rho: f64,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
}

fn default_rho() -> f64 {
    dynpat::admm::AdmmConfig::for_v().rho
}

fn default_tol() -> f64 {
    1e-6
}

fn default_max_iters() -> usize {
    50_000
}

/// Parses a config file; anything wrong with it is a config error.
pub fn load<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

/// Resolves `p` against the directory holding the config file.
pub fn relative_to(config: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        config.parent().unwrap_or(Path::new(".")).join(p)
    }
}
