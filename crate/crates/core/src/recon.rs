//! Reconstruction recipes with the default parameter choices of the 2D
//! phantom study.

use serde::{Deserialize, Serialize};

use crate::acs::{AcsConfig, Backend};
use crate::admm::{admm_solve_v, build_flow_system, AdmmConfig, FLOW_SHIFT};
use crate::energy::Weights;
use crate::error::{ensure_arg, Error, Result};
use crate::grid::{DataSeq, EnergyTrace, ImageSeq, MotionSeq, RegParams};
use crate::outer::{fbf_reconstruct, fista_reconstruct, FbfMode, FistaConfig, Observer, ReconOutput};
use crate::pdhg::{flow_frames, pdhg_solve_v, PdhgConfig};
use crate::phantom::{image_metrics, ImageMetrics};
use crate::sampling::SamplingSchedule;
use crate::sparse::CsrMatrix;
use crate::wave::WaveOperator;

/// `alpha-hat` for fully sampled data.
pub const ALPHA_HAT_FULL: f64 = 2e-3;
/// `alpha-hat` for rSP-25 sub-sampled data.
pub const ALPHA_HAT_RSP25: f64 = 3.2e-4;

pub const FBF_ITERS: usize = 100;
pub const TVTVL2_ITERS: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Recipe {
    Nnls,
    TvFbf,
    Tvtvl2,
}

impl std::str::FromStr for Recipe {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nnls" => Ok(Recipe::Nnls),
            "tv_fbf" => Ok(Recipe::TvFbf),
            "tvtvl2" => Ok(Recipe::Tvtvl2),
            _ => Err(Error::arg(format!("unknown recipe '{s}' (expected nnls, tv_fbf or tvtvl2)"))),
        }
    }
}

impl std::fmt::Display for Recipe {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Recipe::Nnls => "nnls",
            Recipe::TvFbf => "tv_fbf",
            Recipe::Tvtvl2 => "tvtvl2",
        })
    }
}

impl Recipe {
    pub fn default_iters(self) -> usize {
        match self {
            Recipe::Nnls | Recipe::TvFbf => FBF_ITERS,
            Recipe::Tvtvl2 => TVTVL2_ITERS,
        }
    }

    /// Default weights: `alpha = beta = alpha_hat` and the given `gamma` for
    /// TVTVL2, `alpha = alpha_hat` for TV-fbf, nothing for NNLS.
    pub fn default_weights(self, alpha_hat: f64, gamma: f64) -> Weights {
        match self {
            Recipe::Nnls => Weights {
                alpha: 0.0,
                beta: 0.0,
                gamma: 0.0,
            },
            Recipe::TvFbf => Weights {
                alpha: alpha_hat,
                beta: 0.0,
                gamma: 0.0,
            },
            Recipe::Tvtvl2 => Weights {
                alpha: alpha_hat,
                beta: alpha_hat,
                gamma,
            },
        }
    }
}

/// The study's `alpha-hat` for a sub-sampling factor, if it has one.
pub fn default_alpha_hat(subsampling_factor: usize) -> Option<f64> {
    match subsampling_factor {
        1 => Some(ALPHA_HAT_FULL),
        25 => Some(ALPHA_HAT_RSP25),
        _ => None,
    }
}

#[derive(Clone, Debug)]
pub struct ReconResult {
    pub recipe: Recipe,
    pub weights: Weights,
    pub p: ImageSeq,
    /// Only TVTVL2 estimates motion.
    pub v: Option<MotionSeq>,
    pub energy: EnergyTrace,
    pub inner: EnergyTrace,
    pub eta: f64,
    pub iterations: usize,
    pub restarts: usize,
    pub metrics: Option<ImageMetrics>,
}

/// Runs a recipe. The weights must fit the recipe: NNLS takes none, TV-fbf
/// only `alpha`. Metrics are computed when a ground truth is supplied.
#[allow(clippy::too_many_arguments)]
pub fn run_recipe(
    recipe: Recipe,
    data: &DataSeq,
    sched: &SamplingSchedule,
    fwd: &WaveOperator,
    weights: Weights,
    acs: &AcsConfig,
    fista: &FistaConfig,
    lipschitz: Option<&[f64]>,
    truth: Option<&ImageSeq>,
    observer: Option<Observer>,
) -> Result<ReconResult> {
    let Weights { alpha, beta, gamma } = weights;
    ensure_arg!(
        [alpha, beta, gamma].iter().all(|w| w.is_finite() && *w >= 0.0),
        "regularization weights must be finite and nonnegative"
    );
    let out: ReconOutput = match recipe {
        Recipe::Nnls => {
            ensure_arg!(alpha == 0.0 && beta == 0.0 && gamma == 0.0, "nnls takes no regularization weights");
            fbf_reconstruct(data, sched, fwd, FbfMode::Nnls, 0.0, acs, fista, lipschitz, observer)?
        }
        Recipe::TvFbf => {
            ensure_arg!(beta == 0.0 && gamma == 0.0, "tv_fbf only takes alpha");
            fbf_reconstruct(data, sched, fwd, FbfMode::Tv, alpha, acs, fista, lipschitz, observer)?
        }
        Recipe::Tvtvl2 => {
            let params = RegParams::new(alpha, beta, gamma, 1.0)?;
            fista_reconstruct(data, sched, fwd, &params, acs, fista, lipschitz, observer)?
        }
    };
    let metrics = truth.map(|t| image_metrics(&out.p, t)).transpose()?;
    Ok(ReconResult {
        recipe,
        weights,
        v: (recipe == Recipe::Tvtvl2).then_some(out.v),
        p: out.p,
        energy: out.energy,
        inner: out.inner,
        eta: out.eta,
        iterations: out.iterations,
        restarts: out.restarts,
        metrics,
    })
}

/// Weights of the reference motion field computed from the true images.
pub const REFERENCE_BETA: f64 = 1e-6;
pub const REFERENCE_GAMMA: f64 = 1.0;

/// One motion update on given images, starting from zero flow, run for
/// `iters` iterations of the chosen backend.
pub fn reference_flow(p: &ImageSeq, beta: f64, gamma: f64, backend: Backend, iters: usize) -> Result<MotionSeq> {
    ensure_arg!(beta >= 0.0 && gamma > 0.0, "reference flow needs beta >= 0 and gamma > 0");
    ensure_arg!(iters >= 1, "reference flow needs at least one iteration");
    let w = Weights {
        alpha: 0.0,
        beta,
        gamma,
    };
    let v0 = MotionSeq::zeros_like(p);
    let v = match backend {
        Backend::Pdhg => {
            let cfg = PdhgConfig {
                max_iters: iters,
                ..PdhgConfig::for_v()
            };
            pdhg_solve_v(p, &v0, w, &cfg, &mut Default::default())?.0
        }
        Backend::Admm => {
            let cfg = AdmmConfig {
                max_iters: iters,
                ..AdmmConfig::for_v()
            };
            admm_solve_v(p, &v0, w, &cfg, &mut Default::default())?.0
        }
    };
    Ok(v)
}

/// The linear system of the first ADMM motion step for frame pair
/// `(t, t + 1)` (zero flow and zero duals): matrix and right-hand side.
pub fn motion_system(p: &ImageSeq, t: usize, gamma: f64, rho: f64) -> Result<(CsrMatrix, Vec<f64>)> {
    ensure_arg!(t + 1 < p.frames, "frame pair ({t}, {}) is out of range", t + 1);
    ensure_arg!(gamma >= 0.0 && rho > 0.0, "motion system needs gamma >= 0 and rho > 0");
    let n = p.n_pixels();
    let f = flow_frames(p).swap_remove(t);
    let a = build_flow_system(&f.c, p.nx, p.ny, gamma, rho, FLOW_SHIFT * rho);
    let mut rhs = vec![0.0; 2 * n];
    for i in 0..n {
        rhs[i] = -gamma * f.c[i] * f.z[i];
        rhs[n + i] = -gamma * f.c[n + i] * f.z[i];
    }
    Ok((a, rhs))
}
