//! Alternate convex search on the denoising energy `E~(p, v)`: minimize over
//! `p` with `v` frozen, then over `v` with `p` frozen, accepting a block only
//! if it strictly lowers `E~`.

use serde::{Deserialize, Serialize};

use crate::admm::{admm_solve_p, admm_solve_v, AdmmConfig, AdmmPState, AdmmVState};
use crate::energy::{denoising_energy_weighted, Weights};
use crate::error::{ensure_arg, Error, Result};
use crate::grid::{EnergyTrace, ImageSeq, MotionSeq};
use crate::pdhg::{pdhg_solve_p, pdhg_solve_v, PdhgConfig, PdhgPState, PdhgVState};
use crate::subsolve::SubReport;

pub const LABEL_P: &str = "p-update";
pub const LABEL_V: &str = "v-update";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Pdhg,
    Admm,
}

impl std::str::FromStr for Backend {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pdhg" => Ok(Backend::Pdhg),
            "admm" => Ok(Backend::Admm),
            _ => Err(Error::arg(format!("unknown backend '{s}' (expected pdhg or admm)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcsConfig {
    pub alternations: usize,
    pub backend_p: Backend,
    pub backend_v: Backend,
    pub pdhg_p: PdhgConfig,
    pub pdhg_v: PdhgConfig,
    pub admm_p: AdmmConfig,
    pub admm_v: AdmmConfig,
    /// How often a block's iteration budget may double when it fails to
    /// lower the energy.
    pub max_doublings: usize,
}

impl Default for AcsConfig {
    fn default() -> Self {
        AcsConfig {
            alternations: 4,
            backend_p: Backend::Pdhg,
            backend_v: Backend::Pdhg,
            pdhg_p: PdhgConfig::for_p(),
            pdhg_v: PdhgConfig::for_v(),
            admm_p: AdmmConfig::for_p(),
            admm_v: AdmmConfig::for_v(),
            max_doublings: 2,
        }
    }
}

impl AcsConfig {
    pub fn validate(&self) -> Result<()> {
        ensure_arg!(self.alternations >= 1, "ACS needs at least one alternation");
        self.pdhg_p.validate()?;
        self.pdhg_v.validate()?;
        self.admm_p.validate()?;
        self.admm_v.validate()
    }
}

/// Current iterate plus every subsolver's warm-start variables.
#[derive(Clone, Debug)]
pub struct AcsState {
    pub p: ImageSeq,
    pub v: MotionSeq,
    pub pdhg_p: PdhgPState,
    pub pdhg_v: PdhgVState,
    pub admm_p: AdmmPState,
    pub admm_v: AdmmVState,
    /// `E~` of the accepted iterates of the latest call.
    pub history: Vec<f64>,
    /// Alternations done, across calls.
    pub alternations: usize,
    /// Blocks whose update was discarded because `E~` did not decrease.
    pub rejected_blocks: usize,
}

impl AcsState {
    pub fn new(p: ImageSeq, v: MotionSeq) -> Self {
        AcsState {
            p,
            v,
            pdhg_p: Default::default(),
            pdhg_v: Default::default(),
            admm_p: Default::default(),
            admm_v: Default::default(),
            history: Vec::new(),
            alternations: 0,
            rejected_blocks: 0,
        }
    }

    pub fn zeros_like(p: &ImageSeq) -> Self {
        Self::new(ImageSeq::zeros(p.nx, p.ny, p.frames), MotionSeq::zeros_like(p))
    }
}

fn solve_p_block(
    p_tilde: &ImageSeq,
    st: &mut AcsState,
    w: Weights,
    cfg: &AcsConfig,
    scale: usize,
) -> Result<(ImageSeq, SubReport)> {
    match cfg.backend_p {
        Backend::Pdhg => {
            let c = PdhgConfig {
                max_iters: cfg.pdhg_p.max_iters * scale,
                ..cfg.pdhg_p
            };
            pdhg_solve_p(p_tilde, &st.v, &st.p, w, &c, &mut st.pdhg_p)
        }
        Backend::Admm => {
            let c = AdmmConfig {
                max_iters: cfg.admm_p.max_iters * scale,
                ..cfg.admm_p
            };
            admm_solve_p(p_tilde, &st.v, &st.p, w, &c, &mut st.admm_p)
        }
    }
}

fn solve_v_block(st: &mut AcsState, w: Weights, cfg: &AcsConfig, scale: usize) -> Result<(MotionSeq, SubReport)> {
    match cfg.backend_v {
        Backend::Pdhg => {
            let c = PdhgConfig {
                max_iters: cfg.pdhg_v.max_iters * scale,
                ..cfg.pdhg_v
            };
            pdhg_solve_v(&st.p, &st.v, w, &c, &mut st.pdhg_v)
        }
        Backend::Admm => {
            let c = AdmmConfig {
                max_iters: cfg.admm_v.max_iters * scale,
                ..cfg.admm_v
            };
            admm_solve_v(&st.p, &st.v, w, &c, &mut st.admm_v)
        }
    }
}

/// Records a block's best-so-far subsolver energies as full `E~` values.
fn record(trace: &mut EnergyTrace, label: &str, rep: &SubReport, e_start: f64, e_end: f64) {
    // offset and full energies differ by rounding; clamp so the block reads
    // as a monotone segment from e_start down to e_end
    let offset = e_start - rep.initial_energy;
    let mut last = e_start;
    for &(k, e) in &rep.history {
        if k > 0 {
            last = (offset + e).min(last).max(e_end);
            trace.push(label, last);
        }
    }
    trace.push(label, e_end);
}

/// Runs `cfg.alternations` ACS alternations on the denoising problem with
/// target `p_tilde` and (already `eta`-scaled) weights `w`, starting from and
/// updating `state`.
pub fn acs_solve(
    p_tilde: &ImageSeq,
    state: &mut AcsState,
    w: Weights,
    cfg: &AcsConfig,
    trace: &mut EnergyTrace,
) -> Result<()> {
    cfg.validate()?;
    ensure_arg!(state.p.same_shape(p_tilde), "ACS state does not match the target");
    ensure_arg!(state.v.matches(p_tilde), "ACS motion state does not match the target");
    let energy = |p: &ImageSeq, v: &MotionSeq| denoising_energy_weighted(p, v, p_tilde, w);
    let mut e = energy(&state.p, &state.v)?;
    state.history = vec![e];
    let update_v = w.gamma > 0.0 && p_tilde.frames > 1;

    for _ in 0..cfg.alternations {
        // image block
        let mut accepted = false;
        for attempt in 0..=cfg.max_doublings {
            let (cand, rep) = solve_p_block(p_tilde, state, w, cfg, 1 << attempt)?;
            let e_new = energy(&cand, &state.v)?;
            if e_new < e {
                record(trace, LABEL_P, &rep, e, e_new);
                state.p = cand;
                e = e_new;
                state.history.push(e);
                accepted = true;
                break;
            }
        }
        if !accepted {
            log::debug!("ACS p-update could not lower the energy; keeping the previous image");
            state.rejected_blocks += 1;
        }

        // motion block
        if update_v {
            let mut accepted = false;
            for attempt in 0..=cfg.max_doublings {
                let (cand, rep) = solve_v_block(state, w, cfg, 1 << attempt)?;
                let e_new = energy(&state.p, &cand)?;
                if e_new < e {
                    record(trace, LABEL_V, &rep, e, e_new);
                    state.v = cand;
                    e = e_new;
                    state.history.push(e);
                    accepted = true;
                    break;
                }
            }
            if !accepted {
                log::debug!("ACS v-update could not lower the energy; keeping the previous motion");
                state.rejected_blocks += 1;
            }
        }
        state.alternations += 1;
    }
    Ok(())
}
