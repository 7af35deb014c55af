//! Outer forward-backward loop with Nesterov/FISTA extrapolation.
//!
//! Each iteration takes a gradient step on the data term and hands the result
//! to ACS as a denoising target. `A q` at the extrapolated point is obtained by
//! linearity from the two previous forward simulations, so one iteration costs
//! one adjoint and one forward batch.

use serde::{Deserialize, Serialize};

use crate::acs::{acs_solve, AcsConfig, AcsState};
use crate::energy::{data_misfit_from, regularizer, Weights};
use crate::error::{ensure_arg, Result};
use crate::grid::{DataSeq, EnergyTrace, ImageSeq, MotionSeq, RegParams, SensorData};
use crate::sampling::{apply_c, apply_c_adjoint, SamplingSchedule};
use crate::wave::{estimate_lipschitz_schedule, WaveOperator};

pub const LABEL_OUTER: &str = "iteration";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "rule")]
pub enum StepRule {
    /// `eta = factor / max_t L_t`.
    Lipschitz { factor: f64 },
    /// Use `eta` from the regularization parameters as given.
    Fixed,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FistaConfig {
    pub iters: usize,
    pub step: StepRule,
    /// Nesterov extrapolation; without it the loop is plain forward-backward.
    pub momentum: bool,
    pub lipschitz_iters: usize,
    pub lipschitz_seed: u64,
}

impl FistaConfig {
    pub fn with_iters(iters: usize) -> Self {
        FistaConfig {
            iters,
            ..Default::default()
        }
    }
}

impl Default for FistaConfig {
    fn default() -> Self {
        FistaConfig {
            iters: 20,
            step: StepRule::Lipschitz { factor: 1.5 },
            momentum: true,
            lipschitz_iters: 10,
            lipschitz_seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FbfMode {
    Nnls,
    Tv,
}

#[derive(Clone, Debug)]
pub struct ReconOutput {
    pub p: ImageSeq,
    pub v: MotionSeq,
    /// Total energy `E` of the starting point and of every accepted iterate.
    pub energy: EnergyTrace,
    /// Denoising energies reported by ACS during accepted steps.
    pub inner: EnergyTrace,
    pub eta: f64,
    pub iterations: usize,
    /// Momentum resets triggered by an energy increase.
    pub restarts: usize,
    /// Steps retried with `eta = 1 / max L_t`.
    pub fallbacks: usize,
    /// Iterations where no trial step lowered `E`.
    pub stalls: usize,
}

/// Per-period Lipschitz constants of `A^T C_t^T C_t A`.
pub fn lipschitz_constants(fwd: &WaveOperator, sched: &SamplingSchedule, cfg: &FistaConfig) -> Result<Vec<f64>> {
    estimate_lipschitz_schedule(fwd, sched, cfg.lipschitz_iters, cfg.lipschitz_seed)
}

/// Called after every outer iteration with the iteration number and iterate.
pub type Observer<'a> = &'a mut dyn FnMut(usize, &ImageSeq, &MotionSeq);

enum Prox<'a> {
    Project,
    Acs(&'a AcsConfig),
}

/// TVTVL2 reconstruction: FISTA on `E(p, v)` with ACS as the proximal step.
#[allow(clippy::too_many_arguments)]
pub fn fista_reconstruct(
    data: &DataSeq,
    sched: &SamplingSchedule,
    fwd: &WaveOperator,
    params: &RegParams,
    acs: &AcsConfig,
    cfg: &FistaConfig,
    lipschitz: Option<&[f64]>,
    observer: Option<Observer>,
) -> Result<ReconOutput> {
    acs.validate()?;
    run(data, sched, fwd, params, Prox::Acs(acs), cfg, lipschitz, observer)
}

/// Frame-by-frame baselines. NNLS uses the projection onto `p >= 0` as the
/// proximal step; TV runs the joint pipeline with `beta = gamma = 0`, which
/// decouples over frames.
#[allow(clippy::too_many_arguments)]
pub fn fbf_reconstruct(
    data: &DataSeq,
    sched: &SamplingSchedule,
    fwd: &WaveOperator,
    mode: FbfMode,
    alpha: f64,
    acs: &AcsConfig,
    cfg: &FistaConfig,
    lipschitz: Option<&[f64]>,
    observer: Option<Observer>,
) -> Result<ReconOutput> {
    ensure_arg!(alpha >= 0.0, "alpha must be nonnegative");
    if mode == FbfMode::Nnls || alpha == 0.0 {
        let params = RegParams::new(0.0, 0.0, 0.0, 1.0)?;
        return run(data, sched, fwd, &params, Prox::Project, cfg, lipschitz, observer);
    }
    let params = RegParams::new(alpha, 0.0, 0.0, 1.0)?;
    fista_reconstruct(data, sched, fwd, &params, acs, cfg, lipschitz, observer)
}

fn frames_of(p: &ImageSeq) -> Vec<&[f64]> {
    p.frames_iter().collect()
}

/// `A^T C_t^T (C_t a_t - f_t)` for every frame.
fn data_gradient(aq: &[SensorData], data: &DataSeq, sched: &SamplingSchedule, fwd: &WaveOperator) -> Result<Vec<Vec<f64>>> {
    let resid: Vec<SensorData> = aq
        .iter()
        .zip(&data.frames)
        .enumerate()
        .map(|(t, (a, f))| {
            let mut sub = apply_c(sched, t, a)?;
            sub.values.iter_mut().zip(&f.values).for_each(|(x, y)| *x -= y);
            apply_c_adjoint(sched, t, &sub)
        })
        .collect::<Result<_>>()?;
    let refs: Vec<&SensorData> = resid.iter().collect();
    fwd.adjoint_many(&refs)
}

fn extrapolate(x: &[f64], x_prev: &[f64], m: f64) -> Vec<f64> {
    if m == 0.0 {
        return x.to_vec();
    }
    x.iter().zip(x_prev).map(|(a, b)| a + m * (a - b)).collect()
}

struct Trial {
    p: ImageSeq,
    ap: Vec<SensorData>,
    energy: f64,
    acs: Option<AcsState>,
    inner: EnergyTrace,
}

#[allow(clippy::too_many_arguments)]
fn run(
    data: &DataSeq,
    sched: &SamplingSchedule,
    fwd: &WaveOperator,
    params: &RegParams,
    prox: Prox,
    cfg: &FistaConfig,
    lipschitz: Option<&[f64]>,
    mut observer: Option<Observer>,
) -> Result<ReconOutput> {
    params.validate()?;
    sched.validate()?;
    let g = fwd.grid();
    let n_frames = data.n_frames();
    ensure_arg!(n_frames >= 1, "no data frames");
    ensure_arg!(sched.n_sensors == fwd.n_sensors(), "schedule and wave operator disagree on the sensor count");
    for (t, f) in data.frames.iter().enumerate() {
        ensure_arg!(
            f.n_sensors == sched.subset(t).len() && f.n_tau == g.n_tau,
            "data frame {t} is {}x{}, expected {}x{}",
            f.n_sensors,
            f.n_tau,
            sched.subset(t).len(),
            g.n_tau
        );
    }

    let eta = match cfg.step {
        StepRule::Fixed => params.eta,
        StepRule::Lipschitz { factor } => {
            ensure_arg!(factor > 0.0, "step factor must be positive");
            let owned;
            let ls = match lipschitz {
                Some(l) => l,
                None => {
                    owned = lipschitz_constants(fwd, sched, cfg)?;
                    &owned
                }
            };
            ensure_arg!(!ls.is_empty(), "no Lipschitz constants");
            let l_max = ls.iter().cloned().fold(0.0, f64::max);
            ensure_arg!(l_max > 0.0, "forward operator is zero");
            factor / l_max
        }
    };
    // safe step for the fallback; equals eta for factor <= 1
    let eta_safe = match cfg.step {
        StepRule::Lipschitz { factor } if factor > 1.0 => eta / factor,
        _ => eta,
    };
    let unscaled = Weights {
        alpha: params.alpha,
        beta: params.beta,
        gamma: params.gamma,
    };

    let mut p = ImageSeq::zeros(g.nx, g.ny, n_frames);
    let mut v = MotionSeq::zeros_like(&p);
    let mut ap: Vec<SensorData> = vec![SensorData::zeros(fwd.n_sensors(), g.n_tau); n_frames];
    let mut energy = data_misfit_from(&ap, data, sched)? + regularizer(&p, &v, unscaled)?;
    let mut p_prev = p.clone();
    let mut ap_prev = ap.clone();
    let mut t_k = 1.0_f64;
    let mut acs_state = AcsState::zeros_like(&p);

    let mut out = ReconOutput {
        p: p.clone(),
        v: v.clone(),
        energy: EnergyTrace::new(),
        inner: EnergyTrace::new(),
        eta,
        iterations: 0,
        restarts: 0,
        fallbacks: 0,
        stalls: 0,
    };
    out.energy.push(LABEL_OUTER, energy);

    let trial = |m: f64, step: f64, p: &ImageSeq, p_prev: &ImageSeq, ap: &[SensorData], ap_prev: &[SensorData], v: &MotionSeq, acs_state: &AcsState| -> Result<Trial> {
        let q = ImageSeq::from_vec(p.nx, p.ny, p.frames, extrapolate(&p.values, &p_prev.values, m))?;
        let aq: Vec<SensorData> = ap
            .iter()
            .zip(ap_prev)
            .map(|(a, b)| SensorData {
                n_sensors: a.n_sensors,
                n_tau: a.n_tau,
                values: extrapolate(&a.values, &b.values, m),
            })
            .collect();
        let grad = data_gradient(&aq, data, sched, fwd)?;
        let mut target = q;
        for (t, gt) in grad.iter().enumerate() {
            target.frame_mut(t).iter_mut().zip(gt).for_each(|(x, gx)| *x -= step * gx);
        }
        let mut inner = EnergyTrace::new();
        let (cand_p, cand_v, state) = match prox {
            Prox::Project => {
                let mut c = target;
                c.project_nonneg();
                (c, v.clone(), None)
            }
            Prox::Acs(acs_cfg) => {
                let mut st = acs_state.clone();
                st.p = p.clone();
                st.v = v.clone();
                let w = RegParams { eta: step, ..*params }.scaled().into();
                acs_solve(&target, &mut st, w, acs_cfg, &mut inner)?;
                (st.p.clone(), st.v.clone(), Some(st))
            }
        };
        let a_cand = fwd.forward_many(&frames_of(&cand_p))?;
        let e = data_misfit_from(&a_cand, data, sched)? + regularizer(&cand_p, &cand_v, unscaled)?;
        let acs = state.map(|mut s| {
            s.v = cand_v;
            s
        });
        Ok(Trial {
            p: cand_p,
            ap: a_cand,
            energy: e,
            acs,
            inner,
        })
    };

    for i in 1..=cfg.iters {
        let mut t_next = (1.0 + (1.0 + 4.0 * t_k * t_k).sqrt()) / 2.0;
        let m = if cfg.momentum { (t_k - 1.0) / t_next } else { 0.0 };

        // extrapolated step, then plain step (restart), then the safe step
        let mut plan: Vec<(f64, f64)> = Vec::with_capacity(3);
        if m > 0.0 {
            plan.push((m, eta));
        }
        plan.push((0.0, eta));
        if eta_safe < eta {
            plan.push((0.0, eta_safe));
        }

        let mut accepted: Option<Trial> = None;
        for &(mk, step) in &plan {
            let tr = trial(mk, step, &p, &p_prev, &ap, &ap_prev, &v, &acs_state)?;
            if tr.energy <= energy {
                if mk == 0.0 && m > 0.0 {
                    out.restarts += 1;
                    t_next = 1.0;
                }
                if step < eta {
                    out.fallbacks += 1;
                    t_next = 1.0;
                }
                accepted = Some(tr);
                break;
            }
        }

        match accepted {
            Some(tr) => {
                p_prev = std::mem::replace(&mut p, tr.p);
                ap_prev = std::mem::replace(&mut ap, tr.ap);
                if let Some(st) = tr.acs {
                    v = st.v.clone();
                    acs_state = st;
                }
                energy = tr.energy;
                out.inner.extend_from(&tr.inner);
            }
            None => {
                log::debug!("outer iteration {i}: no trial step lowered the energy; keeping the iterate");
                out.stalls += 1;
                t_next = 1.0;
                p_prev = p.clone();
                ap_prev = ap.clone();
            }
        }
        t_k = t_next;
        out.energy.push(LABEL_OUTER, energy);
        out.iterations = i;
        if let Some(obs) = observer.as_mut() {
            obs(i, &p, &v);
        }
    }
    out.p = p;
    out.v = v;
    Ok(out)
}
