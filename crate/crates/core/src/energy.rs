//! The TVTVL2 objective and its proximal (denoising) counterpart.

use rayon::prelude::*;

use crate::diffops::{grad_fwd, total_variation, tv_of_gradient, TransportOperator};
use crate::error::{ensure_arg, Result};
use crate::grid::{norm_sq, DataSeq, ImageSeq, MotionSeq, RegParams, ScaledWeights, SensorData, DIM};
use crate::sampling::{apply_c, SamplingSchedule};
use crate::wave::WaveOperator;

/// Weights of the three regularization terms, in whatever scaling the caller
/// needs (plain for the total energy, `eta`-scaled for the denoising one).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Weights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl From<ScaledWeights> for Weights {
    fn from(w: ScaledWeights) -> Self {
        Weights {
            alpha: w.alpha,
            beta: w.beta,
            gamma: w.gamma,
        }
    }
}

impl From<&RegParams> for Weights {
    fn from(p: &RegParams) -> Self {
        Weights {
            alpha: p.alpha,
            beta: p.beta,
            gamma: p.gamma,
        }
    }
}

/// `sum_t alpha TV(p_t)`.
pub fn image_tv(p: &ImageSeq) -> f64 {
    p.values
        .par_chunks(p.n_pixels())
        .map(|f| total_variation(f, p.nx, p.ny))
        .sum()
}

/// `sum_t sum_i TV(v_{x_i,t})`: isotropic TV of each motion component.
pub fn motion_tv(v: &MotionSeq) -> f64 {
    let n = v.n_pixels();
    v.values
        .par_chunks(DIM * n)
        .map(|f| {
            f.chunks(n)
                .map(|comp| tv_of_gradient(&grad_fwd(comp, v.nx, v.ny)))
                .sum::<f64>()
        })
        .sum()
}

/// `1/2 |D_v p|^2`.
pub fn transport_misfit(p: &ImageSeq, v: &MotionSeq) -> Result<f64> {
    Ok(0.5 * norm_sq(&TransportOperator::new(v).apply(p)?))
}

/// The three regularization terms. Terms with a zero weight are skipped.
pub fn regularizer(p: &ImageSeq, v: &MotionSeq, w: Weights) -> Result<f64> {
    ensure_arg!(v.matches(p), "motion and image sequences differ in shape");
    let mut e = 0.0;
    if w.alpha != 0.0 {
        e += w.alpha * image_tv(p);
    }
    if w.beta != 0.0 {
        e += w.beta * motion_tv(v);
    }
    if w.gamma != 0.0 {
        e += w.gamma * transport_misfit(p, v)?;
    }
    Ok(e)
}

/// `sum_t 1/2 |C_t A p_t - f_t|^2` given precomputed full data `A p_t`.
pub fn data_misfit_from(ap: &[SensorData], data: &DataSeq, sched: &SamplingSchedule) -> Result<f64> {
    ensure_arg!(
        ap.len() == data.n_frames(),
        "{} simulated frames for {} data frames",
        ap.len(),
        data.n_frames()
    );
    let mut e = 0.0;
    for (t, (a, f)) in ap.iter().zip(&data.frames).enumerate() {
        let sub = apply_c(sched, t, a)?;
        ensure_arg!(
            sub.values.len() == f.values.len(),
            "data frame {} has the wrong shape",
            t
        );
        e += 0.5
            * sub
                .values
                .iter()
                .zip(&f.values)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>();
    }
    Ok(e)
}

/// Total TVTVL2 energy `E(p, v)`.
pub fn total_energy(
    p: &ImageSeq,
    v: &MotionSeq,
    data: &DataSeq,
    sched: &SamplingSchedule,
    params: &RegParams,
    fwd: &WaveOperator,
) -> Result<f64> {
    ensure_arg!(
        p.frames == data.n_frames(),
        "{} image frames for {} data frames",
        p.frames,
        data.n_frames()
    );
    ensure_arg!(p.n_pixels() == fwd.n_pixels(), "image does not match the wave grid");
    let frames: Vec<&[f64]> = p.frames_iter().collect();
    let ap = fwd.forward_many(&frames)?;
    Ok(data_misfit_from(&ap, data, sched)? + regularizer(p, v, params.into())?)
}

/// Denoising energy with explicit (already scaled) weights.
pub fn denoising_energy_weighted(p: &ImageSeq, v: &MotionSeq, p_tilde: &ImageSeq, w: Weights) -> Result<f64> {
    ensure_arg!(p.same_shape(p_tilde), "image and denoising target differ in shape");
    let fit = 0.5
        * p.values
            .iter()
            .zip(&p_tilde.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
    Ok(fit + regularizer(p, v, w)?)
}

/// Denoising energy `E~(p, v)` with the weights scaled by `eta`.
pub fn denoising_energy(p: &ImageSeq, v: &MotionSeq, p_tilde: &ImageSeq, params: &RegParams) -> Result<f64> {
    denoising_energy_weighted(p, v, p_tilde, params.scaled().into())
}
