//! Primal-dual hybrid gradient solvers for the two ACS subproblems.
//!
//! Each iteration is: dual ascent on `y` at the over-relaxed point, primal
//! prox step on `x`, then over-relaxation `x^ = x + theta (x - x_old)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffops::{div_fwd_adj_into, flow_gradient_csr, grad_central, grad_fwd_into, TransportOperator};
use crate::energy::{denoising_energy_weighted, Weights};
use crate::error::{ensure_arg, Result};
use crate::grid::{norm, ImageSeq, MotionSeq, DIM};
use crate::prox::{project_field, prox_flow_quad, prox_nonneg_quad, prox_quad_conjugate};
use crate::sparse::CsrMatrix;
use crate::subsolve::{due, BestTracker, SubReport};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepMode {
    /// Scalar primal step `mu` and dual step `nu`.
    Fixed { mu: f64, nu: f64 },
    /// Steps from reciprocal absolute row and column sums of `K`.
    Diagonal,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PdhgConfig {
    pub theta: f64,
    pub steps: StepMode,
    pub max_iters: usize,
    /// Energy is evaluated every `stride` iterations.
    pub stride: usize,
}

impl PdhgConfig {
    /// Defaults for the image update: diagonal preconditioning.
    pub fn for_p() -> Self {
        PdhgConfig {
            theta: 1.0,
            steps: StepMode::Diagonal,
            max_iters: 100,
            stride: 10,
        }
    }

    /// Defaults for the motion update: `mu = 1/(2d)`, `nu = 1/2`.
    pub fn for_v() -> Self {
        PdhgConfig {
            theta: 1.0,
            steps: StepMode::Fixed {
                mu: 1.0 / (2.0 * DIM as f64),
                nu: 0.5,
            },
            max_iters: 100,
            stride: 10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure_arg!((0.0..=1.0).contains(&self.theta), "theta must lie in [0, 1]");
        ensure_arg!(self.max_iters >= 1, "max_iters must be at least 1");
        if let StepMode::Fixed { mu, nu } = self.steps {
            ensure_arg!(mu > 0.0 && nu > 0.0, "PDHG step sizes must be positive");
        }
        Ok(())
    }
}

/// Power iteration estimate of `|K|^2`.
pub fn estimate_norm_sq(
    dim: usize,
    apply: impl Fn(&[f64]) -> Vec<f64>,
    adjoint: impl Fn(&[f64]) -> Vec<f64>,
    iters: usize,
) -> f64 {
    // deterministic, non-symmetric start vector
    let mut x: Vec<f64> = (0..dim).map(|i| 1.0 + ((i * 7919) % 101) as f64 / 101.0).collect();
    let n0 = norm(&x);
    x.iter_mut().for_each(|v| *v /= n0);
    let mut est = 0.0;
    for _ in 0..iters {
        let y = adjoint(&apply(&x));
        est = norm(&y);
        if est == 0.0 {
            return 0.0;
        }
        x = y.into_iter().map(|v| v / est).collect();
    }
    est
}

fn check_fixed_steps(mu: f64, nu: f64, norm_sq: f64) -> Result<()> {
    ensure_arg!(
        mu * nu * norm_sq <= 1.0 + 1e-9,
        "PDHG steps mu = {mu}, nu = {nu} violate mu*nu*|K|^2 <= 1 (|K|^2 ~ {norm_sq:.4})"
    );
    Ok(())
}

/// Dual variables carried between calls of [`pdhg_solve_p`].
#[derive(Clone, Debug, Default)]
pub struct PdhgPState {
    pub y1: Vec<f64>,
    pub y2: Vec<f64>,
}

/// Number of forward-difference rows touching each pixel.
fn grad_col_sums(nx: usize, ny: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(nx * ny);
    for iy in 0..ny {
        for ix in 0..nx {
            let c = (ix + 1 < nx) as u8 + (ix > 0) as u8 + (iy + 1 < ny) as u8 + (iy > 0) as u8;
            out.push(c as f64);
        }
    }
    out
}

/// Minimizes `1/2 |p - p~|^2 + alpha TV(p) + gamma/2 |D_v p|^2` over `p >= 0`.
///
/// Returns the best iterate seen (by energy) and a report. `p_init` is the
/// starting primal point; the duals are warm-started from `state`.
pub fn pdhg_solve_p(
    p_tilde: &ImageSeq,
    v: &MotionSeq,
    p_init: &ImageSeq,
    w: Weights,
    cfg: &PdhgConfig,
    state: &mut PdhgPState,
) -> Result<(ImageSeq, SubReport)> {
    cfg.validate()?;
    ensure_arg!(p_tilde.same_shape(p_init), "initial image and target differ in shape");
    ensure_arg!(v.matches(p_tilde), "motion field does not match the images");
    let (nx, ny, n, frames) = (p_tilde.nx, p_tilde.ny, p_tilde.n_pixels(), p_tilde.frames);
    let w = Weights { beta: 0.0, ..w };
    let energy = |x: &ImageSeq| denoising_energy_weighted(x, v, p_tilde, w);

    let use_tv = w.alpha > 0.0;
    let use_tr = w.gamma > 0.0 && frames > 1;
    if !use_tv && !use_tr {
        // the problem decouples into a projection
        let e0 = energy(p_init)?;
        let mut x = p_tilde.clone();
        x.project_nonneg();
        let e = energy(&x)?;
        let mut tr = BestTracker::new(p_init.clone(), e0, "pdhg p-update");
        tr.check(1, e, || x.clone())?;
        return Ok(tr.finish(1));
    }

    let dv: Option<CsrMatrix> = use_tr.then(|| TransportOperator::new(v).to_csr());
    let n_res = frames.saturating_sub(1) * n;

    // step sizes
    let (tau, sigma1, sigma2): (Vec<f64>, Vec<f64>, Vec<f64>) = match cfg.steps {
        StepMode::Diagonal => {
            let mut col = vec![0.0; frames * n];
            if use_tv {
                let g = grad_col_sums(nx, ny);
                col.chunks_mut(n).for_each(|c| c.copy_from_slice(&g));
            }
            let mut s2 = Vec::new();
            if let Some(m) = &dv {
                for (c, d) in col.iter_mut().zip(m.abs_col_sums()) {
                    *c += d;
                }
                s2 = m
                    .abs_row_sums()
                    .into_iter()
                    .map(|r| if r > 0.0 { 1.0 / r } else { 1.0 })
                    .collect();
            }
            let tau = col.iter().map(|&c| if c > 0.0 { 1.0 / c } else { 1.0 }).collect();
            // every nonzero forward-difference row has absolute sum 2; one scalar
            // per site keeps the ball projection exact
            (tau, vec![0.5; n], s2)
        }
        StepMode::Fixed { mu, nu } => {
            let k_norm = estimate_norm_sq(
                frames * n,
                |x| {
                    let mut out = vec![0.0; frames * DIM * n + n_res];
                    let (g, r) = out.split_at_mut(frames * DIM * n);
                    if use_tv {
                        for t in 0..frames {
                            grad_fwd_into(&x[t * n..(t + 1) * n], nx, ny, &mut g[t * DIM * n..(t + 1) * DIM * n]);
                        }
                    }
                    if let Some(m) = &dv {
                        m.matvec(x, r);
                    }
                    out
                },
                |y| {
                    let mut out = vec![0.0; frames * n];
                    let (g, r) = y.split_at(frames * DIM * n);
                    if let Some(m) = &dv {
                        m.matvec_transpose(r, &mut out);
                    }
                    if use_tv {
                        let mut d = vec![0.0; n];
                        for t in 0..frames {
                            div_fwd_adj_into(&g[t * DIM * n..(t + 1) * DIM * n], nx, ny, &mut d);
                            for i in 0..n {
                                out[t * n + i] -= d[i];
                            }
                        }
                    }
                    out
                },
                50,
            );
            check_fixed_steps(mu, nu, k_norm)?;
            (vec![mu; frames * n], vec![nu; n], vec![nu; n_res])
        }
    };

    if state.y1.len() != frames * DIM * n {
        state.y1 = vec![0.0; frames * DIM * n];
    }
    if state.y2.len() != n_res {
        state.y2 = vec![0.0; n_res];
    }

    let mut x = p_init.clone();
    let mut x_bar = p_init.clone();
    let mut kty = vec![0.0; frames * n];
    let mut r = vec![0.0; n_res];
    let mut tracker = BestTracker::new(p_init.clone(), energy(p_init)?, "pdhg p-update");

    for k in 1..=cfg.max_iters {
        // dual step
        if use_tv {
            let (alpha, sig) = (w.alpha, &sigma1);
            state
                .y1
                .par_chunks_mut(DIM * n)
                .zip(x_bar.values.par_chunks(n))
                .for_each(|(y, xb)| {
                    let mut g = vec![0.0; DIM * n];
                    grad_fwd_into(xb, nx, ny, &mut g);
                    for i in 0..n {
                        y[i] += sig[i] * g[i];
                        y[n + i] += sig[i] * g[n + i];
                    }
                    project_field(alpha, y, DIM);
                });
        }
        if let Some(m) = &dv {
            m.matvec(&x_bar.values, &mut r);
            for ((y, ri), s) in state.y2.iter_mut().zip(&r).zip(&sigma2) {
                *y = prox_quad_conjugate(w.gamma, *s, *y + s * ri);
            }
        }

        // primal step
        if let Some(m) = &dv {
            m.matvec_transpose(&state.y2, &mut kty);
        } else {
            kty.iter_mut().for_each(|v| *v = 0.0);
        }
        if use_tv {
            kty.par_chunks_mut(n)
                .zip(state.y1.par_chunks(DIM * n))
                .for_each(|(out, y)| {
                    let mut d = vec![0.0; n];
                    div_fwd_adj_into(y, nx, ny, &mut d);
                    for i in 0..n {
                        out[i] -= d[i];
                    }
                });
        }
        let theta = cfg.theta;
        x.values
            .par_iter_mut()
            .zip(x_bar.values.par_iter_mut())
            .zip(p_tilde.values.par_iter())
            .zip(kty.par_iter().zip(tau.par_iter()))
            .for_each(|(((xi, xb), pt), (g, t))| {
                let new = prox_nonneg_quad(*t, *pt, *xi - t * g);
                *xb = new + theta * (new - *xi);
                *xi = new;
            });

        if due(k, cfg.stride, cfg.max_iters) {
            let e = energy(&x)?;
            tracker.check(k, e, || x.clone())?;
        }
    }
    Ok(tracker.finish(cfg.max_iters))
}

/// Dual variables carried between calls of [`pdhg_solve_v`].
#[derive(Clone, Debug, Default)]
pub struct PdhgVState {
    /// Per motion frame: the Jacobian duals `[d_x v_x; d_y v_x; d_x v_y; d_y v_y]`.
    pub y: Vec<Vec<f64>>,
}

/// Per-frame data of the motion subproblem: `z = p_{t+1} - p_t` and the
/// central gradient of `p_t`.
pub(crate) struct FlowFrame {
    pub z: Vec<f64>,
    pub c: Vec<f64>,
}

pub(crate) fn flow_frames(p: &ImageSeq) -> Vec<FlowFrame> {
    let n = p.n_pixels();
    (0..p.frames.saturating_sub(1))
        .map(|t| FlowFrame {
            z: (0..n).map(|i| p.frame(t + 1)[i] - p.frame(t)[i]).collect(),
            c: grad_central(p.frame(t), p.nx, p.ny),
        })
        .collect()
}

/// `beta TV(v_x) + beta TV(v_y) + gamma/2 |z + E v|^2` for one frame.
pub(crate) fn flow_frame_energy(f: &FlowFrame, vt: &[f64], nx: usize, ny: usize, beta: f64, gamma: f64) -> f64 {
    let n = nx * ny;
    let mut e = 0.0;
    if beta != 0.0 {
        let mut g = vec![0.0; DIM * n];
        for comp in vt.chunks(n) {
            grad_fwd_into(comp, nx, ny, &mut g);
            e += beta * (0..n).map(|i| g[i].hypot(g[n + i])).sum::<f64>();
        }
    }
    let mis: f64 = (0..n)
        .map(|i| {
            let r = f.z[i] + f.c[i] * vt[i] + f.c[n + i] * vt[n + i];
            r * r
        })
        .sum();
    e + 0.5 * gamma * mis
}

/// `K v` for `K = I_2 (x) grad_fwd`.
pub(crate) fn flow_grad(vt: &[f64], nx: usize, ny: usize, out: &mut [f64]) {
    let n = nx * ny;
    for (comp, o) in vt.chunks(n).zip(out.chunks_mut(DIM * n)) {
        grad_fwd_into(comp, nx, ny, o);
    }
}

/// `K^T y`.
pub(crate) fn flow_grad_adjoint(y: &[f64], nx: usize, ny: usize, out: &mut [f64]) {
    let n = nx * ny;
    for (yc, o) in y.chunks(DIM * n).zip(out.chunks_mut(n)) {
        div_fwd_adj_into(yc, nx, ny, o);
        o.iter_mut().for_each(|v| *v = -*v);
    }
}

/// Minimizes `beta sum_i TV(v_i) + gamma/2 |D_v p|^2` over `v`, frame by
/// frame in parallel. The last frame of the result is zero.
pub fn pdhg_solve_v(
    p: &ImageSeq,
    v_init: &MotionSeq,
    w: Weights,
    cfg: &PdhgConfig,
    state: &mut PdhgVState,
) -> Result<(MotionSeq, SubReport)> {
    cfg.validate()?;
    ensure_arg!(v_init.matches(p), "motion field does not match the images");
    let (nx, ny, n) = (p.nx, p.ny, p.n_pixels());
    let n_flow = p.frames.saturating_sub(1);

    let (tau, sigma): (Vec<f64>, f64) = match cfg.steps {
        StepMode::Fixed { mu, nu } => {
            let k = flow_gradient_csr(nx, ny);
            let est = estimate_norm_sq(
                DIM * n,
                |x| {
                    let mut y = vec![0.0; k.nrows];
                    k.matvec(x, &mut y);
                    y
                },
                |y| {
                    let mut x = vec![0.0; k.ncols];
                    k.matvec_transpose(y, &mut x);
                    x
                },
                50,
            );
            check_fixed_steps(mu, nu, est)?;
            (vec![mu; DIM * n], nu)
        }
        StepMode::Diagonal => {
            let col = grad_col_sums(nx, ny);
            let t: Vec<f64> = col.iter().map(|&c| if c > 0.0 { 1.0 / c } else { 1.0 }).collect();
            ([t.clone(), t].concat(), 0.5)
        }
    };

    if state.y.len() != n_flow || state.y.iter().any(|y| y.len() != 2 * DIM * n) {
        state.y = vec![vec![0.0; 2 * DIM * n]; n_flow];
    }
    let frames = flow_frames(p);
    let (beta, gamma) = (w.beta, w.gamma);

    let results: Vec<Result<(Vec<f64>, SubReport)>> = frames
        .par_iter()
        .zip(state.y.par_iter_mut())
        .enumerate()
        .map(|(t, (f, y))| -> Result<(Vec<f64>, SubReport)> {
            let v0 = v_init.frame(t);
            let mut x = v0.to_vec();
            let mut x_bar = x.clone();
            let mut g = vec![0.0; 2 * DIM * n];
            let mut kty = vec![0.0; DIM * n];
            let mut tr = BestTracker::new(x.clone(), flow_frame_energy(f, &x, nx, ny, beta, gamma), "pdhg v-update");
            for k in 1..=cfg.max_iters {
                flow_grad(&x_bar, nx, ny, &mut g);
                for (yi, gi) in y.iter_mut().zip(&g) {
                    *yi += sigma * gi;
                }
                for block in y.chunks_mut(DIM * n) {
                    project_field(beta, block, DIM);
                }
                flow_grad_adjoint(y, nx, ny, &mut kty);
                let mut xt = [0.0; DIM];
                let mut out = [0.0; DIM];
                for i in 0..n {
                    xt[0] = x[i] - tau[i] * kty[i];
                    xt[1] = x[n + i] - tau[n + i] * kty[n + i];
                    prox_flow_quad(tau[i] * gamma, f.z[i], &[f.c[i], f.c[n + i]], &xt, &mut out);
                    x_bar[i] = out[0] + cfg.theta * (out[0] - x[i]);
                    x_bar[n + i] = out[1] + cfg.theta * (out[1] - x[n + i]);
                    x[i] = out[0];
                    x[n + i] = out[1];
                }
                if due(k, cfg.stride, cfg.max_iters) {
                    let e = flow_frame_energy(f, &x, nx, ny, beta, gamma);
                    tr.check(k, e, || x.clone())?;
                }
            }
            Ok(tr.finish(cfg.max_iters))
        })
        .collect();

    let mut out = MotionSeq::zeros(p.nx, p.ny, p.frames);
    let mut reports = Vec::with_capacity(n_flow);
    for (t, r) in results.into_iter().enumerate() {
        let (vt, rep) = r?;
        out.frame_mut(t).copy_from_slice(&vt);
        reports.push(rep);
    }
    Ok((out, merge_reports(&reports, cfg.max_iters)))
}

/// Sums per-frame reports that share the same check schedule.
pub(crate) fn merge_reports(reports: &[SubReport], iterations: usize) -> SubReport {
    let mut merged = SubReport {
        iterations,
        ..Default::default()
    };
    for r in reports {
        merged.initial_energy += r.initial_energy;
        merged.best_energy += r.best_energy;
        if merged.history.is_empty() {
            merged.history = r.history.clone();
        } else {
            for (m, h) in merged.history.iter_mut().zip(&r.history) {
                m.1 += h.1;
            }
        }
    }
    merged
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::denoising_energy_weighted;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_seq(nx: usize, ny: usize, t: usize, seed: u64) -> ImageSeq {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageSeq::from_vec(nx, ny, t, (0..nx * ny * t).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn trivial_weights_return_target() {
        let pt = rand_seq(6, 5, 2, 1);
        let v = MotionSeq::zeros_like(&pt);
        let w = Weights {
            alpha: 0.0,
            beta: 0.0,
            gamma: 0.0,
        };
        let (p, rep) = pdhg_solve_p(&pt, &v, &ImageSeq::zeros(6, 5, 2), w, &PdhgConfig::for_p(), &mut Default::default()).unwrap();
        assert_eq!(p, pt);
        assert_eq!(rep.iterations, 1);
    }

    #[test]
    fn p_update_decreases_energy_and_stays_nonnegative() {
        let pt = rand_seq(8, 8, 3, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut v = MotionSeq::from_vec(8, 8, 3, (0..384).map(|_| rng.gen_range(-0.5..0.5)).collect()).unwrap();
        v.frame_mut(2).iter_mut().for_each(|x| *x = 0.0);
        let w = Weights {
            alpha: 0.1,
            beta: 0.0,
            gamma: 1.0,
        };
        let start = ImageSeq::zeros(8, 8, 3);
        let e0 = denoising_energy_weighted(&start, &v, &pt, w).unwrap();
        for steps in [StepMode::Diagonal, StepMode::Fixed { mu: 0.1, nu: 0.5 }] {
            let cfg = PdhgConfig {
                steps,
                max_iters: 300,
                ..PdhgConfig::for_p()
            };
            let (p, rep) = pdhg_solve_p(&pt, &v, &start, w, &cfg, &mut Default::default()).unwrap();
            assert!(p.values.iter().all(|&x| x >= 0.0));
            let e = denoising_energy_weighted(&p, &v, &pt, w).unwrap();
            assert!((e - rep.best_energy).abs() < 1e-12 && e < 0.5 * e0);
        }
    }

    #[test]
    fn oversized_fixed_steps_are_rejected() {
        let pt = rand_seq(8, 8, 1, 2);
        let v = MotionSeq::zeros_like(&pt);
        let w = Weights {
            alpha: 0.1,
            beta: 0.0,
            gamma: 0.0,
        };
        let cfg = PdhgConfig {
            steps: StepMode::Fixed { mu: 1.0, nu: 1.0 },
            ..PdhgConfig::for_p()
        };
        assert!(pdhg_solve_p(&pt, &v, &pt, w, &cfg, &mut Default::default()).is_err());
        let cfg = PdhgConfig {
            steps: StepMode::Fixed { mu: 0.5, nu: 0.5 },
            ..PdhgConfig::for_v()
        };
        assert!(pdhg_solve_v(&pt, &v, w, &cfg, &mut Default::default()).is_err());
    }

    #[test]
    fn constant_sequence_keeps_zero_flow() {
        let frame: Vec<f64> = rand_seq(6, 6, 1, 4).values;
        let p = ImageSeq::from_vec(6, 6, 3, [frame.clone(), frame.clone(), frame].concat()).unwrap();
        let v0 = MotionSeq::zeros_like(&p);
        let w = Weights {
            alpha: 0.0,
            beta: 0.1,
            gamma: 1.0,
        };
        let (v, rep) = pdhg_solve_v(&p, &v0, w, &PdhgConfig::for_v(), &mut Default::default()).unwrap();
        assert_eq!(rep.best_energy, 0.0);
        assert!(v.values.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn huge_beta_gives_spatially_constant_flow() {
        let p = rand_seq(8, 8, 2, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut v0 = MotionSeq::from_vec(8, 8, 2, (0..256).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        v0.frame_mut(1).iter_mut().for_each(|x| *x = 0.0);
        let w = Weights {
            alpha: 0.0,
            beta: 1e3,
            gamma: 1.0,
        };
        let cfg = PdhgConfig {
            max_iters: 3000,
            ..PdhgConfig::for_v()
        };
        let (v, _) = pdhg_solve_v(&p, &v0, w, &cfg, &mut Default::default()).unwrap();
        let var = |c: &[f64]| {
            let m = c.iter().sum::<f64>() / c.len() as f64;
            c.iter().map(|x| (x - m).powi(2)).sum::<f64>() / c.len() as f64
        };
        let var0 = var(&v0.frame(0)[..64]);
        assert!(var(&v.frame(0)[..64]) < 1e-4 * var0);
        assert!(var(&v.frame(0)[64..]) < 1e-4 * var0);
    }
}
