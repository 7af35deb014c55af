//! ADMM (split Bregman) solvers for the two ACS subproblems.
//!
//! Scaled form: `x = argmin G(x) + rho/2 |Kx - y + w|^2`,
//! `y = argmin F(y) + rho/2 |h - y + w|^2`, `w += h - y`, where `h` is the
//! over-relaxed `s K x + (1 - s) y`. The x-updates are linear systems solved
//! by warm-started CG or MINRES to a tolerance that tightens with `k`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffops::{div_fwd_adj_into, grad_fwd_into, TransportOperator};
use crate::energy::{denoising_energy_weighted, Weights};
use crate::error::{ensure_arg, Error, Result};
use crate::grid::{norm, ImageSeq, MotionSeq, DIM};
use crate::linsolve::{make_preconditioner, solve_spd, LinearOperator, PrecondKind, Preconditioner, SolveOptions, SolveReport, SolverKind};
use crate::pdhg::{flow_frame_energy, flow_frames, flow_grad, flow_grad_adjoint, merge_reports, FlowFrame};
use crate::prox::shrink_field;
use crate::sparse::CsrMatrix;
use crate::subsolve::{due, BestTracker, SubReport};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RhoMode {
    /// Residual balancing during the first `until` iterations, then frozen:
    /// `rho` is multiplied (divided) by `factor` when the primal (dual)
    /// residual exceeds `ratio` times the other.
    Adaptive { until: usize, ratio: f64, factor: f64 },
    Fixed,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdmmConfig {
    /// Initial penalty; later calls continue from the adapted value.
    pub rho: f64,
    pub rho_mode: RhoMode,
    pub over_relax: f64,
    pub solver: SolverKind,
    pub precond: PrecondKind,
    /// Inner tolerance `tol0 / k^tol_exponent`.
    pub tol0: f64,
    pub tol_exponent: f64,
    pub min_inner: usize,
    pub max_inner: usize,
    pub max_iters: usize,
    pub stride: usize,
    /// Stop once both residual norms fall below this (0 disables).
    pub residual_tol: f64,
}

impl AdmmConfig {
    pub fn for_p() -> Self {
        AdmmConfig {
            rho: 1.0,
            rho_mode: RhoMode::Adaptive {
                until: 25,
                ratio: 10.0,
                factor: 2.0,
            },
            over_relax: 1.8,
            solver: SolverKind::Cg,
            precond: PrecondKind::None,
            tol0: 1e-3,
            tol_exponent: 1.5,
            min_inner: 3,
            max_inner: 200,
            max_iters: 50,
            stride: 5,
            residual_tol: 0.0,
        }
    }

    pub fn for_v() -> Self {
        AdmmConfig {
            rho: 0.1,
            rho_mode: RhoMode::Fixed,
            precond: PrecondKind::Ic0,
            ..Self::for_p()
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure_arg!(self.rho > 0.0, "rho must be positive");
        ensure_arg!(
            self.over_relax > 0.0 && self.over_relax < 2.0,
            "over-relaxation must lie in (0, 2)"
        );
        ensure_arg!(self.max_iters >= 1, "max_iters must be at least 1");
        ensure_arg!(self.tol0 > 0.0, "inner tolerance must be positive");
        Ok(())
    }

    pub fn inner_tol(&self, k: usize) -> f64 {
        self.tol0 / (k.max(1) as f64).powf(self.tol_exponent)
    }

    fn inner_opts(&self, k: usize) -> SolveOptions {
        SolveOptions {
            tol: self.inner_tol(k),
            min_iters: self.min_inner,
            max_iters: self.max_inner.max(self.min_inner),
            record_history: false,
        }
    }
}

/// Everything [`admm_solve_p`] carries from one call to the next.
#[derive(Clone, Debug, Default)]
pub struct AdmmPState {
    pub y1: Vec<f64>,
    pub y2: Vec<f64>,
    pub w1: Vec<f64>,
    pub w2: Vec<f64>,
    /// Current penalty (0 until the first call).
    pub rho: f64,
    /// ADMM iterations done so far, across calls.
    pub k: usize,
    /// Residual norms of the last iteration.
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub inner_iterations: usize,
}

/// `(1 + rho) I + gamma D_v^T D_v + rho grad^T grad`, applied matrix-free.
struct PSystem<'a> {
    nx: usize,
    ny: usize,
    frames: usize,
    rho: f64,
    gamma: f64,
    use_tv: bool,
    dv: Option<&'a CsrMatrix>,
}

impl LinearOperator for PSystem<'_> {
    fn dim(&self) -> usize {
        self.nx * self.ny * self.frames
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let (nx, ny, n) = (self.nx, self.ny, self.nx * self.ny);
        let rho = self.rho;
        y.par_chunks_mut(n).zip(x.par_chunks(n)).for_each(|(yt, xt)| {
            if self.use_tv {
                let mut g = vec![0.0; DIM * n];
                grad_fwd_into(xt, nx, ny, &mut g);
                div_fwd_adj_into(&g, nx, ny, yt);
                for i in 0..n {
                    yt[i] = (1.0 + rho) * xt[i] - rho * yt[i];
                }
            } else {
                for i in 0..n {
                    yt[i] = (1.0 + rho) * xt[i];
                }
            }
        });
        if let Some(m) = self.dv {
            let mut r = vec![0.0; m.nrows];
            m.matvec(x, &mut r);
            let mut back = vec![0.0; m.ncols];
            m.matvec_transpose(&r, &mut back);
            for (yi, bi) in y.iter_mut().zip(back) {
                *yi += self.gamma * bi;
            }
        }
    }
}

/// Stacked per-frame gradients of an image sequence.
fn seq_grad(x: &[f64], nx: usize, ny: usize, out: &mut [f64]) {
    let n = nx * ny;
    out.par_chunks_mut(DIM * n)
        .zip(x.par_chunks(n))
        .for_each(|(g, xt)| grad_fwd_into(xt, nx, ny, g));
}

/// `grad^T y = -div y`, per frame.
fn seq_grad_adjoint(y: &[f64], nx: usize, ny: usize, out: &mut [f64]) {
    let n = nx * ny;
    out.par_chunks_mut(n).zip(y.par_chunks(DIM * n)).for_each(|(o, yt)| {
        div_fwd_adj_into(yt, nx, ny, o);
        o.iter_mut().for_each(|v| *v = -*v);
    });
}

fn positive_part(x: &ImageSeq) -> ImageSeq {
    let mut p = x.clone();
    p.project_nonneg();
    p
}

/// ADMM for `1/2 |p - p~|^2 + alpha TV(p) + gamma/2 |D_v p|^2` over `p >= 0`,
/// with `K = [grad; I]`. Returns the best nonnegative iterate seen.
pub fn admm_solve_p(
    p_tilde: &ImageSeq,
    v: &MotionSeq,
    p_init: &ImageSeq,
    w: Weights,
    cfg: &AdmmConfig,
    state: &mut AdmmPState,
) -> Result<(ImageSeq, SubReport)> {
    cfg.validate()?;
    ensure_arg!(p_tilde.same_shape(p_init), "initial image and target differ in shape");
    ensure_arg!(v.matches(p_tilde), "motion field does not match the images");
    let (nx, ny, n, frames) = (p_tilde.nx, p_tilde.ny, p_tilde.n_pixels(), p_tilde.frames);
    let len = frames * n;
    let w = Weights { beta: 0.0, ..w };
    let energy = |x: &ImageSeq| denoising_energy_weighted(x, v, p_tilde, w);

    let use_tv = w.alpha > 0.0;
    let use_tr = w.gamma > 0.0 && frames > 1;
    let mut tracker = BestTracker::new(positive_part(p_init), energy(&positive_part(p_init))?, "admm p-update");
    if !use_tv && !use_tr {
        let x = positive_part(p_tilde);
        tracker.check(1, energy(&x)?, || x.clone())?;
        return Ok(tracker.finish(1));
    }
    let dv = use_tr.then(|| TransportOperator::new(v).to_csr());

    if state.rho <= 0.0 {
        state.rho = cfg.rho;
    }
    if state.y2.len() != len {
        // first call, or a shape change: start from the consistent split
        let mut g = vec![0.0; DIM * len];
        seq_grad(&p_init.values, nx, ny, &mut g);
        state.y1 = g;
        state.y2 = positive_part(p_init).values;
        state.w1 = vec![0.0; DIM * len];
        state.w2 = vec![0.0; len];
    }

    let s = cfg.over_relax;
    let mut x = p_init.clone();
    let mut rhs = vec![0.0; len];
    let mut tmp = vec![0.0; len];
    let mut kx1 = vec![0.0; DIM * len];
    let mut done = 0;
    for it in 1..=cfg.max_iters {
        state.k += 1;
        let k = state.k;
        let rho = state.rho;

        // x-update
        if use_tv {
            let d: Vec<f64> = state.y1.iter().zip(&state.w1).map(|(a, b)| a - b).collect();
            seq_grad_adjoint(&d, nx, ny, &mut tmp);
        } else {
            tmp.iter_mut().for_each(|t| *t = 0.0);
        }
        for i in 0..len {
            rhs[i] = p_tilde.values[i] + rho * tmp[i] + rho * (state.y2[i] - state.w2[i]);
        }
        let sys = PSystem {
            nx,
            ny,
            frames,
            rho,
            gamma: w.gamma,
            use_tv,
            dv: dv.as_ref(),
        };
        let rep = solve_spd(&sys, &crate::linsolve::IdentityPrecond, &rhs, &mut x.values, cfg.solver, &cfg.inner_opts(k))?;
        state.inner_iterations += rep.iterations;

        // y- and w-updates with over-relaxation
        let y1_old = state.y1.clone();
        let y2_old = state.y2.clone();
        let mut r_prim = 0.0;
        if use_tv {
            seq_grad(&x.values, nx, ny, &mut kx1);
            let mut h1 = vec![0.0; DIM * len];
            for i in 0..DIM * len {
                h1[i] = s * kx1[i] + (1.0 - s) * y1_old[i];
                state.y1[i] = h1[i] + state.w1[i];
            }
            for chunk in state.y1.chunks_mut(DIM * n) {
                shrink_field(w.alpha / rho, chunk, DIM);
            }
            for i in 0..DIM * len {
                state.w1[i] += h1[i] - state.y1[i];
                r_prim += (kx1[i] - state.y1[i]).powi(2);
            }
        }
        for i in 0..len {
            let h2 = s * x.values[i] + (1.0 - s) * y2_old[i];
            state.y2[i] = (h2 + state.w2[i]).max(0.0);
            state.w2[i] += h2 - state.y2[i];
            r_prim += (x.values[i] - state.y2[i]).powi(2);
        }
        let r_prim = r_prim.sqrt();
        // dual residual rho K^T (y - y_old)
        for i in 0..len {
            rhs[i] = state.y2[i] - y2_old[i];
        }
        if use_tv {
            let d: Vec<f64> = state.y1.iter().zip(&y1_old).map(|(a, b)| a - b).collect();
            seq_grad_adjoint(&d, nx, ny, &mut tmp);
            for i in 0..len {
                rhs[i] += tmp[i];
            }
        }
        let r_dual = rho * norm(&rhs);
        state.primal_residual = r_prim;
        state.dual_residual = r_dual;

        if let RhoMode::Adaptive { until, ratio, factor } = cfg.rho_mode {
            if k <= until {
                let scale = if r_prim > ratio * r_dual {
                    factor
                } else if r_dual > ratio * r_prim {
                    1.0 / factor
                } else {
                    1.0
                };
                if scale != 1.0 {
                    state.rho *= scale;
                    state.w1.iter_mut().for_each(|v| *v /= scale);
                    state.w2.iter_mut().for_each(|v| *v /= scale);
                }
            }
        }

        done = it;
        let converged = cfg.residual_tol > 0.0 && r_prim < cfg.residual_tol && r_dual < cfg.residual_tol;
        if due(it, cfg.stride, cfg.max_iters) || converged {
            let xp = positive_part(&x);
            tracker.check(it, energy(&xp)?, || xp.clone())?;
        }
        if converged {
            break;
        }
    }
    Ok(tracker.finish(done))
}

/// Per-frame ADMM variables for the motion update.
#[derive(Clone, Debug, Default)]
pub struct AdmmVFrame {
    pub y: Vec<f64>,
    pub w: Vec<f64>,
    pub k: usize,
}

#[derive(Clone, Debug, Default)]
pub struct AdmmVState {
    pub frames: Vec<AdmmVFrame>,
    /// Inner solver iterations spent, summed over frames and calls.
    pub inner_iterations: usize,
}

/// Relative size of the proximal identity shift added to the motion system.
pub const FLOW_SHIFT: f64 = 1e-6;

/// The explicit sparse SPD matrix of a motion x-update together with its
/// preconditioner.
pub struct SparseSpdSystem {
    pub matrix: CsrMatrix,
    precond: Box<dyn Preconditioner>,
    pub solver: SolverKind,
}

impl SparseSpdSystem {
    pub fn new(matrix: CsrMatrix, precond: PrecondKind, solver: SolverKind) -> Result<Self> {
        let precond = make_preconditioner(precond, &matrix)?;
        Ok(SparseSpdSystem { matrix, precond, solver })
    }

    pub fn solve(&self, rhs: &[f64], x: &mut [f64], opts: &SolveOptions) -> Result<SolveReport> {
        solve_spd(&self.matrix, self.precond.as_ref(), rhs, x, self.solver, opts)
    }
}

/// Graph Laplacian `grad_fwd^T grad_fwd` of an `nx x ny` grid, as triplets
/// offset by `off` and scaled by `scale`.
fn laplacian_triplets(nx: usize, ny: usize, off: usize, scale: f64, out: &mut Vec<(usize, usize, f64)>) {
    let mut edge = |a: usize, b: usize| {
        out.push((off + a, off + a, scale));
        out.push((off + b, off + b, scale));
        out.push((off + a, off + b, -scale));
        out.push((off + b, off + a, -scale));
    };
    for iy in 0..ny {
        for ix in 0..nx {
            let i = iy * nx + ix;
            if ix + 1 < nx {
                edge(i, i + 1);
            }
            if iy + 1 < ny {
                edge(i, i + nx);
            }
        }
    }
}

/// `gamma E^T E + rho I_2 (x) Laplacian + shift I` for the central gradient
/// `c = [d_x p; d_y p]` of one frame.
pub fn build_flow_system(c: &[f64], nx: usize, ny: usize, gamma: f64, rho: f64, shift: f64) -> CsrMatrix {
    let n = nx * ny;
    let mut trip = Vec::with_capacity(20 * n);
    for i in 0..n {
        let (gx, gy) = (c[i], c[n + i]);
        trip.push((i, i, gamma * gx * gx + shift));
        trip.push((n + i, n + i, gamma * gy * gy + shift));
        trip.push((i, n + i, gamma * gx * gy));
        trip.push((n + i, i, gamma * gx * gy));
    }
    laplacian_triplets(nx, ny, 0, rho, &mut trip);
    laplacian_triplets(nx, ny, n, rho, &mut trip);
    CsrMatrix::from_triplets(DIM * n, DIM * n, &trip).expect("flow system triplets are in range")
}

fn admm_v_frame(
    f: &FlowFrame,
    v0: &[f64],
    st: &mut AdmmVFrame,
    nx: usize,
    ny: usize,
    w: Weights,
    rho: f64,
    cfg: &AdmmConfig,
) -> Result<(Vec<f64>, SubReport, usize)> {
    let n = nx * ny;
    let shift = FLOW_SHIFT * rho;
    let sys = SparseSpdSystem::new(build_flow_system(&f.c, nx, ny, w.gamma, rho, shift), cfg.precond, cfg.solver)?;
    if st.y.len() != 2 * DIM * n {
        st.y = vec![0.0; 2 * DIM * n];
        flow_grad(v0, nx, ny, &mut st.y);
        st.w = vec![0.0; 2 * DIM * n];
    }
    // gamma E^T (-z) is constant over the iterations
    let mut base = vec![0.0; DIM * n];
    for i in 0..n {
        base[i] = -w.gamma * f.c[i] * f.z[i];
        base[n + i] = -w.gamma * f.c[n + i] * f.z[i];
    }
    let s = cfg.over_relax;
    let mut x = v0.to_vec();
    let mut rhs = vec![0.0; DIM * n];
    let mut d = vec![0.0; 2 * DIM * n];
    let mut kx = vec![0.0; 2 * DIM * n];
    let mut inner = 0;
    let mut tr = BestTracker::new(x.clone(), flow_frame_energy(f, &x, nx, ny, w.beta, w.gamma), "admm v-update");
    for it in 1..=cfg.max_iters {
        st.k += 1;
        for i in 0..2 * DIM * n {
            d[i] = st.y[i] - st.w[i];
        }
        flow_grad_adjoint(&d, nx, ny, &mut rhs);
        for i in 0..DIM * n {
            rhs[i] = base[i] + rho * rhs[i] + shift * x[i];
        }
        let rep = sys.solve(&rhs, &mut x, &cfg.inner_opts(st.k))?;
        inner += rep.iterations;

        flow_grad(&x, nx, ny, &mut kx);
        for i in 0..2 * DIM * n {
            let h = s * kx[i] + (1.0 - s) * st.y[i];
            d[i] = h;
            st.y[i] = h + st.w[i];
        }
        for block in st.y.chunks_mut(DIM * n) {
            shrink_field(w.beta / rho, block, DIM);
        }
        for i in 0..2 * DIM * n {
            st.w[i] += d[i] - st.y[i];
        }
        if due(it, cfg.stride, cfg.max_iters) {
            let e = flow_frame_energy(f, &x, nx, ny, w.beta, w.gamma);
            tr.check(it, e, || x.clone())?;
        }
    }
    let (best, rep) = tr.finish(cfg.max_iters);
    Ok((best, rep, inner))
}

/// ADMM for the motion subproblem, frame by frame in parallel, with a fixed
/// penalty so each frame's matrix and preconditioner are built once per call.
pub fn admm_solve_v(
    p: &ImageSeq,
    v_init: &MotionSeq,
    w: Weights,
    cfg: &AdmmConfig,
    state: &mut AdmmVState,
) -> Result<(MotionSeq, SubReport)> {
    cfg.validate()?;
    ensure_arg!(v_init.matches(p), "motion field does not match the images");
    if !matches!(cfg.rho_mode, RhoMode::Fixed) {
        return Err(Error::arg("the motion update uses a fixed rho"));
    }
    let (nx, ny) = (p.nx, p.ny);
    let n_flow = p.frames.saturating_sub(1);
    if state.frames.len() != n_flow {
        state.frames = vec![AdmmVFrame::default(); n_flow];
    }
    let frames = flow_frames(p);
    let results: Vec<Result<(Vec<f64>, SubReport, usize)>> = frames
        .par_iter()
        .zip(state.frames.par_iter_mut())
        .enumerate()
        .map(|(t, (f, st))| admm_v_frame(f, v_init.frame(t), st, nx, ny, w, cfg.rho, cfg))
        .collect();
    let mut out = MotionSeq::zeros(p.nx, p.ny, p.frames);
    let mut reports = Vec::with_capacity(n_flow);
    for (t, r) in results.into_iter().enumerate() {
        let (vt, rep, inner) = r?;
        out.frame_mut(t).copy_from_slice(&vt);
        state.inner_iterations += inner;
        reports.push(rep);
    }
    Ok((out, merge_reports(&reports, cfg.max_iters)))
}

/// Relative residual history of one solve of a motion system, for solver
/// comparisons.
pub fn bench_flow_system(
    matrix: &CsrMatrix,
    rhs: &[f64],
    precond: PrecondKind,
    solver: SolverKind,
    tol: f64,
    max_iters: usize,
) -> Result<SolveReport> {
    let sys = SparseSpdSystem::new(matrix.clone(), precond, solver)?;
    let mut x = vec![0.0; rhs.len()];
    let opts = SolveOptions {
        tol,
        min_iters: 0,
        max_iters,
        record_history: true,
    };
    sys.solve(rhs, &mut x, &opts)
}
