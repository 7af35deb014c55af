//! Spatial difference operators and the optical-flow transport operators.
//!
//! `grad_fwd` uses forward differences with a zero last difference along each
//! axis (replicate boundary); `div_fwd_adj` is its negative adjoint. Central
//! differences fall back to one-sided differences at the boundary. Gradient
//! fields are stored as `[d_x; d_y]`, `N` values each.

use rayon::prelude::*;

use crate::error::{ensure_arg, Result};
use crate::grid::{ImageSeq, MotionSeq, DIM};
use crate::sparse::CsrMatrix;

/// Forward-difference gradient of one `nx x ny` image into `out` (`2N`).
pub fn grad_fwd_into(u: &[f64], nx: usize, ny: usize, out: &mut [f64]) {
    let n = nx * ny;
    let (gx, gy) = out.split_at_mut(n);
    for iy in 0..ny {
        let row = iy * nx;
        for ix in 0..nx {
            let i = row + ix;
            gx[i] = if ix + 1 < nx { u[i + 1] - u[i] } else { 0.0 };
            gy[i] = if iy + 1 < ny { u[i + nx] - u[i] } else { 0.0 };
        }
    }
}

pub fn grad_fwd(u: &[f64], nx: usize, ny: usize) -> Vec<f64> {
    let mut out = vec![0.0; DIM * nx * ny];
    grad_fwd_into(u, nx, ny, &mut out);
    out
}

/// Backward-difference divergence, the negative adjoint of [`grad_fwd`].
pub fn div_fwd_adj_into(y: &[f64], nx: usize, ny: usize, out: &mut [f64]) {
    let n = nx * ny;
    let (yx, yy) = y.split_at(n);
    for iy in 0..ny {
        let row = iy * nx;
        for ix in 0..nx {
            let i = row + ix;
            let mut d = 0.0;
            if ix + 1 < nx {
                d += yx[i];
            }
            if ix > 0 {
                d -= yx[i - 1];
            }
            if iy + 1 < ny {
                d += yy[i];
            }
            if iy > 0 {
                d -= yy[i - nx];
            }
            out[i] = d;
        }
    }
}

pub fn div_fwd_adj(y: &[f64], nx: usize, ny: usize) -> Vec<f64> {
    let mut out = vec![0.0; nx * ny];
    div_fwd_adj_into(y, nx, ny, &mut out);
    out
}

/// One-dimensional central-difference stencil: returns `(lo, hi, weight)` so
/// that the derivative at position `k` of a length-`len` line is
/// `weight * (u[hi] - u[lo])`.
#[inline]
fn central_stencil(k: usize, len: usize) -> Option<(usize, usize, f64)> {
    if len < 2 {
        None
    } else if k == 0 {
        Some((0, 1, 1.0))
    } else if k + 1 == len {
        Some((len - 2, len - 1, 1.0))
    } else {
        Some((k - 1, k + 1, 0.5))
    }
}

/// Central-difference gradient (one-sided at the boundary) into `out` (`2N`).
pub fn grad_central_into(u: &[f64], nx: usize, ny: usize, out: &mut [f64]) {
    let n = nx * ny;
    let (gx, gy) = out.split_at_mut(n);
    for iy in 0..ny {
        let row = iy * nx;
        let sy = central_stencil(iy, ny);
        for ix in 0..nx {
            let i = row + ix;
            gx[i] = central_stencil(ix, nx).map_or(0.0, |(lo, hi, w)| w * (u[row + hi] - u[row + lo]));
            gy[i] = sy.map_or(0.0, |(lo, hi, w)| w * (u[hi * nx + ix] - u[lo * nx + ix]));
        }
    }
}

pub fn grad_central(u: &[f64], nx: usize, ny: usize) -> Vec<f64> {
    let mut out = vec![0.0; DIM * nx * ny];
    grad_central_into(u, nx, ny, &mut out);
    out
}

/// Adjoint of [`grad_central_into`], accumulated into `out`.
pub fn grad_central_adjoint_add(g: &[f64], nx: usize, ny: usize, out: &mut [f64]) {
    let n = nx * ny;
    let (gx, gy) = g.split_at(n);
    for iy in 0..ny {
        let row = iy * nx;
        let sy = central_stencil(iy, ny);
        for ix in 0..nx {
            let i = row + ix;
            if let Some((lo, hi, w)) = central_stencil(ix, nx) {
                out[row + hi] += w * gx[i];
                out[row + lo] -= w * gx[i];
            }
            if let Some((lo, hi, w)) = sy {
                out[hi * nx + ix] += w * gy[i];
                out[lo * nx + ix] -= w * gy[i];
            }
        }
    }
}

/// Isotropic total variation `sum_i |grad_fwd(u)_i|_2`.
pub fn total_variation(u: &[f64], nx: usize, ny: usize) -> f64 {
    let n = nx * ny;
    let g = grad_fwd(u, nx, ny);
    (0..n).map(|i| g[i].hypot(g[n + i])).sum()
}

/// Isotropic TV of a stacked gradient field `[g_x; g_y]`.
pub fn tv_of_gradient(g: &[f64]) -> f64 {
    let n = g.len() / DIM;
    (0..n).map(|i| g[i].hypot(g[n + i])).sum()
}

/// Optical-flow transport operator for a frozen motion sequence:
/// `(D_v p)_t = p_{t+1} - p_t + grad_central(p_t) . v_t` for `t < T - 1`.
#[derive(Clone, Copy, Debug)]
pub struct TransportOperator<'a> {
    v: &'a MotionSeq,
}

impl<'a> TransportOperator<'a> {
    pub fn new(v: &'a MotionSeq) -> Self {
        TransportOperator { v }
    }

    /// Residual frames produced (`T - 1`, or 0 for a single frame).
    pub fn n_residual_frames(&self) -> usize {
        self.v.frames.saturating_sub(1)
    }

    pub fn apply(&self, p: &ImageSeq) -> Result<Vec<f64>> {
        ensure_arg!(self.v.matches(p), "motion and image sequences differ in shape");
        let mut out = vec![0.0; self.n_residual_frames() * p.n_pixels()];
        self.apply_into(p, &mut out);
        Ok(out)
    }

    pub fn apply_into(&self, p: &ImageSeq, out: &mut [f64]) {
        let (nx, ny, n) = (p.nx, p.ny, p.n_pixels());
        out.par_chunks_mut(n).enumerate().for_each(|(t, r)| {
            let cur = p.frame(t);
            let next = p.frame(t + 1);
            let vt = self.v.frame(t);
            let mut g = vec![0.0; DIM * n];
            grad_central_into(cur, nx, ny, &mut g);
            for i in 0..n {
                r[i] = next[i] - cur[i] + g[i] * vt[i] + g[n + i] * vt[n + i];
            }
        });
    }

    /// Exact adjoint of [`apply`](Self::apply).
    pub fn adjoint(&self, r: &[f64]) -> Result<ImageSeq> {
        let (nx, ny) = (self.v.nx, self.v.ny);
        let n = nx * ny;
        ensure_arg!(
            r.len() == self.n_residual_frames() * n,
            "residual has {} values, expected {}",
            r.len(),
            self.n_residual_frames() * n
        );
        let mut out = ImageSeq::zeros(nx, ny, self.v.frames);
        self.adjoint_into(r, &mut out.values);
        Ok(out)
    }

    pub fn adjoint_into(&self, r: &[f64], out: &mut [f64]) {
        let (nx, ny) = (self.v.nx, self.v.ny);
        let n = nx * ny;
        let frames = self.v.frames;
        out.par_chunks_mut(n).enumerate().for_each(|(t, q)| {
            q.iter_mut().for_each(|x| *x = 0.0);
            if t > 0 {
                q.copy_from_slice(&r[(t - 1) * n..t * n]);
            }
            if t + 1 < frames {
                let rt = &r[t * n..(t + 1) * n];
                let vt = self.v.frame(t);
                let mut g = vec![0.0; DIM * n];
                for i in 0..n {
                    q[i] -= rt[i];
                    g[i] = rt[i] * vt[i];
                    g[n + i] = rt[i] * vt[n + i];
                }
                grad_central_adjoint_add(&g, nx, ny, q);
            }
        });
    }

    /// Explicit sparse matrix of the operator, `(T-1)N x TN`.
    pub fn to_csr(&self) -> CsrMatrix {
        let (nx, ny) = (self.v.nx, self.v.ny);
        let n = nx * ny;
        let mut trip = Vec::with_capacity(self.n_residual_frames() * n * 6);
        for t in 0..self.n_residual_frames() {
            let vt = self.v.frame(t);
            let (c0, c1) = (t * n, (t + 1) * n);
            for iy in 0..ny {
                for ix in 0..nx {
                    let i = iy * nx + ix;
                    let row = t * n + i;
                    trip.push((row, c1 + i, 1.0));
                    trip.push((row, c0 + i, -1.0));
                    if let Some((lo, hi, w)) = central_stencil(ix, nx) {
                        trip.push((row, c0 + iy * nx + hi, w * vt[i]));
                        trip.push((row, c0 + iy * nx + lo, -w * vt[i]));
                    }
                    if let Some((lo, hi, w)) = central_stencil(iy, ny) {
                        trip.push((row, c0 + hi * nx + ix, w * vt[n + i]));
                        trip.push((row, c0 + lo * nx + ix, -w * vt[n + i]));
                    }
                }
            }
        }
        CsrMatrix::from_triplets(self.n_residual_frames() * n, self.v.frames * n, &trip)
            .expect("transport triplets are in range")
    }
}

/// The `N x 2N` coupling matrix `E v = v_x d_x p + v_y d_y p` built from the
/// central-difference gradient of a frozen frame.
#[derive(Clone, Debug)]
pub struct EMatrix {
    pub nx: usize,
    pub ny: usize,
    /// `[d_x p; d_y p]`
    pub grad: Vec<f64>,
}

impl EMatrix {
    pub fn new(p_t: &[f64], nx: usize, ny: usize) -> Self {
        EMatrix {
            nx,
            ny,
            grad: grad_central(p_t, nx, ny),
        }
    }

    pub fn n_pixels(&self) -> usize {
        self.nx * self.ny
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let n = self.n_pixels();
        (0..n)
            .map(|i| self.grad[i] * v[i] + self.grad[n + i] * v[n + i])
            .collect()
    }

    pub fn adjoint(&self, r: &[f64]) -> Vec<f64> {
        let n = self.n_pixels();
        let mut out = vec![0.0; DIM * n];
        for i in 0..n {
            out[i] = self.grad[i] * r[i];
            out[n + i] = self.grad[n + i] * r[i];
        }
        out
    }
}

/// Sparse `I_2 (x) grad_fwd`, mapping `[v_x; v_y]` (2N) to four stacked
/// gradient blocks `[d_x v_x; d_y v_x; d_x v_y; d_y v_y]` (4N).
pub fn flow_gradient_csr(nx: usize, ny: usize) -> CsrMatrix {
    let n = nx * ny;
    let mut trip = Vec::with_capacity(8 * n);
    for comp in 0..DIM {
        let (rows, cols) = (comp * DIM * n, comp * n);
        for iy in 0..ny {
            for ix in 0..nx {
                let i = iy * nx + ix;
                if ix + 1 < nx {
                    trip.push((rows + i, cols + i + 1, 1.0));
                    trip.push((rows + i, cols + i, -1.0));
                }
                if iy + 1 < ny {
                    trip.push((rows + n + i, cols + i + nx, 1.0));
                    trip.push((rows + n + i, cols + i, -1.0));
                }
            }
        }
    }
    CsrMatrix::from_triplets(2 * DIM * n, DIM * n, &trip).expect("gradient triplets are in range")
}
