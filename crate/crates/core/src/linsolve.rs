//! Krylov solvers for symmetric positive definite systems, with pluggable
//! preconditioners.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{dot, norm};
use crate::sparse::CsrMatrix;

pub trait LinearOperator: Sync {
    fn dim(&self) -> usize;
    /// `y = A x`
    fn apply(&self, x: &[f64], y: &mut [f64]);
}

impl LinearOperator for CsrMatrix {
    fn dim(&self) -> usize {
        self.nrows
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.matvec(x, y)
    }
}

/// Approximate inverse `z = M^{-1} r`, itself SPD.
pub trait Preconditioner: Sync {
    fn apply(&self, r: &[f64], z: &mut [f64]);
}

pub struct IdentityPrecond;

impl Preconditioner for IdentityPrecond {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        z.copy_from_slice(r);
    }
}

pub struct JacobiPrecond {
    inv_diag: Vec<f64>,
}

impl JacobiPrecond {
    pub fn new(a: &CsrMatrix) -> Result<Self> {
        let d = a.diagonal();
        if d.iter().any(|&x| x <= 0.0 || !x.is_finite()) {
            return Err(Error::solver("Jacobi preconditioner needs a positive diagonal", None));
        }
        Ok(JacobiPrecond {
            inv_diag: d.iter().map(|x| 1.0 / x).collect(),
        })
    }
}

impl Preconditioner for JacobiPrecond {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        for ((zi, ri), di) in z.iter_mut().zip(r).zip(&self.inv_diag) {
            *zi = ri * di;
        }
    }
}

/// Zero fill-in incomplete Cholesky factor `L L^T ~ A`.
pub struct Ic0Precond {
    /// lower triangle of `L`, diagonal last in each row
    lower: CsrMatrix,
    /// `L^T`, diagonal first in each row
    upper: CsrMatrix,
    /// Diagonal shift (relative to `diag(A)`) that was needed to factorize.
    pub shift: f64,
}

impl Ic0Precond {
    /// Factorizes `A`, retrying with `A + s diag(A)` for growing `s` if a
    /// pivot breaks down.
    pub fn new(a: &CsrMatrix) -> Result<Self> {
        let mut shift = 0.0;
        for _ in 0..30 {
            if let Some(lower) = ic0_factor(a, shift) {
                let mut trip = Vec::with_capacity(lower.nnz());
                for r in 0..lower.nrows {
                    let (cols, vals) = lower.row(r);
                    for (&c, &v) in cols.iter().zip(vals) {
                        trip.push((c, r, v));
                    }
                }
                let upper = CsrMatrix::from_triplets(a.nrows, a.ncols, &trip)?;
                return Ok(Ic0Precond { lower, upper, shift });
            }
            shift = if shift == 0.0 { 1e-3 } else { 2.0 * shift };
        }
        Err(Error::solver("incomplete Cholesky failed even with a large diagonal shift", None))
    }
}

fn ic0_factor(a: &CsrMatrix, shift: f64) -> Option<CsrMatrix> {
    let n = a.nrows;
    let mut indptr = vec![0usize; n + 1];
    let mut indices = Vec::new();
    let mut data: Vec<f64> = Vec::new();
    let mut diag = vec![0.0; n];
    for i in 0..n {
        let (cols, vals) = a.row(i);
        let start = indices.len();
        for (&c, &v) in cols.iter().zip(vals) {
            if c < i {
                indices.push(c);
                data.push(v);
            }
        }
        // L_ik = (A_ik - sum_{j<k} L_ij L_kj) / L_kk over the pattern of row i
        for idx in start..indices.len() {
            let k = indices[idx];
            let (ka, kb) = (indptr[k], indptr[k + 1] - 1);
            let mut s = data[idx];
            let (mut p, mut q) = (start, ka);
            while p < idx && q < kb {
                match indices[p].cmp(&indices[q]) {
                    std::cmp::Ordering::Less => p += 1,
                    std::cmp::Ordering::Greater => q += 1,
                    std::cmp::Ordering::Equal => {
                        s -= data[p] * data[q];
                        p += 1;
                        q += 1;
                    }
                }
            }
            data[idx] = s / diag[k];
        }
        let aii = a.get(i, i) * (1.0 + shift);
        let d = aii - data[start..].iter().map(|x| x * x).sum::<f64>();
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        diag[i] = d.sqrt();
        indices.push(i);
        data.push(diag[i]);
        indptr[i + 1] = indices.len();
    }
    Some(CsrMatrix {
        nrows: n,
        ncols: n,
        indptr,
        indices,
        data,
    })
}

impl Preconditioner for Ic0Precond {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        let n = r.len();
        // L y = r
        for i in 0..n {
            let (cols, vals) = self.lower.row(i);
            let last = cols.len() - 1;
            let mut s = r[i];
            for k in 0..last {
                s -= vals[k] * z[cols[k]];
            }
            z[i] = s / vals[last];
        }
        // L^T z = y
        for i in (0..n).rev() {
            let (cols, vals) = self.upper.row(i);
            let mut s = z[i];
            for k in 1..cols.len() {
                s -= vals[k] * z[cols[k]];
            }
            z[i] = s / vals[0];
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    Cg,
    Minres,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrecondKind {
    None,
    Jacobi,
    Ic0,
}

impl std::str::FromStr for SolverKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cg" => Ok(SolverKind::Cg),
            "minres" => Ok(SolverKind::Minres),
            _ => Err(Error::arg(format!("unknown solver '{s}' (expected cg or minres)"))),
        }
    }
}

impl std::str::FromStr for PrecondKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(PrecondKind::None),
            "jacobi" => Ok(PrecondKind::Jacobi),
            "ic0" => Ok(PrecondKind::Ic0),
            _ => Err(Error::arg(format!("unknown preconditioner '{s}' (expected none, jacobi or ic0)"))),
        }
    }
}

/// Builds the requested preconditioner for an explicit matrix.
pub fn make_preconditioner(kind: PrecondKind, a: &CsrMatrix) -> Result<Box<dyn Preconditioner>> {
    Ok(match kind {
        PrecondKind::None => Box::new(IdentityPrecond),
        PrecondKind::Jacobi => Box::new(JacobiPrecond::new(a)?),
        PrecondKind::Ic0 => Box::new(Ic0Precond::new(a)?),
    })
}

#[derive(Clone, Copy, Debug)]
pub struct SolveOptions {
    /// Relative residual target `|b - A x| / |b|`.
    pub tol: f64,
    pub min_iters: usize,
    pub max_iters: usize,
    pub record_history: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tol: 1e-6,
            min_iters: 0,
            max_iters: 1000,
            record_history: false,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub rel_residual: f64,
    pub converged: bool,
    /// `(iteration, relative residual, seconds)` when requested.
    pub history: Vec<(usize, f64, f64)>,
}

impl SolveReport {
    pub fn history_csv(&self) -> String {
        let mut s = String::from("iteration,rel_residual,seconds\n");
        for (k, r, t) in &self.history {
            s.push_str(&format!("{k},{r:.6e},{t:.6}\n"));
        }
        s
    }
}

/// Solves `A x = b` from the warm start in `x`, which is overwritten.
pub fn solve_spd(
    a: &dyn LinearOperator,
    m: &dyn Preconditioner,
    b: &[f64],
    x: &mut [f64],
    kind: SolverKind,
    opts: &SolveOptions,
) -> Result<SolveReport> {
    match kind {
        SolverKind::Cg => pcg(a, m, b, x, opts),
        SolverKind::Minres => pminres(a, m, b, x, opts),
    }
}

struct Tracker {
    start: Instant,
    bnorm: f64,
    report: SolveReport,
    record: bool,
    best: Option<(f64, Vec<f64>)>,
}

impl Tracker {
    fn new(bnorm: f64, record: bool) -> Self {
        Tracker {
            start: Instant::now(),
            bnorm,
            report: SolveReport::default(),
            record,
            best: None,
        }
    }

    fn log(&mut self, k: usize, rnorm: f64) -> f64 {
        let rel = rnorm / self.bnorm;
        if self.record {
            self.report
                .history
                .push((k, rel, self.start.elapsed().as_secs_f64()));
        }
        rel
    }

    fn keep_best(&mut self, rel: f64, x: &[f64]) {
        match &mut self.best {
            Some((r, v)) if rel < *r => {
                *r = rel;
                v.copy_from_slice(x);
            }
            None => self.best = Some((rel, x.to_vec())),
            _ => {}
        }
    }

    fn finish(mut self, k: usize, rel: f64, converged: bool, x: &mut [f64]) -> SolveReport {
        let mut rel = rel;
        if !converged {
            if let Some((r, v)) = self.best.take() {
                if r < rel {
                    x.copy_from_slice(&v);
                    rel = r;
                }
            }
        }
        self.report.iterations = k;
        self.report.rel_residual = rel;
        self.report.converged = converged;
        self.report
    }
}

fn residual(a: &dyn LinearOperator, b: &[f64], x: &[f64]) -> Vec<f64> {
    let mut r = vec![0.0; b.len()];
    a.apply(x, &mut r);
    r.iter_mut().zip(b).for_each(|(ri, bi)| *ri = bi - *ri);
    r
}

fn pcg(a: &dyn LinearOperator, m: &dyn Preconditioner, b: &[f64], x: &mut [f64], o: &SolveOptions) -> Result<SolveReport> {
    let n = b.len();
    let bnorm = norm(b);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(SolveReport {
            converged: true,
            ..Default::default()
        });
    }
    let mut tr = Tracker::new(bnorm, o.record_history);
    let mut r = residual(a, b, x);
    let mut rel = tr.log(0, norm(&r));
    let mut z = vec![0.0; n];
    m.apply(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let mut k = 0;
    while k < o.max_iters {
        if rel == 0.0 || (rel <= o.tol && k >= o.min_iters) {
            return Ok(tr.finish(k, rel, true, x));
        }
        a.apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::solver(
                format!("CG breakdown at iteration {k}: matrix is not positive definite"),
                None,
            ));
        }
        let step = rz / pap;
        for i in 0..n {
            x[i] += step * p[i];
            r[i] -= step * ap[i];
        }
        k += 1;
        rel = tr.log(k, norm(&r));
        tr.keep_best(rel, x);
        m.apply(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let ok = rel <= o.tol;
    Ok(tr.finish(k, rel, ok, x))
}

/// Preconditioned MINRES (Paige-Saunders). The true residual is carried along
/// through `A w` so the stopping test uses the same norm as CG.
fn pminres(a: &dyn LinearOperator, m: &dyn Preconditioner, b: &[f64], x: &mut [f64], o: &SolveOptions) -> Result<SolveReport> {
    let n = b.len();
    let bnorm = norm(b);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(SolveReport {
            converged: true,
            ..Default::default()
        });
    }
    let mut tr = Tracker::new(bnorm, o.record_history);
    let mut r = residual(a, b, x);
    let mut rel = tr.log(0, norm(&r));

    let mut r1 = r.clone();
    let mut y = vec![0.0; n];
    m.apply(&r1, &mut y);
    let ry = dot(&r1, &y);
    if ry < 0.0 {
        return Err(Error::solver("MINRES: preconditioner is not positive definite", None));
    }
    let mut beta1 = ry.sqrt();
    let mut r2 = r1.clone();
    let mut oldb = 0.0;
    let mut beta = beta1;
    let mut dbar = 0.0;
    let mut epsln = 0.0;
    let mut phibar = beta1;
    let (mut cs, mut sn) = (-1.0, 0.0);
    let mut w = vec![0.0; n];
    let mut w2 = vec![0.0; n];
    let mut aw = vec![0.0; n];
    let mut aw2 = vec![0.0; n];
    let mut av = vec![0.0; n];
    let mut v = vec![0.0; n];

    let mut k = 0;
    while k < o.max_iters {
        if rel == 0.0 || beta1 == 0.0 || (rel <= o.tol && k >= o.min_iters) {
            return Ok(tr.finish(k, rel, true, x));
        }
        let s = 1.0 / beta;
        for i in 0..n {
            v[i] = s * y[i];
        }
        a.apply(&v, &mut av);
        let mut yy = av.clone();
        if k > 0 {
            for i in 0..n {
                yy[i] -= (beta / oldb) * r1[i];
            }
        }
        let alfa = dot(&v, &yy);
        for i in 0..n {
            yy[i] -= (alfa / beta) * r2[i];
        }
        std::mem::swap(&mut r1, &mut r2);
        r2.copy_from_slice(&yy);
        m.apply(&r2, &mut y);
        oldb = beta;
        let b2 = dot(&r2, &y);
        if b2 < 0.0 {
            return Err(Error::solver("MINRES: preconditioner is not positive definite", None));
        }
        beta = b2.sqrt();

        let oldeps = epsln;
        let delta = cs * dbar + sn * alfa;
        let gbar = sn * dbar - cs * alfa;
        epsln = sn * beta;
        dbar = -cs * beta;
        let gamma = gbar.hypot(beta).max(f64::MIN_POSITIVE);
        cs = gbar / gamma;
        sn = beta / gamma;
        let phi = cs * phibar;
        phibar *= sn;

        // w_new = (v - oldeps w1 - delta w2) / gamma, with w1 = w (older)
        for i in 0..n {
            let w_new = (v[i] - oldeps * w[i] - delta * w2[i]) / gamma;
            let aw_new = (av[i] - oldeps * aw[i] - delta * aw2[i]) / gamma;
            w[i] = w2[i];
            aw[i] = aw2[i];
            w2[i] = w_new;
            aw2[i] = aw_new;
            x[i] += phi * w_new;
            r[i] -= phi * aw_new;
        }
        k += 1;
        rel = tr.log(k, norm(&r));
        tr.keep_best(rel, x);
        if beta == 0.0 {
            // exact Krylov space exhausted
            beta1 = 0.0;
        }
    }
    let ok = rel <= o.tol;
    Ok(tr.finish(k, rel, ok, x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn laplacian_1d(n: usize, shift: f64) -> CsrMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0 + shift));
            if i > 0 {
                t.push((i, i - 1, -1.0));
                t.push((i - 1, i, -1.0));
            }
        }
        CsrMatrix::from_triplets(n, n, &t).unwrap()
    }

    fn random_spd(n: usize, seed: u64) -> (CsrMatrix, Vec<Vec<f64>>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let mut a = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                a[i][j] = (0..n).map(|k| b[k][i] * b[k][j]).sum::<f64>();
            }
            a[i][i] += 1.0;
        }
        let mut t = Vec::new();
        for (i, row) in a.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                t.push((i, j, v));
            }
        }
        (CsrMatrix::from_triplets(n, n, &t).unwrap(), a)
    }

    /// Gaussian elimination with partial pivoting.
    fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for c in 0..n {
            let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
            a.swap(c, p);
            b.swap(c, p);
            for r in c + 1..n {
                let f = a[r][c] / a[c][c];
                for k in c..n {
                    a[r][k] -= f * a[c][k];
                }
                b[r] -= f * b[c];
            }
        }
        let mut x = vec![0.0; n];
        for r in (0..n).rev() {
            let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
            x[r] = (b[r] - s) / a[r][r];
        }
        x
    }

    #[test]
    fn identity_system_returns_rhs() {
        let id = CsrMatrix::from_triplets(5, 5, &(0..5).map(|i| (i, i, 1.0)).collect::<Vec<_>>()).unwrap();
        let b = vec![1.0, -2.0, 3.0, 0.5, 0.0];
        for kind in [SolverKind::Cg, SolverKind::Minres] {
            let mut x = vec![0.0; 5];
            let opts = SolveOptions {
                min_iters: 3,
                ..Default::default()
            };
            let rep = solve_spd(&id, &IdentityPrecond, &b, &mut x, kind, &opts).unwrap();
            assert!(rep.iterations <= 3 && rep.converged);
            for (a, c) in x.iter().zip(&b) {
                assert!((a - c).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn random_spd_matches_dense_solve() {
        let (a, dense) = random_spd(50, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let b: Vec<f64> = (0..50).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let want = dense_solve(dense, b.clone());
        let opts = SolveOptions {
            tol: 1e-10,
            max_iters: 500,
            ..Default::default()
        };
        for kind in [SolverKind::Cg, SolverKind::Minres] {
            for pk in [PrecondKind::None, PrecondKind::Jacobi, PrecondKind::Ic0] {
                let m = make_preconditioner(pk, &a).unwrap();
                let mut x = vec![0.0; 50];
                let rep = solve_spd(&a, m.as_ref(), &b, &mut x, kind, &opts).unwrap();
                assert!(rep.converged, "{kind:?} {pk:?}");
                let err = x.iter().zip(&want).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
                assert!(err < 1e-7, "{kind:?} {pk:?} err {err}");
                let r = residual(&a, &b, &x);
                assert!((norm(&r) / norm(&b) - rep.rel_residual).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn ic0_is_exact_for_tridiagonal() {
        // no fill-in for a tridiagonal matrix, so IC(0) is the full Cholesky
        let a = laplacian_1d(30, 0.1);
        let m = Ic0Precond::new(&a).unwrap();
        assert_eq!(m.shift, 0.0);
        let b: Vec<f64> = (0..30).map(|i| (i as f64).sin()).collect();
        let mut x = vec![0.0; 30];
        let rep = solve_spd(&a, &m, &b, &mut x, SolverKind::Cg, &SolveOptions::default()).unwrap();
        assert!(rep.iterations <= 1);
    }

    #[test]
    fn ic0_shifts_on_breakdown() {
        // symmetric indefinite-ish pattern where the plain factorization fails
        let a = CsrMatrix::from_triplets(
            3,
            3,
            &[(0, 0, 1.0), (0, 1, 2.0), (1, 0, 2.0), (1, 1, 1.0), (2, 2, 1.0)],
        )
        .unwrap();
        let m = Ic0Precond::new(&a).unwrap();
        assert!(m.shift > 0.0);
    }

    #[test]
    fn warm_start_at_solution_stops_after_min_iters() {
        let a = laplacian_1d(40, 0.5);
        let b: Vec<f64> = (0..40).map(|i| (i % 3) as f64).collect();
        let mut x = vec![0.0; 40];
        solve_spd(&a, &IdentityPrecond, &b, &mut x, SolverKind::Cg, &SolveOptions { tol: 1e-12, ..Default::default() }).unwrap();
        let opts = SolveOptions {
            tol: 1e-6,
            min_iters: 3,
            ..Default::default()
        };
        let rep = solve_spd(&a, &IdentityPrecond, &b, &mut x, SolverKind::Minres, &opts).unwrap();
        assert!(rep.converged && rep.iterations <= 3);
    }

    #[test]
    fn preconditioning_reduces_iterations() {
        let a = laplacian_1d(200, 1e-3);
        let b = vec![1.0; 200];
        let opts = SolveOptions {
            tol: 1e-8,
            max_iters: 2000,
            record_history: true,
            ..Default::default()
        };
        let mut x0 = vec![0.0; 200];
        let plain = solve_spd(&a, &IdentityPrecond, &b, &mut x0, SolverKind::Cg, &opts).unwrap();
        let mut x1 = vec![0.0; 200];
        let ic = Ic0Precond::new(&a).unwrap();
        let pre = solve_spd(&a, &ic, &b, &mut x1, SolverKind::Cg, &opts).unwrap();
        assert!(pre.iterations < plain.iterations);
        assert_eq!(plain.history.len(), plain.iterations + 1);
        assert!(plain.history_csv().starts_with("iteration,rel_residual,seconds\n0,"));
    }

    #[test]
    fn cap_returns_unconverged_best() {
        let a = laplacian_1d(100, 0.0);
        let b = vec![1.0; 100];
        let mut x = vec![0.0; 100];
        let opts = SolveOptions {
            tol: 1e-12,
            max_iters: 5,
            ..Default::default()
        };
        let rep = solve_spd(&a, &IdentityPrecond, &b, &mut x, SolverKind::Cg, &opts).unwrap();
        assert!(!rep.converged);
        assert_eq!(rep.iterations, 5);
        assert!((norm(&residual(&a, &b, &x)) / norm(&b) - rep.rel_residual).abs() < 1e-10);
    }

    #[test]
    fn indefinite_matrix_is_reported() {
        let a = CsrMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (1, 1, -1.0)]).unwrap();
        let mut x = vec![0.0; 2];
        let r = solve_spd(&a, &IdentityPrecond, &[0.0, 1.0], &mut x, SolverKind::Cg, &SolveOptions::default());
        assert!(matches!(r, Err(Error::Solver { .. })));
    }
}
