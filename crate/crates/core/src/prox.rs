//! Closed-form proximal operators, applied pointwise.
//!
//! All of them solve `argmin_x a*phi(x) + 1/2 |x - x_tilde|^2` for a
//! particular `phi` and step `a`. Vector-valued fields are stored stacked by
//! component (`[c_0; c_1; ...]`, `n` sites per component), which is how
//! gradients and motion fields are laid out elsewhere in the crate.

/// Prox of `chi_+(x) + 1/2 (x - z)^2` with step `alpha`.
#[inline]
pub fn prox_nonneg_quad(alpha: f64, z: f64, x_tilde: f64) -> f64 {
    ((alpha * z + x_tilde) / (alpha + 1.0)).max(0.0)
}

/// Prox of `1/2 (z + c . x)^2` with step `alpha`, written into `out`.
///
/// Solves `(I + alpha c c^T) x = x_tilde - alpha c z` via Sherman-Morrison.
#[inline]
pub fn prox_flow_quad(alpha: f64, z: f64, c: &[f64], x_tilde: &[f64], out: &mut [f64]) {
    let mut cx = 0.0;
    let mut cc = 0.0;
    for (ci, xi) in c.iter().zip(x_tilde) {
        cx += ci * xi;
        cc += ci * ci;
    }
    let k = alpha * (z + cx) / (1.0 + alpha * cc);
    for ((o, ci), xi) in out.iter_mut().zip(c).zip(x_tilde) {
        *o = xi - k * ci;
    }
}

/// Block soft-thresholding: the prox of `alpha |x|_2`, in place.
#[inline]
pub fn prox_tv_shrink(alpha: f64, y: &mut [f64]) {
    let n = y.iter().map(|v| v * v).sum::<f64>().sqrt();
    let scale = if n > alpha { (n - alpha) / n } else { 0.0 };
    y.iter_mut().for_each(|v| *v *= scale);
}

/// Projection onto the l2 ball of radius `alpha`, in place. This is the prox
/// of the conjugate of `alpha |.|_2` for every step size.
#[inline]
pub fn prox_tv_dual_project(alpha: f64, y: &mut [f64]) {
    let n = y.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n > alpha {
        let s = if alpha > 0.0 { alpha / n } else { 0.0 };
        y.iter_mut().for_each(|v| *v *= s);
    }
}

/// Prox with step `nu` of the conjugate of `(gamma/2) y^2`, i.e. of
/// `y^2 / (2 gamma)`.
#[inline]
pub fn prox_quad_conjugate(gamma: f64, nu: f64, y_tilde: f64) -> f64 {
    if gamma <= 0.0 {
        return 0.0;
    }
    gamma / (gamma + nu) * y_tilde
}

/// Applies `f` to every site of a stacked field with `dim` components.
fn per_site(field: &mut [f64], dim: usize, mut f: impl FnMut(&mut [f64])) {
    let n = field.len() / dim;
    let mut buf = [0.0; 3];
    let site = &mut buf[..dim];
    for i in 0..n {
        for (k, s) in site.iter_mut().enumerate() {
            *s = field[k * n + i];
        }
        f(site);
        for (k, s) in site.iter().enumerate() {
            field[k * n + i] = *s;
        }
    }
}

/// [`prox_tv_shrink`] on every site of a stacked `dim`-component field.
pub fn shrink_field(alpha: f64, field: &mut [f64], dim: usize) {
    assert!((1..=3).contains(&dim) && field.len() % dim == 0);
    per_site(field, dim, |s| prox_tv_shrink(alpha, s));
}

/// [`prox_tv_dual_project`] on every site of a stacked `dim`-component field.
pub fn project_field(alpha: f64, field: &mut [f64], dim: usize) {
    assert!((1..=3).contains(&dim) && field.len() % dim == 0);
    per_site(field, dim, |s| prox_tv_dual_project(alpha, s));
}

/// Like [`project_field`] but with a per-site radius.
pub fn project_field_weighted(radius: impl Fn(usize) -> f64, field: &mut [f64], dim: usize) {
    let n = field.len() / dim;
    for i in 0..n {
        let mut nrm = 0.0;
        for k in 0..dim {
            nrm += field[k * n + i] * field[k * n + i];
        }
        let (nrm, r) = (nrm.sqrt(), radius(i));
        if nrm > r {
            let s = if r > 0.0 { r / nrm } else { 0.0 };
            for k in 0..dim {
                field[k * n + i] *= s;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn nonneg_quad_examples() {
        for a in [0.0, 0.5, 3.0] {
            assert_eq!(prox_nonneg_quad(a, 1.0, 1.0), 1.0);
        }
        assert_eq!(prox_nonneg_quad(1.0, -5.0, -1.0), 0.0);
        // minimizer of (x-2)^2/2 + x^2/2 on x >= 0
        assert!((prox_nonneg_quad(1.0, 2.0, 0.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn nonneg_quad_grid_search() {
        let (a, z, xt) = (1.0, 2.0, 0.0);
        let obj = |x: f64| a * 0.5 * (x - z) * (x - z) + 0.5 * (x - xt) * (x - xt);
        let best = (0..=400_000)
            .map(|k| k as f64 * 1e-5)
            .min_by(|x, y| obj(*x).total_cmp(&obj(*y)))
            .unwrap();
        assert!((prox_nonneg_quad(a, z, xt) - best).abs() < 1e-5);
    }

    #[test]
    fn flow_quad_examples() {
        let mut out = [0.0; 2];
        prox_flow_quad(2.0, 1.5, &[0.0, 0.0], &[0.3, -0.2], &mut out);
        assert_eq!(out, [0.3, -0.2]);
        prox_flow_quad(2.0, 0.0, &[1.0, 2.0], &[0.0, 0.0], &mut out);
        assert_eq!(out, [0.0, 0.0]);
        // (I + c c^T) x = -c for c = (1, 2): x = -c / 6
        prox_flow_quad(1.0, 1.0, &[1.0, 2.0], &[0.0, 0.0], &mut out);
        assert!((out[0] + 1.0 / 6.0).abs() < 1e-15 && (out[1] + 2.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn flow_quad_solves_its_linear_system_in_3d() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let a: f64 = rng.gen_range(0.0..5.0);
            let z: f64 = rng.gen_range(-2.0..2.0);
            let c: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let xt: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let mut x = [0.0; 3];
            prox_flow_quad(a, z, &c, &xt, &mut x);
            let cx: f64 = c.iter().zip(&x).map(|(p, q)| p * q).sum();
            for k in 0..3 {
                let lhs = x[k] + a * c[k] * cx;
                assert!((lhs - (xt[k] - a * c[k] * z)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shrink_and_project_examples() {
        let mut y = [3.0, 4.0];
        prox_tv_shrink(2.0, &mut y);
        assert!((y[0] - 1.8).abs() < 1e-15 && (y[1] - 2.4).abs() < 1e-15);
        let mut y = [0.3, 0.4];
        prox_tv_shrink(0.5, &mut y);
        assert_eq!(y, [0.0, 0.0]);
        let mut y = [3.0, 4.0];
        prox_tv_dual_project(1.0, &mut y);
        assert!((y[0] - 0.6).abs() < 1e-15 && (y[1] - 0.8).abs() < 1e-15);
        let mut y = [0.3, 0.4];
        prox_tv_dual_project(0.5, &mut y);
        assert_eq!(y, [0.3, 0.4]);
    }

    #[test]
    fn moreau_decomposition() {
        // prox_{nu phi*}(y) = y - nu prox_{phi/nu}(y/nu), phi = alpha |.|
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let alpha: f64 = rng.gen_range(0.1..3.0);
            let nu: f64 = rng.gen_range(0.1..3.0);
            let y: Vec<f64> = (0..2).map(|_| rng.gen_range(-4.0..4.0)).collect();
            let mut dual = y.clone();
            prox_tv_dual_project(alpha, &mut dual);
            let mut primal: Vec<f64> = y.iter().map(|v| v / nu).collect();
            prox_tv_shrink(alpha / nu, &mut primal);
            for k in 0..2 {
                assert!((dual[k] - (y[k] - nu * primal[k])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn quad_conjugate_examples() {
        assert_eq!(prox_quad_conjugate(2.0, 1.0, 3.0), 2.0);
        assert_eq!(prox_quad_conjugate(2.0, 1.0, 0.0), 0.0);
        assert_eq!(prox_quad_conjugate(0.0, 1.0, 3.0), 0.0);
    }

    #[test]
    fn proxes_are_nonexpansive() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..200 {
            let a: f64 = rng.gen_range(0.0..3.0);
            let mut p: Vec<f64> = (0..2).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let mut q: Vec<f64> = (0..2).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let d0 = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt();
            let (p0, q0) = (p.clone(), q.clone());
            prox_tv_shrink(a, &mut p);
            prox_tv_shrink(a, &mut q);
            assert!(((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt() <= d0 + 1e-12);
            let c = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
            let z = rng.gen_range(-1.0..1.0);
            let (mut fp, mut fq) = ([0.0; 2], [0.0; 2]);
            prox_flow_quad(a, z, &c, &p0, &mut fp);
            prox_flow_quad(a, z, &c, &q0, &mut fq);
            assert!(((fp[0] - fq[0]).powi(2) + (fp[1] - fq[1]).powi(2)).sqrt() <= d0 + 1e-12);
            let (s, t) = (p0[0], q0[0]);
            assert!((prox_nonneg_quad(a, z, s) - prox_nonneg_quad(a, z, t)).abs() <= (s - t).abs());
        }
    }

    #[test]
    fn field_versions_decouple_per_site() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 7;
        let field: Vec<f64> = (0..2 * n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let mut shrunk = field.clone();
        shrink_field(0.8, &mut shrunk, 2);
        let mut projected = field.clone();
        project_field(0.8, &mut projected, 2);
        let mut weighted = field.clone();
        project_field_weighted(|_| 0.8, &mut weighted, 2);
        assert_eq!(weighted, projected);
        for i in 0..n {
            let mut s = [field[i], field[n + i]];
            prox_tv_shrink(0.8, &mut s);
            assert_eq!([shrunk[i], shrunk[n + i]], s);
            let mut s = [field[i], field[n + i]];
            prox_tv_dual_project(0.8, &mut s);
            assert_eq!([projected[i], projected[n + i]], s);
        }
    }
}
