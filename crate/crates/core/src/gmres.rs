//! Restarted GMRES with modified Gram–Schmidt Arnoldi and Givens rotations.

use serde::{Deserialize, Serialize};

use crate::sparse::LinearOperator;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GmresConfig {
    /// Relative residual target `‖b − Ax‖ ≤ tol·‖b‖`.
    pub tol: f64,
    /// Krylov dimension before restart.
    pub restart: usize,
    /// Total inner iterations over all cycles.
    pub max_iters: usize,
    /// Right-precondition with the matrix diagonal.
    pub jacobi: bool,
}

impl Default for GmresConfig {
    fn default() -> Self {
        GmresConfig {
            tol: 1e-7,
            restart: 50,
            max_iters: 1000,
            jacobi: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GmresOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Lucky or unlucky breakdown of the Arnoldi process occurred.
    pub breakdown: bool,
    /// Final true residual `‖b − Ax‖₂`.
    pub residual_norm: f64,
    /// Least-squares residual estimate after each inner iteration.
    pub history: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn residual(op: &dyn LinearOperator, b: &[f64], x: &[f64], r: &mut [f64]) -> f64 {
    op.apply(x, r);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    norm(r)
}

pub fn gmres(op: &dyn LinearOperator, b: &[f64], x0: &[f64], cfg: &GmresConfig) -> GmresOutcome {
    gmres_preconditioned(op, None, b, x0, cfg)
}

/// GMRES right-preconditioned by `inv_diag` (entrywise scaling), if given.
/// The stopping test always uses the unpreconditioned residual.
pub fn gmres_preconditioned(
    op: &dyn LinearOperator,
    inv_diag: Option<&[f64]>,
    b: &[f64],
    x0: &[f64],
    cfg: &GmresConfig,
) -> GmresOutcome {
    let n = op.dim();
    assert_eq!(b.len(), n, "rhs length");
    assert_eq!(x0.len(), n, "initial guess length");
    let m = cfg.restart.max(1);
    let bnorm = norm(b);
    let mut x = x0.to_vec();
    let mut history = Vec::new();
    if bnorm == 0.0 {
        return GmresOutcome {
            x: vec![0.0; n],
            iterations: 0,
            converged: true,
            breakdown: false,
            residual_norm: 0.0,
            history,
        };
    }
    let target = cfg.tol * bnorm;
    let precondition = |v: &[f64], out: &mut [f64]| match inv_diag {
        Some(d) => out.iter_mut().zip(v).zip(d).for_each(|((o, vi), di)| *o = vi * di),
        None => out.copy_from_slice(v),
    };

    let mut r = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
    let mut h = vec![vec![0.0; m]; m + 1];
    let mut cs = vec![0.0; m];
    let mut sn = vec![0.0; m];
    let mut g = vec![0.0; m + 1];
    let mut total = 0;
    let mut breakdown = false;

    loop {
        let beta = residual(op, b, &x, &mut r);
        if beta <= target {
            return GmresOutcome {
                x,
                iterations: total,
                converged: true,
                breakdown,
                residual_norm: beta,
                history,
            };
        }
        if total >= cfg.max_iters || breakdown {
            return GmresOutcome {
                x,
                iterations: total,
                converged: false,
                breakdown,
                residual_norm: beta,
                history,
            };
        }

        basis.clear();
        basis.push(r.iter().map(|v| v / beta).collect());
        g.fill(0.0);
        g[0] = beta;
        let mut k = 0;
        for j in 0..m {
            total += 1;
            precondition(&basis[j], &mut z);
            let mut w = vec![0.0; n];
            op.apply(&z, &mut w);
            for i in 0..=j {
                let hij = dot(&w, &basis[i]);
                h[i][j] = hij;
                for (wl, vl) in w.iter_mut().zip(&basis[i]) {
                    *wl -= hij * vl;
                }
            }
            let wnorm = norm(&w);
            h[j + 1][j] = wnorm;
            for i in 0..j {
                let t = cs[i] * h[i][j] + sn[i] * h[i + 1][j];
                h[i + 1][j] = -sn[i] * h[i][j] + cs[i] * h[i + 1][j];
                h[i][j] = t;
            }
            let denom = h[j][j].hypot(h[j + 1][j]);
            if denom == 0.0 {
                cs[j] = 1.0;
                sn[j] = 0.0;
            } else {
                cs[j] = h[j][j] / denom;
                sn[j] = h[j + 1][j] / denom;
            }
            h[j][j] = denom;
            h[j + 1][j] = 0.0;
            g[j + 1] = -sn[j] * g[j];
            g[j] *= cs[j];
            history.push(g[j + 1].abs());
            k = j + 1;

            if wnorm < 1e-14 * bnorm {
                breakdown = true;
                break;
            }
            basis.push(w.iter().map(|v| v / wnorm).collect());
            if g[j + 1].abs() <= target || total >= cfg.max_iters {
                break;
            }
        }

        // back substitution on the k×k triangle
        let mut y = vec![0.0; k];
        for i in (0..k).rev() {
            let s: f64 = (i + 1..k).map(|l| h[i][l] * y[l]).sum();
            y[i] = if h[i][i] != 0.0 { (g[i] - s) / h[i][i] } else { 0.0 };
        }
        let mut update = vec![0.0; n];
        for (yi, v) in y.iter().zip(&basis) {
            for (u, vl) in update.iter_mut().zip(v) {
                *u += yi * vl;
            }
        }
        precondition(&update, &mut z);
        for (xi, zi) in x.iter_mut().zip(&z) {
            *xi += zi;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::{CsrMatrix, FnOperator};
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_solves_in_one_iteration() {
        let a = CsrMatrix::identity(5);
        let b = vec![1.0, -2.0, 3.0, 0.5, 7.0];
        let out = gmres(&a, &b, &[0.0; 5], &GmresConfig::default());
        assert!(out.converged);
        assert_eq!(out.iterations, 1);
        for (x, b) in out.x.iter().zip(&b) {
            assert!((x - b).abs() <= 1e-15 * b.abs());
        }
    }

    #[test]
    fn two_by_two() {
        let a = CsrMatrix::from_dense(&DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]));
        let cfg = GmresConfig {
            tol: 1e-14,
            ..Default::default()
        };
        let out = gmres(&a, &[1.0, 2.0], &[0.0, 0.0], &cfg);
        assert!(out.converged);
        assert!((out.x[0] - 1.0 / 11.0).abs() < 1e-15);
        assert!((out.x[1] - 7.0 / 11.0).abs() < 1e-15);
    }

    fn random_spd(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        &g * g.transpose() + DMatrix::identity(n, n) * n as f64
    }

    #[test]
    fn random_spd_against_dense_solve() {
        let a = random_spd(100, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let b: Vec<f64> = (0..100).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let csr = CsrMatrix::from_dense(&a);
        let cfg = GmresConfig {
            tol: 1e-10,
            ..Default::default()
        };
        let out = gmres(&csr, &b, &vec![0.0; 100], &cfg);
        assert!(out.converged);
        let exact = a.clone().lu().solve(&DVector::from_vec(b.clone())).unwrap();
        let err = (DVector::from_vec(out.x.clone()) - &exact).norm() / exact.norm();
        assert!(err < 1e-8, "{err}");
        let r = DVector::from_vec(b.clone()) - a * DVector::from_vec(out.x);
        assert!(r.norm() <= 1e-10 * DVector::from_vec(b).norm());
    }

    #[test]
    fn residual_estimates_monotone_within_cycle() {
        let a = CsrMatrix::from_dense(&random_spd(60, 9));
        let b = vec![1.0; 60];
        let cfg = GmresConfig {
            tol: 1e-12,
            restart: 200,
            ..Default::default()
        };
        let out = gmres(&a, &b, &vec![0.0; 60], &cfg);
        assert!(out.converged);
        assert!(out.history.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
    }

    #[test]
    fn restarts_and_flags() {
        // nonsymmetric convection-like tridiagonal
        let n = 80;
        let apply = |x: &[f64], y: &mut [f64]| {
            for i in 0..n {
                let l = if i > 0 { x[i - 1] } else { 0.0 };
                let r = if i + 1 < n { x[i + 1] } else { 0.0 };
                y[i] = 2.5 * x[i] - 1.3 * l - 0.7 * r;
            }
        };
        let op = FnOperator { dim: n, f: apply };
        let b = vec![1.0; n];
        let cfg = GmresConfig {
            tol: 1e-10,
            restart: 10,
            max_iters: 2000,
            jacobi: false,
        };
        let out = gmres(&op, &b, &vec![0.0; n], &cfg);
        assert!(out.converged);
        assert!(out.iterations > 10);
        let mut r = vec![0.0; n];
        assert!(residual(&op, &b, &out.x, &mut r) <= 1e-10 * norm(&b));

        let tight = GmresConfig { max_iters: 3, ..cfg };
        let out = gmres(&op, &b, &vec![0.0; n], &tight);
        assert!(!out.converged);
        assert_eq!(out.iterations, 3);
    }

    #[test]
    fn jacobi_preconditioning() {
        let mut a = random_spd(40, 2);
        for i in 0..40 {
            a[(i, i)] *= 1.0 + 100.0 * i as f64;
        }
        let inv: Vec<f64> = (0..40).map(|i| 1.0 / a[(i, i)]).collect();
        let csr = CsrMatrix::from_dense(&a);
        let b = vec![1.0; 40];
        let cfg = GmresConfig {
            tol: 1e-10,
            ..Default::default()
        };
        let plain = gmres(&csr, &b, &vec![0.0; 40], &cfg);
        let pre = gmres_preconditioned(&csr, Some(&inv), &b, &vec![0.0; 40], &cfg);
        assert!(pre.converged && plain.converged);
        assert!(pre.iterations <= plain.iterations);
        let r = DVector::from_vec(b) - a * DVector::from_vec(pre.x);
        assert!(r.norm() <= 1e-10 * 40f64.sqrt());
    }

    #[test]
    fn zero_rhs() {
        let out = gmres(&CsrMatrix::identity(3), &[0.0; 3], &[1.0; 3], &GmresConfig::default());
        assert!(out.converged);
        assert_eq!(out.x, vec![0.0; 3]);
    }
}
