//! Complex linear solvers: restarted GMRES, dense LU and least squares.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Iterative solve outcome.
#[derive(Debug, Clone)]
pub struct IterativeSolution {
    pub x: Vec<C64>,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

pub fn norm2(v: &[C64]) -> f64 {
    v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
}

fn dotc(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// Restarted GMRES(m) for `A x = b` with `A` given as a matrix-vector product.
///
/// Stops when `|b - A x| <= tol |b|` or after `max_iter` inner iterations.
pub fn gmres<F>(apply: F, b: &[C64], tol: f64, restart: usize, max_iter: usize) -> IterativeSolution
where
    F: Fn(&[C64]) -> Vec<C64>,
{
    let n = b.len();
    let bnorm = norm2(b);
    let mut x = vec![C64::new(0.0, 0.0); n];
    if bnorm == 0.0 {
        return IterativeSolution {
            x,
            iterations: 0,
            residual: 0.0,
            converged: true,
        };
    }
    let restart = restart.max(1).min(n.max(1));
    let mut total = 0;
    let mut rel = 1.0;
    while total < max_iter {
        let ax = apply(&x);
        let r: Vec<C64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        let beta = norm2(&r);
        rel = beta / bnorm;
        if rel <= tol {
            return IterativeSolution {
                x,
                iterations: total,
                residual: rel,
                converged: true,
            };
        }
        let mut basis: Vec<Vec<C64>> = vec![r.iter().map(|v| v / beta).collect()];
        // Hessenberg columns, Givens rotations and rotated rhs
        let mut h: Vec<Vec<C64>> = Vec::with_capacity(restart);
        let mut cs: Vec<C64> = Vec::with_capacity(restart);
        let mut sn: Vec<C64> = Vec::with_capacity(restart);
        let mut g = vec![C64::new(0.0, 0.0); restart + 1];
        g[0] = C64::new(beta, 0.0);
        let mut inner = 0;
        for j in 0..restart {
            let mut w = apply(&basis[j]);
            let mut col = vec![C64::new(0.0, 0.0); j + 2];
            for (i, v) in basis.iter().enumerate() {
                let hij = dotc(v, &w);
                col[i] = hij;
                w.iter_mut().zip(v).for_each(|(wi, vi)| *wi -= hij * vi);
            }
            // one reorthogonalization pass keeps the basis clean in long cycles
            for (i, v) in basis.iter().enumerate() {
                let corr = dotc(v, &w);
                col[i] += corr;
                w.iter_mut().zip(v).for_each(|(wi, vi)| *wi -= corr * vi);
            }
            let wn = norm2(&w);
            col[j + 1] = C64::new(wn, 0.0);
            for i in 0..j {
                let t = cs[i].conj() * col[i] + sn[i].conj() * col[i + 1];
                col[i + 1] = -sn[i] * col[i] + cs[i] * col[i + 1];
                col[i] = t;
            }
            let (a, bb) = (col[j], col[j + 1]);
            let den = (a.norm_sqr() + bb.norm_sqr()).sqrt();
            let (c, s) = if den == 0.0 {
                (C64::new(1.0, 0.0), C64::new(0.0, 0.0))
            } else {
                (a / den, bb / den)
            };
            col[j] = c.conj() * a + s.conj() * bb;
            col[j + 1] = C64::new(0.0, 0.0);
            g[j + 1] = -s * g[j];
            g[j] = c.conj() * g[j];
            cs.push(c);
            sn.push(s);
            h.push(col);
            inner = j + 1;
            total += 1;
            rel = g[j + 1].norm() / bnorm;
            if rel <= tol || wn <= 1e-300 || total >= max_iter {
                break;
            }
            basis.push(w.iter().map(|v| v / wn).collect());
        }
        // back substitution on the triangular system
        let mut y = vec![C64::new(0.0, 0.0); inner];
        for i in (0..inner).rev() {
            let mut s = g[i];
            for l in i + 1..inner {
                s -= h[l][i] * y[l];
            }
            y[i] = s / h[i][i];
        }
        for (yi, v) in y.iter().zip(&basis) {
            x.iter_mut().zip(v).for_each(|(xi, vi)| *xi += yi * vi);
        }
    }
    let ax = apply(&x);
    let r: Vec<C64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let final_rel = norm2(&r) / bnorm;
    IterativeSolution {
        converged: final_rel <= tol,
        x,
        iterations: total,
        residual: final_rel.max(if rel.is_finite() { 0.0 } else { rel }),
    }
}

/// Power-iteration estimate of the spectral radius bound `|A|_2`.
pub fn norm_estimate<F>(apply: F, n: usize, iterations: usize) -> f64
where
    F: Fn(&[C64]) -> Vec<C64>,
{
    if n == 0 {
        return 0.0;
    }
    // deterministic start vector with no special alignment
    let mut v: Vec<C64> = (0..n)
        .map(|i| C64::new(1.0 + (i as f64 * 0.618_034).fract(), (i as f64 * 0.414_214).fract()))
        .collect();
    let vn = norm2(&v);
    v.iter_mut().for_each(|c| *c /= vn);
    let mut est = 0.0;
    for _ in 0..iterations {
        let w = apply(&v);
        est = norm2(&w);
        if est == 0.0 {
            return 0.0;
        }
        v = w.into_iter().map(|c| c / est).collect();
    }
    est
}

/// Dense LU solve of `A x = b` for a row-major `n x n` matrix.
pub fn dense_solve(module: &'static str, a_row_major: &[C64], n: usize, b: &[C64]) -> Result<Vec<C64>> {
    let a = DMatrix::from_row_slice(n, n, a_row_major);
    let lu = a.lu();
    let rhs = DVector::from_column_slice(b);
    match lu.solve(&rhs) {
        Some(x) if x.iter().all(|c| c.re.is_finite() && c.im.is_finite()) => Ok(x.as_slice().to_vec()),
        _ => Err(Error::Singular {
            module,
            message: format!("LU factorization of the {n} x {n} system is singular"),
        }),
    }
}

/// Reciprocal condition estimate `min|U_ii| / max|U_ii|` from an LU factor,
/// used only for diagnostics.
pub fn lu_pivot_ratio(a_row_major: &[C64], n: usize) -> f64 {
    let lu = DMatrix::from_row_slice(n, n, a_row_major).lu();
    let u = lu.u();
    let diag: Vec<f64> = (0..n).map(|i| u[(i, i)].norm()).collect();
    let max = diag.iter().cloned().fold(0.0, f64::max);
    let min = diag.iter().cloned().fold(f64::INFINITY, f64::min);
    if max == 0.0 {
        0.0
    } else {
        min / max
    }
}

/// Least-squares solution of `min |A x - b|` (A column-major `rows x cols`,
/// `rows >= cols`) by Householder QR. Columns whose diagonal factor falls
/// below `rank_tol` times the largest are dropped; the count of retained
/// columns is returned alongside the solution.
pub fn least_squares(a: DMatrix<C64>, b: &DVector<C64>, rank_tol: f64) -> (DVector<C64>, usize) {
    let cols = a.ncols();
    let qr = a.qr();
    let r = qr.r();
    let qtb = qr.q().adjoint() * b;
    let rmax = (0..cols).map(|i| r[(i, i)].norm()).fold(0.0, f64::max);
    let keep: Vec<bool> = (0..cols).map(|i| r[(i, i)].norm() > rank_tol * rmax).collect();
    let mut x = DVector::from_element(cols, C64::new(0.0, 0.0));
    for i in (0..cols).rev() {
        if !keep[i] {
            continue;
        }
        let mut s = qtb[i];
        for j in i + 1..cols {
            s -= r[(i, j)] * x[j];
        }
        x[i] = s / r[(i, i)];
    }
    (x, keep.iter().filter(|k| **k).count())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_matrix(n: usize) -> Vec<C64> {
        let mut a = vec![C64::new(0.0, 0.0); n * n];
        for i in 0..n {
            for j in 0..n {
                let v = ((i * 7 + j * 13) % 11) as f64 / 11.0 - 0.5;
                a[i * n + j] = C64::new(v / n as f64, 0.3 * v / n as f64);
            }
            a[i * n + i] += C64::new(2.0, 0.5);
        }
        a
    }

    fn matvec(a: &[C64], n: usize, x: &[C64]) -> Vec<C64> {
        (0..n)
            .map(|i| (0..n).map(|j| a[i * n + j] * x[j]).sum())
            .collect()
    }

    #[test]
    fn gmres_matches_lu() {
        let n = 60;
        let a = test_matrix(n);
        let b: Vec<C64> = (0..n).map(|i| C64::new((i as f64).sin(), (i as f64).cos())).collect();
        let direct = dense_solve("test", &a, n, &b).unwrap();
        let it = gmres(|x| matvec(&a, n, x), &b, 1e-12, 10, 500);
        assert!(it.converged);
        let diff: Vec<C64> = it.x.iter().zip(&direct).map(|(p, q)| p - q).collect();
        assert!(norm2(&diff) < 1e-10 * norm2(&direct));
    }

    #[test]
    fn least_squares_recovers_exact_solution() {
        let a = DMatrix::from_fn(20, 4, |i, j| C64::new(((i + 1) as f64).powi(j as i32) / 20f64.powi(j as i32), 0.0));
        let x = DVector::from_vec(vec![C64::new(1.0, 1.0), C64::new(-2.0, 0.0), C64::new(0.5, 0.0), C64::new(0.0, 3.0)]);
        let b = &a * &x;
        let (sol, rank) = least_squares(a, &b, 1e-14);
        assert_eq!(rank, 4);
        assert!((sol - x).norm() < 1e-9);
    }
}
