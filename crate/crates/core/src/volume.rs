//! Nyström discretization of the volume potential
//! `(V phi)(x) = int_ball g(x, y) phi(y) dy`, `g = e^{ik|x-y|} / (4 pi |x-y|)`,
//! on a [`BallGrid`].
//!
//! The weak singularity is handled by subtracting the density value at the
//! target node and adding back the exact potential of the constant density,
//!
//! ```text
//! (V phi)_i = sum_{j != i} w_j g_ij (phi_j - phi_i) + W(x_i) phi_i
//! W(x) = int_{|y|<b} g(x, y) dy = (e^{ikb}(1 - ikb) j_0(k|x|) - 1) / k^2
//! ```
//!
//! The imaginary part of the self term is then replaced by its exact local
//! value `k w_i / (4 pi)`, so that `V = G W` with `G` complex symmetric and
//! `Im G_ij = k j_0(k r_ij) / (4 pi)` for all `i, j`. Discrete reciprocity is
//! exact and the optical theorem holds up to direction quadrature.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::geom::{self, Vec3};
use crate::sphgrid::BallGrid;

pub type C64 = Complex64;

/// Largest node count for which the operator is stored as a dense matrix.
pub const DENSE_CAP: usize = 4000;

/// Free-space outgoing Green function `e^{ikr} / (4 pi r)`.
#[inline]
pub fn green(k: f64, r: f64) -> C64 {
    let (s, c) = (k * r).sin_cos();
    C64::new(c, s) / (4.0 * std::f64::consts::PI * r)
}

/// Exact `int_{|y|<b} g(x, y) dy` for `|x| <= b`.
pub fn ball_potential(k: f64, b: f64, r: f64) -> C64 {
    let kb = k * b;
    let kr = k * r;
    let j0 = if kr < 1e-4 {
        1.0 - kr * kr / 6.0
    } else {
        kr.sin() / kr
    };
    let phase = C64::new(0.0, kb).exp() * C64::new(1.0, -kb);
    if kb < 1e-3 {
        // series form avoids cancellation in (phase j0 - 1) / k^2
        let b2 = b * b;
        let r2 = r * r;
        return C64::new(b2 / 2.0 - r2 / 6.0, k * b2 * b / 3.0);
    }
    (phase * j0 - 1.0) / (k * k)
}

/// The discretized volume potential on a ball grid.
#[derive(Debug, Clone)]
pub struct GreenOperator {
    pub k: f64,
    pub radius: f64,
    pub nodes: Vec<Vec3>,
    pub weights: Vec<f64>,
    /// Diagonal entries `V_ii`.
    pub diag: Vec<C64>,
    /// Row-major `V_ij` when `n <= DENSE_CAP`.
    dense: Option<Vec<C64>>,
}

impl GreenOperator {
    pub fn new(grid: &BallGrid, k: f64) -> Self {
        Self::with_dense_cap(grid, k, DENSE_CAP)
    }

    pub fn with_dense_cap(grid: &BallGrid, k: f64, cap: usize) -> Self {
        let nodes = grid.nodes.clone();
        let weights = grid.weights.clone();
        let n = nodes.len();
        let b = grid.radius;
        let self_imag = k / (4.0 * std::f64::consts::PI);
        let diag: Vec<C64> = (0..n)
            .into_par_iter()
            .map(|i| {
                let xi = nodes[i];
                let mut off = 0.0;
                for j in 0..n {
                    if j != i {
                        off += weights[j] * green(k, geom::distance(xi, nodes[j])).re;
                    }
                }
                let w = ball_potential(k, b, geom::norm(xi));
                C64::new(w.re - off, self_imag * weights[i])
            })
            .collect();
        let dense = (n <= cap).then(|| {
            let mut m = vec![C64::new(0.0, 0.0); n * n];
            m.par_chunks_mut(n.max(1)).enumerate().for_each(|(i, row)| {
                let xi = nodes[i];
                for (j, v) in row.iter_mut().enumerate() {
                    *v = if i == j {
                        diag[i]
                    } else {
                        weights[j] * green(k, geom::distance(xi, nodes[j]))
                    };
                }
            });
            m
        });
        Self {
            k,
            radius: b,
            nodes,
            weights,
            diag,
            dense,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn is_dense(&self) -> bool {
        self.dense.is_some()
    }

    /// Row-major dense matrix, if stored.
    pub fn dense(&self) -> Option<&[C64]> {
        self.dense.as_deref()
    }

    /// `V phi` at the grid nodes.
    pub fn apply(&self, phi: &[C64]) -> Vec<C64> {
        let n = self.len();
        match &self.dense {
            Some(m) => m
                .par_chunks(n.max(1))
                .map(|row| row.iter().zip(phi).map(|(a, p)| a * p).sum())
                .collect(),
            None => (0..n)
                .into_par_iter()
                .map(|i| {
                    let xi = self.nodes[i];
                    let mut acc = self.diag[i] * phi[i];
                    for j in 0..n {
                        if j != i {
                            acc += self.weights[j] * green(self.k, geom::distance(xi, self.nodes[j])) * phi[j];
                        }
                    }
                    acc
                })
                .collect(),
        }
    }

    /// `int g(x, y) phi(y) dy` at a point away from every node (plain quadrature).
    pub fn potential_at(&self, x: Vec3, phi: &[C64]) -> C64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .zip(phi)
            .map(|((y, w), p)| {
                let r = geom::distance(x, *y);
                w * green(self.k, r) * p
            })
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::integrate_adaptive;

    #[test]
    fn ball_potential_solves_the_interior_equation() {
        // check against radial quadrature of g over the ball, at the centre:
        // int_0^b e^{ikr}/(4 pi r) 4 pi r^2 dr = int_0^b r e^{ikr} dr
        let (k, b) = (1.3, 0.8);
        let re = integrate_adaptive(|r| r * (k * r).cos(), 0.0, b, 1e-14, 0.0).unwrap();
        let im = integrate_adaptive(|r| r * (k * r).sin(), 0.0, b, 1e-14, 0.0).unwrap();
        let w = ball_potential(k, b, 0.0);
        assert!((w - C64::new(re, im)).norm() < 1e-12);
    }

    #[test]
    fn constant_density_is_exact() {
        let grid = BallGrid::new(1.0, 6, 5).unwrap();
        let op = GreenOperator::new(&grid, 1.0);
        let ones = vec![C64::new(1.0, 0.0); grid.len()];
        let v = op.apply(&ones);
        for (i, x) in grid.nodes.iter().enumerate() {
            let exact = ball_potential(1.0, 1.0, geom::norm(*x));
            assert!((v[i].re - exact.re).abs() < 1e-12);
        }
    }

    #[test]
    fn dense_and_matrix_free_agree() {
        let grid = BallGrid::new(1.0, 4, 3).unwrap();
        let a = GreenOperator::new(&grid, 2.0);
        let b = GreenOperator::with_dense_cap(&grid, 2.0, 0);
        let phi: Vec<C64> = (0..grid.len()).map(|i| C64::new((i as f64).cos(), 0.1 * i as f64)).collect();
        let va = a.apply(&phi);
        let vb = b.apply(&phi);
        for (x, y) in va.iter().zip(&vb) {
            assert!((x - y).norm() < 1e-12 * x.norm().max(1.0));
        }
    }
}
