//! Quadrature on the unit sphere, spherical-harmonic transforms and the
//! tensor-product ball grid.
//!
//! Direction grids are Gauss-Legendre in `cos(theta)` (`L + 1` nodes) times
//! `2L + 2` equispaced azimuths, which integrates every spherical polynomial
//! of degree `<= 2L + 1` exactly. The azimuth count is even, so the grid is
//! closed under `a -> -a`.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{self, Vec3};
use crate::quadrature::{gauss_legendre, gauss_legendre_interval};
use crate::specfun::{flat_index, num_modes, sph_harm_all};

/// Product quadrature on `S^2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionGrid {
    pub bandlimit: usize,
    pub n_polar: usize,
    pub n_azimuth: usize,
    pub nodes: Vec<Vec3>,
    pub weights: Vec<f64>,
}

impl DirectionGrid {
    /// Grid integrating spherical polynomials of degree `<= 2L` exactly.
    pub fn new(bandlimit: usize) -> Self {
        let n_polar = bandlimit + 1;
        let n_azimuth = 2 * bandlimit + 2;
        let polar = gauss_legendre(n_polar);
        let dphi = std::f64::consts::TAU / n_azimuth as f64;
        let mut nodes = Vec::with_capacity(n_polar * n_azimuth);
        let mut weights = Vec::with_capacity(n_polar * n_azimuth);
        for &(z, w) in &polar {
            for j in 0..n_azimuth {
                nodes.push(geom::from_spherical(z, dphi * j as f64));
                weights.push(w * dphi);
            }
        }
        Self {
            bandlimit,
            n_polar,
            n_azimuth,
            nodes,
            weights,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Index of the node at `-nodes[i]`.
    pub fn antipode(&self, i: usize) -> usize {
        let (p, a) = (i / self.n_azimuth, i % self.n_azimuth);
        let p2 = self.n_polar - 1 - p;
        let a2 = (a + self.n_azimuth / 2) % self.n_azimuth;
        p2 * self.n_azimuth + a2
    }

    /// `Y_lm(nodes[i])` for `l <= lmax`, one row per node.
    pub fn harmonic_table(&self, lmax: usize) -> Vec<Vec<Complex64>> {
        self.nodes
            .par_iter()
            .map(|&n| sph_harm_all(lmax, n))
            .collect()
    }

    pub fn integrate(&self, samples: &[Complex64]) -> Complex64 {
        samples
            .iter()
            .zip(&self.weights)
            .map(|(s, w)| s * w)
            .sum()
    }

    /// Discrete `L^2(S^2)` norm of sampled values.
    pub fn l2_norm(&self, samples: &[Complex64]) -> f64 {
        samples
            .iter()
            .zip(&self.weights)
            .map(|(s, w)| w * s.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    /// Forward transform `f_lm = int f conj(Y_lm)`.
    pub fn analyze(&self, samples: &[Complex64], lmax: usize) -> Result<SHCoefficients> {
        if self.bandlimit < lmax {
            return Err(Error::Resolution {
                grid: self.bandlimit,
                requested: lmax,
            });
        }
        let table = self.harmonic_table(lmax);
        self.analyze_with_table(samples, lmax, &table)
    }

    /// Forward transform with a precomputed [`harmonic_table`](Self::harmonic_table).
    pub fn analyze_with_table(
        &self,
        samples: &[Complex64],
        lmax: usize,
        table: &[Vec<Complex64>],
    ) -> Result<SHCoefficients> {
        if samples.len() != self.len() {
            return Err(Error::argument(
                "sphgrid",
                format!("expected {} samples, got {}", self.len(), samples.len()),
            ));
        }
        let mut coeffs = vec![Complex64::new(0.0, 0.0); num_modes(lmax)];
        for ((row, s), w) in table.iter().zip(samples).zip(&self.weights) {
            let ws = s * w;
            for (c, y) in coeffs.iter_mut().zip(row) {
                *c += ws * y.conj();
            }
        }
        Ok(SHCoefficients {
            bandlimit: lmax,
            coeffs,
        })
    }
}

/// Coefficients `f_lm`, `l <= bandlimit`, in flat `(l, m)` order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SHCoefficients {
    pub bandlimit: usize,
    pub coeffs: Vec<Complex64>,
}

impl SHCoefficients {
    pub fn zeros(bandlimit: usize) -> Self {
        Self {
            bandlimit,
            coeffs: vec![Complex64::new(0.0, 0.0); num_modes(bandlimit)],
        }
    }

    /// Builds coefficients from `(l, m, value)` triples; the bandlimit is the
    /// largest `l` present (or `min_bandlimit` if larger).
    pub fn from_modes(
        modes: &[(usize, i64, Complex64)],
        min_bandlimit: usize,
    ) -> Result<Self> {
        let lmax = modes.iter().map(|m| m.0).max().unwrap_or(0).max(min_bandlimit);
        let mut out = Self::zeros(lmax);
        for &(ell, m, v) in modes {
            if m.unsigned_abs() as usize > ell {
                return Err(Error::argument(
                    "sphgrid",
                    format!("invalid mode (l={ell}, m={m})"),
                ));
            }
            out.coeffs[flat_index(ell, m)] += v;
        }
        Ok(out)
    }

    pub fn get(&self, ell: usize, m: i64) -> Complex64 {
        if ell > self.bandlimit || m.unsigned_abs() as usize > ell {
            return Complex64::new(0.0, 0.0);
        }
        self.coeffs[flat_index(ell, m)]
    }

    /// Coefficient norm, equal to the `L^2(S^2)` norm by Parseval.
    pub fn norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }

    /// `sum_m |f_lm|^2` for each degree.
    pub fn degree_energy(&self) -> Vec<f64> {
        (0..=self.bandlimit)
            .map(|l| {
                self.coeffs[l * l..(l + 1) * (l + 1)]
                    .iter()
                    .map(|c| c.norm_sqr())
                    .sum()
            })
            .collect()
    }

    /// Copy zero-padded or truncated to a new bandlimit.
    pub fn with_bandlimit(&self, bandlimit: usize) -> Self {
        let mut out = Self::zeros(bandlimit);
        let n = out.coeffs.len().min(self.coeffs.len());
        out.coeffs[..n].copy_from_slice(&self.coeffs[..n]);
        out
    }

    /// `self - other` at the larger of the two bandlimits.
    pub fn difference(&self, other: &Self) -> Self {
        let l = self.bandlimit.max(other.bandlimit);
        let mut out = self.with_bandlimit(l);
        for (c, o) in out.coeffs.iter_mut().zip(&other.with_bandlimit(l).coeffs) {
            *c -= o;
        }
        out
    }

    pub fn scaled(&self, s: Complex64) -> Self {
        Self {
            bandlimit: self.bandlimit,
            coeffs: self.coeffs.iter().map(|c| c * s).collect(),
        }
    }

    /// Evaluates the series at one direction.
    pub fn evaluate(&self, dir: Vec3) -> Complex64 {
        sph_harm_all(self.bandlimit, dir)
            .iter()
            .zip(&self.coeffs)
            .map(|(y, c)| y * c)
            .sum()
    }
}

/// Pointwise evaluation of the series at the given directions.
pub fn synthesize(coeffs: &SHCoefficients, directions: &[Vec3]) -> Vec<Complex64> {
    directions.par_iter().map(|&d| coeffs.evaluate(d)).collect()
}

/// Gauss-Legendre radial nodes on `[0, b]` times a [`DirectionGrid`].
/// Nodes are stored radius-major: `index = i_r * n_dir + i_dir`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BallGrid {
    pub radius: f64,
    pub n_r: usize,
    pub l_ang: usize,
    /// Radial nodes and plain (Jacobian-free) GL weights on `[0, b]`.
    pub radial: Vec<(f64, f64)>,
    pub directions: DirectionGrid,
    pub nodes: Vec<Vec3>,
    /// Volume weights, including the `r^2` Jacobian.
    pub weights: Vec<f64>,
}

impl BallGrid {
    pub fn new(radius: f64, n_r: usize, l_ang: usize) -> Result<Self> {
        if !(radius > 0.0) || n_r == 0 {
            return Err(Error::argument(
                "sphgrid",
                format!("ball grid needs b > 0 and n_r >= 1 (b={radius}, n_r={n_r})"),
            ));
        }
        let radial = gauss_legendre_interval(n_r, 0.0, radius);
        let directions = DirectionGrid::new(l_ang);
        let mut nodes = Vec::with_capacity(n_r * directions.len());
        let mut weights = Vec::with_capacity(n_r * directions.len());
        for &(r, wr) in &radial {
            for (d, wd) in directions.nodes.iter().zip(&directions.weights) {
                nodes.push(geom::scale(*d, r));
                weights.push(wr * r * r * wd);
            }
        }
        Ok(Self {
            radius,
            n_r,
            l_ang,
            radial,
            directions,
            nodes,
            weights,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn volume(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn integrate(&self, values: &[Complex64]) -> Complex64 {
        values
            .iter()
            .zip(&self.weights)
            .map(|(v, w)| v * w)
            .sum()
    }

    /// Discrete `L^2` norm over the ball.
    pub fn l2_norm(&self, values: &[Complex64]) -> f64 {
        values
            .iter()
            .zip(&self.weights)
            .map(|(v, w)| w * v.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::specfun::{sph_harm, ModeIndex};

    #[test]
    fn total_solid_angle() {
        for l in [0, 1, 5, 16] {
            let g = DirectionGrid::new(l);
            let s: f64 = g.weights.iter().sum();
            assert!((s - 4.0 * std::f64::consts::PI).abs() < 1e-12);
        }
    }

    #[test]
    fn antipodes_are_nodes() {
        let g = DirectionGrid::new(5);
        for i in 0..g.len() {
            let j = g.antipode(i);
            let sum = geom::add(g.nodes[i], g.nodes[j]);
            assert!(geom::norm(sum) < 1e-14);
        }
    }

    #[test]
    fn single_mode_analysis() {
        let g = DirectionGrid::new(6);
        let idx = ModeIndex::new(2, -1).unwrap();
        let samples: Vec<_> = g.nodes.iter().map(|&n| sph_harm(idx, n).unwrap()).collect();
        let c = g.analyze(&samples, 6).unwrap();
        for (i, v) in c.coeffs.iter().enumerate() {
            let expected = if i == idx.flat() { 1.0 } else { 0.0 };
            assert!((v - expected).norm() < 1e-12);
        }
    }

    #[test]
    fn coarse_grid_is_resolution_error() {
        let g = DirectionGrid::new(3);
        let samples = vec![Complex64::new(1.0, 0.0); g.len()];
        assert!(matches!(g.analyze(&samples, 4), Err(Error::Resolution { .. })));
    }

    #[test]
    fn json_round_trip() {
        let g = DirectionGrid::new(2);
        let s = serde_json::to_string(&g).unwrap();
        let back: DirectionGrid = serde_json::from_str(&s).unwrap();
        assert_eq!(g, back);
    }
}
