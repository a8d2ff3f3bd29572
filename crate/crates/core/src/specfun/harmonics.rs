//! Orthonormal spherical harmonics for real and complex arguments.
//!
//! Phase convention: `Y_lm = i^(l+m) R_lm` where `R_lm` are the real
//! orthonormal harmonics (no Condon-Shortley phase)
//!
//! ```text
//! R_l0  = p_l^0(z)
//! R_lm  = sqrt(2) p_l^m(z) C_m(x, y)      m > 0
//! R_l-m = sqrt(2) p_l^m(z) S_m(x, y)      m > 0
//! C_m + i S_m = (x + i y)^m   (as polynomials)
//! ```
//!
//! With this choice both `Y_lm(-b) = (-1)^l Y_lm(b)` and
//! `conj(Y_lm(b)) = (-1)^(l+m) Y_lm(b)` hold exactly. Every `Y_lm` is a
//! harmonic homogeneous polynomial of degree `l` restricted to the sphere,
//! so the same recurrences evaluate its analytic continuation to complex
//! directions, with `r^2 = x^2 + y^2 + z^2` taken bilinearly.

use std::ops::{Add, Mul, Sub};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{self, Vec3};

/// Default relative tolerance for `|theta . theta - k^2| <= tol k^2`.
pub const TOL_VARIETY: f64 = 1e-10;

/// Degree/order pair `(l, m)` with `|m| <= l`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModeIndex {
    pub ell: usize,
    pub m: i64,
}

impl ModeIndex {
    pub fn new(ell: usize, m: i64) -> Result<Self> {
        if m.unsigned_abs() as usize > ell {
            return Err(Error::argument(
                "specfun",
                format!("invalid mode index (l={ell}, m={m}): need |m| <= l"),
            ));
        }
        Ok(Self { ell, m })
    }

    /// Position in the flat `(l, m)` ordering, `l^2 + l + m`.
    pub fn flat(self) -> usize {
        flat_index(self.ell, self.m)
    }

    pub fn from_flat(index: usize) -> Self {
        let ell = (index as f64).sqrt() as usize;
        let ell = if (ell + 1) * (ell + 1) <= index { ell + 1 } else { ell };
        let m = index as i64 - (ell * ell + ell) as i64;
        Self { ell, m }
    }
}

/// Number of modes with `l <= lmax`.
pub fn num_modes(lmax: usize) -> usize {
    (lmax + 1) * (lmax + 1)
}

/// Flat index of `(l, m)`; caller guarantees `|m| <= l`.
#[inline]
pub fn flat_index(ell: usize, m: i64) -> usize {
    ((ell * ell + ell) as i64 + m) as usize
}

/// `i^n` for integer `n >= 0`.
#[inline]
pub fn i_pow(n: usize) -> Complex64 {
    match n % 4 {
        0 => Complex64::new(1.0, 0.0),
        1 => Complex64::new(0.0, 1.0),
        2 => Complex64::new(-1.0, 0.0),
        _ => Complex64::new(0.0, -1.0),
    }
}

/// `(-i)^n` for integer `n >= 0`.
#[inline]
pub fn neg_i_pow(n: usize) -> Complex64 {
    i_pow(n).conj()
}

trait Field:
    Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Mul<f64, Output = Self>
{
    fn from_f64(v: f64) -> Self;
}

impl Field for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
}

impl Field for Complex64 {
    fn from_f64(v: f64) -> Self {
        Complex64::new(v, 0.0)
    }
}

/// Real-convention harmonics `R_lm`, `l <= lmax`, at a (possibly complex)
/// point. Homogeneous of degree `l` in the point.
fn real_convention<T: Field>(lmax: usize, p: [T; 3]) -> Vec<T> {
    let [x, y, z] = p;
    let r2 = x * x + y * y + z * z;
    let n = num_modes(lmax);
    let mut out = vec![T::from_f64(0.0); n];
    // c[m], s[m]: polynomial real/imaginary parts of (x + iy)^m
    let mut c = vec![T::from_f64(1.0); lmax + 1];
    let mut s = vec![T::from_f64(0.0); lmax + 1];
    for m in 1..=lmax {
        c[m] = x * c[m - 1] - y * s[m - 1];
        s[m] = x * s[m - 1] + y * c[m - 1];
    }
    let sqrt2 = std::f64::consts::SQRT_2;
    let mut pmm = T::from_f64(0.5 / std::f64::consts::PI.sqrt());
    for m in 0..=lmax {
        if m > 0 {
            let mf = m as f64;
            pmm = pmm * ((2.0 * mf + 1.0) / (2.0 * mf)).sqrt();
        }
        let mut prev2 = T::from_f64(0.0);
        let mut prev1 = pmm;
        for ell in m..=lmax {
            let p = if ell == m {
                pmm
            } else if ell == m + 1 {
                z * pmm * (2.0 * m as f64 + 3.0).sqrt()
            } else {
                let lf = ell as f64;
                let mf = m as f64;
                let a = ((4.0 * lf * lf - 1.0) / (lf * lf - mf * mf)).sqrt();
                let lm1 = lf - 1.0;
                let b = ((lm1 * lm1 - mf * mf) / (4.0 * lm1 * lm1 - 1.0)).sqrt();
                (z * prev1 - r2 * prev2 * b) * a
            };
            if ell > m {
                prev2 = prev1;
                prev1 = p;
            }
            if m == 0 {
                out[flat_index(ell, 0)] = p;
            } else {
                out[flat_index(ell, m as i64)] = p * c[m] * sqrt2;
                out[flat_index(ell, -(m as i64))] = p * s[m] * sqrt2;
            }
        }
    }
    out
}

fn apply_phase<T: Field + Into<Complex64>>(lmax: usize, real: Vec<T>) -> Vec<Complex64> {
    real.into_iter()
        .enumerate()
        .map(|(i, v)| {
            let idx = ModeIndex::from_flat(i);
            let shift = (idx.ell as i64 + idx.m).rem_euclid(4) as usize;
            i_pow(shift) * v.into()
        })
        .take(num_modes(lmax))
        .collect()
}

/// Real orthonormal harmonics `R_lm(dir)` for all `l <= lmax`, flat order.
/// `dir` is assumed to be a unit vector.
pub fn real_sph_harm_all(lmax: usize, dir: Vec3) -> Vec<f64> {
    real_convention(lmax, dir)
}

/// `Y_lm(dir)` for all `l <= lmax`, flat order. `dir` is assumed to be a
/// unit vector (use [`sph_harm`] for a validated single evaluation).
pub fn sph_harm_all(lmax: usize, dir: Vec3) -> Vec<Complex64> {
    apply_phase(lmax, real_convention(lmax, dir))
}

fn check_unit(dir: Vec3) -> Result<()> {
    let n = geom::norm(dir);
    if (n - 1.0).abs() > 1e-12 {
        return Err(Error::argument(
            "specfun",
            format!("direction must be a unit vector, |dir| = {n}"),
        ));
    }
    Ok(())
}

/// Single spherical harmonic at a real unit direction.
pub fn sph_harm(idx: ModeIndex, dir: Vec3) -> Result<Complex64> {
    ModeIndex::new(idx.ell, idx.m)?;
    check_unit(dir)?;
    Ok(sph_harm_all(idx.ell, dir)[idx.flat()])
}

/// A complex vector on the variety `theta . theta = k^2` (bilinear product).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplexDirection {
    pub components: [Complex64; 3],
    pub k: f64,
}

impl ComplexDirection {
    /// Validates the variety condition at [`TOL_VARIETY`].
    pub fn new(components: [Complex64; 3], k: f64) -> Result<Self> {
        Self::with_tolerance(components, k, TOL_VARIETY)
    }

    pub fn with_tolerance(components: [Complex64; 3], k: f64, tol: f64) -> Result<Self> {
        if !(k > 0.0) {
            return Err(Error::argument("specfun", format!("k must be > 0, got {k}")));
        }
        let out = Self { components, k };
        let defect = (out.self_dot() - k * k).norm();
        if defect > tol * k * k {
            return Err(Error::domain(
                "specfun",
                format!("theta is off the variety: |theta.theta - k^2| = {defect:.3e}"),
            ));
        }
        Ok(out)
    }

    /// The real direction `k * dir`.
    pub fn from_real(dir: Vec3, k: f64) -> Self {
        Self {
            components: dir.map(|v| Complex64::new(k * v, 0.0)),
            k,
        }
    }

    /// Bilinear `theta . theta` (no conjugation).
    pub fn self_dot(&self) -> Complex64 {
        self.components.iter().map(|c| c * c).sum()
    }

    /// Bilinear product with a real vector.
    pub fn dot_real(&self, x: Vec3) -> Complex64 {
        self.components
            .iter()
            .zip(x.iter())
            .map(|(c, v)| c * v)
            .sum()
    }

    /// Euclidean (Hermitian) norm `sqrt(sum |theta_j|^2)`.
    pub fn norm(&self) -> f64 {
        self.components
            .iter()
            .map(|c| c.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    pub fn real_part(&self) -> Vec3 {
        self.components.map(|c| c.re)
    }

    pub fn imag_part(&self) -> Vec3 {
        self.components.map(|c| c.im)
    }

    /// `theta / k`, the point at which harmonics are continued.
    pub fn unit(&self) -> [Complex64; 3] {
        self.components.map(|c| c / self.k)
    }
}

/// `Y_lm(theta/k)` for all `l <= lmax`, via the polynomial continuation.
pub fn sph_harm_complex_all(lmax: usize, theta: &ComplexDirection) -> Vec<Complex64> {
    apply_phase(lmax, real_convention(lmax, theta.unit()))
}

/// Analytic continuation of a single harmonic to a point on the variety.
pub fn sph_harm_complex(idx: ModeIndex, theta: &ComplexDirection) -> Result<Complex64> {
    ModeIndex::new(idx.ell, idx.m)?;
    ComplexDirection::new(theta.components, theta.k)?;
    Ok(sph_harm_complex_all(idx.ell, theta)[idx.flat()])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_dir(rng: &mut ChaCha8Rng) -> Vec3 {
        let z: f64 = rng.random_range(-1.0..1.0);
        let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        geom::from_spherical(z, phi)
    }

    #[test]
    fn flat_index_round_trip() {
        for i in 0..num_modes(12) {
            let idx = ModeIndex::from_flat(i);
            assert!(idx.m.unsigned_abs() as usize <= idx.ell);
            assert_eq!(idx.flat(), i);
        }
    }

    #[test]
    fn invalid_mode_rejected() {
        assert!(ModeIndex::new(2, 3).is_err());
        assert!(sph_harm(ModeIndex { ell: 1, m: -2 }, [0.0, 0.0, 1.0]).is_err());
    }

    #[test]
    fn constant_and_zonal_values() {
        let y00 = sph_harm(ModeIndex::new(0, 0).unwrap(), [0.6, 0.0, 0.8]).unwrap();
        assert!((y00.re - 0.282_094_791_773_878_1).abs() < 1e-15);
        let y10 = sph_harm(ModeIndex::new(1, 0).unwrap(), [0.0, 0.0, 1.0]).unwrap();
        assert!((y10.norm() - 0.488_602_511_902_919_9).abs() < 1e-15);
        // phase i^(l+m) makes the degree-one zonal harmonic purely imaginary
        assert!(y10.re.abs() < 1e-16);
    }

    #[test]
    fn symmetry_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let b = random_dir(&mut rng);
            let neg = geom::scale(b, -1.0);
            let yb = sph_harm_all(10, b);
            let yn = sph_harm_all(10, neg);
            for (i, (a, c)) in yb.iter().zip(&yn).enumerate() {
                let idx = ModeIndex::from_flat(i);
                let parity = if idx.ell.is_multiple_of(2) { 1.0 } else { -1.0 };
                assert!((c - a * parity).norm() < 1e-13);
                let conj_sign = if (idx.ell as i64 + idx.m) % 2 == 0 { 1.0 } else { -1.0 };
                assert!((a.conj() - a * conj_sign).norm() < 1e-13);
            }
        }
    }

    #[test]
    fn complex_matches_real_on_sphere() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let b = random_dir(&mut rng);
            let theta = ComplexDirection::from_real(b, 2.5);
            let yr = sph_harm_all(10, b);
            let yc = sph_harm_complex_all(10, &theta);
            for (a, c) in yr.iter().zip(&yc) {
                assert!((a - c).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn variety_violation_is_domain_error() {
        let theta = ComplexDirection {
            components: [Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.5), Complex64::new(0.0, 0.0)],
            k: 1.0,
        };
        assert!(matches!(
            sph_harm_complex(ModeIndex::new(0, 0).unwrap(), &theta),
            Err(Error::Domain { .. })
        ));
    }
}
