//! Partial sums of the spherical-wave expansion of `e^{-ik beta.x}`.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::geom::{self, Vec3};

use super::bessel::sph_bessel_j_all;
use super::harmonics::{neg_i_pow, sph_harm_all};

/// `sum_{l <= L} 4 pi (-i)^l j_l(k|x|) conj(Y_lm(x/|x|)) Y_lm(beta)`.
pub fn plane_wave_partial_sum(k: f64, x: Vec3, beta: Vec3, lmax: usize) -> Result<Complex64> {
    if !(k > 0.0) {
        return Err(Error::argument("specfun", format!("k must be > 0, got {k}")));
    }
    if (geom::norm(beta) - 1.0).abs() > 1e-12 {
        return Err(Error::argument("specfun", "beta must be a unit vector"));
    }
    let r = geom::norm(x);
    if r == 0.0 {
        return Ok(Complex64::new(1.0, 0.0));
    }
    let xhat = geom::scale(x, 1.0 / r);
    let jl = sph_bessel_j_all(lmax, k * r);
    let yx = sph_harm_all(lmax, xhat);
    let yb = sph_harm_all(lmax, beta);
    let mut total = Complex64::new(0.0, 0.0);
    for ell in 0..=lmax {
        let mut inner = Complex64::new(0.0, 0.0);
        for idx in ell * ell..(ell + 1) * (ell + 1) {
            inner += yx[idx].conj() * yb[idx];
        }
        total += neg_i_pow(ell) * jl[ell] * inner;
    }
    Ok(total * (4.0 * std::f64::consts::PI))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn origin_gives_one() {
        for l in [0, 3, 10] {
            let v = plane_wave_partial_sum(2.0, [0.0; 3], [0.0, 0.0, 1.0], l).unwrap();
            assert!((v - 1.0).norm() < 1e-15);
        }
    }

    #[test]
    fn collinear_case() {
        let b = geom::normalized([1.0, 2.0, -0.5]).unwrap();
        let x = geom::scale(b, 0.5);
        let v = plane_wave_partial_sum(2.0, x, b, 10).unwrap();
        let expected = Complex64::new(0.0, -1.0).exp();
        assert!((v - expected).norm() < 1e-10);
    }
}
