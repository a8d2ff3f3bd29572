//! Radial moment integrals `g_{mu,nu}(k, b) = int_0^b x^(mu+1/2) J_nu(k x) dx`.

use crate::error::{Error, Result};
use crate::quadrature::integrate_adaptive;

use super::bessel::{bessel_j, sph_bessel_j};

const REL_TOL: f64 = 1e-13;

/// `int_0^b x^(mu + 1/2) J_nu(k x) dx` by adaptive Gauss-Kronrod quadrature.
pub fn g_mu_nu(mu: f64, nu: f64, k: f64, b: f64) -> Result<f64> {
    if !(k > 0.0) || !(b >= 0.0) {
        return Err(Error::argument(
            "specfun",
            format!("g_mu_nu requires k > 0 and b >= 0, got k={k}, b={b}"),
        ));
    }
    if !(mu + nu > -1.5) {
        return Err(Error::domain(
            "specfun",
            format!("g_mu_nu is not integrable at the origin for mu + nu = {}", mu + nu),
        ));
    }
    if b == 0.0 {
        return Ok(0.0);
    }
    let twice = 2.0 * nu;
    let half_integer_ell = if (twice - twice.round()).abs() < 1e-12
        && twice.round() >= 1.0
        && (twice.round() as i64) % 2 == 1
    {
        Some(((twice.round() as i64 - 1) / 2) as usize)
    } else {
        None
    };
    let sqrt_2k_pi = (2.0 * k / std::f64::consts::PI).sqrt();
    let integrand = |x: f64| -> f64 {
        if x == 0.0 {
            return 0.0;
        }
        match half_integer_ell {
            // x^(mu+1/2) sqrt(2kx/pi) j_l(kx) = sqrt(2k/pi) x^(mu+1) j_l(kx)
            Some(ell) => sqrt_2k_pi * x.powf(mu + 1.0) * sph_bessel_j(ell, k * x).unwrap_or(0.0),
            None => x.powf(mu + 0.5) * bessel_j(nu, k * x).unwrap_or(f64::NAN),
        }
    };
    if half_integer_ell.is_none() {
        // surface the series range restriction as an error rather than NaN
        bessel_j(nu, k * b)?;
    }
    // split into pieces no longer than half a period of the oscillation
    let pieces = ((k * b / std::f64::consts::PI).ceil() as usize).max(1);
    let mut total = 0.0;
    for i in 0..pieces {
        let lo = b * i as f64 / pieces as f64;
        let hi = b * (i + 1) as f64 / pieces as f64;
        total += integrate_adaptive(integrand, lo, hi, REL_TOL, 1e-300)?;
    }
    Ok(total)
}
