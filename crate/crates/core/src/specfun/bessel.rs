//! Spherical Bessel and Hankel functions of integer order and real argument.
//!
//! ```text
//! j_l(r) = sqrt(pi / 2r) J_{l+1/2}(r)
//! y_l(r) = sqrt(pi / 2r) Y_{l+1/2}(r)
//! h_l(r) = j_l(r) + i y_l(r)          (outgoing: h_0(r) = -i e^{ir} / r)
//! ```
//!
//! `j_l` is evaluated by its power series when `r < max(SERIES_FLOOR, l / 2)`,
//! by upward recurrence when `r >= l`, and by Miller's normalized downward
//! recurrence in between. `y_l` is always computed by upward recurrence,
//! which is the stable direction for the second kind.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Below this argument the power series is used for every order.
pub const SERIES_FLOOR: f64 = 1.0;

/// Extra orders added above `max(l, r)` when starting Miller's recurrence.
const MILLER_PAD: usize = 24;

const RESCALE_ABOVE: f64 = 1e200;

/// Power series for a single order:
/// `j_l(r) = r^l / (2l+1)!! * sum_k (-r^2/2)^k / (k! (2l+3)(2l+5)...(2l+2k+1))`.
fn series(ell: usize, r: f64) -> f64 {
    let mut prefactor = 1.0;
    for i in 1..=ell {
        prefactor *= r / (2 * i + 1) as f64;
    }
    let x = -0.5 * r * r;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        term *= x / (k as f64 * (2 * ell + 2 * k + 1) as f64);
        sum += term;
        if term.abs() <= 1e-17 * sum.abs() {
            break;
        }
    }
    prefactor * sum
}

fn upward_j(lmax: usize, r: f64) -> Vec<f64> {
    let (s, c) = r.sin_cos();
    let mut out = vec![0.0; lmax + 1];
    out[0] = s / r;
    if lmax >= 1 {
        out[1] = s / (r * r) - c / r;
    }
    for l in 1..lmax {
        out[l + 1] = (2 * l + 1) as f64 / r * out[l] - out[l - 1];
    }
    out
}

fn miller_j(lmax: usize, r: f64) -> Vec<f64> {
    let start = lmax.max(r.ceil() as usize) + MILLER_PAD + (r.sqrt() * 4.0) as usize;
    let mut out = vec![0.0; lmax + 1];
    let mut upper = 0.0_f64;
    let mut current = 1e-300_f64;
    for l in (1..=start).rev() {
        // j_{l-1} = (2l+1)/r j_l - j_{l+1}
        let lower = (2 * l + 1) as f64 / r * current - upper;
        upper = current;
        current = lower;
        if l - 1 <= lmax {
            out[l - 1] = current;
        }
        if current.abs() > RESCALE_ABOVE {
            let s = 1.0 / current.abs();
            current *= s;
            upper *= s;
            for v in out.iter_mut() {
                *v *= s;
            }
        }
    }
    // normalize against whichever closed form is better conditioned here
    let (s, c) = r.sin_cos();
    let j0 = s / r;
    let j1 = s / (r * r) - c / r;
    let factor = if j0.abs() >= j1.abs() || lmax == 0 {
        j0 / out[0]
    } else {
        j1 / out[1]
    };
    out.iter_mut().for_each(|v| *v *= factor);
    out
}

/// `j_0(r), ..., j_lmax(r)` for `r >= 0`.
pub fn sph_bessel_j_all(lmax: usize, r: f64) -> Vec<f64> {
    if r == 0.0 {
        let mut out = vec![0.0; lmax + 1];
        out[0] = 1.0;
        return out;
    }
    if r < SERIES_FLOOR {
        return (0..=lmax).map(|l| series(l, r)).collect();
    }
    if r >= lmax as f64 {
        upward_j(lmax, r)
    } else {
        let mut out = miller_j(lmax, r);
        // orders far above r are better served by the series
        for (l, v) in out.iter_mut().enumerate() {
            if r < 0.5 * l as f64 {
                *v = series(l, r);
            }
        }
        out
    }
}

/// Spherical Bessel function of the first kind.
pub fn sph_bessel_j(ell: usize, r: f64) -> Result<f64> {
    if !(r >= 0.0) {
        return Err(Error::argument(
            "specfun",
            format!("sph_bessel_j requires r >= 0, got {r}"),
        ));
    }
    if r == 0.0 {
        return Ok(if ell == 0 { 1.0 } else { 0.0 });
    }
    if r < SERIES_FLOOR.max(0.5 * ell as f64) {
        return Ok(series(ell, r));
    }
    Ok(sph_bessel_j_all(ell, r)[ell])
}

/// `y_0(r), ..., y_lmax(r)` for `r > 0`.
pub fn sph_bessel_y_all(lmax: usize, r: f64) -> Vec<f64> {
    let (s, c) = r.sin_cos();
    let mut out = vec![0.0; lmax + 1];
    out[0] = -c / r;
    if lmax >= 1 {
        out[1] = -c / (r * r) - s / r;
    }
    for l in 1..lmax {
        out[l + 1] = (2 * l + 1) as f64 / r * out[l] - out[l - 1];
    }
    out
}

/// Spherical Bessel function of the second kind.
pub fn sph_bessel_y(ell: usize, r: f64) -> Result<f64> {
    if !(r > 0.0) {
        return Err(Error::domain(
            "specfun",
            format!("sph_bessel_y is singular at r = {r}"),
        ));
    }
    Ok(sph_bessel_y_all(ell, r)[ell])
}

/// `h_0(r), ..., h_lmax(r)` (first kind, outgoing) for `r > 0`.
pub fn sph_hankel1_all(lmax: usize, r: f64) -> Vec<Complex64> {
    let j = sph_bessel_j_all(lmax, r);
    let y = sph_bessel_y_all(lmax, r);
    j.into_iter()
        .zip(y)
        .map(|(a, b)| Complex64::new(a, b))
        .collect()
}

/// Spherical Hankel function of the first kind, `h_l = j_l + i y_l`.
pub fn sph_hankel1(ell: usize, r: f64) -> Result<Complex64> {
    if !(r > 0.0) {
        return Err(Error::domain(
            "specfun",
            format!("sph_hankel1 is singular at r = {r}"),
        ));
    }
    Ok(sph_hankel1_all(ell, r)[ell])
}

/// Cylindrical Bessel function `J_nu(x)` for `x >= 0`.
///
/// Half-integer orders `nu = l + 1/2` (and `nu = -1/2`) go through the
/// spherical functions and are valid for every `x`. Other orders use the
/// ascending series, which is limited to `x <= 12`.
pub fn bessel_j(nu: f64, x: f64) -> Result<f64> {
    if x < 0.0 {
        return Err(Error::argument("specfun", "bessel_j requires x >= 0"));
    }
    let twice = 2.0 * nu;
    if (twice - twice.round()).abs() < 1e-12 && (twice.round() as i64) % 2 != 0 {
        let half = twice.round() as i64;
        if x == 0.0 {
            return Ok(if half < 0 { f64::INFINITY } else { 0.0 });
        }
        let pre = (2.0 * x / std::f64::consts::PI).sqrt();
        if half == -1 {
            // J_{-1/2}(x) = sqrt(2/(pi x)) cos x
            return Ok(pre * x.cos() / x);
        }
        if half < -1 {
            return Err(Error::argument(
                "specfun",
                format!("half-integer order {nu} < -1/2 is not supported"),
            ));
        }
        let ell = ((half - 1) / 2) as usize;
        return Ok(pre * sph_bessel_j(ell, x)?);
    }
    if nu < 0.0 && (nu - nu.round()).abs() < 1e-12 {
        // J_{-n} = (-1)^n J_n
        let n = -nu.round();
        let sign = if (n as i64) % 2 == 0 { 1.0 } else { -1.0 };
        return bessel_j(n, x).map(|v| sign * v);
    }
    if x > 12.0 {
        return Err(Error::argument(
            "specfun",
            format!("bessel_j series for non-half-integer order {nu} limited to x <= 12, got {x}"),
        ));
    }
    if x == 0.0 {
        return Ok(if nu == 0.0 { 1.0 } else { 0.0 });
    }
    let half = 0.5 * x;
    let mut term = (nu * half.ln() - statrs::function::gamma::ln_gamma(nu + 1.0)).exp();
    if nu + 1.0 <= 0.0 {
        term *= statrs::function::gamma::gamma(nu + 1.0).signum();
    }
    let mut sum = term;
    for k in 1..400 {
        term *= -half * half / (k as f64 * (k as f64 + nu));
        sum += term;
        if term.abs() < 1e-17 * sum.abs() {
            break;
        }
    }
    Ok(sum)
}
