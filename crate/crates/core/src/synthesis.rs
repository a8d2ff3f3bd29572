//! Source functions `h` whose radiation pattern
//! `A(b) = -1/(4 pi) int e^{-ik b.x} h(x) dx` approximates a target pattern.
//!
//! For `h(x) = sum_lm h_lm(r) Y_lm(x/r)` supported in the ball of radius `b`
//! the pattern coefficients are
//!
//! ```text
//! A_lm = -(-i)^l int_0^b j_l(kr) h_lm(r) r^2 dr
//! ```
//!
//! and for `h_lm(r) = c r^p` this is `-(-i)^l sqrt(pi / 2k) g_{1+p, l+1/2}(k, b) c`.

use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{self, Vec3};
use crate::quadrature::integrate_adaptive;
use crate::specfun::{g_mu_nu, neg_i_pow, num_modes, sph_bessel_j, sph_harm_all, ModeIndex};
use crate::sphgrid::{BallGrid, DirectionGrid, SHCoefficients};

pub type C64 = Complex64;

/// A denominator `g_{1,l+1/2}(k, b)` smaller than this fraction of
/// `int_0^b x^{3/2} |J_{l+1/2}(kx)| dx` is treated as a resonant radius.
pub const SINGULAR_REL: f64 = 1e-8;

/// Relative change of `b` suggested when a denominator is singular.
pub const RETRY_FRACTION: f64 = 0.05;

/// A radiation pattern `A(b)` at fixed incident direction and wavenumber.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadiationPattern {
    pub coeffs: SHCoefficients,
    pub alpha: Vec3,
    pub k: f64,
}

/// Smallest `L` whose tail `sum_{l > L} |f_lm|^2` is at most `eps^2`.
///
/// `None` means the whole pattern is within `eps` of zero, so the zero
/// source already meets the tolerance.
pub fn truncate(f: &SHCoefficients, eps: f64) -> Result<Option<usize>> {
    if !(eps > 0.0) {
        return Err(Error::argument("synthesis", format!("eps must be > 0, got {eps}")));
    }
    let energy = f.degree_energy();
    let total: f64 = energy.iter().sum();
    let eps2 = eps * eps;
    if total <= eps2 {
        return Ok(None);
    }
    let mut tail = total;
    for (l, e) in energy.iter().enumerate() {
        tail -= e;
        if tail <= eps2 * (1.0 + 1e-12) {
            return Ok(Some(l));
        }
    }
    Ok(Some(f.bandlimit))
}

/// Source with per-mode radial profiles `h_lm(r) = sum_p c_p r^p`, `r <= b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceFunction {
    pub bandlimit: usize,
    pub k: f64,
    pub b: f64,
    /// Polynomial coefficients in `r`, one list per flat `(l, m)` mode.
    pub profiles: Vec<Vec<C64>>,
}

impl SourceFunction {
    pub fn zero(k: f64, b: f64) -> Self {
        Self {
            bandlimit: 0,
            k,
            b,
            profiles: vec![vec![C64::new(0.0, 0.0)]],
        }
    }

    /// Profiles constant in `r` with the given mode values.
    pub fn constant_modes(values: &SHCoefficients, k: f64, b: f64) -> Self {
        Self {
            bandlimit: values.bandlimit,
            k,
            b,
            profiles: values.coeffs.iter().map(|c| vec![*c]).collect(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.profiles.iter().flatten().all(|c| *c == C64::new(0.0, 0.0))
    }

    pub fn profile(&self, flat: usize, r: f64) -> C64 {
        self.profiles[flat]
            .iter()
            .rev()
            .fold(C64::new(0.0, 0.0), |acc, c| acc * r + c)
    }

    /// `h(x)`; zero outside the ball.
    pub fn evaluate(&self, x: Vec3) -> C64 {
        let r = geom::norm(x);
        if r > self.b {
            return C64::new(0.0, 0.0);
        }
        let dir = if r > 0.0 { geom::scale(x, 1.0 / r) } else { [0.0, 0.0, 1.0] };
        let y = sph_harm_all(self.bandlimit, dir);
        (0..num_modes(self.bandlimit))
            .map(|i| self.profile(i, r) * y[i])
            .sum()
    }

    pub fn sample(&self, grid: &BallGrid) -> Vec<C64> {
        use rayon::prelude::*;
        grid.nodes.par_iter().map(|&x| self.evaluate(x)).collect()
    }
}

/// Pattern coefficient produced by `h_lm(r) = r^p` in mode `l`.
pub fn mode_transfer(ell: usize, p: usize, k: f64, b: f64) -> Result<C64> {
    let g = g_mu_nu(1.0 + p as f64, ell as f64 + 0.5, k, b)?;
    Ok(-neg_i_pow(ell) * (std::f64::consts::PI / (2.0 * k)).sqrt() * g)
}

fn denominator_scale(ell: usize, k: f64, b: f64) -> Result<f64> {
    let pre = (2.0 * k / std::f64::consts::PI).sqrt();
    integrate_adaptive(
        |x| pre * x * x * sph_bessel_j(ell, k * x).unwrap_or(0.0).abs(),
        0.0,
        b,
        1e-8,
        0.0,
    )
}

/// Constant-in-`r` source reproducing `f_lm` for `l <= L(eps)` exactly.
pub fn compute_h(f: &SHCoefficients, eps: f64, k: f64, b: f64) -> Result<SourceFunction> {
    if !(k > 0.0) || !(b > 0.0) {
        return Err(Error::argument("synthesis", format!("need k > 0 and b > 0 (k={k}, b={b})")));
    }
    let lmax = match truncate(f, eps)? {
        None => return Ok(SourceFunction::zero(k, b)),
        Some(l) => l,
    };
    let mut values = SHCoefficients::zeros(lmax);
    for ell in 0..=lmax {
        let g = g_mu_nu(1.0, ell as f64 + 0.5, k, b)?;
        let scale = denominator_scale(ell, k, b)?;
        if g.abs() < SINGULAR_REL * scale {
            return Err(Error::SingularDenominator {
                ell,
                k,
                b,
                value: g,
                retry_lo: b * (1.0 - RETRY_FRACTION),
                retry_hi: b * (1.0 + RETRY_FRACTION),
            });
        }
        let t = -neg_i_pow(ell) * (std::f64::consts::PI / (2.0 * k)).sqrt() * g;
        for m in -(ell as i64)..=(ell as i64) {
            let idx = ModeIndex { ell, m }.flat();
            values.coeffs[idx] = f.coeffs[idx] / t;
        }
    }
    Ok(SourceFunction::constant_modes(&values, k, b))
}

/// Pattern coefficients of a per-mode source (mode path).
pub fn pattern_from_h(h: &SourceFunction) -> Result<SHCoefficients> {
    let mut out = SHCoefficients::zeros(h.bandlimit);
    let degree = h.profiles.iter().map(|p| p.len()).max().unwrap_or(0);
    for ell in 0..=h.bandlimit {
        let transfers: Vec<C64> = (0..degree)
            .map(|p| mode_transfer(ell, p, h.k, h.b))
            .collect::<Result<_>>()?;
        for m in -(ell as i64)..=(ell as i64) {
            let idx = ModeIndex { ell, m }.flat();
            out.coeffs[idx] = h.profiles[idx]
                .iter()
                .zip(&transfers)
                .map(|(c, t)| c * t)
                .sum();
        }
    }
    Ok(out)
}

/// Pattern of gridded source samples at the given directions (grid path).
pub fn pattern_from_samples(grid: &BallGrid, samples: &[C64], k: f64, directions: &[Vec3]) -> Vec<C64> {
    crate::ls_forward::source_amplitude(grid, samples, k, directions)
}

/// JSON description of a target pattern.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TargetSpec {
    /// `[[l, m, re, im], ...]`
    Coeffs { coeffs: Vec<[f64; 4]> },
    /// Samples on the product direction grid of bandlimit `grid_L`, one row
    /// per node in grid order, columns `re,im` or `x,y,z,re,im`.
    Samples {
        samples_csv: PathBuf,
        #[serde(rename = "grid_L")]
        grid_l: usize,
    },
}

impl TargetSpec {
    /// Resolves the target to coefficients; relative CSV paths are taken
    /// relative to `base_dir`.
    pub fn resolve(&self, base_dir: &Path) -> Result<SHCoefficients> {
        match self {
            TargetSpec::Coeffs { coeffs } => {
                let modes = coeffs
                    .iter()
                    .map(|c| {
                        if c[0] < 0.0 || c[0].fract() != 0.0 || c[1].fract() != 0.0 {
                            return Err(Error::Parse(format!("mode ({}, {}) is not an integer pair", c[0], c[1])));
                        }
                        Ok((c[0] as usize, c[1] as i64, C64::new(c[2], c[3])))
                    })
                    .collect::<Result<Vec<_>>>()?;
                SHCoefficients::from_modes(&modes, 0)
            }
            TargetSpec::Samples { samples_csv, grid_l } => {
                let path = if samples_csv.is_absolute() {
                    samples_csv.clone()
                } else {
                    base_dir.join(samples_csv)
                };
                let grid = DirectionGrid::new(*grid_l);
                let samples = read_samples(&path, &grid)?;
                if *grid_l < 16 {
                    log::warn!("synthesis: sample grid bandlimit {grid_l} resolves only l <= {grid_l}");
                }
                grid.analyze(&samples, *grid_l)
            }
        }
    }
}

fn read_samples(path: &Path, grid: &DirectionGrid) -> Result<Vec<C64>> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let mut out = Vec::with_capacity(grid.len());
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let vals: Vec<f64> = rec
            .iter()
            .map(|s| s.trim().parse::<f64>().map_err(|e| Error::Parse(format!("{path:?}: {e}"))))
            .collect::<Result<_>>()?;
        match vals.len() {
            2 => out.push(C64::new(vals[0], vals[1])),
            5 => {
                if i >= grid.len() || geom::distance([vals[0], vals[1], vals[2]], grid.nodes[i]) > 1e-8 {
                    return Err(Error::Parse(format!("{path:?}: row {i} direction does not match the grid")));
                }
                out.push(C64::new(vals[3], vals[4]));
            }
            n => return Err(Error::Parse(format!("{path:?}: expected 2 or 5 columns, found {n}"))),
        }
    }
    if out.len() != grid.len() {
        return Err(Error::Parse(format!(
            "{path:?}: expected {} samples for grid_L = {}, found {}",
            grid.len(),
            grid.bandlimit,
            out.len()
        )));
    }
    Ok(out)
}
