//! Fixed-energy inversion: recover `q~(xi) = int q e^{-i xi.x} dx` from the
//! amplitude matrix `A(a', a)` at one wavenumber.
//!
//! The estimator is `-4 pi int A(theta', a) nu(a) da` with `theta' - theta = xi`
//! on the complex variety `theta . theta = k^2`, where `nu` makes
//! `e^{-i theta.x} int u(x, a) nu(a) da - 1` small on an annulus
//! `a1 <= |x| <= b` outside the support. Both the continuation in `theta'` and
//! the field `u` outside the support come from the harmonic expansion of the
//! data in the outgoing direction.
//!
//! `nu` is represented by harmonic coefficients, `nu = sum c_lm Y_lm`, so that
//! `int e^{ik a.x} Y_lm(a) da = 4 pi i^l j_l(k|x|) Y_lm(x/|x|)`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{self, Vec3};
use crate::ls_forward::AmplitudeMatrix;
use crate::potential::{density_from_q, DensityField, ParticleModel, PotentialGrid};
use crate::quadrature::gauss_legendre_interval;
use crate::specfun::{
    i_pow, num_modes, sph_bessel_j_all, sph_hankel1_all, sph_harm_all, sph_harm_complex_all, ComplexDirection,
    ModeIndex,
};
use crate::sphgrid::{BallGrid, DirectionGrid};

type C64 = Complex64;

const MODULE: &str = "inversion";
const FOUR_PI: f64 = 4.0 * std::f64::consts::PI;
const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// `theta' - theta = xi` with both on the variety and `|theta| = |theta'| = t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaPair {
    pub theta: ComplexDirection,
    pub theta_prime: ComplexDirection,
    pub xi: Vec3,
    pub t: f64,
}

impl ThetaPair {
    /// `kappa = |Im theta|`.
    pub fn kappa(&self) -> f64 {
        geom::norm(self.theta.imag_part())
    }
}

/// Smallest `t` for which [`make_theta_pair`] succeeds.
pub fn min_feasible_t(xi: Vec3, k: f64) -> f64 {
    let x2 = geom::dot(xi, xi);
    k.max((0.5 * x2 - k * k).max(0.0).sqrt())
}

/// Symmetric construction `theta = -xi/2 + p e2 + i s e3`, `theta' = theta + xi`
/// with `p^2 = (t^2 + k^2 - |xi|^2/2)/2` and `s^2 = (t^2 - k^2)/2`, in the
/// default frame completing `xi / |xi|`.
pub fn make_theta_pair(xi: Vec3, t: f64, k: f64) -> Result<ThetaPair> {
    let e1 = geom::normalized(xi).unwrap_or([0.0, 0.0, 1.0]);
    let (e2, _) = geom::complete_frame(e1);
    make_theta_pair_in_frame(xi, t, k, e2)
}

/// As [`make_theta_pair`] with the real direction `e2` (orthogonal to `xi`)
/// supplied; `e3 = e1 x e2`.
pub fn make_theta_pair_in_frame(xi: Vec3, t: f64, k: f64, e2: Vec3) -> Result<ThetaPair> {
    if !(k > 0.0) || !t.is_finite() || xi.iter().any(|v| !v.is_finite()) {
        return Err(Error::argument(MODULE, format!("need k > 0 and finite t, xi (k = {k}, t = {t})")));
    }
    let x2 = geom::dot(xi, xi);
    let e1 = geom::normalized(xi).unwrap_or_else(|| geom::complete_frame(e2).1);
    if (geom::norm(e2) - 1.0).abs() > 1e-12 || geom::dot(e1, e2).abs() > 1e-12 {
        return Err(Error::argument(MODULE, "e2 must be a unit vector orthogonal to xi"));
    }
    let p2 = 0.5 * (t * t + k * k - 0.5 * x2);
    let s2 = 0.5 * (t * t - k * k);
    let tmin = min_feasible_t(xi, k);
    if t < tmin * (1.0 - 1e-14) || p2 < -1e-14 * k * k || s2 < -1e-14 * k * k {
        return Err(Error::domain(
            MODULE,
            format!("no theta pair with |theta| = {t} for |xi| = {}; need t >= {tmin}", x2.sqrt()),
        ));
    }
    let (p, s) = (p2.max(0.0).sqrt(), s2.max(0.0).sqrt());
    let e3 = geom::cross(e1, e2);
    let theta: [C64; 3] = std::array::from_fn(|j| C64::new(-0.5 * xi[j] + p * e2[j], s * e3[j]));
    let theta_prime: [C64; 3] = std::array::from_fn(|j| theta[j] + xi[j]);
    // the algebra is exact; allow for rounding in |xi|^2
    let tol = 1e-12 * (1.0 + x2 / (k * k));
    Ok(ThetaPair {
        theta: ComplexDirection::with_tolerance(theta, k, tol)?,
        theta_prime: ComplexDirection::with_tolerance(theta_prime, k, tol)?,
        xi,
        t,
    })
}

/// Harmonic coefficients `A_lm(a_j)` of `A(., a_j)` for every incident
/// direction of the data grid, `l <= l_cont`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmplitudeSHExpansion {
    pub k: f64,
    pub l_cont: usize,
    pub directions: DirectionGrid,
    /// `coeffs[j][flat(l, m)]`.
    pub coeffs: Vec<Vec<C64>>,
}

impl AmplitudeSHExpansion {
    pub fn new(a: &AmplitudeMatrix, l_cont: usize) -> Result<Self> {
        let grid = &a.directions;
        if l_cont > grid.bandlimit {
            return Err(Error::Resolution {
                grid: grid.bandlimit,
                requested: l_cont,
            });
        }
        let table = grid.harmonic_table(l_cont);
        let coeffs = (0..a.n())
            .into_par_iter()
            .map(|j| grid.analyze_with_table(&a.column(j), l_cont, &table).map(|c| c.coeffs))
            .collect::<Result<_>>()?;
        Ok(Self {
            k: a.k,
            l_cont,
            directions: grid.clone(),
            coeffs,
        })
    }

    /// Partial sums of `sum_l A_l(a_j) Y_l(theta'/k)` over degrees `0..=l_cont`.
    pub fn partial_sums(&self, theta_prime: &ComplexDirection, j: usize) -> Vec<C64> {
        let y = sph_harm_complex_all(self.l_cont, theta_prime);
        let mut acc = ZERO;
        (0..=self.l_cont)
            .map(|l| {
                for i in l * l..(l + 1) * (l + 1) {
                    acc += self.coeffs[j][i] * y[i];
                }
                acc
            })
            .collect()
    }

    /// `A(theta', a_j)`; warns when the last degree still carries a large share.
    pub fn continue_at(&self, theta_prime: &ComplexDirection, j: usize) -> C64 {
        let sums = self.partial_sums(theta_prime, j);
        let last = sums[self.l_cont];
        if self.l_cont > 0 {
            let tail = (last - sums[self.l_cont - 1]).norm();
            if tail > 0.1 * last.norm() && last.norm() > 0.0 {
                log::warn!(
                    "inversion: continued series not settled at l = {} (last term {:.2e} of {:.2e})",
                    self.l_cont,
                    tail,
                    last.norm()
                );
            }
        }
        last
    }

    /// `A(theta', a)` for an arbitrary real incident direction: the continued
    /// values on the data grid are expanded in `a` and evaluated.
    pub fn continue_amplitude(&self, theta_prime: &ComplexDirection, alpha: Vec3) -> Result<C64> {
        let values: Vec<C64> = (0..self.directions.len()).map(|j| self.continue_at(theta_prime, j)).collect();
        let c = self.directions.analyze(&values, self.directions.bandlimit)?;
        Ok(c.evaluate(alpha))
    }

    /// Outgoing part of `u(x, a_j)` outside the support,
    /// `sum_l A_l(a_j) k i^{l+1} h_l(k|x|) Y_l(x/|x|)`.
    pub fn scattered_field(&self, x: Vec3, j: usize) -> C64 {
        let s = outgoing_basis(self.k, self.l_cont, x);
        s.iter().zip(&self.coeffs[j]).map(|(a, b)| a * b).sum()
    }
}

/// `k i^{l+1} h_l(k r) Y_lm(x/r)`, which behaves as `e^{ikr}/r Y_lm` at infinity.
fn outgoing_basis(k: f64, lmax: usize, x: Vec3) -> Vec<C64> {
    let r = geom::norm(x);
    let h = sph_hankel1_all(lmax, k * r);
    let y = sph_harm_all(lmax, geom::scale(x, 1.0 / r));
    y.iter()
        .enumerate()
        .map(|(i, y)| {
            let l = ModeIndex::from_flat(i).ell;
            i_pow(l + 1) * h[l] * k * y
        })
        .collect()
}

/// Product quadrature on the shell `a1 <= |x| <= b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnulusGrid {
    pub a1: f64,
    pub b: f64,
    pub points: Vec<Vec3>,
    pub weights: Vec<f64>,
}

impl AnnulusGrid {
    pub fn new(a1: f64, b: f64, n_radial: usize, bandlimit: usize) -> Result<Self> {
        if !(a1 > 0.0 && b > a1) || n_radial == 0 {
            return Err(Error::argument(MODULE, format!("need 0 < a1 < b and n_radial > 0 (a1 = {a1}, b = {b})")));
        }
        let dirs = DirectionGrid::new(bandlimit);
        let mut points = Vec::with_capacity(n_radial * dirs.len());
        let mut weights = Vec::with_capacity(n_radial * dirs.len());
        for (r, wr) in gauss_legendre_interval(n_radial, a1, b) {
            for (d, wd) in dirs.nodes.iter().zip(&dirs.weights) {
                points.push(geom::scale(*d, r));
                weights.push(wr * r * r * wd);
            }
        }
        Ok(Self { a1, b, points, weights })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn volume(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Geometry and discretization of the inversion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InversionConfig {
    /// Radius of a ball containing the support of `q` (half its diameter).
    pub b0: f64,
    pub a1: f64,
    pub b: f64,
    pub n_radial: usize,
    /// Angular bandlimit of the annulus grid; `l_nu + 6` when absent.
    pub annulus_bandlimit: Option<usize>,
    /// Largest degree of `nu`.
    pub l_nu: usize,
    /// Degree of the continuation and the outgoing expansion; the data grid's
    /// bandlimit when absent.
    pub l_cont: Option<usize>,
    /// Relative cut for dropping dependent columns in the `nu` fit.
    pub rank_tol: f64,
}

impl Default for InversionConfig {
    fn default() -> Self {
        Self {
            b0: 1.0,
            a1: 1.2,
            b: 1.6,
            n_radial: 8,
            annulus_bandlimit: None,
            l_nu: 16,
            l_cont: None,
            rank_tol: 1e-13,
        }
    }
}

impl InversionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.b0 > 0.0 && self.b0 < self.a1 && self.a1 < self.b) {
            return Err(Error::argument(
                MODULE,
                format!("need 0 < b0 < a1 < b, got b0 = {}, a1 = {}, b = {}", self.b0, self.a1, self.b),
            ));
        }
        if self.n_radial == 0 || !(self.rank_tol >= 0.0) {
            return Err(Error::argument(MODULE, "n_radial must be > 0 and rank_tol >= 0"));
        }
        Ok(())
    }

    fn annulus(&self) -> Result<AnnulusGrid> {
        AnnulusGrid::new(self.a1, self.b, self.n_radial, self.annulus_bandlimit.unwrap_or(self.l_nu + 6))
    }
}

/// Values on the annulus of `int u(x, a) Y_lm(a) da` for every `l <= l_nu`,
/// plus the coupling `B_{lm, l'm'} = int A_lm(a) Y_l'm'(a) da` that turns `nu`
/// coefficients into continued-amplitude coefficients.
#[derive(Debug, Clone)]
pub struct NuBasis {
    pub k: f64,
    pub l_nu: usize,
    pub l_cont: usize,
    pub annulus: AnnulusGrid,
    /// `annulus.len() x num_modes(l_nu)`.
    pub columns: DMatrix<C64>,
    /// `num_modes(l_cont) x num_modes(l_nu)`.
    pub coupling: DMatrix<C64>,
}

impl NuBasis {
    /// Basis for the data `expansion` (`None`: `q = 0`, incident waves only).
    pub fn new(k: f64, expansion: Option<&AmplitudeSHExpansion>, annulus: AnnulusGrid, l_nu: usize) -> Result<Self> {
        if !(k > 0.0) {
            return Err(Error::argument(MODULE, format!("k must be > 0, got {k}")));
        }
        let nn = num_modes(l_nu);
        let rows = annulus.len();
        let mut columns = DMatrix::from_fn(rows, nn, |_, _| ZERO);
        let incident: Vec<Vec<C64>> = annulus
            .points
            .par_iter()
            .map(|&x| {
                let r = geom::norm(x);
                let j = sph_bessel_j_all(l_nu, k * r);
                let y = sph_harm_all(l_nu, geom::scale(x, 1.0 / r));
                y.iter()
                    .enumerate()
                    .map(|(i, y)| {
                        let l = ModeIndex::from_flat(i).ell;
                        i_pow(l) * (FOUR_PI * j[l]) * y
                    })
                    .collect()
            })
            .collect();
        for (p, row) in incident.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                columns[(p, c)] = *v;
            }
        }
        let (l_cont, coupling) = match expansion {
            None => (0, DMatrix::from_fn(1, nn, |_, _| ZERO)),
            Some(e) => {
                if (e.k - k).abs() > 1e-12 * k {
                    return Err(Error::argument(MODULE, "expansion and basis use different k"));
                }
                let dirs = &e.directions;
                let y = dirs.harmonic_table(l_nu);
                let nc = num_modes(e.l_cont);
                let coupling = DMatrix::from_fn(nc, nn, |a, c| {
                    (0..dirs.len()).map(|j| e.coeffs[j][a] * y[j][c] * dirs.weights[j]).sum()
                });
                let out: Vec<Vec<C64>> = annulus.points.par_iter().map(|&x| outgoing_basis(k, e.l_cont, x)).collect();
                let s = DMatrix::from_fn(rows, nc, |p, a| out[p][a]);
                columns += s * &coupling;
                (e.l_cont, coupling)
            }
        };
        Ok(Self {
            k,
            l_nu,
            l_cont,
            annulus,
            columns,
            coupling,
        })
    }

    /// Weighted system `sqrt(w) e^{-i theta.x} phi(x)` and right side `sqrt(w)`,
    /// restricted to the first `n` columns.
    fn weighted(&self, theta: &ComplexDirection, n: usize) -> (DMatrix<C64>, DVector<C64>) {
        let rows = self.annulus.len();
        let scale: Vec<C64> = self
            .annulus
            .points
            .iter()
            .zip(&self.annulus.weights)
            .map(|(x, w)| (-C64::i() * theta.dot_real(*x)).exp() * w.sqrt())
            .collect();
        let m = DMatrix::from_fn(rows, n, |p, c| self.columns[(p, c)] * scale[p]);
        let rhs = DVector::from_iterator(rows, self.annulus.weights.iter().map(|w| C64::new(w.sqrt(), 0.0)));
        (m, rhs)
    }

    /// `F(nu)` for coefficients of degree `<= l_nu` (shorter vectors are
    /// zero-padded).
    pub fn functional(&self, theta: &ComplexDirection, nu: &[C64]) -> Result<f64> {
        if nu.len() > self.columns.ncols() {
            return Err(Error::argument(MODULE, format!("nu has {} coefficients, basis holds {}", nu.len(), self.columns.ncols())));
        }
        let (m, rhs) = self.weighted(theta, nu.len());
        let x = DVector::from_column_slice(nu);
        Ok((m * x - rhs).norm_squared())
    }

    /// `-4 pi sum_lm Y_lm(theta'/k) sum_c B_{lm,c} nu_c`.
    pub fn estimate(&self, theta_prime: &ComplexDirection, nu: &[C64]) -> C64 {
        if self.l_cont == 0 && self.coupling.iter().all(|v| *v == ZERO) {
            return ZERO;
        }
        let y = sph_harm_complex_all(self.l_cont, theta_prime);
        let mut acc = ZERO;
        for (a, ya) in y.iter().enumerate() {
            let row: C64 = nu.iter().enumerate().map(|(c, v)| self.coupling[(a, c)] * v).sum();
            acc += ya * row;
        }
        -FOUR_PI * acc
    }
}

/// Harmonic coefficients of `nu(., theta)` and the achieved functional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuFunction {
    pub theta: ThetaPair,
    pub l_nu: usize,
    pub coeffs: Vec<C64>,
    /// `F(nu) = int_{a1 <= |x| <= b} |rho|^2 dx`.
    pub f_value: f64,
    /// Smallest `F` over the degree sweep `0..=l_nu_max`.
    pub best_f: f64,
    /// `F` at each degree of the sweep.
    pub sweep: Vec<f64>,
    pub admissible: bool,
    /// Columns retained by the rank cut at the chosen degree.
    pub rank: usize,
}

impl NuFunction {
    /// `|nu|_{L^2(S^2)}`.
    pub fn norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }
}

/// Minimizes `F(nu)` over `nu` of degree `<= l`, for every `l <= l_nu` (nested
/// spaces, one QR factorization of the normalized columns), then returns the
/// smallest-norm `nu` of degree `<= l_nu` with `F(nu) <= 2 d`, `d` the best
/// value found. The small norm keeps data errors from being amplified.
pub fn solve_nu(basis: &NuBasis, theta: &ThetaPair, l_nu: usize, rank_tol: f64) -> Result<NuFunction> {
    if l_nu > basis.l_nu {
        return Err(Error::argument(MODULE, format!("basis holds degree {} < {l_nu}", basis.l_nu)));
    }
    let n = num_modes(l_nu);
    if basis.annulus.len() < n {
        return Err(Error::argument(MODULE, "annulus grid has fewer points than unknowns"));
    }
    let (raw, rhs) = basis.weighted(&theta.theta, n);
    let mut m = raw.clone();
    let norms: Vec<f64> = (0..n).map(|c| m.column(c).norm()).collect();
    for (c, s) in norms.iter().enumerate() {
        if *s > 0.0 {
            m.column_mut(c).scale_mut(1.0 / s);
        }
    }
    let qr = m.clone().qr();
    let r = qr.r();
    let qtb = qr.q().adjoint() * &rhs;
    let rmax = (0..n).map(|i| r[(i, i)].norm()).fold(0.0, f64::max);
    let keep: Vec<bool> = (0..n).map(|i| r[(i, i)].norm() > rank_tol * rmax).collect();

    let sweep: Vec<f64> = (0..=l_nu)
        .map(|l| {
            let len = num_modes(l);
            let mut x = vec![ZERO; len];
            for i in (0..len).rev() {
                if !keep[i] {
                    continue;
                }
                let mut s = qtb[i];
                for j in i + 1..len {
                    s -= r[(i, j)] * x[j];
                }
                x[i] = s / r[(i, i)];
            }
            let mut res = rhs.clone();
            for (c, v) in x.iter().enumerate() {
                if *v != ZERO {
                    res.axpy(-*v, &m.column(c), C64::new(1.0, 0.0));
                }
            }
            res.norm_squared()
        })
        .collect();
    let best_f = sweep.iter().cloned().fold(f64::INFINITY, f64::min);

    let tik = Tikhonov::new(raw, &rhs);
    let target = (2.0 * best_f).sqrt();
    let lambda = tik.discrepancy(target);
    let coeffs = tik.solution(lambda);
    let f_value = tik.path(lambda).0.powi(2);
    let rank = keep.iter().filter(|k| **k).count();
    Ok(NuFunction {
        theta: *theta,
        l_nu,
        coeffs,
        f_value,
        best_f,
        sweep,
        admissible: f_value <= 2.0 * best_f * (1.0 + 1e-6),
        rank,
    })
}

/// `min |M x - b|^2 + lambda^2 |x|^2` through the SVD of the triangular factor.
struct Tikhonov {
    sigma: DVector<f64>,
    beta: DVector<C64>,
    v: DMatrix<C64>,
    perp: f64,
}

impl Tikhonov {
    fn new(m: DMatrix<C64>, rhs: &DVector<C64>) -> Self {
        let qr = m.qr();
        let qtb = qr.q().adjoint() * rhs;
        let perp = (rhs.norm_squared() - qtb.norm_squared()).max(0.0);
        let svd = qr.r().svd(true, true);
        let u = svd.u.expect("u requested");
        let v = svd.v_t.expect("v requested").adjoint();
        Self {
            beta: u.adjoint() * qtb,
            sigma: svd.singular_values,
            v,
            perp,
        }
    }

    fn sigma_max(&self) -> f64 {
        self.sigma.max().max(f64::MIN_POSITIVE)
    }

    /// `(|M x - b|, |x|)` at `lambda`.
    fn path(&self, lambda: f64) -> (f64, f64) {
        let (mut rho2, mut x2) = (self.perp, 0.0);
        for (s, b) in self.sigma.iter().zip(self.beta.iter()) {
            let d = s * s + lambda * lambda;
            if d == 0.0 {
                rho2 += b.norm_sqr();
                continue;
            }
            rho2 += (lambda * lambda / d).powi(2) * b.norm_sqr();
            x2 += (s / d).powi(2) * b.norm_sqr();
        }
        (rho2.sqrt(), x2.sqrt())
    }

    fn solution(&self, lambda: f64) -> Vec<C64> {
        let filtered = DVector::from_fn(self.sigma.len(), |i, _| {
            let s = self.sigma[i];
            let d = s * s + lambda * lambda;
            if d == 0.0 {
                ZERO
            } else {
                self.beta[i] * (s / d)
            }
        });
        (&self.v * filtered).iter().cloned().collect()
    }

    /// Largest `lambda` with `|M x - b| <= target` (the residual grows with
    /// `lambda`); bisection in `log lambda`.
    fn discrepancy(&self, target: f64) -> f64 {
        let smax = self.sigma_max();
        let (mut lo, mut hi) = ((smax * 1e-18).ln(), (smax * 1e3).ln());
        if self.path(lo.exp()).0 > target {
            return 0.0;
        }
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if self.path(mid.exp()).0 <= target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo.exp()
    }

    /// Log-spaced `lambda`, decreasing from `100 sigma_max` to `1e-16 sigma_max`.
    fn lambda_grid(&self) -> Vec<f64> {
        let smax = self.sigma_max();
        (0..=360).map(|i| smax * 10f64.powf(2.0 - 18.0 * i as f64 / 360.0)).collect()
    }
}

/// One exact-data estimate of `q~(xi)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InversionEstimate {
    pub xi: Vec3,
    pub t: f64,
    pub q_hat: C64,
    pub f_nu: f64,
    pub nu_norm: f64,
    pub l_nu: usize,
    pub rank: usize,
}

/// Data prepared once for many `(xi, t)` inversions.
#[derive(Debug, Clone)]
pub struct Inverter {
    pub config: InversionConfig,
    pub expansion: AmplitudeSHExpansion,
    pub basis: NuBasis,
}

impl Inverter {
    pub fn new(a: &AmplitudeMatrix, config: InversionConfig) -> Result<Self> {
        config.validate()?;
        let l_cont = config.l_cont.unwrap_or(a.directions.bandlimit);
        if config.l_nu > a.directions.bandlimit + 4 {
            // high nu degrees alias with the data and fit its quadrature error
            log::warn!(
                "inversion: l_nu = {} is large for data bandlimit {}",
                config.l_nu,
                a.directions.bandlimit
            );
        }
        let expansion = AmplitudeSHExpansion::new(a, l_cont)?;
        let basis = NuBasis::new(a.k, Some(&expansion), config.annulus()?, config.l_nu)?;
        Ok(Self { config, expansion, basis })
    }

    pub fn k(&self) -> f64 {
        self.expansion.k
    }

    pub fn solve_nu(&self, theta: &ThetaPair) -> Result<NuFunction> {
        solve_nu(&self.basis, theta, self.config.l_nu, self.config.rank_tol)
    }

    pub fn estimate(&self, xi: Vec3, t: f64) -> Result<InversionEstimate> {
        let theta = make_theta_pair(xi, t, self.k())?;
        let nu = self.solve_nu(&theta)?;
        Ok(InversionEstimate {
            xi,
            t,
            q_hat: self.basis.estimate(&theta.theta_prime, &nu.coeffs),
            f_nu: nu.f_value,
            nu_norm: nu.norm(),
            l_nu: nu.l_nu,
            rank: nu.rank,
        })
    }

    /// `|q(-xi) - conj q(xi)|`, zero for a real potential.
    pub fn symmetry_defect(&self, xi: Vec3, t: f64) -> Result<f64> {
        let a = self.estimate(xi, t)?.q_hat;
        let b = self.estimate(geom::scale(xi, -1.0), t)?.q_hat;
        Ok((b - a.conj()).norm())
    }
}

/// Exact-data inversion at a single `(xi, t)`.
pub fn invert_exact(a: &AmplitudeMatrix, xi: Vec3, t: f64, config: InversionConfig) -> Result<InversionEstimate> {
    Inverter::new(a, config)?.estimate(xi, t)
}

/// `N(delta)`: the integer nearest to `|ln delta| / ln|ln delta|`. Defined for
/// `0 < delta <= e^{-e}`, where the ratio increases as `delta` decreases.
pub fn n_of_delta(delta: f64) -> Result<usize> {
    let limit = (-std::f64::consts::E).exp();
    if !(delta > 0.0 && delta <= limit) {
        return Err(Error::argument(MODULE, format!("noise level must lie in (0, {limit:.4}], got {delta}")));
    }
    let l = delta.ln().abs();
    Ok((l / l.ln()).round() as usize)
}

/// Noisy-data settings on top of the geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoisyConfig {
    pub base: InversionConfig,
    /// Right side of the stability constraint.
    pub c: f64,
    /// Candidate `|theta| / k`.
    pub t_ladder: Vec<f64>,
}

impl Default for NoisyConfig {
    fn default() -> Self {
        Self {
            base: InversionConfig {
                l_nu: 10,
                ..InversionConfig::default()
            },
            c: 8.0,
            t_ladder: vec![1.5, 2.0, 3.0, 4.5, 7.0],
        }
    }
}

/// Constraint evaluation at one candidate `|theta|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub t: f64,
    pub kappa: f64,
    pub rho_norm: f64,
    pub nu_norm: f64,
    /// `|theta| (|rho| + |nu| e^{kappa b} mu)`.
    pub lhs: f64,
    pub feasible: bool,
    pub q_hat: C64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisyEstimate {
    pub xi: Vec3,
    pub q_hat: C64,
    pub n_delta: usize,
    pub mu: f64,
    pub t_used: f64,
    pub rho_norm: f64,
    /// No candidate met the constraint; the smallest `t` was used.
    pub degraded: bool,
    pub candidates: Vec<Candidate>,
}

/// Noisy-data inverter: truncation at `N(delta)` and the stability constraint.
#[derive(Debug, Clone)]
pub struct NoisyInverter {
    pub config: NoisyConfig,
    pub delta: f64,
    pub n_delta: usize,
    pub mu: f64,
    pub basis: NuBasis,
}

impl NoisyInverter {
    pub fn new(a_delta: &AmplitudeMatrix, delta: f64, config: NoisyConfig) -> Result<Self> {
        config.base.validate()?;
        if config.t_ladder.is_empty() || config.t_ladder.iter().any(|t| !(*t >= 1.0)) || !(config.c > 0.0) {
            return Err(Error::argument(MODULE, "t ladder must be non-empty with entries >= 1, and c > 0"));
        }
        let n_delta = n_of_delta(delta)?;
        let gamma = (config.base.a1 / config.base.b0).ln();
        let mu = (-gamma * n_delta as f64).exp();
        let bandlimit = a_delta.directions.bandlimit;
        if n_delta > bandlimit {
            log::warn!("inversion: N(delta) = {n_delta} exceeds the data bandlimit; truncating at {bandlimit}");
        }
        let expansion = AmplitudeSHExpansion::new(a_delta, n_delta.min(bandlimit))?;
        let basis = NuBasis::new(a_delta.k, Some(&expansion), config.base.annulus()?, config.base.l_nu)?;
        Ok(Self {
            config,
            delta,
            n_delta,
            mu,
            basis,
        })
    }

    /// Evaluates every rung of the ladder. Among the rungs meeting the
    /// constraint, the smallest one with `t >= t_max / 2` is used, together
    /// with the least regularized `nu` that still meets it.
    pub fn estimate(&self, xi: Vec3) -> Result<NoisyEstimate> {
        let k = self.basis.k;
        let mut ladder = self.config.t_ladder.clone();
        ladder.sort_by(f64::total_cmp);
        let n = num_modes(self.config.base.l_nu);
        let mut candidates = Vec::new();
        for f in ladder {
            let t = (f * k).max(min_feasible_t(xi, k));
            let theta = make_theta_pair(xi, t, k)?;
            let eta = (theta.kappa() * self.config.base.b).exp() * self.mu;
            let (m, rhs) = self.basis.weighted(&theta.theta, n);
            let tik = Tikhonov::new(m, &rhs);
            let lhs_at = |lambda: f64| {
                let (rho, nu) = tik.path(lambda);
                t * (rho + eta * nu)
            };
            let grid = tik.lambda_grid();
            // the grid decreases: the last feasible entry is the least regularized;
            // with none feasible, the smallest left side
            let lambda = grid
                .iter()
                .rev()
                .find(|l| lhs_at(**l) <= self.config.c)
                .or_else(|| grid.iter().min_by(|a, b| lhs_at(**a).total_cmp(&lhs_at(**b))))
                .copied()
                .unwrap_or(0.0);
            let nu = tik.solution(lambda);
            let (rho_norm, nu_norm) = tik.path(lambda);
            let lhs = lhs_at(lambda);
            candidates.push(Candidate {
                t,
                kappa: theta.kappa(),
                rho_norm,
                nu_norm,
                lhs,
                feasible: lhs <= self.config.c,
                q_hat: self.basis.estimate(&theta.theta_prime, &nu),
            });
        }
        let t_max = candidates.iter().filter(|c| c.feasible).map(|c| c.t).fold(f64::NAN, f64::max);
        let pick = candidates.iter().position(|c| c.feasible && c.t >= 0.5 * t_max);
        let chosen = candidates[pick.unwrap_or(0)];
        if pick.is_none() {
            log::warn!("inversion: stability constraint infeasible on the whole ladder; using t = {}", chosen.t);
        }
        Ok(NoisyEstimate {
            xi,
            q_hat: chosen.q_hat,
            n_delta: self.n_delta,
            mu: self.mu,
            t_used: chosen.t,
            rho_norm: chosen.rho_norm,
            degraded: pick.is_none(),
            candidates,
        })
    }
}

/// Noisy-data inversion at a single `xi`.
pub fn invert_noisy(a_delta: &AmplitudeMatrix, delta: f64, xi: Vec3, config: NoisyConfig) -> Result<NoisyEstimate> {
    NoisyInverter::new(a_delta, delta, config)?.estimate(xi)
}

/// Adds independent perturbations drawn uniformly from the complex disc of
/// radius `delta`, so `sup |A_delta - A| <= delta`. `negate` flips every draw
/// (the antithetic partner of the same seed).
pub fn add_noise(a: &AmplitudeMatrix, delta: f64, seed: u64, negate: bool) -> AmplitudeMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sign = if negate { -1.0 } else { 1.0 };
    let values = a
        .values
        .iter()
        .map(|v| {
            let r = delta * rng.random::<f64>().sqrt();
            let phi = rng.random_range(0.0..std::f64::consts::TAU);
            v + C64::from_polar(sign * r, phi)
        })
        .collect();
    AmplitudeMatrix {
        k: a.k,
        directions: a.directions.clone(),
        values,
    }
}

/// Samples `q^(xi)` with quadrature weights for the inverse transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XiSamples {
    pub xi: Vec<Vec3>,
    pub weights: Vec<f64>,
    pub q_hat: Vec<C64>,
}

/// Cartesian lattice `spacing * Z^3` restricted to `|xi| <= xi_max`, with the
/// cell volume as weight.
pub fn cartesian_xi_grid(spacing: f64, xi_max: f64) -> Result<(Vec<Vec3>, Vec<f64>)> {
    if !(spacing > 0.0 && xi_max >= 0.0) {
        return Err(Error::argument(MODULE, "xi grid needs spacing > 0 and xi_max >= 0"));
    }
    let n = (xi_max / spacing).floor() as i64;
    let mut pts = Vec::new();
    for i in -n..=n {
        for j in -n..=n {
            for l in -n..=n {
                let x = [i as f64 * spacing, j as f64 * spacing, l as f64 * spacing];
                if geom::norm(x) <= xi_max * (1.0 + 1e-12) {
                    pts.push(x);
                }
            }
        }
    }
    let w = vec![spacing.powi(3); pts.len()];
    Ok((pts, w))
}

impl XiSamples {
    /// `(2 pi)^-3 sum w q^(xi) e^{i xi.x}` at each point.
    pub fn inverse_transform(&self, points: &[Vec3]) -> Vec<C64> {
        let c = (2.0 * std::f64::consts::PI).powi(-3);
        points
            .par_iter()
            .map(|&x| {
                self.xi
                    .iter()
                    .zip(&self.weights)
                    .zip(&self.q_hat)
                    .map(|((xi, w), q)| q * C64::new(0.0, geom::dot(*xi, x)).exp() * *w)
                    .sum::<C64>()
                    * c
            })
            .collect()
    }
}

/// Inverse transform onto `grid`, then `N = (q - q0) / C`.
pub fn density_from_inversion(
    samples: &XiSamples,
    grid: &BallGrid,
    q0: &[C64],
    model: ParticleModel,
) -> Result<DensityField> {
    if q0.len() != grid.len() || samples.xi.len() != samples.q_hat.len() || samples.xi.len() != samples.weights.len() {
        return Err(Error::argument(MODULE, "sample and grid lengths do not match"));
    }
    let q = samples.inverse_transform(&grid.nodes);
    let pot = PotentialGrid {
        grid: grid.clone(),
        q,
        q0: q0.to_vec(),
    };
    density_from_q(&pot, model)
}
