//! Point-particle multiple scattering: sampling particle clouds from a
//! density, the charge system
//!
//! ```text
//! Q_m + C_m sum_{j != m} g(x_m, x_j) Q_j = -C_m u0(x_m)
//! ```
//!
//! the radiated field `u = u0 + sum_m g(x, x_m) Q_m`, its far-field pattern
//! `A(a') = 1/(4 pi) sum_m e^{-ik a'.x_m} Q_m`, and the comparison against
//! the effective medium `q = N C0`. The background is free space.

use std::io::Write;
use std::path::Path;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{self, Vec3};
use crate::linalg::{dense_solve, gmres, lu_pivot_ratio, norm2};
use crate::ls_forward::{LsSolver, SolverConfig};
use crate::potential::DensityField;
use crate::sphgrid::{BallGrid, DirectionGrid};
use crate::volume::green;

pub type C64 = Complex64;

const FOUR_PI: f64 = 4.0 * std::f64::consts::PI;

/// Largest cloud solved by dense LU.
pub const DENSE_CAP: usize = 4000;

/// Particle positions and capacitances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleCloud {
    pub positions: Vec<Vec3>,
    pub capacitances: Vec<f64>,
    /// Nominal particle radius (half the maximal diameter), metadata only.
    pub a: f64,
    /// Minimum pairwise distance.
    pub d: f64,
}

impl ParticleCloud {
    pub fn new(positions: Vec<Vec3>, capacitances: Vec<f64>, a: f64) -> Result<Self> {
        if positions.len() != capacitances.len() {
            return Err(Error::argument("manybody", "positions and capacitances differ in length"));
        }
        if capacitances.iter().any(|c| !(*c > 0.0)) {
            return Err(Error::argument("manybody", "capacitances must be positive"));
        }
        let d = min_distance(&positions);
        if positions.len() > 1 && d == 0.0 {
            return Err(Error::argument("manybody", "coincident particles"));
        }
        Ok(Self {
            positions,
            capacitances,
            a,
            d,
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn total_capacitance(&self) -> f64 {
        self.capacitances.iter().sum()
    }

    /// `(k a, a / d)`; both should be small for the point model to hold.
    pub fn diagnostics(&self, k: f64) -> (f64, f64) {
        let ratio = if self.d.is_finite() && self.d > 0.0 { self.a / self.d } else { 0.0 };
        (k * self.a, ratio)
    }

    /// Logs the validity diagnostics as warnings when they are not small.
    pub fn warn_if_outside_validity(&self, k: f64) {
        let (ka, ad) = self.diagnostics(k);
        if ka > 0.1 {
            log::warn!("manybody: k a = {ka:.3} is not small");
        }
        if ad > 0.1 {
            log::warn!("manybody: a / d = {ad:.3} is not small");
        }
    }

    /// CSV with columns `x,y,z,C`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "x,y,z,C")?;
        for (p, c) in self.positions.iter().zip(&self.capacitances) {
            writeln!(f, "{:.17e},{:.17e},{:.17e},{:.17e}", p[0], p[1], p[2], c)?;
        }
        f.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path, a: f64) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let mut positions = Vec::new();
        let mut caps = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let v: Vec<f64> = rec
                .iter()
                .map(|s| s.trim().parse::<f64>().map_err(|e| Error::Parse(format!("{path:?}: {e}"))))
                .collect::<Result<_>>()?;
            if v.len() != 4 {
                return Err(Error::Parse(format!("{path:?}: expected columns x,y,z,C")));
            }
            positions.push([v[0], v[1], v[2]]);
            caps.push(v[3]);
        }
        Self::new(positions, caps, a)
    }
}

fn min_distance(points: &[Vec3]) -> f64 {
    (0..points.len())
        .into_par_iter()
        .map(|i| {
            let mut best = f64::INFINITY;
            for j in i + 1..points.len() {
                best = best.min(geom::distance(points[i], points[j]));
            }
            best
        })
        .reduce(|| f64::INFINITY, f64::min)
}

/// Cell boundaries of a ball grid: radial edges (equal `r^2 dr` mass to the
/// radial weights), polar edges in `cos(theta)` and the azimuth step.
struct Cells {
    radial_edges: Vec<f64>,
    polar_edges: Vec<f64>,
    dphi: f64,
}

impl Cells {
    fn new(grid: &BallGrid) -> Self {
        let mut radial_edges = vec![0.0];
        let mut cube = 0.0;
        for &(r, w) in &grid.radial {
            cube += 3.0 * w * r * r;
            radial_edges.push(cube.cbrt());
        }
        let mut polar_edges = vec![-1.0];
        let mut z = -1.0;
        let dirs = &grid.directions;
        for p in 0..dirs.n_polar {
            let w = dirs.weights[p * dirs.n_azimuth] / (std::f64::consts::TAU / dirs.n_azimuth as f64);
            z += w;
            polar_edges.push(z.min(1.0));
        }
        Self {
            radial_edges,
            polar_edges,
            dphi: std::f64::consts::TAU / dirs.n_azimuth as f64,
        }
    }

    fn sample(&self, grid: &BallGrid, node: usize, rng: &mut ChaCha8Rng) -> Vec3 {
        let n_dir = grid.directions.len();
        let (ir, id) = (node / n_dir, node % n_dir);
        let n_az = grid.directions.n_azimuth;
        let (ip, ia) = (id / n_az, id % n_az);
        let (r0, r1) = (self.radial_edges[ir], self.radial_edges[ir + 1]);
        let u: f64 = rng.random();
        let r = (r0.powi(3) + u * (r1.powi(3) - r0.powi(3))).cbrt();
        let z = rng.random_range(self.polar_edges[ip]..self.polar_edges[ip + 1]);
        let phi = self.dphi * (ia as f64 + rng.random_range(-0.5..0.5));
        geom::scale(geom::from_spherical(z, phi), r)
    }
}

/// Draws `m` particles i.i.d. with probability density `N C0 / int N C0`;
/// each carries capacitance `int N C0 dx / m`.
pub fn sample_cloud(density: &DensityField, m: usize, particle_radius: f64, seed: u64) -> Result<ParticleCloud> {
    let n = density.real_values()?;
    if n.iter().any(|v| *v < 0.0) {
        return Err(Error::argument("manybody", "density must be non-negative"));
    }
    let c0 = density.model.c0;
    let grid = &density.grid;
    let masses: Vec<f64> = n.iter().zip(&grid.weights).map(|(v, w)| v * w).collect();
    let total: f64 = masses.iter().sum();
    if m == 0 {
        return Ok(ParticleCloud {
            positions: Vec::new(),
            capacitances: Vec::new(),
            a: particle_radius,
            d: f64::INFINITY,
        });
    }
    if !(total * c0 > 0.0) {
        return Err(Error::argument("manybody", "total capacitance int N C0 dx must be positive"));
    }
    let mut cumulative = Vec::with_capacity(masses.len());
    let mut acc = 0.0;
    for v in &masses {
        acc += v;
        cumulative.push(acc);
    }
    let cells = Cells::new(grid);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut positions: Vec<Vec3> = Vec::with_capacity(m);
    while positions.len() < m {
        let t = rng.random::<f64>() * total;
        let node = cumulative.partition_point(|c| *c <= t).min(masses.len() - 1);
        if masses[node] == 0.0 {
            continue;
        }
        let x = cells.sample(grid, node, &mut rng);
        // only exact coincidences are rejected
        if positions.iter().rev().take(64).any(|p| *p == x) {
            continue;
        }
        positions.push(x);
    }
    let c = total * c0 / m as f64;
    ParticleCloud::new(positions, vec![c; m], particle_radius)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChargePath {
    Dense,
    Iterative,
}

#[derive(Debug, Clone)]
pub struct ChargeVector {
    pub q: Vec<C64>,
    /// `|Q + C(u0 + G_offdiag Q)| / |Q|`.
    pub residual: f64,
    pub path: ChargePath,
}

/// `sum_{j != m} g(x_m, x_j) q_j` for every `m`. Each pair is evaluated once;
/// partial sums are formed per fixed row block and added in block order, so
/// the result does not depend on the thread count.
fn interaction(cloud: &ParticleCloud, k: f64, q: &[C64]) -> Vec<C64> {
    const BLOCK: usize = 256;
    let pos = &cloud.positions;
    let n = pos.len();
    let blocks: Vec<Vec<C64>> = (0..n.div_ceil(BLOCK))
        .into_par_iter()
        .map(|b| {
            let mut acc = vec![C64::new(0.0, 0.0); n];
            for m in b * BLOCK..((b + 1) * BLOCK).min(n) {
                let (xm, qm) = (pos[m], q[m]);
                let mut own = C64::new(0.0, 0.0);
                for j in m + 1..n {
                    let g = green(k, geom::distance(xm, pos[j]));
                    own += g * q[j];
                    acc[j] += g * qm;
                }
                acc[m] += own;
            }
            acc
        })
        .collect();
    let mut out = vec![C64::new(0.0, 0.0); n];
    for block in blocks {
        out.iter_mut().zip(block).for_each(|(o, v)| *o += v);
    }
    out
}

fn incident(cloud: &ParticleCloud, alpha: Vec3, k: f64) -> Vec<C64> {
    cloud
        .positions
        .iter()
        .map(|&x| C64::new(0.0, k * geom::dot(alpha, x)).exp())
        .collect()
}

/// Relative residual of the charge system.
pub fn charge_residual(cloud: &ParticleCloud, alpha: Vec3, k: f64, q: &[C64]) -> f64 {
    let u0 = incident(cloud, alpha, k);
    let gq = interaction(cloud, k, q);
    let r: Vec<C64> = (0..q.len())
        .map(|m| q[m] + cloud.capacitances[m] * (u0[m] + gq[m]))
        .collect();
    norm2(&r) / norm2(q).max(f64::MIN_POSITIVE)
}

/// Solves the charge system by dense LU (`M <= DENSE_CAP`) or GMRES.
pub fn solve_charges(cloud: &ParticleCloud, alpha: Vec3, k: f64) -> Result<ChargeVector> {
    let path = if cloud.len() <= DENSE_CAP { ChargePath::Dense } else { ChargePath::Iterative };
    solve_charges_with(cloud, alpha, k, path)
}

pub fn solve_charges_with(cloud: &ParticleCloud, alpha: Vec3, k: f64, path: ChargePath) -> Result<ChargeVector> {
    let m = cloud.len();
    if m == 0 {
        return Ok(ChargeVector {
            q: Vec::new(),
            residual: 0.0,
            path,
        });
    }
    let u0 = incident(cloud, alpha, k);
    let rhs: Vec<C64> = u0.iter().zip(&cloud.capacitances).map(|(u, c)| -u * c).collect();
    let q = match path {
        ChargePath::Dense => {
            let pos = &cloud.positions;
            let mut a = vec![C64::new(0.0, 0.0); m * m];
            a.par_chunks_mut(m).enumerate().for_each(|(i, row)| {
                for (j, v) in row.iter_mut().enumerate() {
                    *v = if i == j {
                        C64::new(1.0, 0.0)
                    } else {
                        cloud.capacitances[i] * green(k, geom::distance(pos[i], pos[j]))
                    };
                }
            });
            match dense_solve("manybody", &a, m, &rhs) {
                Ok(q) => q,
                Err(_) => {
                    let ratio = lu_pivot_ratio(&a, m);
                    return Err(Error::Singular {
                        module: "manybody",
                        message: format!("charge system is singular (LU pivot ratio {ratio:.3e})"),
                    });
                }
            }
        }
        ChargePath::Iterative => {
            let apply = |v: &[C64]| -> Vec<C64> {
                let gv = interaction(cloud, k, v);
                v.iter()
                    .zip(&gv)
                    .zip(&cloud.capacitances)
                    .map(|((a, g), c)| a + c * g)
                    .collect()
            };
            let sol = gmres(apply, &rhs, 1e-12, 40, 2000);
            if !sol.converged {
                return Err(Error::Convergence {
                    module: "manybody",
                    iterations: sol.iterations,
                    residual: sol.residual,
                });
            }
            sol.x
        }
    };
    let residual = charge_residual(cloud, alpha, k, &q);
    Ok(ChargeVector { q, residual, path })
}

/// `A(a') = 1/(4 pi) sum_m e^{-ik a'.x_m} Q_m`.
pub fn cloud_pattern(cloud: &ParticleCloud, charges: &ChargeVector, k: f64, directions: &[Vec3]) -> Vec<C64> {
    directions
        .par_iter()
        .map(|&b| {
            let s: C64 = cloud
                .positions
                .iter()
                .zip(&charges.q)
                .map(|(x, q)| C64::new(0.0, -k * geom::dot(b, *x)).exp() * q)
                .sum();
            s / FOUR_PI
        })
        .collect()
}

/// `u(x) = u0(x) + sum_m g(x, x_m) Q_m`; warns inside the exclusion zone.
pub fn cloud_field(cloud: &ParticleCloud, charges: &ChargeVector, alpha: Vec3, k: f64, x: Vec3) -> C64 {
    let mut near = f64::INFINITY;
    let mut s = C64::new(0.0, k * geom::dot(alpha, x)).exp();
    for (p, q) in cloud.positions.iter().zip(&charges.q) {
        let r = geom::distance(x, *p);
        near = near.min(r);
        s += green(k, r) * q;
    }
    if cloud.len() > 1 && near < cloud.d {
        log::warn!("manybody: field evaluated at distance {near:.3e} < d = {:.3e} from a particle", cloud.d);
    }
    s
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MediumComparison {
    pub m: usize,
    /// Per-seed `L^2(S^2)` distance between cloud and medium patterns.
    pub errors: Vec<f64>,
    pub mean_error: f64,
    /// Mean max charge-system residual over seeds.
    pub max_residual: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EffectiveMediumReport {
    pub k: f64,
    pub alpha: Vec3,
    pub medium_pattern_norm: f64,
    pub rows: Vec<MediumComparison>,
}

/// Compares cloud patterns for each `M` (seed-averaged) against the
/// Lippmann-Schwinger pattern of `q = N C0`.
pub fn effective_medium_check(
    density: &DensityField,
    m_list: &[usize],
    seeds: &[u64],
    alpha: Vec3,
    k: f64,
    directions: &DirectionGrid,
    particle_radius: f64,
) -> Result<EffectiveMediumReport> {
    let medium = density.to_potential();
    let solver = LsSolver::new(&medium, k, SolverConfig::default())?;
    let sol = solver.solve(alpha)?;
    let reference = solver.amplitude(&sol, &directions.nodes);
    let mut rows = Vec::new();
    for &m in m_list {
        let mut errors = Vec::new();
        let mut worst = 0.0_f64;
        for &seed in seeds {
            let cloud = sample_cloud(density, m, particle_radius, seed)?;
            let charges = solve_charges(&cloud, alpha, k)?;
            worst = worst.max(charges.residual);
            let pattern = cloud_pattern(&cloud, &charges, k, &directions.nodes);
            let diff: Vec<C64> = pattern.iter().zip(&reference).map(|(a, b)| a - b).collect();
            errors.push(directions.l2_norm(&diff));
        }
        let mean_error = errors.iter().sum::<f64>() / errors.len().max(1) as f64;
        log::info!("manybody: M = {m}: mean pattern error {mean_error:.4e}");
        rows.push(MediumComparison {
            m,
            errors,
            mean_error,
            max_residual: worst,
        });
    }
    Ok(EffectiveMediumReport {
        k,
        alpha,
        medium_pattern_norm: directions.l2_norm(&reference),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_particle_at_origin() {
        let cloud = ParticleCloud::new(vec![[0.0; 3]], vec![0.25], 0.01).unwrap();
        let q = solve_charges(&cloud, [0.0, 0.0, 1.0], 1.0).unwrap();
        assert_eq!(q.q[0], C64::new(-0.25, 0.0));
    }

    #[test]
    fn coincident_particles_rejected() {
        assert!(ParticleCloud::new(vec![[0.1; 3], [0.1; 3]], vec![1.0, 1.0], 0.01).is_err());
    }
}
