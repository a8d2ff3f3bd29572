//! Recovery of the potential `q = h / (u0 - V h)` from a source function,
//! the perturbation fallback for vanishing denominators, and conversion
//! between potentials and particle densities.

use std::io::Write;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{self, Vec3};
use crate::sphgrid::BallGrid;
use crate::volume::GreenOperator;

pub type C64 = Complex64;

/// Default denominator floor relative to `sup |u0|`.
pub const TAU_REL: f64 = 1e-6;

/// Relative tolerance below which imaginary parts / negative values of a
/// density are treated as round-off.
pub const REALIZABILITY_TOL: f64 = 1e-8;

/// Complex potential `q` and background `q0` sampled on a ball grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialGrid {
    pub grid: BallGrid,
    pub q: Vec<C64>,
    pub q0: Vec<C64>,
}

impl PotentialGrid {
    pub fn zeros(grid: BallGrid) -> Self {
        let n = grid.len();
        Self {
            grid,
            q: vec![C64::new(0.0, 0.0); n],
            q0: vec![C64::new(0.0, 0.0); n],
        }
    }

    /// `q(x)` from a closure, zero background.
    pub fn from_fn<F: Fn(Vec3) -> C64>(grid: BallGrid, f: F) -> Self {
        let q = grid.nodes.iter().map(|&x| f(x)).collect();
        let n = grid.len();
        Self {
            grid,
            q,
            q0: vec![C64::new(0.0, 0.0); n],
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.grid.l2_norm(&self.q)
    }

    pub fn sup_norm(&self) -> f64 {
        self.q.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    /// CSV with columns `x,y,z,weight,q_re,q_im,q0_re,q0_im`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["x", "y", "z", "weight", "q_re", "q_im", "q0_re", "q0_im"])?;
        for i in 0..self.grid.len() {
            let x = self.grid.nodes[i];
            w.write_record(
                [x[0], x[1], x[2], self.grid.weights[i], self.q[i].re, self.q[i].im, self.q0[i].re, self.q0[i].im]
                    .map(|v| format!("{v:.17e}")),
            )?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Reads a node table written by one of the `write_csv` methods: the first
/// four columns must reproduce `grid` (`x,y,z,weight`), the rest are returned.
fn read_node_table(path: &Path, grid: &BallGrid, columns: usize) -> Result<Vec<Vec<f64>>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut rows = Vec::with_capacity(grid.len());
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() != 4 + columns {
            return Err(Error::Parse(format!("{path:?}: expected {} columns, found {}", 4 + columns, rec.len())));
        }
        let v: Vec<f64> = rec
            .iter()
            .map(|s| s.trim().parse::<f64>().map_err(|e| Error::Parse(format!("{path:?}: {e}"))))
            .collect::<Result<_>>()?;
        if i >= grid.len() || geom::distance([v[0], v[1], v[2]], grid.nodes[i]) > 1e-9 {
            return Err(Error::Parse(format!("{path:?}: row {i} is not a node of the configured ball grid")));
        }
        rows.push(v[4..].to_vec());
    }
    if rows.len() != grid.len() {
        return Err(Error::Parse(format!("{path:?}: {} rows for a grid of {} nodes", rows.len(), grid.len())));
    }
    Ok(rows)
}

impl PotentialGrid {
    /// Reads the layout of [`write_csv`](Self::write_csv) on a known grid.
    pub fn read_csv(path: &Path, grid: BallGrid) -> Result<Self> {
        let rows = read_node_table(path, &grid, 4)?;
        Ok(Self {
            q: rows.iter().map(|v| C64::new(v[0], v[1])).collect(),
            q0: rows.iter().map(|v| C64::new(v[2], v[3])).collect(),
            grid,
        })
    }
}

/// `e^{ik alpha.x}` at each point.
pub fn incident_wave(points: &[Vec3], alpha: Vec3, k: f64) -> Vec<C64> {
    points
        .iter()
        .map(|&x| C64::new(0.0, k * geom::dot(alpha, x)).exp())
        .collect()
}

/// `u = u0 - V h` on the grid.
pub fn scattering_solution_from_h(op: &GreenOperator, h: &[C64], u0: &[C64]) -> Vec<C64> {
    let vh = op.apply(h);
    u0.iter().zip(&vh).map(|(a, b)| a - b).collect()
}

/// Result of [`recover_q`].
#[derive(Debug, Clone)]
pub struct Recovery {
    pub q: Vec<C64>,
    /// Denominator field `u0 - V h`, which is also the scattering solution.
    pub u: Vec<C64>,
    pub min_denominator: f64,
    /// `sup_x |V h|`; the smallness condition holds when this is `< 1`.
    pub sup_vh: f64,
    pub small_regime: bool,
    pub tau: f64,
}

/// `tau = TAU_REL * sup|u0|`.
pub fn default_tau(u0: &[C64]) -> f64 {
    TAU_REL * u0.iter().map(|c| c.norm()).fold(0.0, f64::max)
}

/// `q = h / (u0 - V h)` at every node where the denominator is at least `tau`.
pub fn recover_q(op: &GreenOperator, h: &[C64], u0: &[C64], tau: Option<f64>) -> Result<Recovery> {
    if h.len() != op.len() || u0.len() != op.len() {
        return Err(Error::argument("potential", "h and u0 must live on the operator grid"));
    }
    let tau = tau.unwrap_or_else(|| default_tau(u0));
    let vh = op.apply(h);
    let u: Vec<C64> = u0.iter().zip(&vh).map(|(a, b)| a - b).collect();
    let sup_vh = vh.iter().map(|c| c.norm()).fold(0.0, f64::max);
    let min_denominator = u.iter().map(|c| c.norm()).fold(f64::INFINITY, f64::min);
    let count = u.iter().filter(|c| c.norm() < tau).count();
    if count > 0 {
        return Err(Error::SmallDenominator {
            tau,
            min_abs: min_denominator,
            count,
        });
    }
    let q = h.iter().zip(&u).map(|(a, b)| a / b).collect();
    Ok(Recovery {
        q,
        u,
        min_denominator,
        sup_vh,
        small_regime: sup_vh < 1.0,
        tau,
    })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PerturbConfig {
    pub max_retries: usize,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        Self { max_retries: 40 }
    }
}

#[derive(Debug, Clone)]
pub struct Perturbation {
    pub h: Vec<C64>,
    pub eta: f64,
    pub retries: usize,
    /// Discrete `L^2(D)` distance `|h - h_eps|`.
    pub distance: f64,
}

/// Finds `h_eps = (1 - eta) h` with every denominator `|u0 - V h_eps| >= tau`,
/// doubling `eta` from `tau`.
///
/// At a node where `V h = u0` the shrink lifts the denominator to
/// `eta u0(x)`, i.e. by `eta` per unit incident amplitude, at the cost
/// `|h - h_eps| = eta |h|`.
pub fn perturb_h(
    op: &GreenOperator,
    grid: &BallGrid,
    h: &[C64],
    u0: &[C64],
    tau: Option<f64>,
    config: PerturbConfig,
) -> Result<Perturbation> {
    let tau = tau.unwrap_or_else(|| default_tau(u0));
    let vh = op.apply(h);
    let admissible = |eta: f64| {
        u0.iter()
            .zip(&vh)
            .all(|(a, b)| (a - b * (1.0 - eta)).norm() >= tau)
    };
    if admissible(0.0) {
        return Ok(Perturbation {
            h: h.to_vec(),
            eta: 0.0,
            retries: 0,
            distance: 0.0,
        });
    }
    let hnorm = grid.l2_norm(h);
    let mut eta = tau;
    for retry in 1..=config.max_retries {
        if eta >= 1.0 {
            break;
        }
        if admissible(eta) {
            return Ok(Perturbation {
                h: h.iter().map(|v| v * (1.0 - eta)).collect(),
                eta,
                retries: retry,
                distance: eta * hnorm,
            });
        }
        eta *= 2.0;
    }
    Err(Error::PerturbationFailed {
        retries: config.max_retries,
        eta,
    })
}

/// Capacitance model of the embedded particles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParticleModel {
    /// Capacitance of the reference (soft) particle.
    pub c0: f64,
    /// Boundary impedance `zeta` and particle surface area `|S|`.
    pub impedance: Option<(C64, f64)>,
}

impl ParticleModel {
    pub fn soft(c0: f64) -> Self {
        Self { c0, impedance: None }
    }

    /// `C0` for soft particles, `C0 / (1 + C0 / (zeta |S|))` with impedance.
    pub fn effective_capacitance(&self) -> C64 {
        match self.impedance {
            None => C64::new(self.c0, 0.0),
            Some((zeta, area)) => self.c0 / (1.0 + self.c0 / (zeta * area)),
        }
    }
}

/// Number density of particles per unit volume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityField {
    pub grid: BallGrid,
    pub n: Vec<C64>,
    pub q0: Vec<C64>,
    pub model: ParticleModel,
    /// Per-node flag: negative or non-real density.
    pub unrealizable: Vec<bool>,
}

impl DensityField {
    /// Volume fraction (in percent) of flagged nodes.
    pub fn unrealizable_fraction(&self) -> f64 {
        let total: f64 = self.grid.weights.iter().sum();
        let bad: f64 = self
            .grid
            .weights
            .iter()
            .zip(&self.unrealizable)
            .filter(|(_, f)| **f)
            .map(|(w, _)| w)
            .sum();
        100.0 * bad / total
    }

    pub fn is_realizable(&self) -> bool {
        !self.unrealizable.iter().any(|f| *f)
    }

    /// Real density values; errors if any node is unrealizable.
    pub fn real_values(&self) -> Result<Vec<f64>> {
        if !self.is_realizable() {
            return Err(Error::Unrealizable {
                fraction: self.unrealizable_fraction(),
            });
        }
        Ok(self.n.iter().map(|c| c.re).collect())
    }

    /// `int N dx`.
    pub fn total_count(&self) -> C64 {
        self.grid.integrate(&self.n)
    }

    /// `q = q0 + N C_eff`.
    pub fn to_potential(&self) -> PotentialGrid {
        let c = self.model.effective_capacitance();
        PotentialGrid {
            grid: self.grid.clone(),
            q: self.q0.iter().zip(&self.n).map(|(a, n)| a + n * c).collect(),
            q0: self.q0.clone(),
        }
    }

    /// CSV with columns `x,y,z,weight,n_re,n_im,unrealizable`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "x,y,z,weight,n_re,n_im,unrealizable")?;
        for i in 0..self.grid.len() {
            let x = self.grid.nodes[i];
            writeln!(
                f,
                "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{}",
                x[0], x[1], x[2], self.grid.weights[i], self.n[i].re, self.n[i].im, self.unrealizable[i] as u8
            )?;
        }
        f.flush()?;
        Ok(())
    }
}

impl DensityField {
    /// Reads the layout of [`write_csv`](Self::write_csv) on a known grid;
    /// the background is zero.
    pub fn read_csv(path: &Path, grid: BallGrid, model: ParticleModel) -> Result<Self> {
        let rows = read_node_table(path, &grid, 3)?;
        let n = grid.len();
        Ok(Self {
            n: rows.iter().map(|v| C64::new(v[0], v[1])).collect(),
            q0: vec![C64::new(0.0, 0.0); n],
            unrealizable: rows.iter().map(|v| v[2] != 0.0).collect(),
            grid,
            model,
        })
    }
}

/// `N = (q - q0) / C_eff` with realizability flags and no error.
pub fn density_from_q_unchecked(q: &PotentialGrid, model: ParticleModel) -> Result<DensityField> {
    let c = model.effective_capacitance();
    if !(model.c0 > 0.0) || c.norm() == 0.0 {
        return Err(Error::argument(
            "potential",
            format!("effective capacitance must be nonzero with C0 > 0 (C0 = {})", model.c0),
        ));
    }
    let mut n: Vec<C64> = q.q.iter().zip(&q.q0).map(|(a, b)| (a - b) / c).collect();
    let scale = n.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let tol = REALIZABILITY_TOL * scale;
    let mut flags = Vec::with_capacity(n.len());
    for v in n.iter_mut() {
        if v.im.abs() <= tol {
            v.im = 0.0;
        }
        flags.push(v.im != 0.0 || v.re < -tol);
    }
    Ok(DensityField {
        grid: q.grid.clone(),
        n,
        q0: q.q0.clone(),
        model,
        unrealizable: flags,
    })
}

/// `N = (q - q0) / C_eff`; without impedance, negative or complex densities
/// are rejected.
pub fn density_from_q(q: &PotentialGrid, model: ParticleModel) -> Result<DensityField> {
    let d = density_from_q_unchecked(q, model)?;
    if model.impedance.is_none() && !d.is_realizable() {
        return Err(Error::Unrealizable {
            fraction: d.unrealizable_fraction(),
        });
    }
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn impedance_capacitance_formula() {
        let m = ParticleModel {
            c0: 0.1,
            impedance: Some((C64::new(0.0, 1.0), 0.5)),
        };
        // 0.1 / (1 + 0.1 / (0.5 i)) = 0.1 / (1 - 0.2 i)
        let expected = C64::new(0.1, 0.0) / C64::new(1.0, -0.2);
        assert!((m.effective_capacitance() - expected).norm() < 1e-16);
    }

    #[test]
    fn negative_density_rejected_without_impedance() {
        let grid = BallGrid::new(1.0, 2, 1).unwrap();
        let q = PotentialGrid::from_fn(grid, |x| C64::new(x[2], 0.0));
        assert!(matches!(
            density_from_q(&q, ParticleModel::soft(1.0)),
            Err(Error::Unrealizable { .. })
        ));
        let d = density_from_q_unchecked(&q, ParticleModel::soft(1.0)).unwrap();
        assert!((d.unrealizable_fraction() - 50.0).abs() < 1e-9);
    }
}
