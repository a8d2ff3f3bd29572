//! Lippmann-Schwinger forward solver `u + V(q u) = u0` and scattering
//! amplitudes `A(a', a) = -1/(4 pi) int e^{-ik a'.x} q u dx`.

use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{self, Vec3};
use crate::linalg::{dense_solve, gmres, norm2, norm_estimate};
use crate::potential::{incident_wave, PotentialGrid};
use crate::sphgrid::{BallGrid, DirectionGrid};
use crate::volume::{green, GreenOperator, DENSE_CAP};

pub type C64 = Complex64;

const FOUR_PI: f64 = 4.0 * std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Relative residual target for iterative paths.
    pub tol: f64,
    pub restart: usize,
    pub max_iter: usize,
    /// Fixed-point iteration is used when the estimated `|V q|` is below this.
    pub neumann_threshold: f64,
    /// Largest system solved by dense LU.
    pub dense_cap: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            restart: 30,
            max_iter: 600,
            neumann_threshold: 0.5,
            dense_cap: DENSE_CAP,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolvePath {
    Free,
    Neumann,
    Gmres,
    DenseLu,
}

#[derive(Debug, Clone)]
pub struct ScatteringSolution {
    pub u: Vec<C64>,
    pub u0: Vec<C64>,
    pub alpha: Vec3,
    pub k: f64,
    pub iterations: usize,
    pub residual: f64,
    pub path: SolvePath,
}

/// A solver prepared for one potential; reusable across incident directions.
pub struct LsSolver {
    pub k: f64,
    pub grid: BallGrid,
    pub q: Vec<C64>,
    pub op: GreenOperator,
    pub config: SolverConfig,
    /// Power-iteration estimate of `|V q|`.
    pub operator_norm: f64,
}

impl LsSolver {
    pub fn new(potential: &PotentialGrid, k: f64, config: SolverConfig) -> Result<Self> {
        let op = GreenOperator::new(&potential.grid, k);
        Self::with_operator(potential, op, config)
    }

    /// Reuses an already assembled operator for the potential's grid.
    pub fn with_operator(potential: &PotentialGrid, op: GreenOperator, config: SolverConfig) -> Result<Self> {
        let k = op.k;
        if !(k > 0.0) {
            return Err(Error::argument("ls_forward", format!("k must be > 0, got {k}")));
        }
        if op.len() != potential.grid.len() {
            return Err(Error::argument("ls_forward", "operator and potential grids differ"));
        }
        if potential.q.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::argument("ls_forward", "potential has non-finite values"));
        }
        let q = potential.q.clone();
        let operator_norm = if q.iter().all(|c| *c == C64::new(0.0, 0.0)) {
            0.0
        } else {
            norm_estimate(
                |v| {
                    let qv: Vec<C64> = v.iter().zip(&q).map(|(a, b)| a * b).collect();
                    op.apply(&qv)
                },
                op.len(),
                30,
            )
        };
        Ok(Self {
            k,
            grid: potential.grid.clone(),
            q,
            op,
            config,
            operator_norm,
        })
    }

    fn apply_system(&self, u: &[C64]) -> Vec<C64> {
        let qu: Vec<C64> = u.iter().zip(&self.q).map(|(a, b)| a * b).collect();
        let v = self.op.apply(&qu);
        u.iter().zip(&v).map(|(a, b)| a + b).collect()
    }

    /// Relative residual `|u + V(q u) - u0| / |u0|`.
    pub fn residual(&self, u: &[C64], u0: &[C64]) -> f64 {
        let au = self.apply_system(u);
        let r: Vec<C64> = au.iter().zip(u0).map(|(a, b)| a - b).collect();
        norm2(&r) / norm2(u0).max(f64::MIN_POSITIVE)
    }

    /// One Born step `u0 - V(q u0)`.
    pub fn born(&self, u0: &[C64]) -> Vec<C64> {
        let qu: Vec<C64> = u0.iter().zip(&self.q).map(|(a, b)| a * b).collect();
        let v = self.op.apply(&qu);
        u0.iter().zip(&v).map(|(a, b)| a - b).collect()
    }

    fn dense_system(&self) -> Result<Vec<C64>> {
        let n = self.op.len();
        if n > self.config.dense_cap {
            return Err(Error::Resource {
                module: "ls_forward",
                size: n,
                cap: self.config.dense_cap,
            });
        }
        let mut a: Vec<C64> = match self.op.dense() {
            Some(m) => m.to_vec(),
            None => {
                let mut m = vec![C64::new(0.0, 0.0); n * n];
                for j in 0..n {
                    let mut e = vec![C64::new(0.0, 0.0); n];
                    e[j] = C64::new(1.0, 0.0);
                    let col = self.op.apply(&e);
                    for i in 0..n {
                        m[i * n + j] = col[i];
                    }
                }
                m
            }
        };
        a.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
            for (j, v) in row.iter_mut().enumerate() {
                *v *= self.q[j];
                if i == j {
                    *v += 1.0;
                }
            }
        });
        Ok(a)
    }

    /// Solves with an arbitrary right-hand side.
    pub fn solve_rhs(&self, u0: &[C64]) -> Result<(Vec<C64>, usize, f64, SolvePath)> {
        if self.operator_norm == 0.0 {
            return Ok((u0.to_vec(), 0, 0.0, SolvePath::Free));
        }
        let tol = self.config.tol;
        let u0n = norm2(u0).max(f64::MIN_POSITIVE);
        if self.operator_norm < self.config.neumann_threshold {
            let mut u = u0.to_vec();
            for it in 1..=self.config.max_iter {
                let qu: Vec<C64> = u.iter().zip(&self.q).map(|(a, b)| a * b).collect();
                let vqu = self.op.apply(&qu);
                let next: Vec<C64> = u0.iter().zip(&vqu).map(|(a, b)| a - b).collect();
                let diff: Vec<C64> = next.iter().zip(&u).map(|(a, b)| a - b).collect();
                u = next;
                // the step size bounds the residual of the previous iterate
                if norm2(&diff) <= tol * u0n * 0.1 {
                    let res = self.residual(&u, u0);
                    if res <= tol {
                        return Ok((u, it, res, SolvePath::Neumann));
                    }
                }
            }
            log::warn!("ls_forward: fixed-point iteration stalled, switching to GMRES");
        }
        let sol = gmres(|v| self.apply_system(v), u0, tol, self.config.restart, self.config.max_iter);
        if sol.converged {
            return Ok((sol.x, sol.iterations, sol.residual, SolvePath::Gmres));
        }
        log::warn!(
            "ls_forward: GMRES stopped at residual {:.3e}; falling back to dense LU",
            sol.residual
        );
        let a = self.dense_system()?;
        let u = dense_solve("ls_forward", &a, self.op.len(), u0)?;
        let res = self.residual(&u, u0);
        Ok((u, 0, res, SolvePath::DenseLu))
    }

    /// Dense LU solve regardless of the operator norm (reference path).
    pub fn solve_direct(&self, alpha: Vec3) -> Result<ScatteringSolution> {
        let u0 = incident_wave(&self.grid.nodes, alpha, self.k);
        let a = self.dense_system()?;
        let u = dense_solve("ls_forward", &a, self.op.len(), &u0)?;
        let residual = self.residual(&u, &u0);
        Ok(ScatteringSolution {
            u,
            u0,
            alpha,
            k: self.k,
            iterations: 0,
            residual,
            path: SolvePath::DenseLu,
        })
    }

    pub fn solve(&self, alpha: Vec3) -> Result<ScatteringSolution> {
        check_unit(alpha)?;
        let u0 = incident_wave(&self.grid.nodes, alpha, self.k);
        let (u, iterations, residual, path) = self.solve_rhs(&u0)?;
        Ok(ScatteringSolution {
            u,
            u0,
            alpha,
            k: self.k,
            iterations,
            residual,
            path,
        })
    }

    /// `-1/(4 pi) sum_i w_i e^{-ik b.x_i} q_i u_i` for each direction `b`.
    pub fn amplitude(&self, sol: &ScatteringSolution, directions: &[Vec3]) -> Vec<C64> {
        source_amplitude(&self.grid, &self.qu(sol), self.k, directions)
    }

    /// The source `q u`.
    pub fn qu(&self, sol: &ScatteringSolution) -> Vec<C64> {
        sol.u.iter().zip(&self.q).map(|(a, b)| a * b).collect()
    }

    /// Total field at an arbitrary point outside the grid nodes.
    pub fn field_at(&self, sol: &ScatteringSolution, x: Vec3) -> C64 {
        let qu = self.qu(sol);
        let u0 = C64::new(0.0, self.k * geom::dot(sol.alpha, x)).exp();
        u0 - self.op.potential_at(x, &qu)
    }

    /// `r e^{-ikr} (u - u0)(r beta)`, which tends to `A(beta, alpha)`.
    pub fn far_field_sample(&self, sol: &ScatteringSolution, beta: Vec3, r: f64) -> C64 {
        let qu = self.qu(sol);
        let x = geom::scale(beta, r);
        let scattered: C64 = -self.op.potential_at(x, &qu);
        scattered * r * C64::new(0.0, -self.k * r).exp()
    }

    /// Far-field extraction at radii `r0 * 2^j`, Richardson-extrapolated in `1/r`.
    pub fn far_field_extrapolated(&self, sol: &ScatteringSolution, beta: Vec3, r0: f64, levels: usize) -> C64 {
        let levels = levels.max(1);
        // table[j] estimates at h = 1/(r0 2^j); eliminate h, h^2, ...
        let mut table: Vec<C64> = (0..levels)
            .map(|j| self.far_field_sample(sol, beta, r0 * 2f64.powi(j as i32)))
            .collect();
        for order in 1..levels {
            let f = 2f64.powi(order as i32);
            for j in (order..levels).rev() {
                table[j] = (table[j] * f - table[j - 1]) / (f - 1.0);
            }
        }
        table[levels - 1]
    }
}

fn check_unit(alpha: Vec3) -> Result<()> {
    if (geom::norm(alpha) - 1.0).abs() > 1e-12 {
        return Err(Error::argument("ls_forward", "incident direction must be a unit vector"));
    }
    Ok(())
}

/// `-1/(4 pi) int e^{-ik b.x} s(x) dx` by grid quadrature.
pub fn source_amplitude(grid: &BallGrid, source: &[C64], k: f64, directions: &[Vec3]) -> Vec<C64> {
    let ws: Vec<C64> = source.iter().zip(&grid.weights).map(|(s, w)| s * w).collect();
    directions
        .par_iter()
        .map(|&b| {
            let acc: C64 = grid
                .nodes
                .iter()
                .zip(&ws)
                .map(|(x, v)| C64::new(0.0, -k * geom::dot(b, *x)).exp() * v)
                .sum();
            -acc / FOUR_PI
        })
        .collect()
}

/// Convenience wrapper: build the solver and solve one incident direction.
pub fn solve(potential: &PotentialGrid, alpha: Vec3, k: f64, tol: f64) -> Result<ScatteringSolution> {
    let config = SolverConfig { tol, ..SolverConfig::default() };
    LsSolver::new(potential, k, config)?.solve(alpha)
}

/// `A(a'_i, a_j)` over a direction grid (outgoing index first).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmplitudeMatrix {
    pub k: f64,
    pub directions: DirectionGrid,
    /// Row-major: `values[i * n + j] = A(directions[i], directions[j])`.
    pub values: Vec<C64>,
}

impl AmplitudeMatrix {
    pub fn n(&self) -> usize {
        self.directions.len()
    }

    pub fn get(&self, out: usize, inc: usize) -> C64 {
        self.values[out * self.n() + inc]
    }

    /// Column `A(., a_j)`.
    pub fn column(&self, inc: usize) -> Vec<C64> {
        (0..self.n()).map(|i| self.get(i, inc)).collect()
    }

    /// `sqrt(sum_ij w_i w_j |A_ij|^2)`.
    pub fn l2_norm(&self) -> f64 {
        let n = self.n();
        let w = &self.directions.weights;
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                s += w[i] * w[j] * self.values[i * n + j].norm_sqr();
            }
        }
        s.sqrt()
    }

    /// Max over pairs of `|A(a', a) - A(-a, -a')|`.
    pub fn reciprocity_defect(&self) -> f64 {
        let n = self.n();
        let mut worst = 0.0_f64;
        for i in 0..n {
            for j in 0..n {
                let ai = self.directions.antipode(i);
                let aj = self.directions.antipode(j);
                worst = worst.max((self.get(i, j) - self.get(aj, ai)).norm());
            }
        }
        worst
    }

    /// CSV rows `out_x,out_y,out_z,in_x,in_y,in_z,re,im`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["out_x", "out_y", "out_z", "in_x", "in_y", "in_z", "re", "im"])?;
        let n = self.n();
        for i in 0..n {
            for j in 0..n {
                let (a, b) = (self.directions.nodes[i], self.directions.nodes[j]);
                let v = self.values[i * n + j];
                w.write_record([a[0], a[1], a[2], b[0], b[1], b[2], v.re, v.im].map(|x| format!("{x:.17e}")))?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the CSV layout of [`write_csv`](Self::write_csv); the direction
    /// grid is inferred from the row count and checked node by node.
    pub fn read_csv(path: &Path, k: f64) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let mut rows: Vec<[f64; 8]> = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            if rec.len() != 8 {
                return Err(Error::Parse(format!("expected 8 columns, found {}", rec.len())));
            }
            let mut row = [0.0; 8];
            for (v, s) in row.iter_mut().zip(rec.iter()) {
                *v = s
                    .trim()
                    .parse()
                    .map_err(|e| Error::Parse(format!("bad number {s:?}: {e}")))?;
            }
            rows.push(row);
        }
        let n = (rows.len() as f64).sqrt().round() as usize;
        if n * n != rows.len() {
            return Err(Error::Parse(format!("{} rows is not a square direction table", rows.len())));
        }
        let l = ((n as f64 / 2.0).sqrt().round() as usize).saturating_sub(1);
        let directions = DirectionGrid::new(l);
        if directions.len() != n {
            return Err(Error::Parse(format!("{n} directions do not form a product grid")));
        }
        let mut values = vec![C64::new(0.0, 0.0); n * n];
        for (idx, row) in rows.iter().enumerate() {
            let (i, j) = (idx / n, idx % n);
            let out = [row[0], row[1], row[2]];
            let inc = [row[3], row[4], row[5]];
            if geom::distance(out, directions.nodes[i]) > 1e-9 || geom::distance(inc, directions.nodes[j]) > 1e-9 {
                return Err(Error::Parse(format!("row {idx}: directions do not match the product grid of bandlimit {l}")));
            }
            values[idx] = C64::new(row[6], row[7]);
        }
        Ok(Self { k, directions, values })
    }
}

/// Solves every incident direction of `grid` and assembles `A`.
pub fn amplitude_matrix(potential: &PotentialGrid, k: f64, grid: &DirectionGrid, config: SolverConfig) -> Result<AmplitudeMatrix> {
    let solver = LsSolver::new(potential, k, config)?;
    amplitude_matrix_with(&solver, grid)
}

pub fn amplitude_matrix_with(solver: &LsSolver, grid: &DirectionGrid) -> Result<AmplitudeMatrix> {
    let n = grid.len();
    let nodes = &solver.grid.nodes;
    let (k, np) = (solver.k, nodes.len());
    // e^{-ik a.x} for every direction; its conjugate is the incident wave
    let table: Vec<C64> = grid
        .nodes
        .par_iter()
        .flat_map_iter(|&a| nodes.iter().map(move |x| C64::new(0.0, -k * geom::dot(a, *x)).exp()))
        .collect();
    let sources: Vec<Vec<C64>> = (0..n)
        .into_par_iter()
        .map(|j| {
            let u0: Vec<C64> = table[j * np..(j + 1) * np].iter().map(|e| e.conj()).collect();
            let (u, ..) = solver.solve_rhs(&u0)?;
            Ok(u.iter()
                .zip(&solver.q)
                .zip(&solver.grid.weights)
                .map(|((u, q), w)| u * q * (*w / -FOUR_PI))
                .collect())
        })
        .collect::<Result<_>>()?;
    let e = DMatrix::from_row_slice(n, np, &table);
    let s = DMatrix::from_fn(np, n, |p, j| sources[j][p]);
    let a = e * s;
    let values = (0..n * n).map(|idx| a[(idx / n, idx % n)]).collect();
    Ok(AmplitudeMatrix {
        k,
        directions: grid.clone(),
        values,
    })
}

/// Direct evaluation `u0(x) - sum_j w_j g(x, x_j) s_j` of a field radiated by a
/// gridded source.
pub fn radiated_field(grid: &BallGrid, source: &[C64], k: f64, x: Vec3) -> C64 {
    grid.nodes
        .iter()
        .zip(&grid.weights)
        .zip(source)
        .map(|((y, w), s)| -w * green(k, geom::distance(x, *y)) * s)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_potential_is_free_propagation() {
        let grid = BallGrid::new(1.0, 3, 2).unwrap();
        let p = PotentialGrid::zeros(grid);
        let sol = solve(&p, [0.0, 0.0, 1.0], 1.0, 1e-10).unwrap();
        assert_eq!(sol.path, SolvePath::Free);
        assert_eq!(sol.u, sol.u0);
    }

    #[test]
    fn non_unit_direction_rejected() {
        let grid = BallGrid::new(1.0, 2, 1).unwrap();
        let p = PotentialGrid::zeros(grid);
        assert!(solve(&p, [0.0, 0.0, 2.0], 1.0, 1e-10).is_err());
    }
}
