//! Capacitance of a perfect conductor from a surface mesh.
//!
//! With `psi(t, s) = d/dN_t 1/|t - s|` and the iterated charge densities
//! `sigma_0 = 1`, `sigma_n = -(1/2pi) Psi sigma_{n-1}`, the approximations
//!
//! ```text
//! C^(n) = 4 pi |S|^2 / J_n,    J_n = int_S int_S sigma_n(t) / |s - t| ds dt
//! ```
//!
//! converge geometrically to `C0`, and `C^(0) <= C0`. Units have
//! `epsilon0 = 1`, so a sphere of radius `a` has `C0 = 4 pi a`.

pub mod mesh;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{self, Vec3};

pub use mesh::SurfaceMesh;

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;
const FOUR_PI: f64 = 4.0 * std::f64::consts::PI;

/// Default highest order.
pub const N_MAX: usize = 4;

/// Seven-point degree-5 rule on the reference triangle: barycentric
/// coordinates and weights summing to one.
const DUNAVANT7: [([f64; 3], f64); 7] = [
    ([1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0], 0.225),
    ([0.059715871789770, 0.470142064105115, 0.470142064105115], 0.132394152788506),
    ([0.470142064105115, 0.059715871789770, 0.470142064105115], 0.132394152788506),
    ([0.470142064105115, 0.470142064105115, 0.059715871789770], 0.132394152788506),
    ([0.797426985353087, 0.101286507323456, 0.101286507323456], 0.125939180544827),
    ([0.101286507323456, 0.797426985353087, 0.101286507323456], 0.125939180544827),
    ([0.101286507323456, 0.101286507323456, 0.797426985353087], 0.125939180544827),
];

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CapacitanceOptions {
    /// Pairs closer than this many panel diameters use refined quadrature.
    pub near_factor: f64,
    /// Subdivision depth (`4^depth` pieces) of near source panels in `psi`.
    pub near_depth: usize,
}

impl Default for CapacitanceOptions {
    fn default() -> Self {
        Self {
            near_factor: 3.0,
            near_depth: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacitanceResult {
    /// `C^(0), ..., C^(n)`, already multiplied by `epsilon0`.
    pub c_list: Vec<f64>,
    /// `J = int int ds dt / r`.
    pub j: f64,
    pub area: f64,
    pub epsilon0: f64,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub panels: usize,
    /// `J_n` per order.
    pub j_n: Vec<f64>,
    /// Total charge `int sigma_n` per order; `|S|` in the continuum.
    pub charge: Vec<f64>,
    /// Successive differences `|C^(n+1) - C^(n)| / |C^(n) - C^(n-1)|`, an
    /// empirical estimate of the contraction ratio.
    pub ratios: Vec<f64>,
}

/// `int_T 1/|x - y| dy` over a flat triangle with unit normal `n`, in
/// closed form (edge logarithms plus the solid-angle correction off-plane).
pub fn triangle_potential(tri: [Vec3; 3], n: Vec3, x: Vec3) -> f64 {
    let h = geom::dot(geom::sub(x, tri[0]), n);
    let rho = geom::sub(x, geom::scale(n, h));
    let ah = h.abs();
    let mut sum = 0.0;
    for k in 0..3 {
        let (p1, p2) = (tri[k], tri[(k + 1) % 3]);
        let edge = geom::sub(p2, p1);
        let lhat = geom::scale(edge, 1.0 / geom::norm(edge));
        let uhat = geom::cross(lhat, n);
        let p0 = geom::dot(geom::sub(p1, rho), uhat);
        let lp = geom::dot(geom::sub(p2, rho), lhat);
        let lm = geom::dot(geom::sub(p1, rho), lhat);
        let r0sq = p0 * p0 + h * h;
        let rp = (r0sq + lp * lp).sqrt();
        let rm = (r0sq + lm * lm).sqrt();
        let scale = geom::norm(edge);
        if p0.abs() > 1e-14 * scale {
            // r + l without cancellation for l < 0
            let f = |r: f64, l: f64| if l >= 0.0 { r + l } else { r0sq / (r - l) };
            sum += p0 * (f(rp, lp) / f(rm, lm)).ln();
        }
        if ah > 1e-14 * scale {
            sum -= ah * ((p0 * lp / (r0sq + ah * rp)).atan() - (p0 * lm / (r0sq + ah * rm)).atan());
        }
    }
    sum
}

fn corners(mesh: &SurfaceMesh, i: usize) -> [Vec3; 3] {
    mesh.triangles[i].map(|k| mesh.vertices[k])
}

fn bary(tri: &[Vec3; 3], b: [f64; 3]) -> Vec3 {
    let mut p = [0.0; 3];
    for k in 0..3 {
        p[k] = b[0] * tri[0][k] + b[1] * tri[1][k] + b[2] * tri[2][k];
    }
    p
}

fn subdivide(tri: [Vec3; 3], depth: usize, out: &mut Vec<[Vec3; 3]>) {
    if depth == 0 {
        out.push(tri);
        return;
    }
    let m = |a: Vec3, b: Vec3| geom::scale(geom::add(a, b), 0.5);
    let (ab, bc, ca) = (m(tri[0], tri[1]), m(tri[1], tri[2]), m(tri[2], tri[0]));
    for t in [[tri[0], ab, ca], [ab, tri[1], bc], [ca, bc, tri[2]], [ab, bc, ca]] {
        subdivide(t, depth - 1, out);
    }
}

/// Panel-pair data shared by every order.
struct Panels<'a> {
    mesh: &'a SurfaceMesh,
    near: Vec<Vec<usize>>,
}

impl<'a> Panels<'a> {
    fn new(mesh: &'a SurfaceMesh, opts: &CapacitanceOptions) -> Self {
        let p = mesh.len();
        let diam: Vec<f64> = (0..p).map(|i| mesh.diameter_of(i)).collect();
        let near = (0..p)
            .into_par_iter()
            .map(|i| {
                (0..p)
                    .filter(|&j| {
                        geom::distance(mesh.centroids[i], mesh.centroids[j]) < opts.near_factor * diam[i].max(diam[j])
                    })
                    .collect()
            })
            .collect();
        Self { mesh, near }
    }

    /// `S_t = int_{T_t} int_S ds / |s - t| dt` per panel.
    fn single_layer_rows(&self) -> Vec<f64> {
        let m = self.mesh;
        (0..m.len())
            .into_par_iter()
            .map(|t| {
                let ct = m.centroids[t];
                let near = &self.near[t];
                let mut far = 0.0;
                let mut k = 0;
                for s in 0..m.len() {
                    if k < near.len() && near[k] == s {
                        k += 1;
                        continue;
                    }
                    far += m.areas[s] / geom::distance(ct, m.centroids[s]);
                }
                let tri_t = corners(m, t);
                let mut close = 0.0;
                for (b, w) in DUNAVANT7 {
                    let x = bary(&tri_t, b);
                    let v: f64 = near.iter().map(|&s| triangle_potential(corners(m, s), m.normals[s], x)).sum();
                    close += w * v;
                }
                m.areas[t] * (far + close)
            })
            .collect()
    }

    /// Sparse near part of `Psi` per row. The self term is zero: on a flat
    /// panel the normal derivative of `1/r` vanishes in-plane.
    fn psi_near(&self, opts: &CapacitanceOptions) -> Vec<Vec<(usize, f64)>> {
        let m = self.mesh;
        (0..m.len())
            .into_par_iter()
            .map(|i| {
                let (ci, ni) = (m.centroids[i], m.normals[i]);
                self.near[i]
                    .iter()
                    .map(|&j| {
                        if j == i {
                            return (j, 0.0);
                        }
                        let mut pieces = Vec::new();
                        subdivide(corners(m, j), opts.near_depth, &mut pieces);
                        let mut s = 0.0;
                        for p in &pieces {
                            let a = 0.5 * geom::norm(geom::cross(geom::sub(p[1], p[0]), geom::sub(p[2], p[0])));
                            for (b, w) in DUNAVANT7 {
                                let d = geom::sub(bary(p, b), ci);
                                let r = geom::norm(d);
                                s += w * a * geom::dot(ni, d) / (r * r * r);
                            }
                        }
                        (j, s)
                    })
                    .collect()
            })
            .collect()
    }

    /// `(Psi sigma)_i = sum_j int_{T_j} psi(c_i, y) dy sigma_j`.
    fn apply_psi(&self, near: &[Vec<(usize, f64)>], sigma: &[f64]) -> Vec<f64> {
        let m = self.mesh;
        (0..m.len())
            .into_par_iter()
            .map(|i| {
                let (ci, ni) = (m.centroids[i], m.normals[i]);
                let row = &near[i];
                let mut k = 0;
                let mut s = 0.0;
                for j in 0..m.len() {
                    if k < row.len() && row[k].0 == j {
                        s += row[k].1 * sigma[j];
                        k += 1;
                        continue;
                    }
                    let d = geom::sub(m.centroids[j], ci);
                    let r = geom::norm(d);
                    s += m.areas[j] * geom::dot(ni, d) / (r * r * r) * sigma[j];
                }
                s
            })
            .collect()
    }
}

/// `C^(0) = 4 pi |S|^2 / J`, a lower bound for `C0`.
pub fn c0_lower(mesh: &SurfaceMesh) -> Result<f64> {
    Ok(c_n(mesh, 0)?.c_list[0])
}

/// `C^(0..=n)` with the default options.
pub fn c_n(mesh: &SurfaceMesh, n: usize) -> Result<CapacitanceResult> {
    c_n_with(mesh, n, CapacitanceOptions::default())
}

pub fn c_n_with(mesh: &SurfaceMesh, n: usize, opts: CapacitanceOptions) -> Result<CapacitanceResult> {
    if n > N_MAX {
        return Err(Error::argument("capacitance", format!("order {n} exceeds the maximum {N_MAX}")));
    }
    let panels = Panels::new(mesh, &opts);
    let rows = panels.single_layer_rows();
    let j0: f64 = rows.iter().sum();
    let mut sigma = vec![1.0; mesh.len()];
    let mut j_n = vec![j0];
    let mut charge = vec![mesh.area];
    if n > 0 {
        let near = panels.psi_near(&opts);
        for _ in 0..n {
            sigma = panels
                .apply_psi(&near, &sigma)
                .into_iter()
                .map(|v| -v / TWO_PI)
                .collect();
            j_n.push(sigma.iter().zip(&rows).map(|(s, r)| s * r).sum());
            charge.push(sigma.iter().zip(&mesh.areas).map(|(s, a)| s * a).sum());
        }
    }
    // C^(n) = 4 pi |S| Q_n / J_n with Q_n = int sigma_n. The iteration keeps
    // Q_n = |S| exactly in the continuum, but the discrete operator leaks
    // a few percent of charge per step; normalizing by the actual charge
    // removes that drift and leaves C^(0) unchanged.
    let c_list: Vec<f64> = j_n
        .iter()
        .zip(&charge)
        .map(|(j, q)| FOUR_PI * mesh.area * q / j)
        .collect();
    if let Some(bad) = c_list.iter().position(|c| !(*c > 0.0)) {
        return Err(Error::Mesh(format!("C^({bad}) = {:.3e} is not positive; the mesh is too coarse", c_list[bad])));
    }
    let ratios = c_list
        .windows(3)
        .map(|w| (w[2] - w[1]).abs() / (w[1] - w[0]).abs())
        .collect();
    Ok(CapacitanceResult {
        c_list,
        j: j0,
        area: mesh.area,
        epsilon0: 1.0,
        diagnostics: Diagnostics {
            panels: mesh.len(),
            j_n,
            charge,
            ratios,
        },
    })
}

/// Multiplies every `C^(n)` by `epsilon0`.
pub fn scale_epsilon(result: &CapacitanceResult, epsilon0: f64) -> Result<CapacitanceResult> {
    if !(epsilon0 > 0.0) {
        return Err(Error::argument("capacitance", format!("epsilon0 must be > 0, got {epsilon0}")));
    }
    let mut out = result.clone();
    out.c_list.iter_mut().for_each(|c| *c *= epsilon0);
    out.epsilon0 = result.epsilon0 * epsilon0;
    Ok(out)
}
