//! Closed triangulated surfaces: validation, OFF input/output and the
//! built-in test shapes.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{self, Vec3};

/// Triangles with area below `DEGENERATE_REL * diameter^2` are rejected.
pub const DEGENERATE_REL: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[usize; 3]>,
    pub areas: Vec<f64>,
    pub centroids: Vec<Vec3>,
    /// Outward unit normals.
    pub normals: Vec<Vec3>,
    /// Total area `|S|`.
    pub area: f64,
}

impl SurfaceMesh {
    /// Validates a closed, consistently oriented surface with outward normals.
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        if triangles.len() < 4 {
            return Err(Error::Mesh(format!("a closed surface needs at least 4 triangles, got {}", triangles.len())));
        }
        let nv = vertices.len();
        if let Some(t) = triangles.iter().find(|t| t.iter().any(|&i| i >= nv)) {
            return Err(Error::Mesh(format!("triangle {t:?} references a vertex beyond {nv}")));
        }
        let diam = bbox_diagonal(&vertices);
        let mut areas = Vec::with_capacity(triangles.len());
        let mut centroids = Vec::with_capacity(triangles.len());
        let mut normals = Vec::with_capacity(triangles.len());
        for (i, t) in triangles.iter().enumerate() {
            let [a, b, c] = t.map(|k| vertices[k]);
            let cr = geom::cross(geom::sub(b, a), geom::sub(c, a));
            let area = 0.5 * geom::norm(cr);
            if !(area > DEGENERATE_REL * diam * diam) {
                return Err(Error::Mesh(format!("triangle {i} {t:?} is degenerate (area {area:.3e})")));
            }
            areas.push(area);
            centroids.push(geom::scale(geom::add(geom::add(a, b), c), 1.0 / 3.0));
            normals.push(geom::scale(cr, 0.5 / area));
        }
        // every directed edge once, and its reverse once
        let mut edges: HashMap<(usize, usize), usize> = HashMap::new();
        for t in &triangles {
            for k in 0..3 {
                *edges.entry((t[k], t[(k + 1) % 3])).or_insert(0) += 1;
            }
        }
        for (&(a, b), &count) in &edges {
            if count != 1 || edges.get(&(b, a)) != Some(&1) {
                return Err(Error::Mesh(format!(
                    "edge ({a}, {b}) is not shared by exactly two consistently oriented triangles"
                )));
            }
        }
        let mesh = Self {
            area: areas.iter().sum(),
            vertices,
            triangles,
            areas,
            centroids,
            normals,
        };
        let vol = mesh.volume();
        if !(vol > 0.0) {
            return Err(Error::Mesh(format!(
                "signed volume {vol:.3e} is not positive; normals point inward (reverse the triangle orientation)"
            )));
        }
        Ok(mesh)
    }

    pub fn len(&self) -> usize {
        self.triangles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    /// Enclosed volume from the divergence theorem.
    pub fn volume(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let [a, b, c] = t.map(|k| self.vertices[k]);
                geom::dot(a, geom::cross(b, c)) / 6.0
            })
            .sum()
    }

    /// Longest edge of triangle `i`.
    pub fn diameter_of(&self, i: usize) -> f64 {
        let [a, b, c] = self.triangles[i].map(|k| self.vertices[k]);
        geom::distance(a, b).max(geom::distance(b, c)).max(geom::distance(c, a))
    }

    /// Applies a map to every vertex and revalidates.
    pub fn transformed(&self, f: impl Fn(Vec3) -> Vec3) -> Result<Self> {
        Self::new(self.vertices.iter().map(|v| f(*v)).collect(), self.triangles.clone())
    }

    /// Geodesic sphere: the icosahedron subdivided `level` times and projected
    /// onto the sphere. Levels 3, 4 and 5 give 642, 2562 and 10242 vertices.
    pub fn icosphere(level: usize, radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::argument("capacitance", "radius must be positive"));
        }
        let t = (1.0 + 5f64.sqrt()) / 2.0;
        let mut verts: Vec<Vec3> = [
            [-1.0, t, 0.0],
            [1.0, t, 0.0],
            [-1.0, -t, 0.0],
            [1.0, -t, 0.0],
            [0.0, -1.0, t],
            [0.0, 1.0, t],
            [0.0, -1.0, -t],
            [0.0, 1.0, -t],
            [t, 0.0, -1.0],
            [t, 0.0, 1.0],
            [-t, 0.0, -1.0],
            [-t, 0.0, 1.0],
        ]
        .iter()
        .map(|v| geom::normalized(*v).unwrap())
        .collect();
        let mut tris: Vec<[usize; 3]> = vec![
            [0, 11, 5],
            [0, 5, 1],
            [0, 1, 7],
            [0, 7, 10],
            [0, 10, 11],
            [1, 5, 9],
            [5, 11, 4],
            [11, 10, 2],
            [10, 7, 6],
            [7, 1, 8],
            [3, 9, 4],
            [3, 4, 2],
            [3, 2, 6],
            [3, 6, 8],
            [3, 8, 9],
            [4, 9, 5],
            [2, 4, 11],
            [6, 2, 10],
            [8, 6, 7],
            [9, 8, 1],
        ];
        for _ in 0..level {
            let mut cache: HashMap<(usize, usize), usize> = HashMap::new();
            let mut mid = |a: usize, b: usize, verts: &mut Vec<Vec3>| -> usize {
                let key = (a.min(b), a.max(b));
                *cache.entry(key).or_insert_with(|| {
                    let m = geom::normalized(geom::add(verts[a], verts[b])).unwrap();
                    verts.push(m);
                    verts.len() - 1
                })
            };
            let mut next = Vec::with_capacity(tris.len() * 4);
            for [a, b, c] in tris {
                let ab = mid(a, b, &mut verts);
                let bc = mid(b, c, &mut verts);
                let ca = mid(c, a, &mut verts);
                next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
            }
            tris = next;
        }
        Self::new(verts.into_iter().map(|v| geom::scale(v, radius)).collect(), tris)
    }

    /// Spheroid with semi-axes `(a, a, c)` from a stretched icosphere.
    pub fn spheroid(a: f64, c: f64, level: usize) -> Result<Self> {
        if !(a > 0.0 && c > 0.0) {
            return Err(Error::argument("capacitance", "semi-axes must be positive"));
        }
        Self::icosphere(level, 1.0)?.transformed(|v| [a * v[0], a * v[1], c * v[2]])
    }

    /// Cube `[-s/2, s/2]^3` with each face split into `n x n` squares.
    pub fn cube(side: f64, n: usize) -> Result<Self> {
        if !(side > 0.0) || n == 0 {
            return Err(Error::argument("capacitance", "cube needs side > 0 and n >= 1"));
        }
        let mut index: HashMap<[usize; 3], usize> = HashMap::new();
        let mut verts = Vec::new();
        let mut tris = Vec::new();
        let h = side / n as f64;
        let mut vid = |p: [usize; 3], verts: &mut Vec<Vec3>| -> usize {
            *index.entry(p).or_insert_with(|| {
                verts.push(p.map(|i| i as f64 * h - side / 2.0));
                verts.len() - 1
            })
        };
        for axis in 0..3 {
            let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
            for (fixed, outward) in [(0, false), (n, true)] {
                for i in 0..n {
                    for j in 0..n {
                        let mut corners = [[0usize; 3]; 4];
                        for (c, (di, dj)) in [(0, 0), (1, 0), (1, 1), (0, 1)].into_iter().enumerate() {
                            corners[c][axis] = fixed;
                            corners[c][u] = i + di;
                            corners[c][v] = j + dj;
                        }
                        let ids = corners.map(|p| vid(p, &mut verts));
                        // (u, v, axis) is right-handed, so this order points along +axis
                        if outward {
                            tris.push([ids[0], ids[1], ids[2]]);
                            tris.push([ids[0], ids[2], ids[3]]);
                        } else {
                            tris.push([ids[0], ids[2], ids[1]]);
                            tris.push([ids[0], ids[3], ids[2]]);
                        }
                    }
                }
            }
        }
        Self::new(verts, tris)
    }

    /// Parses ASCII OFF; polygonal faces are fan-triangulated.
    pub fn parse_off(text: &str) -> Result<Self> {
        let mut tokens = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or(""))
            .flat_map(|l| l.split_whitespace());
        let first = tokens.next().ok_or_else(|| Error::Parse("empty OFF file".into()))?;
        let mut next_num = |what: &str| -> Result<f64> {
            let tok = tokens.next().ok_or_else(|| Error::Parse(format!("OFF: unexpected end while reading {what}")))?;
            tok.parse::<f64>().map_err(|_| Error::Parse(format!("OFF: bad {what} '{tok}'")))
        };
        let nv_first = if first == "OFF" {
            None
        } else {
            Some(first.parse::<f64>().map_err(|_| Error::Parse(format!("OFF: bad header '{first}'")))?)
        };
        let nv = match nv_first {
            Some(v) => v,
            None => next_num("vertex count")?,
        } as usize;
        let nf = next_num("face count")? as usize;
        let _edges = next_num("edge count")?;
        let mut verts = Vec::with_capacity(nv);
        for _ in 0..nv {
            verts.push([next_num("vertex")?, next_num("vertex")?, next_num("vertex")?]);
        }
        let mut tris = Vec::with_capacity(nf);
        for _ in 0..nf {
            let k = next_num("face size")? as usize;
            if k < 3 {
                return Err(Error::Parse(format!("OFF: face with {k} vertices")));
            }
            let ids: Vec<usize> = (0..k).map(|_| next_num("face index").map(|v| v as usize)).collect::<Result<_>>()?;
            for i in 1..k - 1 {
                tris.push([ids[0], ids[i], ids[i + 1]]);
            }
        }
        Self::new(verts, tris)
    }

    pub fn read_off(path: &Path) -> Result<Self> {
        Self::parse_off(&std::fs::read_to_string(path)?)
    }

    pub fn to_off_string(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "OFF\n{} {} 0", self.vertices.len(), self.triangles.len());
        for v in &self.vertices {
            let _ = writeln!(s, "{:.17e} {:.17e} {:.17e}", v[0], v[1], v[2]);
        }
        for t in &self.triangles {
            let _ = writeln!(s, "3 {} {} {}", t[0], t[1], t[2]);
        }
        s
    }

    pub fn write_off(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_off_string())?;
        Ok(())
    }
}

fn bbox_diagonal(points: &[Vec3]) -> f64 {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in points {
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    geom::distance(lo, hi)
}
