//! The five pipeline commands. Each returns the `results` block of its
//! report and writes its data files into the output directory.

use std::path::{Path, PathBuf};

use anyhow::{Context as _, Result};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use smartscatter_core::capacitance::{c_n, scale_epsilon, SurfaceMesh};
use smartscatter_core::geom::{self, Vec3};
use smartscatter_core::inversion::{cartesian_xi_grid, min_feasible_t, Inverter, NoisyInverter};
use smartscatter_core::ls_forward::{amplitude_matrix, AmplitudeMatrix, LsSolver};
use smartscatter_core::manybody::{cloud_pattern, sample_cloud, solve_charges, ParticleCloud};
use smartscatter_core::potential::{
    density_from_q_unchecked, incident_wave, perturb_h, recover_q, DensityField, ParticleModel, PerturbConfig,
    PotentialGrid,
};
use smartscatter_core::sphgrid::{synthesize, BallGrid, DirectionGrid, SHCoefficients};
use smartscatter_core::synthesis::{compute_h, pattern_from_h};
use smartscatter_core::volume::GreenOperator;
use smartscatter_core::Error as CoreError;

use crate::config::{resolve, PipelineConfig, PotentialSpec};
use crate::InputError;

type C64 = Complex64;

pub struct Context {
    pub config: PipelineConfig,
    /// Directory that relative paths in the config refer to.
    pub base: PathBuf,
    pub out_dir: Option<PathBuf>,
}

impl Context {
    fn ball_grid(&self) -> Result<BallGrid> {
        Ok(BallGrid::new(self.config.b, self.config.grid.n_radial, self.config.grid.n_angular)?)
    }

    fn out_dir(&self) -> Result<&Path> {
        let dir = self
            .out_dir
            .as_deref()
            .ok_or_else(|| InputError::new("this command writes files: set output_dir or pass --output-dir"))?;
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(dir)
    }

    fn target(&self) -> Result<Option<SHCoefficients>> {
        match &self.config.target {
            None => Ok(None),
            Some(t) => Ok(Some(t.resolve(&self.base)?)),
        }
    }

    /// `C0` from the override, the mesh, or the sphere of the nominal radius.
    fn capacitance(&self) -> Result<(f64, &'static str)> {
        let p = &self.config.particle;
        if let Some(c0) = p.c0 {
            return Ok((c0, "override"));
        }
        if let Some(mesh) = &p.mesh {
            let mesh = SurfaceMesh::read_off(&resolve(&self.base, mesh))?;
            let r = c_n(&mesh, p.mesh_order)?;
            return Ok((*r.c_list.last().expect("c_list holds order 0"), "mesh"));
        }
        Ok((4.0 * std::f64::consts::PI * p.radius, "sphere"))
    }
}

fn l2_distance(dirs: &DirectionGrid, a: &[C64], b: &[C64]) -> f64 {
    let d: Vec<C64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    dirs.l2_norm(&d)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

pub fn synthesize_cmd(ctx: &Context) -> Result<Value> {
    let cfg = &ctx.config;
    let f = ctx
        .target()?
        .ok_or_else(|| InputError::new("synthesize needs a target pattern (config key `target`)"))?;
    let out = ctx.out_dir()?;
    let h = compute_h(&f, cfg.design_epsilon(), cfg.k, cfg.b)?;
    let design_residual = f.difference(&pattern_from_h(&h)?).norm();

    let grid = ctx.ball_grid()?;
    let samples = h.sample(&grid);
    let op = GreenOperator::new(&grid, cfg.k);
    let u0 = incident_wave(&grid.nodes, cfg.alpha, cfg.k);
    let (recovery, eta, samples) = match recover_q(&op, &samples, &u0, None) {
        Ok(r) => (r, 0.0, samples),
        Err(CoreError::SmallDenominator { .. }) => {
            let p = perturb_h(&op, &grid, &samples, &u0, None, PerturbConfig::default())?;
            log::warn!("potential: source perturbed by eta = {:.3e} to keep denominators away from zero", p.eta);
            (recover_q(&op, &p.h, &u0, None)?, p.eta, p.h)
        }
        Err(e) => return Err(e.into()),
    };
    let potential = PotentialGrid {
        q: recovery.q.clone(),
        q0: vec![C64::new(0.0, 0.0); grid.len()],
        grid: grid.clone(),
    };
    let (c0, c0_source) = ctx.capacitance()?;
    let density = density_from_q_unchecked(&potential, ParticleModel::soft(c0))?;
    if !density.is_realizable() {
        log::warn!(
            "potential: density not realizable with soft particles on {:.1}% of the volume",
            density.unrealizable_fraction()
        );
    }

    // independent check: amplitude of the recovered q by the volume solver
    let dirs = DirectionGrid::new(cfg.pattern_bandlimit);
    let solver = LsSolver::new(&potential, cfg.k, cfg.solver)?;
    let sol = solver.solve(cfg.alpha)?;
    let achieved = solver.amplitude(&sol, &dirs.nodes);
    let wanted = synthesize(&f, &dirs.nodes);
    let residual = l2_distance(&dirs, &achieved, &wanted);
    let closure: f64 = {
        let qu: Vec<C64> = recovery.q.iter().zip(&recovery.u).map(|(q, u)| q * u).collect();
        l2_distance_ball(&grid, &qu, &samples) / grid.l2_norm(&samples).max(f64::MIN_POSITIVE)
    };

    write_json(&out.join("h.json"), &h)?;
    potential.write_csv(&out.join("q.csv"))?;
    density.write_csv(&out.join("N.csv"))?;
    Ok(json!({
        "target_norm": f.norm(),
        "truncation_bandlimit": h.bandlimit,
        "design_residual": design_residual,
        "pattern_residual": residual,
        "epsilon": cfg.epsilon,
        "within_epsilon": residual <= cfg.epsilon,
        "source_perturbation_eta": eta,
        "smallness_condition": {
            "sup_vh": recovery.sup_vh,
            "holds": recovery.small_regime,
        },
        "min_denominator": recovery.min_denominator,
        "closure_defect": closure,
        "solver": {"path": format!("{:?}", sol.path), "iterations": sol.iterations},
        "c0": c0,
        "c0_source": c0_source,
        "density": {
            "total_count_re": density.total_count().re,
            "total_count_im": density.total_count().im,
            "realizable": density.is_realizable(),
            "unrealizable_percent": density.unrealizable_fraction(),
        },
        "files": ["h.json", "q.csv", "N.csv"],
    }))
}

fn l2_distance_ball(grid: &BallGrid, a: &[C64], b: &[C64]) -> f64 {
    let d: Vec<C64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    grid.l2_norm(&d)
}

pub enum VerifyInput {
    Density(PathBuf),
    Cloud(PathBuf),
}

#[derive(Serialize)]
struct MRow {
    m: usize,
    mean_to_medium: f64,
    mean_to_target: Option<f64>,
    max_charge_residual: f64,
    per_seed_to_medium: Vec<f64>,
}

pub fn verify_cmd(ctx: &Context, input: VerifyInput) -> Result<Value> {
    let cfg = &ctx.config;
    let dirs = DirectionGrid::new(cfg.pattern_bandlimit);
    let target = ctx.target()?.map(|f| synthesize(&f, &dirs.nodes));
    match input {
        VerifyInput::Cloud(path) => {
            let cloud = ParticleCloud::read_csv(&path, cfg.particle.radius)?;
            let (pattern, residual) = if cloud.is_empty() {
                (vec![C64::new(0.0, 0.0); dirs.len()], 0.0)
            } else {
                cloud.warn_if_outside_validity(cfg.k);
                let q = solve_charges(&cloud, cfg.alpha, cfg.k)?;
                (cloud_pattern(&cloud, &q, cfg.k, &dirs.nodes), q.residual)
            };
            let (ka, ad) = cloud.diagnostics(cfg.k);
            Ok(json!({
                "particles": cloud.len(),
                "pattern_norm": dirs.l2_norm(&pattern),
                "distance_to_target": target.as_ref().map(|t| l2_distance(&dirs, &pattern, t)),
                "charge_residual": residual,
                "ka": ka,
                "a_over_d": ad,
            }))
        }
        VerifyInput::Density(path) => {
            let out = ctx.out_dir()?;
            let (c0, _) = ctx.capacitance()?;
            let density = DensityField::read_csv(&path, ctx.ball_grid()?, ParticleModel::soft(c0))?;
            let medium = density.to_potential();
            let solver = LsSolver::new(&medium, cfg.k, cfg.solver)?;
            let sol = solver.solve(cfg.alpha)?;
            let reference = solver.amplitude(&sol, &dirs.nodes);
            let mut rows = Vec::new();
            for &m in &cfg.m_list {
                let mut to_medium = Vec::new();
                let mut to_target = Vec::new();
                let mut worst: f64 = 0.0;
                for &seed in &cfg.seeds {
                    let cloud = sample_cloud(&density, m, cfg.particle.radius, seed)?;
                    let q = solve_charges(&cloud, cfg.alpha, cfg.k)?;
                    worst = worst.max(q.residual);
                    let pattern = cloud_pattern(&cloud, &q, cfg.k, &dirs.nodes);
                    to_medium.push(l2_distance(&dirs, &pattern, &reference));
                    if let Some(t) = &target {
                        to_target.push(l2_distance(&dirs, &pattern, t));
                    }
                }
                let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
                rows.push(MRow {
                    m,
                    mean_to_medium: mean(&to_medium),
                    mean_to_target: target.as_ref().map(|_| mean(&to_target)),
                    max_charge_residual: worst,
                    per_seed_to_medium: to_medium,
                });
            }
            write_table(&out.join("verify_table.csv"), &rows)?;
            Ok(json!({
                "medium_pattern_norm": dirs.l2_norm(&reference),
                "medium_to_target": target.as_ref().map(|t| l2_distance(&dirs, &reference, t)),
                "total_count": density.total_count().re,
                "rows": rows,
                "files": ["verify_table.csv"],
            }))
        }
    }
}

fn write_table(path: &Path, rows: &[MRow]) -> Result<()> {
    let mut text = String::from("m,mean_to_medium,mean_to_target,max_charge_residual\n");
    for r in rows {
        let t = r.mean_to_target.map(|v| format!("{v:.10e}")).unwrap_or_default();
        text += &format!("{},{:.10e},{},{:.3e}\n", r.m, r.mean_to_medium, t, r.max_charge_residual);
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn forward_cmd(ctx: &Context, potential_csv: Option<PathBuf>) -> Result<Value> {
    let cfg = &ctx.config;
    let out = ctx.out_dir()?;
    let grid = ctx.ball_grid()?;
    let spec = match potential_csv {
        Some(p) => PotentialSpec::Csv(p),
        None => cfg
            .potential
            .clone()
            .ok_or_else(|| InputError::new("forward needs a potential (config key `potential` or --potential)"))?,
    };
    let potential = match &spec {
        PotentialSpec::Csv(p) => PotentialGrid::read_csv(&resolve(&ctx.base, p), grid)?,
        PotentialSpec::Gaussian {
            amplitude,
            width,
            center,
        } => {
            if !(*width > 0.0) {
                return Err(InputError::new("potential.gaussian.width must be positive").into());
            }
            let (a, s, c) = (*amplitude, *width, *center);
            PotentialGrid::from_fn(grid, move |x| {
                let d = geom::sub(x, c);
                C64::new(a * (-geom::dot(d, d) / (2.0 * s * s)).exp(), 0.0)
            })
        }
    };
    let dirs = DirectionGrid::new(cfg.data_bandlimit);
    let a = amplitude_matrix(&potential, cfg.k, &dirs, cfg.solver)?;
    a.write_csv(&out.join("amplitude.csv"))?;
    let real = potential.q.iter().all(|v| v.im == 0.0);
    Ok(json!({
        "directions": a.n(),
        "amplitude_norm": a.l2_norm(),
        "reciprocity_defect": a.reciprocity_defect(),
        "optical_theorem_defect": optical_defect(&a),
        "potential_is_real": real,
        "files": ["amplitude.csv"],
    }))
}

/// Largest relative defect of `Im A(a, a) = k/(4 pi) int |A(a', a)|^2 da'`
/// over incident directions (an identity for real potentials).
fn optical_defect(a: &AmplitudeMatrix) -> f64 {
    let n = a.n();
    let w = &a.directions.weights;
    (0..n)
        .map(|j| {
            let rhs: f64 = (0..n).map(|i| w[i] * a.get(i, j).norm_sqr()).sum::<f64>() * a.k / (4.0 * std::f64::consts::PI);
            let lhs = a.get(j, j).im;
            if rhs == 0.0 && lhs == 0.0 {
                0.0
            } else {
                (lhs - rhs).abs() / rhs.abs().max(lhs.abs())
            }
        })
        .fold(0.0, f64::max)
}

pub fn capacitance_cmd(mesh: &Path, order: usize, epsilon0: Option<f64>) -> Result<Value> {
    let mesh = SurfaceMesh::read_off(mesh)?;
    let mut r = c_n(&mesh, order)?;
    if let Some(e) = epsilon0 {
        r = scale_epsilon(&r, e)?;
    }
    Ok(json!({
        "C_list": r.c_list,
        "J": r.j,
        "area": r.area,
        "epsilon0": r.epsilon0,
        "diagnostics": r.diagnostics,
    }))
}

/// `grid:SPACING:MAX` (Cartesian lattice in the ball) or
/// `points:x,y,z;x,y,z;...`.
pub fn parse_xi_grid(spec: &str) -> Result<Vec<Vec3>, InputError> {
    let bad = |why: &str| InputError::new(format!("--xi-grid {spec:?}: {why}"));
    if let Some(rest) = spec.strip_prefix("grid:") {
        let (s, m) = rest.split_once(':').ok_or_else(|| bad("expected grid:SPACING:MAX"))?;
        let spacing: f64 = s.trim().parse().map_err(|_| bad("bad spacing"))?;
        let max: f64 = m.trim().parse().map_err(|_| bad("bad maximum"))?;
        let (pts, _) = cartesian_xi_grid(spacing, max).map_err(|e| bad(&e.to_string()))?;
        return Ok(pts);
    }
    if let Some(rest) = spec.strip_prefix("points:") {
        return rest
            .split(';')
            .filter(|p| !p.trim().is_empty())
            .map(|p| {
                let v: Vec<f64> = p
                    .split(',')
                    .map(|c| c.trim().parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|_| bad("bad coordinate"))?;
                <[f64; 3]>::try_from(v).map_err(|_| bad("each point needs three coordinates"))
            })
            .collect();
    }
    Err(bad("expected grid:SPACING:MAX or points:x,y,z;..."))
}

#[derive(Serialize)]
struct InvertRow {
    t_used: f64,
    q_hat: C64,
    f_nu: f64,
    nu_norm: Option<f64>,
    degraded: bool,
}

pub fn invert_cmd(ctx: &Context, amplitude: &Path, xi: &[Vec3]) -> Result<Value> {
    let cfg = &ctx.config;
    if xi.is_empty() {
        return Err(InputError::new("the xi grid is empty").into());
    }
    let a = AmplitudeMatrix::read_csv(amplitude, cfg.k)?;
    let k = cfg.k;
    let (rows, diagnostics): (Vec<InvertRow>, Value) = match cfg.noise_delta {
        None => {
            let inv = Inverter::new(&a, cfg.inversion.base.clone())?;
            let rows = xi
                .par_iter()
                .map(|x| {
                    let t = (cfg.t_over_k * k).max(min_feasible_t(*x, k));
                    inv.estimate(*x, t).map(|e| InvertRow {
                        t_used: e.t,
                        q_hat: e.q_hat,
                        f_nu: e.f_nu,
                        nu_norm: Some(e.nu_norm),
                        degraded: false,
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            let d = json!({"path": "exact", "l_nu": inv.config.l_nu, "l_cont": inv.expansion.l_cont});
            (rows, d)
        }
        Some(delta) => {
            let inv = NoisyInverter::new(&a, delta, cfg.inversion.clone())?;
            let rows = xi
                .par_iter()
                .map(|x| {
                    inv.estimate(*x).map(|e| {
                        let chosen = e.candidates.iter().find(|c| c.t == e.t_used);
                        InvertRow {
                            t_used: e.t_used,
                            q_hat: e.q_hat,
                            f_nu: e.rho_norm * e.rho_norm,
                            nu_norm: chosen.map(|c| c.nu_norm),
                            degraded: e.degraded,
                        }
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            let d = json!({
                "path": "noisy",
                "delta": delta,
                "n_delta": inv.n_delta,
                "mu": inv.mu,
                "c": inv.config.c,
            });
            (rows, d)
        }
    };
    let degraded = rows.iter().filter(|r| r.degraded).count();
    Ok(json!({
        "xi": xi,
        "q_hat_re": rows.iter().map(|r| r.q_hat.re).collect::<Vec<_>>(),
        "q_hat_im": rows.iter().map(|r| r.q_hat.im).collect::<Vec<_>>(),
        "t_used": rows.iter().map(|r| r.t_used).collect::<Vec<_>>(),
        "F_nu": rows.iter().map(|r| r.f_nu).collect::<Vec<_>>(),
        "diagnostics": {
            "settings": diagnostics,
            "nu_norm": rows.iter().map(|r| r.nu_norm).collect::<Vec<_>>(),
            "degraded_points": degraded,
            "data_bandlimit": a.directions.bandlimit,
            "reciprocity_defect": a.reciprocity_defect(),
        },
    }))
}
