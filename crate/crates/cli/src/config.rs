//! Pipeline configuration: JSON file, `--set` overrides, validation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use smartscatter_core::inversion::NoisyConfig;
use smartscatter_core::ls_forward::SolverConfig;
use smartscatter_core::synthesis::TargetSpec;

use crate::InputError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    /// Radial Gauss-Legendre nodes of the ball grid.
    pub n_radial: usize,
    /// Angular bandlimit of the ball grid.
    pub n_angular: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            n_radial: 10,
            n_angular: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParticleConfig {
    /// Capacitance override; otherwise taken from `mesh`, otherwise a sphere
    /// of `radius`.
    pub c0: Option<f64>,
    /// OFF surface of one particle.
    pub mesh: Option<PathBuf>,
    /// Correction order used with `mesh`.
    pub mesh_order: usize,
    pub radius: f64,
}

impl Default for ParticleConfig {
    fn default() -> Self {
        Self {
            c0: None,
            mesh: None,
            mesh_order: 2,
            radius: 1e-3,
        }
    }
}

/// Potential for `forward`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum PotentialSpec {
    /// A `q.csv` written by `synthesize`, on the configured grid.
    Csv(PathBuf),
    /// `amplitude exp(-|x - center|^2 / (2 width^2))`.
    Gaussian { amplitude: f64, width: f64, center: [f64; 3] },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub k: f64,
    pub alpha: [f64; 3],
    /// Radius of the design ball.
    pub b: f64,
    /// Required pattern accuracy.
    pub epsilon: f64,
    /// Truncation tolerance of the source; `epsilon / 2` when absent, which
    /// leaves the other half for discretization.
    pub design_epsilon: Option<f64>,
    pub target: Option<TargetSpec>,
    pub grid: GridConfig,
    /// Direction grid on which patterns are compared.
    pub pattern_bandlimit: usize,
    pub particle: ParticleConfig,
    pub m_list: Vec<usize>,
    pub seeds: Vec<u64>,
    pub noise_delta: Option<f64>,
    pub output_dir: Option<PathBuf>,
    pub solver: SolverConfig,
    pub potential: Option<PotentialSpec>,
    /// Direction grid of the amplitude table written by `forward`.
    pub data_bandlimit: usize,
    /// `|theta| / k` for exact-data inversion.
    pub t_over_k: f64,
    pub inversion: NoisyConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            k: 1.0,
            alpha: [0.0, 0.0, 1.0],
            b: 1.0,
            epsilon: 1e-2,
            design_epsilon: None,
            target: None,
            grid: GridConfig::default(),
            pattern_bandlimit: 12,
            particle: ParticleConfig::default(),
            m_list: vec![100, 1000],
            seeds: vec![1, 2, 3, 4],
            noise_delta: None,
            output_dir: None,
            solver: SolverConfig::default(),
            potential: None,
            data_bandlimit: 8,
            t_over_k: 3.0,
            inversion: NoisyConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn design_epsilon(&self) -> f64 {
        self.design_epsilon.unwrap_or(0.5 * self.epsilon)
    }

    pub fn validate(&self) -> Result<(), InputError> {
        let positive = [
            ("k", self.k),
            ("b", self.b),
            ("epsilon", self.epsilon),
            ("design_epsilon", self.design_epsilon()),
            ("particle.radius", self.particle.radius),
            ("t_over_k", self.t_over_k),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(InputError::new(format!("config: {name} must be positive and finite, got {v}")));
            }
        }
        if self.t_over_k < 1.0 {
            return Err(InputError::new("config: t_over_k must be at least 1"));
        }
        let norm = self.alpha.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(InputError::new(format!("config: alpha must be a unit vector, |alpha| = {norm}")));
        }
        if self.grid.n_radial == 0 {
            return Err(InputError::new("config: grid.n_radial must be at least 1"));
        }
        if let Some(c0) = self.particle.c0 {
            if !(c0 > 0.0 && c0.is_finite()) {
                return Err(InputError::new(format!("config: particle.c0 must be positive, got {c0}")));
            }
        }
        if let Some(d) = self.noise_delta {
            if !(d > 0.0) {
                return Err(InputError::new(format!("config: noise_delta must be positive, got {d}")));
            }
        }
        if self.m_list.contains(&0) {
            return Err(InputError::new("config: m_list entries must be positive"));
        }
        Ok(())
    }
}

/// Reads the config (or starts from `{}`), applies `key.path=value`
/// overrides and deserializes. Returns the config and the directory that
/// relative paths in it refer to.
pub fn load(path: Option<&Path>, sets: &[String]) -> Result<(PipelineConfig, PathBuf), InputError> {
    let (mut value, base) = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| InputError::new(format!("config: {}: {e}", p.display())))?;
            let v: Value = serde_json::from_str(&text)
                .map_err(|e| InputError::new(format!("config: {}: malformed JSON: {e}", p.display())))?;
            let dir = p.parent().map(Path::to_path_buf).unwrap_or_default();
            (v, dir)
        }
        None => (Value::Object(Default::default()), PathBuf::new()),
    };
    if !value.is_object() {
        return Err(InputError::new("config: top level must be a JSON object"));
    }
    for s in sets {
        apply_set(&mut value, s)?;
    }
    let config: PipelineConfig =
        serde_json::from_value(value).map_err(|e| InputError::new(format!("config: schema error: {e}")))?;
    config.validate()?;
    Ok((config, base))
}

fn apply_set(root: &mut Value, assignment: &str) -> Result<(), InputError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| InputError::new(format!("--set expects key=value, got {assignment:?}")))?;
    let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return Err(InputError::new(format!("--set: empty key segment in {key:?}")));
        }
        let obj = node
            .as_object_mut()
            .ok_or_else(|| InputError::new(format!("--set: {key:?} descends into a non-object")))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), parsed);
            return Ok(());
        }
        node = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    Ok(())
}

/// `path` relative to `base` unless absolute.
pub fn resolve(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_create_nested_keys() {
        let mut v = serde_json::json!({"k": 1.0});
        apply_set(&mut v, "grid.n_radial=4").unwrap();
        apply_set(&mut v, "output_dir=out").unwrap();
        assert_eq!(v["grid"]["n_radial"], 4);
        assert_eq!(v["output_dir"], "out");
        assert!(apply_set(&mut v, "k.x=1").is_err());
        assert!(apply_set(&mut v, "novalue").is_err());
    }

    #[test]
    fn defaults_validate() {
        PipelineConfig::default().validate().unwrap();
        let bad = PipelineConfig {
            alpha: [0.0, 0.0, 2.0],
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
