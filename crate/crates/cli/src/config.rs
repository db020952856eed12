//! Run configuration (JSON).

use std::path::{Path, PathBuf};

use nlmodal::cnma::ContinuationSettings;
use nlmodal::io::ModelSpec;
use nlmodal::synthesis::{DampingSpec, Interpolation, SynthesisOptions};
use nlmodal::validate::{HbmSettings, TimeIntegrationSettings};
use nlmodal::{CVec, Complex64};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSpec,
    /// Damping added on top of the model's own viscous matrix.
    #[serde(default)]
    pub damping: Vec<DampingSpec>,
    /// Fundamental-harmonic force pattern.
    #[serde(default)]
    pub excitation: Vec<PointForce>,
    /// Seed of the randomized checks.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub nma: Option<NmaTask>,
    #[serde(default)]
    pub frf: Option<FrfTask>,
    #[serde(default)]
    pub backbone: Option<BackboneTask>,
    #[serde(default)]
    pub lco: Option<LcoTask>,
    #[serde(default)]
    pub hbm: Option<HbmTask>,
    #[serde(default)]
    pub integrate: Option<IntegrateTask>,
    #[serde(default)]
    pub check: Option<CheckTask>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointForce {
    pub dof: usize,
    pub re: f64,
    #[serde(default)]
    pub im: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NmaTask {
    #[serde(default)]
    pub mode: usize,
    /// Range of the normalization target (kinetic energy by default).
    pub target_min: f64,
    pub target_max: f64,
    #[serde(default)]
    pub settings: ContinuationSettings,
    #[serde(default)]
    pub interpolation: Interpolation,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrfTask {
    /// Database CSV written by `nma`, relative to the config file.
    pub database: PathBuf,
    pub omega_min: f64,
    pub omega_max: f64,
    /// Force scales applied to `excitation`; one curve per level.
    #[serde(default = "unit_level")]
    pub levels: Vec<f64>,
    #[serde(default)]
    pub options: SynthesisOptions,
    #[serde(default)]
    pub interpolation: Interpolation,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneTask {
    pub database: PathBuf,
    /// Samples between database nodes.
    #[serde(default = "default_per_interval")]
    pub per_interval: usize,
    /// Report the backbone points reached by these force scales instead.
    #[serde(default)]
    pub levels: Option<Vec<f64>>,
    #[serde(default)]
    pub options: SynthesisOptions,
    #[serde(default)]
    pub interpolation: Interpolation,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LcoTask {
    pub database: PathBuf,
    #[serde(default)]
    pub options: SynthesisOptions,
    #[serde(default)]
    pub interpolation: Interpolation,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HbmTask {
    pub omega_min: f64,
    pub omega_max: f64,
    #[serde(default = "unit_level")]
    pub levels: Vec<f64>,
    #[serde(default)]
    pub settings: HbmSettings,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegrateTask {
    /// Excitation frequency; free vibration when absent.
    #[serde(default)]
    pub omega: Option<f64>,
    /// Reference period of a free run.
    #[serde(default)]
    pub period: Option<f64>,
    #[serde(default)]
    pub u0: Option<Vec<f64>>,
    #[serde(default)]
    pub v0: Option<Vec<f64>>,
    #[serde(default)]
    pub settings: TimeIntegrationSettings,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckTask {
    #[serde(default = "default_cases")]
    pub cases: usize,
    /// Displacement scale of the random AFT inputs; derived from the
    /// elements when absent.
    #[serde(default)]
    pub amplitude: Option<f64>,
}

impl Default for CheckTask {
    fn default() -> Self {
        Self {
            cases: default_cases(),
            amplitude: None,
        }
    }
}

fn unit_level() -> Vec<f64> {
    vec![1.0]
}

fn default_per_interval() -> usize {
    8
}

fn default_cases() -> usize {
    20
}

/// Config-level failure (exit status 2).
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|e| ConfigError(format!("config: {e}")))
    }

    pub fn force(&self, n_dof: usize) -> Result<CVec, ConfigError> {
        let mut f = CVec::zeros(n_dof);
        for p in &self.excitation {
            if p.dof >= n_dof {
                return Err(ConfigError(format!("excitation DOF {} out of range", p.dof)));
            }
            f[p.dof] += Complex64::new(p.re, p.im);
        }
        Ok(f)
    }

    pub fn require_force(&self, n_dof: usize) -> Result<CVec, ConfigError> {
        let f = self.force(n_dof)?;
        if f.iter().all(|c| c.norm() == 0.0) {
            return Err(ConfigError("task requires a nonzero excitation".into()));
        }
        Ok(f)
    }
}

pub fn resolve(base: &Path, p: &Path) -> Result<PathBuf, ConfigError> {
    let full = if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
    if !full.is_file() {
        return Err(ConfigError(format!(
            "referenced file {} does not exist",
            full.display()
        )));
    }
    Ok(full)
}

pub fn check_range(lo: f64, hi: f64, what: &str) -> Result<(), ConfigError> {
    if !(lo > 0.0 && hi > lo && hi.is_finite()) {
        return Err(ConfigError(format!("{what} range [{lo}, {hi}] is invalid")));
    }
    Ok(())
}

pub fn check_levels(levels: &[f64]) -> Result<(), ConfigError> {
    if levels.is_empty() || levels.iter().any(|l| !(l.is_finite() && *l != 0.0)) {
        return Err(ConfigError("levels must be finite and nonzero".into()));
    }
    Ok(())
}
