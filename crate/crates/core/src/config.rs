//! Run configuration: a TOML file whose keys mirror the model data, validated
//! at load time. Unknown keys are errors.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::constitutive::{
    hardening_k, DissipationParams, ElasticParams, ExponentSet, HardeningParams, Material, RegularizerParams,
};
use crate::discretization::{DirichletSet, LoadShape, LoadSpec, Mesh, MeshMode, Model, PlasticField};
use crate::gradient_system::{InnerOptions, ViscoplasticSystem};
use crate::minimizing_movements::{self, EdiQuadrature, RunFailure, RunOptions, StepOptions, TimeGrid, Trajectory};
use crate::tensor::Mat;
use crate::{Error, Result};

/// Reference scenarios shipped with the crate, by name.
pub const REFERENCE_CONFIGS: [(&str, &str); 4] = [
    ("point_stationary", include_str!("../configs/point_stationary.toml")),
    ("point_ramp", include_str!("../configs/point_ramp.toml")),
    ("fem2d_ramp", include_str!("../configs/fem2d_ramp.toml")),
    ("fem2d_regularized", include_str!("../configs/fem2d_regularized.toml")),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshConfig {
    /// Cells per side (fem2d).
    #[serde(default = "default_cells")]
    pub n: usize,
    #[serde(default = "default_dirichlet")]
    pub dirichlet: DirichletSet,
    /// Whether the single point-mode element has prescribed deformation.
    #[serde(default)]
    pub pinned: bool,
}

fn default_cells() -> usize {
    4
}

fn default_dirichlet() -> DirichletSet {
    DirichletSet::Left
}

impl Default for MeshConfig {
    fn default() -> Self {
        Self { n: default_cells(), dirichlet: default_dirichlet(), pinned: false }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExponentConfig {
    pub q_phi: f64,
    pub q_f: f64,
    pub q_p: f64,
    pub q_g: f64,
    pub q_gamma: f64,
    pub p: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HardeningConfig {
    pub c1: f64,
    pub c2: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DissipationConfig {
    pub sigma_yield: f64,
    pub nu: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegularizerConfig {
    pub c7: f64,
    pub c8: f64,
    /// Defaults to `max(q_F, d η_W)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_w: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    pub t_final: f64,
    pub n_steps: usize,
    #[serde(default)]
    pub quadrature: EdiQuadrature,
}

/// Uniform initial data; matrices are given row by row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    /// Affine Dirichlet datum `x ↦ F0 x`.
    pub f0: Vec<Vec<f64>>,
    pub p0: Vec<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    /// Gradient-norm stopping tolerance of the inner deformation solver.
    pub inner_grad: f64,
    pub inner_max_iter: usize,
    /// Relative Fenchel-gap stopping tolerance of each incremental problem.
    pub fenchel_gap: f64,
    /// Relative slack allowed in the comparison inequality.
    pub comparison_slack: f64,
    pub step_max_iter: usize,
    /// EDI prefix residuals must not exceed `residual_scale · (1 + |E(0)|)`.
    pub residual_scale: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: "vpmm-out".into() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    pub mode: MeshMode,
    pub dim: usize,
    /// Weight of the regularizing term; 0 for the base model.
    pub eta: f64,
    pub seed: u64,
    #[serde(default)]
    pub mesh: MeshConfig,
    pub exponents: ExponentConfig,
    pub hardening: HardeningConfig,
    pub elastic: ElasticParams,
    pub dissipation: DissipationConfig,
    pub regularizer: RegularizerConfig,
    pub load: LoadSpec,
    pub time: TimeConfig,
    pub initial: InitialConfig,
    pub tolerances: Tolerances,
    #[serde(default)]
    pub output: OutputConfig,
}

fn matrix(rows: &[Vec<f64>], dim: usize, what: &str) -> Result<Mat> {
    if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
        return Err(Error::Config(format!("{what} must be a {dim}x{dim} matrix")));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    if flat.iter().any(|v| !v.is_finite()) {
        return Err(Error::Config(format!("{what} has non-finite entries")));
    }
    Ok(Mat::from_row_slice(&flat))
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a file, or a reference scenario when `spec` names one and no
    /// such file exists.
    pub fn load(spec: &str) -> Result<Self> {
        let path = Path::new(spec);
        if path.is_file() {
            let text = std::fs::read_to_string(path)?;
            return Self::from_toml(&text);
        }
        match REFERENCE_CONFIGS.iter().find(|(name, _)| *name == spec) {
            Some((_, text)) => Self::from_toml(text),
            None => Err(Error::Config(format!("no config file or reference scenario named {spec:?}"))),
        }
    }

    pub fn reference(name: &str) -> Result<Self> {
        match REFERENCE_CONFIGS.iter().find(|(n, _)| *n == name) {
            Some((_, text)) => Self::from_toml(text),
            None => Err(Error::Config(format!("unknown reference scenario {name:?}"))),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical serialization, as lowercase hex.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn exponent_set(&self) -> ExponentSet {
        let e = self.exponents;
        ExponentSet { dim: self.dim, q_phi: e.q_phi, q_f: e.q_f, q_p: e.q_p, q_g: e.q_g, q_gamma: e.q_gamma, p: e.p }
    }

    pub fn material(&self) -> Material {
        let exponents = self.exponent_set();
        let q_w = self
            .regularizer
            .q_w
            .unwrap_or_else(|| exponents.q_f.max(self.dim as f64 * self.elastic.eta_w));
        Material {
            exponents,
            hardening: HardeningParams {
                c1: self.hardening.c1,
                c2: self.hardening.c2,
                q_p: exponents.q_p,
                q_gamma: exponents.q_gamma,
            },
            elastic: self.elastic,
            dissipation: DissipationParams {
                sigma_yield: self.dissipation.sigma_yield,
                nu: self.dissipation.nu,
                p: exponents.p,
            },
            regularizer: RegularizerParams { c7: self.regularizer.c7, c8: self.regularizer.c8, q_w },
        }
    }

    pub fn f0(&self) -> Result<Mat> {
        matrix(&self.initial.f0, self.dim, "initial.f0")
    }

    pub fn mesh(&self) -> Result<Mesh> {
        match self.mode {
            MeshMode::Point => Ok(Mesh::unit_point(self.dim, self.mesh.pinned)),
            MeshMode::Fem2d => Mesh::fem2d(self.mesh.n, self.mesh.dirichlet),
        }
    }

    pub fn initial_plastic(&self, mesh: &Mesh) -> Result<PlasticField> {
        Ok(PlasticField::uniform(mesh, matrix(&self.initial.p0, self.dim, "initial.p0")?))
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.time.t_final, self.time.n_steps)
    }

    pub fn inner_options(&self) -> InnerOptions {
        InnerOptions { grad_tol: self.tolerances.inner_grad, max_iter: self.tolerances.inner_max_iter }
    }

    pub fn run_options(&self) -> RunOptions {
        RunOptions {
            step: StepOptions {
                gap_tol: self.tolerances.fenchel_gap,
                slack_tol: self.tolerances.comparison_slack,
                max_iter: self.tolerances.step_max_iter,
            },
            quadrature: self.time.quadrature,
        }
    }

    pub fn model(&self) -> Result<Model> {
        Model::new(self.mesh()?, self.material(), self.load.clone(), &self.f0()?, self.eta)
    }

    pub fn system(&self) -> Result<ViscoplasticSystem> {
        Ok(ViscoplasticSystem::new(self.model()?, self.inner_options()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim != 2 && self.dim != 3 {
            return Err(Error::Config(format!("dimension must be 2 or 3, got {}", self.dim)));
        }
        if self.mode == MeshMode::Fem2d {
            if self.dim != 2 {
                return Err(Error::Config("fem2d mode requires dim = 2".into()));
            }
            if self.mesh.n == 0 {
                return Err(Error::Config("mesh.n must be at least 1".into()));
            }
        }
        self.material().validate()?;
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(Error::Config(format!("eta must be a finite nonnegative number, got {}", self.eta)));
        }
        if self.load.force.len() != self.dim || self.load.force.iter().any(|f| !f.is_finite()) {
            return Err(Error::Config(format!("load.force must have {} finite components", self.dim)));
        }
        match self.load.shape {
            LoadShape::Constant => {}
            LoadShape::Ramp { rate: v } | LoadShape::Sine { omega: v } => {
                if !v.is_finite() {
                    return Err(Error::Config("load rate must be finite".into()));
                }
            }
        }
        let f0 = self.f0()?;
        if !(f0.det() > 0.0) {
            return Err(Error::Config(format!("initial.f0 must have positive determinant, got {}", f0.det())));
        }
        let p0 = matrix(&self.initial.p0, self.dim, "initial.p0")?;
        let hard = self.material().hardening;
        if !(p0.det() > 0.0) || !hardening_k(&p0, &hard).is_finite() {
            return Err(Error::Config(format!(
                "initial datum P0 must lie in GL+(d) with finite hardening energy (det = {})",
                p0.det()
            )));
        }
        self.grid().map_err(|e| Error::Config(e.to_string()))?;
        let t = &self.tolerances;
        for (name, v) in [
            ("inner_grad", t.inner_grad),
            ("fenchel_gap", t.fenchel_gap),
            ("comparison_slack", t.comparison_slack),
            ("residual_scale", t.residual_scale),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("tolerances.{name} must be positive, got {v}")));
            }
        }
        if t.inner_max_iter == 0 || t.step_max_iter == 0 {
            return Err(Error::Config("iteration limits must be positive".into()));
        }
        Ok(())
    }

    /// Applies command-line overrides and revalidates.
    pub fn with_overrides(mut self, eta: Option<f64>, steps: Option<usize>) -> Result<Self> {
        if let Some(eta) = eta {
            self.eta = eta;
        }
        if let Some(n) = steps {
            self.time.n_steps = n;
        }
        self.validate()?;
        Ok(self)
    }

    /// Runs the scenario. The trajectory carries the config hash.
    pub fn execute(&self) -> std::result::Result<Trajectory, RunFailure> {
        let setup = || -> Result<_> { Ok((self.system()?, self.grid()?)) };
        let (mut system, grid) = setup().map_err(|error| RunFailure { error, partial: None })?;
        let p0 = self.initial_plastic(&system.model.mesh).map_err(|error| RunFailure { error, partial: None })?;
        let hash = self.hash();
        minimizing_movements::run(&p0, grid, &mut system, &self.run_options())
            .map(|mut t| {
                t.config_hash = hash.clone();
                t
            })
            .map_err(|mut f| {
                if let Some(t) = f.partial.as_mut() {
                    t.config_hash = hash.clone();
                }
                f
            })
    }

    /// `residual_scale · (1 + |E(0)|)`.
    pub fn edi_tolerance(&self, traj: &Trajectory) -> f64 {
        self.tolerances.residual_scale * (1.0 + traj.records[0].energy.abs())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_configs_load() {
        for (name, _) in REFERENCE_CONFIGS {
            let cfg = RunConfig::reference(name).unwrap();
            assert_eq!(cfg.name, name);
            assert!(cfg.system().is_ok());
        }
    }

    #[test]
    fn unknown_key_is_rejected() {
        let text = REFERENCE_CONFIGS[0].1.replacen("eta =", "etaa = 0.0\neta =", 1);
        assert!(matches!(RunConfig::from_toml(&text), Err(Error::Config(_))));
    }

    #[test]
    fn bad_gradient_exponent_names_condition() {
        let cfg = RunConfig::reference("point_ramp").unwrap();
        let text = cfg.to_toml().replace("q_g = 6.0", "q_g = 2.0");
        let err = RunConfig::from_toml(&text).unwrap_err().to_string();
        assert!(err.contains("q_tilde > d"), "{err}");
    }

    #[test]
    fn singular_initial_datum_is_rejected() {
        let mut cfg = RunConfig::reference("point_ramp").unwrap();
        cfg.initial.p0 = vec![vec![1.0, 0.0], vec![0.0, -1.0]];
        assert!(cfg.validate().unwrap_err().to_string().contains("GL+"));
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = RunConfig::reference("point_ramp").unwrap();
        let b = RunConfig::load("point_ramp").unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
        let c = a.clone().with_overrides(None, Some(64)).unwrap();
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn overrides_revalidate() {
        let a = RunConfig::reference("point_ramp").unwrap();
        assert!(a.clone().with_overrides(Some(-1.0), None).is_err());
        assert!(a.with_overrides(None, Some(0)).is_err());
    }
}
