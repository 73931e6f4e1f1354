//! Run configuration: strict TOML schema, defaults and cross-field checks.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use bdlab::CoefficientModel;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config {path}: {source}")]
    Parse {
        path: PathBuf,
        source: Box<toml::de::Error>,
    },
    #[error("`{field}`: {reason}")]
    Field { field: &'static str, reason: String },
    #[error("`equilibrium`: exactly one of `mu` or `z` must be given")]
    MuOrZ,
    #[error("`numerics.n_trunc` = {n_trunc} is below 4 x {top} = {required} (largest support index in the experiment block)")]
    Truncation {
        n_trunc: usize,
        top: usize,
        required: usize,
    },
}

fn field(field: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Field {
        field,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelFamily {
    Penrose,
    Constant,
    CustomTable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Table {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelFamily,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z_s: Option<f64>,
    /// Constant-model rates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<Table>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: ModelFamily::Penrose,
            alpha: None,
            beta: None,
            q: None,
            z_s: None,
            a: None,
            b: None,
            table: None,
        }
    }
}

impl ModelConfig {
    pub fn build(&self) -> Result<Arc<CoefficientModel>, ConfigError> {
        let only = |name: &'static str, set: bool| {
            if set {
                Err(field(
                    name,
                    format!("not used by the {:?} model", self.kind),
                ))
            } else {
                Ok(())
            }
        };
        let m = match self.kind {
            ModelFamily::Penrose => {
                only("model.a", self.a.is_some())?;
                only("model.b", self.b.is_some())?;
                only("model.table", self.table.is_some())?;
                CoefficientModel::penrose(
                    self.alpha.unwrap_or(0.5),
                    self.beta.unwrap_or(0.0),
                    self.q.unwrap_or(1.0),
                    self.z_s.unwrap_or(1.0),
                )
            }
            ModelFamily::Constant => {
                only("model.alpha", self.alpha.is_some())?;
                only("model.table", self.table.is_some())?;
                CoefficientModel::constant(self.a.unwrap_or(1.0), self.b.unwrap_or(1.0))
            }
            ModelFamily::CustomTable => {
                let t = self
                    .table
                    .as_ref()
                    .ok_or_else(|| field("model.table", "required for custom-table"))?;
                CoefficientModel::custom_table(t.a.clone(), t.b.clone())
            }
        };
        m.map(Arc::new).map_err(|e| field("model", e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EquilibriumConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z: Option<f64>,
    #[serde(default = "default_tol")]
    pub tol: f64,
}

fn default_tol() -> f64 {
    1e-12
}

impl Default for EquilibriumConfig {
    fn default() -> Self {
        Self {
            mu: None,
            z: None,
            tol: default_tol(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    Explicit,
    Implicit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NumericsConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_trunc: Option<usize>,
    #[serde(default = "default_rtol")]
    pub rtol: f64,
    #[serde(default = "default_scheme")]
    pub scheme: Scheme,
    /// Step for the implicit scheme.
    #[serde(default = "default_dt")]
    pub dt: f64,
}

fn default_rtol() -> f64 {
    1e-8
}
fn default_scheme() -> Scheme {
    Scheme::Explicit
}
fn default_dt() -> f64 {
    0.01
}

impl Default for NumericsConfig {
    fn default() -> Self {
        Self {
            n_trunc: None,
            rtol: default_rtol(),
            scheme: default_scheme(),
            dt: default_dt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum InitialData {
    /// Uniform unit-mass pulse on the open interval `support`.
    Pulse,
    /// Two opposite half-mass pulses, with `N` the upper end of `support`.
    TwoPulse,
    /// The zero eigenvector ξ.
    Kernel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Generator {
    Full,
    Tilde,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvolveConfig {
    pub t: f64,
    pub data: InitialData,
    pub support: [usize; 2],
    pub operator: Generator,
    pub n_out: usize,
    pub snapshots: bool,
}

impl Default for EvolveConfig {
    fn default() -> Self {
        Self {
            t: 10.0,
            data: InitialData::Pulse,
            support: [64, 128],
            operator: Generator::Full,
            n_out: 100,
            snapshots: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectrumConfig {
    pub lambda_grid: Vec<f64>,
    pub n1_schedule: Vec<usize>,
    pub k: f64,
    pub mass_correct: bool,
    pub n2_factor: usize,
}

impl Default for SpectrumConfig {
    fn default() -> Self {
        Self {
            lambda_grid: vec![-5.0, -2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0, 5.0],
            n1_schedule: (6..=12).map(|p| 1usize << p).collect(),
            k: 1.0,
            mass_correct: false,
            n2_factor: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PulseExperimentConfig {
    pub n1: Vec<usize>,
    /// Explicit upper window end; only with a single `n1`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n2: Option<usize>,
    pub n2_factor: usize,
    pub eps: f64,
    /// Absolute K*; overrides `k_star_multiples`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_star: Option<f64>,
    pub k_star_multiples: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    pub n_out: usize,
}

impl Default for PulseExperimentConfig {
    fn default() -> Self {
        Self {
            n1: vec![512, 1024, 2048],
            n2: None,
            n2_factor: 2,
            eps: 0.1,
            k_star: None,
            k_star_multiples: vec![2.0, 4.0, 8.0],
            t: None,
            n_out: 200,
        }
    }
}

impl PulseExperimentConfig {
    pub fn top(&self) -> usize {
        match self.n2 {
            Some(n2) => n2,
            None => self.n1.iter().copied().max().unwrap_or(0) * self.n2_factor,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CutoffExperimentConfig {
    pub n_list: Vec<usize>,
    pub eps: f64,
    pub eta: f64,
    pub dt_out: f64,
    pub budget_factor: f64,
}

impl Default for CutoffExperimentConfig {
    fn default() -> Self {
        Self {
            n_list: vec![256, 512, 1024, 2048],
            eps: 0.1,
            eta: 0.01,
            dt_out: 0.25,
            budget_factor: 8.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AssumptionsConfig {
    pub n: usize,
    pub tol: f64,
}

impl Default for AssumptionsConfig {
    fn default() -> Self {
        Self { n: 4096, tol: 0.02 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub evolve: EvolveConfig,
    pub spectrum: SpectrumConfig,
    pub pulse: PulseExperimentConfig,
    pub cutoff: CutoffExperimentConfig,
    pub assumptions: AssumptionsConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub equilibrium: EquilibriumConfig,
    #[serde(default)]
    pub numerics: NumericsConfig,
    #[serde(default)]
    pub experiment: ExperimentConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

/// Which experiment block the truncation has to accommodate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Equilibrium,
    Evolve,
    Spectrum,
    Pulse,
    Cutoff,
    CheckAssumptions,
}

impl RunConfig {
    pub fn from_toml_str(text: &str, path: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            source: Box::new(e),
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::from_toml_str(&text, path)
    }

    /// Largest support or window index the task touches.
    pub fn support_top(&self, task: Task) -> usize {
        let e = &self.experiment;
        match task {
            Task::Evolve => e.evolve.support[1],
            Task::Spectrum => {
                let n2 = e.spectrum.n1_schedule.iter().copied().max().unwrap_or(0)
                    * e.spectrum.n2_factor;
                if e.spectrum.mass_correct {
                    8 * n2
                } else {
                    n2
                }
            }
            Task::Pulse => e.pulse.top(),
            Task::Cutoff => e.cutoff.n_list.iter().copied().max().unwrap_or(0),
            Task::Equilibrium | Task::CheckAssumptions => 0,
        }
    }

    /// Fills defaults that depend on the task and checks cross-field rules.
    pub fn resolve(mut self, task: Task) -> Result<Self, ConfigError> {
        self.model.build()?;
        let eq = &self.equilibrium;
        match (eq.mu, eq.z) {
            (Some(_), Some(_)) => return Err(ConfigError::MuOrZ),
            (None, None) if task != Task::CheckAssumptions => return Err(ConfigError::MuOrZ),
            _ => {}
        }
        if let Some(mu) = eq.mu {
            if !(mu > 0.0 && mu.is_finite()) {
                return Err(field("equilibrium.mu", format!("{mu} must be positive")));
            }
        }
        if let Some(z) = eq.z {
            if !(z > 0.0 && z.is_finite()) {
                return Err(field("equilibrium.z", format!("{z} must be positive")));
            }
        }
        let num = &self.numerics;
        if !(num.rtol > 0.0 && num.rtol < 1.0) {
            return Err(field(
                "numerics.rtol",
                format!("{} not in (0, 1)", num.rtol),
            ));
        }
        if !(num.dt > 0.0) {
            return Err(field("numerics.dt", format!("{} must be positive", num.dt)));
        }
        self.check_experiment(task)?;
        let top = self.support_top(task);
        if top > 0 {
            let required = 4 * top;
            match self.numerics.n_trunc {
                Some(n) if n < required => {
                    return Err(ConfigError::Truncation {
                        n_trunc: n,
                        top,
                        required,
                    })
                }
                Some(_) => {}
                None => self.numerics.n_trunc = Some(required),
            }
        }
        Ok(self)
    }

    fn check_experiment(&self, task: Task) -> Result<(), ConfigError> {
        let e = &self.experiment;
        match task {
            Task::Evolve => {
                let [lo, hi] = e.evolve.support;
                if !(lo >= 1 && hi >= lo + 2) {
                    return Err(field(
                        "experiment.evolve.support",
                        format!("[{lo}, {hi}] must satisfy 1 <= lo and lo + 2 <= hi"),
                    ));
                }
                if !(e.evolve.t > 0.0) {
                    return Err(field("experiment.evolve.t", "must be positive"));
                }
                if e.evolve.n_out == 0 {
                    return Err(field("experiment.evolve.n_out", "must be positive"));
                }
            }
            Task::Spectrum => {
                if e.spectrum.lambda_grid.is_empty() || e.spectrum.n1_schedule.is_empty() {
                    return Err(field(
                        "experiment.spectrum",
                        "lambda_grid and n1_schedule must be nonempty",
                    ));
                }
                if !(e.spectrum.k >= 1.0) {
                    return Err(field(
                        "experiment.spectrum.k",
                        format!("{} must be >= 1", e.spectrum.k),
                    ));
                }
            }
            Task::Pulse => {
                let p = &e.pulse;
                if p.n1.is_empty() {
                    return Err(field("experiment.pulse.n1", "must be nonempty"));
                }
                if p.n2.is_some() && p.n1.len() != 1 {
                    return Err(field(
                        "experiment.pulse.n2",
                        "only allowed with a single n1",
                    ));
                }
                if !(p.eps > 0.0 && p.eps < 1.0) {
                    return Err(field(
                        "experiment.pulse.eps",
                        format!("{} not in (0, 1)", p.eps),
                    ));
                }
                if p.k_star.is_none() && p.k_star_multiples.is_empty() {
                    return Err(field(
                        "experiment.pulse.k_star_multiples",
                        "must be nonempty",
                    ));
                }
            }
            Task::Cutoff => {
                let c = &e.cutoff;
                if c.n_list.is_empty() {
                    return Err(field("experiment.cutoff.n_list", "must be nonempty"));
                }
                if !(c.eps > 0.0 && c.eps < 0.5) {
                    return Err(field(
                        "experiment.cutoff.eps",
                        format!("{} not in (0, 1/2)", c.eps),
                    ));
                }
                if !(c.eta >= 0.0) {
                    return Err(field("experiment.cutoff.eta", "must be nonnegative"));
                }
            }
            Task::CheckAssumptions => {
                if e.assumptions.n < 16 {
                    return Err(field("experiment.assumptions.n", "must be at least 16"));
                }
            }
            Task::Equilibrium => {}
        }
        Ok(())
    }

    pub fn n_trunc(&self) -> usize {
        self.numerics.n_trunc.unwrap_or(0)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    /// `sha256:<hex>` of the canonical TOML form of the resolved config.
    pub fn content_hash(&self) -> String {
        let text = self.to_toml();
        let mut h = Sha256::new();
        h.update(format!("config {}\0", text.len()));
        h.update(text.as_bytes());
        let digest = h.finalize();
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        format!("sha256:{hex}")
    }
}
