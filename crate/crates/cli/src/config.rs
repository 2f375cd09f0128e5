//! Experiment configuration, read from TOML.
//!
//! Unknown keys are rejected everywhere. Every section except `[model]` is
//! optional; the effective configuration (defaults filled in, overrides
//! applied, paths made absolute) is written next to each run's outputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use qident_core::ident::{GradientMethod, DEFAULT_FD_STEP, DEFAULT_OBJECTIVE_TOLERANCE};
use qident_core::lindblad::SamplingGrid;
use qident_core::spectral::{Window, DEFAULT_MIN_PROMINENCE};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub measurement: MeasurementConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseConfig>,
    #[serde(default)]
    pub descent: DescentSection,
    #[serde(default)]
    pub guess: GuessSection,
    #[serde(default)]
    pub spectrum: SpectrumSection,
    #[serde(default)]
    pub gradcheck: GradcheckSection,
    #[serde(default)]
    pub io: IoSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelConfig {
    Jc(JcConfig),
    Augmented(AugmentedConfig),
    Generic(GenericConfig),
}

impl ModelConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            ModelConfig::Jc(_) => "jc",
            ModelConfig::Augmented(_) => "augmented",
            ModelConfig::Generic(_) => "generic",
        }
    }
}

/// Qubit coupled to a lossy resonator. Values double as the truth when the
/// measured trace is simulated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JcConfig {
    pub nu_q: f64,
    pub nu_0: f64,
    pub g_d: f64,
    pub gamma_d: f64,
    pub gamma_0: f64,
    #[serde(default = "default_jc_levels")]
    pub n_levels: usize,
    #[serde(default = "default_jc_unknowns")]
    pub unknowns: Vec<String>,
    #[serde(default = "default_observable")]
    pub observable: ObservableConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_state: Option<Vec<String>>,
}

/// Qubit at `omega_0` coupled to damped ancilla oscillators; all ancilla
/// parameters are unknown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentedConfig {
    pub omega_0: f64,
    /// Default truncation for ancillas without their own `n_levels`.
    #[serde(default = "default_ancilla_levels")]
    pub n_levels: usize,
    pub ancillas: Vec<AncillaConfig>,
    #[serde(default = "default_observable")]
    pub observable: ObservableConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_state: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AncillaConfig {
    pub omega: f64,
    pub gamma_bar: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_levels: Option<usize>,
}

/// Arbitrary tensor-product model assembled from named operator terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenericConfig {
    pub factors: Vec<usize>,
    pub hamiltonian: Vec<TermConfig>,
    #[serde(default)]
    pub dissipators: Vec<TermConfig>,
    pub unknowns: Vec<String>,
    pub observable: ObservableConfig,
    pub initial_state: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermConfig {
    pub name: String,
    /// Coefficient (Hamiltonian) or rate (dissipator).
    pub value: f64,
    pub operator: Vec<ProductConfig>,
}

/// `(coeff + i·im) · op₁ · op₂ ⋯`, each op written `name:factor`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProductConfig {
    #[serde(default = "one")]
    pub coeff: f64,
    #[serde(default)]
    pub im: f64,
    pub ops: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ObservableConfig {
    /// A single operator token such as `sx` or `n:1`.
    Named(String),
    Sum(Vec<ProductConfig>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_samples")]
    pub samples: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            dt: default_dt(),
            samples: default_samples(),
        }
    }
}

impl GridConfig {
    pub fn grid(&self) -> CliResult<SamplingGrid> {
        Ok(SamplingGrid::new(self.dt, self.samples)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasurementSource {
    /// Simulate the model at its configured values.
    #[default]
    Simulate,
    /// Read a `t,y` table.
    File,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementConfig {
    #[serde(default)]
    pub source: MeasurementSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// Truncation used when simulating the truth (resonator or ancilla levels).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth_levels: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub sigma: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientChoice {
    #[default]
    PaperApprox,
    ExactFrechet,
    FiniteDifference,
}

impl From<GradientChoice> for GradientMethod {
    fn from(c: GradientChoice) -> Self {
        match c {
            GradientChoice::PaperApprox => GradientMethod::PaperApprox,
            GradientChoice::ExactFrechet => GradientMethod::ExactFrechet,
            GradientChoice::FiniteDifference => GradientMethod::FiniteDifference,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DescentSection {
    /// Step size for every unknown not listed in `step_sizes`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_size: Option<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub step_sizes: BTreeMap<String, f64>,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    /// Stop once `J` drops to this value; negative disables the check.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default)]
    pub gradient_method: GradientChoice,
    #[serde(default = "yes")]
    pub clamp_rates: bool,
    #[serde(default = "default_fd_step")]
    pub fd_step: f64,
    #[serde(default = "yes")]
    pub reduce_subspace: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub starts: Vec<BTreeMap<String, f64>>,
}

impl Default for DescentSection {
    fn default() -> Self {
        Self {
            step_size: None,
            step_sizes: BTreeMap::new(),
            max_iters: default_max_iters(),
            tolerance: default_tolerance(),
            gradient_method: GradientChoice::default(),
            clamp_rates: true,
            fd_step: default_fd_step(),
            reduce_subspace: true,
            starts: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowChoice {
    #[default]
    Rectangular,
    Hann,
}

impl From<WindowChoice> for Window {
    fn from(w: WindowChoice) -> Self {
        match w {
            WindowChoice::Rectangular => Window::Rectangular,
            WindowChoice::Hann => Window::Hann,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuessSection {
    /// Qubit line to set aside; defaults to the model's qubit frequency.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub known_qubit_omega: Option<f64>,
    #[serde(default = "default_prominence")]
    pub min_prominence: f64,
    #[serde(default)]
    pub window: WindowChoice,
    /// Coupling guesses used to undress the detected lines.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu_guesses: Option<Vec<f64>>,
}

impl Default for GuessSection {
    fn default() -> Self {
        Self {
            known_qubit_omega: None,
            min_prominence: default_prominence(),
            window: WindowChoice::default(),
            mu_guesses: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_max: Option<f64>,
    #[serde(default = "default_spectrum_points")]
    pub n_points: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub identified: Option<Vec<AncillaConfig>>,
}

impl Default for SpectrumSection {
    fn default() -> Self {
        Self {
            omega_min: None,
            omega_max: None,
            n_points: default_spectrum_points(),
            identified: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradcheckSection {
    /// Evaluation point; defaults to the first start, then to the truth.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<BTreeMap<String, f64>>,
    #[serde(default = "default_fd_step")]
    pub fd_step: f64,
    /// Number of Δt halvings (with K doubled) after the base grid.
    #[serde(default = "default_halvings")]
    pub halvings: usize,
}

impl Default for GradcheckSection {
    fn default() -> Self {
        Self {
            theta: None,
            fd_step: default_fd_step(),
            halvings: default_halvings(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IoSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    /// `simulate` also writes per-step trace and purity.
    #[serde(default)]
    pub write_states: bool,
}

fn default_jc_levels() -> usize {
    8
}
fn default_jc_unknowns() -> Vec<String> {
    ["nu_q", "g_d", "gamma_d"].map(String::from).to_vec()
}
fn default_observable() -> ObservableConfig {
    ObservableConfig::Named("sx".into())
}
fn default_ancilla_levels() -> usize {
    4
}
fn one() -> f64 {
    1.0
}
fn yes() -> bool {
    true
}
fn default_dt() -> f64 {
    SamplingGrid::DEFAULT_DT
}
fn default_samples() -> usize {
    SamplingGrid::DEFAULT_SAMPLES
}
fn default_max_iters() -> usize {
    1000
}
fn default_tolerance() -> f64 {
    DEFAULT_OBJECTIVE_TOLERANCE
}
fn default_fd_step() -> f64 {
    DEFAULT_FD_STEP
}
fn default_prominence() -> f64 {
    DEFAULT_MIN_PROMINENCE
}
fn default_spectrum_points() -> usize {
    1001
}
fn default_halvings() -> usize {
    1
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Reads `path` and resolves relative paths against its directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: Self =
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.resolve_paths(&base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let abs = |p: &Path| -> PathBuf {
            let joined = if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
            std::path::absolute(&joined).unwrap_or(joined)
        };
        if let Some(p) = &self.measurement.path {
            self.measurement.path = Some(abs(p));
        }
        if let Some(p) = &self.io.out_dir {
            self.io.out_dir = Some(abs(p));
        }
    }

    pub fn to_toml_string(&self) -> CliResult<String> {
        toml::to_string(self).map_err(|e| CliError::Other(format!("cannot serialise configuration: {e}")))
    }

    /// Fills in model defaults that depend on other fields.
    pub fn fill_defaults(&mut self) {
        match &mut self.model {
            ModelConfig::Jc(jc) => {
                jc.initial_state.get_or_insert_with(|| vec!["plus".into(), "fock:0".into()]);
            }
            ModelConfig::Augmented(aug) => {
                let n = aug.n_levels;
                for a in &mut aug.ancillas {
                    a.n_levels.get_or_insert(n);
                }
                let r = aug.ancillas.len();
                aug.initial_state.get_or_insert_with(|| {
                    std::iter::once("plus".to_string())
                        .chain(std::iter::repeat_n("fock:0".to_string(), r))
                        .collect()
                });
            }
            ModelConfig::Generic(_) => {}
        }
    }
}
