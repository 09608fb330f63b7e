//! Experiment configuration: one JSON document describing the system, the
//! data to harvest, the dictionaries, the formulations to fit and the
//! conditions to check.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use kooplab::consistency::{ConditionId, DEFAULT_TOLERANCE};
use kooplab::dynamics::{
    builtin_system, catalog_names, discretize, ControlKind, ControlledSystem, DatasetSpec, DerivativeSource,
    SnapshotKind, TimeKind,
};
use kooplab::formulations::{JointFitMode, Variant};
use kooplab::grid::{BoxRegion, Grid};
use kooplab::observables::{Dictionary, DictionarySpec, JointDictionary, JointSpec};
use serde::{Deserialize, Serialize};

pub const CONFIG_SCHEMA: &str = "kooplab.experiment/1";

/// A configuration problem, located by a dotted field path.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self { path: path.into(), message: message.into() }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config error at `{}`: {}", self.path, self.message)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub name: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisConfig {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub state: AxisConfig,
    pub input: AxisConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub n_samples: usize,
    pub control: ControlKind,
    pub seed: u64,
    pub dt: f64,
    /// Sampling box for initial states; `[-2, 2]^n` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<BoxRegion>,
    #[serde(default)]
    pub kind: SnapshotKind,
    #[serde(default)]
    pub derivative: DerivativeSource,
    #[serde(default = "one")]
    pub amplitude: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DictionariesConfig {
    /// State dictionary; identity when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<DictionarySpec>,
    /// Input dictionary of the separable form; identity when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<DictionarySpec>,
    /// Input dictionary of the bilinear form; `{1, u}` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bilinear_input: Option<DictionarySpec>,
    /// Joint dictionary; products of degree one in `x` and `u` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub joint: Option<JointSpec>,
    /// Eigenfunction dictionary over `(x, u)`; required for `kaiser-eigen`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eigen: Option<DictionarySpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FormulationConfig {
    pub variant: Variant,
    #[serde(default)]
    pub ridge: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub joint_mode: Option<JointFitMode>,
}

impl FormulationConfig {
    pub fn new(variant: Variant) -> Self {
        Self { variant, ridge: 0.0, joint_mode: None }
    }
}

/// `"all-applicable"` or an explicit list of condition names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ChecksConfig {
    Keyword(String),
    List(Vec<String>),
}

impl Default for ChecksConfig {
    fn default() -> Self {
        ChecksConfig::Keyword(ALL_APPLICABLE.into())
    }
}

const ALL_APPLICABLE: &str = "all-applicable";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareConfig {
    #[serde(default = "default_trajectories")]
    pub trajectories: usize,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    /// Seed for held-out initial states and inputs; dataset seed + 1 when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

fn default_trajectories() -> usize {
    8
}
fn default_horizon() -> usize {
    20
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self { trajectories: default_trajectories(), horizon: default_horizon(), seed: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: String,
    pub system: SystemConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridConfig>,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub dictionaries: DictionariesConfig,
    pub formulations: Vec<FormulationConfig>,
    #[serde(default)]
    pub checks: ChecksConfig,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub compare: CompareConfig,
}

fn default_tolerance() -> f64 {
    DEFAULT_TOLERANCE
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub tolerance: Option<f64>,
    pub ridge: Option<f64>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| ConfigError::new("--config", format!("cannot read {}: {e}", path.display())))?;
        Ok(Self::from_json(&text)?)
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let config: Self = serde_json::from_str(text)
            .map_err(|e| ConfigError::new(format!("line {} column {}", e.line(), e.column()), e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    pub fn apply(&mut self, overrides: Overrides) -> Result<(), ConfigError> {
        if let Some(seed) = overrides.seed {
            self.dataset.seed = seed;
        }
        if let Some(tol) = overrides.tolerance {
            self.tolerance = tol;
        }
        if let Some(ridge) = overrides.ridge {
            for f in &mut self.formulations {
                f.ridge = ridge;
            }
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.schema != CONFIG_SCHEMA {
            return Err(ConfigError::new("schema", format!("expected `{CONFIG_SCHEMA}`, got `{}`", self.schema)));
        }
        let system = self.base_system()?;
        let (n, m) = (system.state_dim(), system.input_dim());

        if let Some(g) = &self.grid {
            for (name, axis, dim) in [("grid.state", &g.state, n), ("grid.input", &g.input, m)] {
                for (field, len) in [("lower", axis.lower.len()), ("upper", axis.upper.len()), ("counts", axis.counts.len())] {
                    if len != dim {
                        return Err(ConfigError::new(format!("{name}.{field}"), format!("expected {dim} entries, got {len}")));
                    }
                }
                for (i, &c) in axis.counts.iter().enumerate() {
                    if c < 2 {
                        return Err(ConfigError::new(format!("{name}.counts[{i}]"), "needs at least 2 points"));
                    }
                }
                BoxRegion::new(axis.lower.clone(), axis.upper.clone())
                    .and_then(|b| b.validate())
                    .map_err(|e| ConfigError::new(name, e.to_string()))?;
            }
        }

        let d = &self.dataset;
        if d.n_samples == 0 {
            return Err(ConfigError::new("dataset.n_samples", "must be at least 1"));
        }
        if !(d.dt > 0.0 && d.dt.is_finite()) {
            return Err(ConfigError::new("dataset.dt", format!("must be positive, got {}", d.dt)));
        }
        if !(d.amplitude >= 0.0 && d.amplitude.is_finite()) {
            return Err(ConfigError::new("dataset.amplitude", "must be finite and non-negative"));
        }
        if let Some(r) = &d.region {
            if r.dim() != n {
                return Err(ConfigError::new("dataset.region", format!("expected dimension {n}, got {}", r.dim())));
            }
            r.validate().map_err(|e| ConfigError::new("dataset.region", e.to_string()))?;
        }

        if self.formulations.is_empty() {
            return Err(ConfigError::new("formulations", "at least one formulation is required"));
        }
        for (i, f) in self.formulations.iter().enumerate() {
            let path = format!("formulations[{i}]");
            if !(f.ridge >= 0.0 && f.ridge.is_finite()) {
                return Err(ConfigError::new(format!("{path}.ridge"), "must be finite and non-negative"));
            }
            if f.joint_mode.is_some() && f.variant != Variant::Joint {
                return Err(ConfigError::new(format!("{path}.joint_mode"), "only applies to the joint variant"));
            }
            if f.variant == Variant::KaiserEigen && d.kind != SnapshotKind::ContinuousDerivative {
                return Err(ConfigError::new(
                    format!("{path}.variant"),
                    "kaiser-eigen needs a continuous-derivative dataset",
                ));
            }
            if self.formulations[..i].iter().any(|g| g.variant == f.variant) {
                return Err(ConfigError::new(format!("{path}.variant"), format!("`{}` listed twice", f.variant)));
            }
        }
        let needs = |v: Variant| self.formulations.iter().any(|f| f.variant == v);
        self.state_dictionary(n)?;
        if needs(Variant::Separable) {
            let psi_u = self.input_dictionary(m)?;
            if !psi_u.is_zero_at_zero() {
                return Err(ConfigError::new("dictionaries.input", "must vanish at u = 0"));
            }
        }
        if needs(Variant::WilliamsBilinear) {
            let psi_u = self.bilinear_input_dictionary(m)?;
            if !psi_u.has_constant() {
                return Err(ConfigError::new("dictionaries.bilinear_input", "must contain the constant function"));
            }
        }
        if needs(Variant::Joint) {
            self.joint_dictionary(n, m)?;
        }
        if needs(Variant::KaiserEigen) {
            self.eigen_dictionary(n, m)?;
        }

        self.selected_checks()?;
        if !(self.tolerance >= 0.0 && self.tolerance.is_finite()) {
            return Err(ConfigError::new("tolerance", "must be finite and non-negative"));
        }
        if self.compare.horizon == 0 {
            return Err(ConfigError::new("compare.horizon", "must be at least 1"));
        }
        if self.compare.trajectories == 0 {
            return Err(ConfigError::new("compare.trajectories", "must be at least 1"));
        }
        Ok(())
    }

    /// The catalog system as configured, in continuous time.
    pub fn base_system(&self) -> Result<ControlledSystem, ConfigError> {
        if !catalog_names().contains(&self.system.name.as_str()) {
            return Err(ConfigError::new(
                "system.name",
                format!("unknown system `{}`; known: {}", self.system.name, catalog_names().join(", ")),
            ));
        }
        builtin_system(&self.system.name, &self.system.params).map_err(|e| ConfigError::new("system.params", e.to_string()))
    }

    pub fn time_kind(&self) -> TimeKind {
        self.dataset.kind.time_kind()
    }

    /// The system in the time convention of the models: the catalog field
    /// for continuous data, its RK4 map over `dataset.dt` for discrete pairs.
    pub fn system_for(&self, kind: TimeKind) -> anyhow::Result<ControlledSystem> {
        let base = self.base_system()?;
        Ok(match kind {
            TimeKind::Continuous => base,
            TimeKind::Discrete => discretize(&base, self.dataset.dt)?,
        })
    }

    pub fn grid(&self) -> Result<Grid, ConfigError> {
        let sys = self.base_system()?;
        match &self.grid {
            None => Ok(Grid::default_for(sys.state_dim(), sys.input_dim())),
            Some(g) => {
                let boxed = |a: &AxisConfig| BoxRegion::new(a.lower.clone(), a.upper.clone());
                let build = || Grid::tensor(&boxed(&g.state)?, &g.state.counts, &boxed(&g.input)?, &g.input.counts);
                build().map_err(|e| ConfigError::new("grid", e.to_string()))
            }
        }
    }

    pub fn dataset_spec(&self) -> Result<DatasetSpec, ConfigError> {
        let d = &self.dataset;
        let n = self.base_system()?.state_dim();
        let region = d.region.clone().unwrap_or_else(|| BoxRegion::symmetric(n, 2.0));
        let mut spec = DatasetSpec::new(d.n_samples, d.control, d.seed, d.dt, region).with_amplitude(d.amplitude);
        spec.kind = d.kind;
        spec.derivative = d.derivative;
        Ok(spec)
    }

    pub fn state_dictionary(&self, n: usize) -> Result<Dictionary, ConfigError> {
        match &self.dictionaries.state {
            None => Ok(Dictionary::identity(n)),
            Some(spec) => Dictionary::build(spec, n).map_err(|e| ConfigError::new("dictionaries.state", e.to_string())),
        }
    }

    pub fn input_dictionary(&self, m: usize) -> Result<Dictionary, ConfigError> {
        match &self.dictionaries.input {
            None => Ok(Dictionary::identity(m)),
            Some(spec) => Dictionary::build(spec, m).map_err(|e| ConfigError::new("dictionaries.input", e.to_string())),
        }
    }

    pub fn bilinear_input_dictionary(&self, m: usize) -> Result<Dictionary, ConfigError> {
        let spec = self
            .dictionaries
            .bilinear_input
            .clone()
            .unwrap_or(DictionarySpec::Monomials { degree: 1, include_constant: true });
        Dictionary::build(&spec, m).map_err(|e| ConfigError::new("dictionaries.bilinear_input", e.to_string()))
    }

    pub fn joint_dictionary(&self, n: usize, m: usize) -> Result<JointDictionary, ConfigError> {
        let spec = self
            .dictionaries
            .joint
            .clone()
            .unwrap_or(JointSpec::Products { state_degree: 1, input_degree: 1 });
        JointDictionary::build(&spec, n, m).map_err(|e| ConfigError::new("dictionaries.joint", e.to_string()))
    }

    pub fn eigen_dictionary(&self, n: usize, m: usize) -> Result<Dictionary, ConfigError> {
        let spec = self
            .dictionaries
            .eigen
            .as_ref()
            .ok_or_else(|| ConfigError::new("dictionaries.eigen", "required by kaiser-eigen"))?;
        Dictionary::build(spec, n + m).map_err(|e| ConfigError::new("dictionaries.eigen", e.to_string()))
    }

    /// `None` for all applicable conditions.
    pub fn selected_checks(&self) -> Result<Option<Vec<ConditionId>>, ConfigError> {
        match &self.checks {
            ChecksConfig::Keyword(k) if k == ALL_APPLICABLE => Ok(None),
            ChecksConfig::Keyword(k) => {
                Err(ConfigError::new("checks", format!("expected `{ALL_APPLICABLE}` or a list, got `{k}`")))
            }
            ChecksConfig::List(items) => {
                if items.is_empty() {
                    return Err(ConfigError::new("checks", "empty condition list"));
                }
                items
                    .iter()
                    .enumerate()
                    .map(|(i, s)| s.parse().map_err(|e| ConfigError::new(format!("checks[{i}]"), format!("{e}"))))
                    .collect::<Result<Vec<_>, _>>()
                    .map(Some)
            }
        }
    }

    pub fn output_dir(&self, cli: Option<&Path>) -> PathBuf {
        cli.map(Path::to_path_buf)
            .or_else(|| self.output.clone())
            .unwrap_or_else(|| PathBuf::from("kooplab-out"))
    }

    pub fn compare_seed(&self) -> u64 {
        self.compare.seed.unwrap_or(self.dataset.seed.wrapping_add(1))
    }
}
