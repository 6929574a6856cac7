//! Experiment configuration files.
//!
//! A minimal file names a family and the number of iterations:
//!
//! ```toml
//! iterations = 200
//!
//! [family]
//! generator = "decoy"
//! ```
//!
//! Every other field has a default, see [`RunConfig`].

use std::path::{Path, PathBuf};

use optenet::linear::ObsBases;
use optenet::model::Sizes;
use optenet::planner::{StochasticSettings, BUDGET_ENV, DEFAULT_PLAN_BUDGET};
use optenet::rkhs::{RkhsContext, TripleKernel};
use serde::{Deserialize, Serialize};

use crate::error::{io_error, HarnessError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Number of learning iterations `K`.
    pub iterations: usize,
    pub family: FamilyConfig,
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Confidence level; computed from `delta` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default)]
    pub solver: SolverKind,
    #[serde(default)]
    pub stochastic: StochasticConfig,
    #[serde(default)]
    pub kernel: KernelConfig,
    /// Cap on `(O·A)^H`; the `OPTENET_PLAN_BUDGET` variable takes precedence.
    #[serde(default = "default_budget")]
    pub plan_budget: u64,
    #[serde(default)]
    pub tolerances: Tolerances,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<String>,
    /// Family file with `true_index` and `[[candidates]]` model tables.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
    #[serde(default = "two")]
    pub states: usize,
    #[serde(default = "two")]
    pub actions: usize,
    #[serde(default = "two")]
    pub observations: usize,
    #[serde(default = "three")]
    pub horizon: usize,
    #[serde(default = "four")]
    pub candidates: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    #[default]
    Exact,
    Stochastic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StochasticConfig {
    pub steps: usize,
    pub batch: usize,
    pub eta: f64,
    pub n_dual: usize,
    pub n_primal: usize,
}

impl Default for StochasticConfig {
    fn default() -> Self {
        let s = StochasticSettings::default();
        Self {
            steps: s.steps,
            batch: s.batch,
            eta: s.eta,
            n_dual: s.n_dual,
            n_primal: s.n_primal,
        }
    }
}

impl From<&StochasticConfig> for StochasticSettings {
    fn from(c: &StochasticConfig) -> Self {
        Self {
            steps: c.steps,
            batch: c.batch,
            eta: c.eta,
            n_dual: c.n_dual,
            n_primal: c.n_primal,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    #[default]
    Delta,
    Rbf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelConfig {
    pub kind: KernelKind,
    pub bandwidth: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            kind: KernelKind::Delta,
            bandwidth: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Generators reject candidates whose smallest `Λ` eigenvalue falls below this.
    pub min_lambda: f64,
    pub max_attempts: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            min_lambda: 1e-3,
            max_attempts: 1000,
        }
    }
}

fn default_delta() -> f64 {
    0.05
}
fn default_seeds() -> Vec<u64> {
    vec![0]
}
fn default_output() -> PathBuf {
    PathBuf::from("results")
}
fn default_budget() -> u64 {
    DEFAULT_PLAN_BUDGET as u64
}
fn two() -> usize {
    2
}
fn three() -> usize {
    3
}
fn four() -> usize {
    4
}

impl FamilyConfig {
    pub fn generated(name: &str, sizes: Sizes, candidates: usize, seed: u64) -> Self {
        Self {
            generator: Some(name.to_string()),
            file: None,
            states: sizes.states,
            actions: sizes.actions,
            observations: sizes.observations,
            horizon: sizes.horizon,
            candidates,
            seed,
        }
    }

    pub fn sizes(&self) -> Sizes {
        Sizes::new(self.states, self.actions, self.observations, self.horizon)
    }
}

impl RunConfig {
    /// A config with every optional field at its default.
    pub fn new(iterations: usize, family: FamilyConfig) -> Self {
        Self {
            iterations,
            family,
            delta: default_delta(),
            beta: None,
            seeds: default_seeds(),
            output: default_output(),
            solver: SolverKind::Exact,
            stochastic: StochasticConfig::default(),
            kernel: KernelConfig::default(),
            plan_budget: default_budget(),
            tolerances: Tolerances::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(HarnessError::Validation(msg));
        if self.iterations == 0 {
            return fail("iterations must be at least 1".into());
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return fail(format!("delta must lie in (0, 1), got {}", self.delta));
        }
        if let Some(beta) = self.beta {
            if !(beta > 0.0 && beta.is_finite()) {
                return fail(format!("beta must be positive, got {beta}"));
            }
        }
        if self.seeds.is_empty() {
            return fail("seeds must not be empty".into());
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return fail("seeds must be distinct".into());
        }
        let f = &self.family;
        match (&f.generator, &f.file) {
            (Some(_), Some(_)) => return fail("family takes either generator or file, not both".into()),
            (None, None) => return fail("family needs a generator or a file".into()),
            _ => {}
        }
        if f.generator.is_some() {
            if f.states == 0 || f.actions == 0 || f.observations == 0 || f.horizon == 0 {
                return fail("family sizes must be positive".into());
            }
            if f.horizon < 2 {
                return fail("horizon must be at least 2 to collect interventional data".into());
            }
            if f.candidates == 0 {
                return fail("family needs at least one candidate".into());
            }
            let nodes = ((f.observations * f.actions) as u128).checked_pow(f.horizon as u32);
            if nodes.map_or(true, |n| n > self.budget()) {
                return fail(format!(
                    "(O*A)^H = ({}*{})^{} exceeds the planning budget {}",
                    f.observations,
                    f.actions,
                    f.horizon,
                    self.budget()
                ));
            }
        }
        if self.kernel.kind == KernelKind::Rbf && !(self.kernel.bandwidth > 0.0) {
            return fail(format!("rbf bandwidth must be positive, got {}", self.kernel.bandwidth));
        }
        let s = &self.stochastic;
        if s.steps == 0 || s.batch == 0 || s.n_dual == 0 || !(s.eta > 0.0) {
            return fail("stochastic steps, batch, n_dual and eta must be positive".into());
        }
        if !(self.tolerances.min_lambda >= 0.0) || self.tolerances.max_attempts == 0 {
            return fail("tolerances must be nonnegative with at least one attempt".into());
        }
        Ok(())
    }

    /// Planning budget after the environment override.
    pub fn budget(&self) -> u128 {
        std::env::var(BUDGET_ENV)
            .ok()
            .and_then(|v| v.trim().parse().ok())
            .unwrap_or(self.plan_budget as u128)
    }

    pub fn context(&self, observations: usize) -> Result<RkhsContext> {
        let kernel = match self.kernel.kind {
            KernelKind::Delta => TripleKernel::delta(observations),
            KernelKind::Rbf => TripleKernel::rbf(observations, self.kernel.bandwidth)?,
        };
        Ok(RkhsContext::new(kernel, ObsBases::one_hot(observations))?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Parses and validates a config held in memory.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    parse_at(text, Path::new("<memory>"))
}

fn parse_at(text: &str, path: &Path) -> Result<RunConfig> {
    let config: RunConfig = toml::from_str(text).map_err(|e| HarnessError::Parse {
        path: path.to_path_buf(),
        message: e.to_string().trim_end().to_string(),
    })?;
    config.validate()?;
    Ok(config)
}

/// Reads, parses and validates a config file. A relative family file path
/// is resolved against the directory of the config.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(io_error(path))?;
    let mut config = parse_at(&text, path)?;
    if let Some(file) = &config.family.file {
        if file.is_relative() {
            let base = path.parent().unwrap_or(Path::new("."));
            config.family.file = Some(std::path::absolute(base.join(file)).map_err(io_error(path))?);
        }
    }
    Ok(config)
}

pub fn save_config(config: &RunConfig, path: &Path) -> Result<()> {
    std::fs::write(path, config.to_toml()).map_err(io_error(path))
}
