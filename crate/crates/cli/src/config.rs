//! Experiment and sweep documents (JSON).

use std::path::{Path, PathBuf};

use polsbe_core::agent::{theorem1_config, theorem2_config, AgentConfig};
use polsbe_core::envgen::{random_linmdp, AdversarySpec, GeneratorSpec};
use polsbe_core::model::LinearMdpModel;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::CliError;

/// Where the environment comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvironmentSource {
    Generate(GeneratorSpec),
    /// Path to a serialized environment, relative to the config file.
    File(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TheoremSelector {
    Theorem1,
    Theorem2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum AgentSection {
    Config(AgentConfig),
    /// Parameters derived from `(K, d, H)` by one of the theorem settings.
    Theorem {
        which: TheoremSelector,
        #[serde(default = "one")]
        c1: f64,
    },
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Uniform,
    KnownDynamicsOmd,
    BestInHindsightOracle,
}

impl BaselineKind {
    pub fn label(self) -> &'static str {
        match self {
            Self::Uniform => "uniform",
            Self::KnownDynamicsOmd => "known_dynamics_omd",
            Self::BestInHindsightOracle => "best_in_hindsight",
        }
    }
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub environment: EnvironmentSource,
    /// The adversary's `seed` is an offset; run `r` uses `seed + r`.
    pub adversary: AdversarySpec,
    pub agent: AgentSection,
    pub episodes: usize,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub baselines: Vec<BaselineKind>,
    /// Learning rate of the known-dynamics baseline; defaults to the agent's.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline_eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub diagnostics: bool,
}

impl ExperimentConfig {
    pub fn check(&self) -> Result<(), CliError> {
        if self.episodes == 0 {
            return Err(CliError::Config("episodes must be ≥ 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(CliError::Config("seeds must be nonempty".into()));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = self.baselines.iter().find(|b| !seen.insert(**b)) {
            return Err(CliError::Config(format!("baseline {} listed twice", dup.label())));
        }
        if self.baselines.contains(&BaselineKind::BestInHindsightOracle) && !self.adversary.is_oblivious() {
            return Err(CliError::Config(
                "best_in_hindsight_oracle needs an oblivious adversary".into(),
            ));
        }
        if let Some(eta) = self.baseline_eta {
            if !(eta.is_finite() && eta > 0.0) {
                return Err(CliError::Config(format!("baseline_eta must be > 0 (got {eta})")));
            }
        }
        Ok(())
    }

    pub fn load_model(&self, base_dir: &Path) -> Result<LinearMdpModel<f64>, CliError> {
        match &self.environment {
            EnvironmentSource::Generate(spec) => {
                random_linmdp(spec).map_err(|e| CliError::Config(format!("environment: {e}")))
            }
            EnvironmentSource::File(path) => {
                let path = base_dir.join(path);
                let text = read(&path)?;
                LinearMdpModel::from_json(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
            }
        }
    }

    pub fn agent_config(&self, model: &LinearMdpModel<f64>) -> Result<AgentConfig, CliError> {
        match &self.agent {
            AgentSection::Config(c) => Ok(c.clone()),
            AgentSection::Theorem { which, c1 } => {
                let (d, h) = (model.feature_dim(), model.horizon());
                match which {
                    TheoremSelector::Theorem1 => theorem1_config(self.episodes, d, h, *c1),
                    TheoremSelector::Theorem2 => theorem2_config(self.episodes, d, h, *c1),
                }
                .map_err(|e| CliError::Config(e.to_string()))
            }
        }
    }

    pub fn adversary_for_seed(&self, seed: u64) -> AdversarySpec {
        let mut spec = self.adversary.clone();
        spec.seed = spec.seed.wrapping_add(seed);
        spec
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    #[serde(default)]
    pub episodes: Vec<usize>,
    #[serde(default)]
    pub gamma: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub experiment: ExperimentConfig,
    pub grid: SweepGrid,
    pub replications: usize,
}

/// One grid point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepCell {
    pub episodes: usize,
    pub gamma: Option<f64>,
}

impl SweepSpec {
    pub fn check(&self) -> Result<(), CliError> {
        if self.grid.episodes.is_empty() && self.grid.gamma.is_empty() {
            return Err(CliError::Config("grid must vary episodes or gamma".into()));
        }
        if self.replications == 0 {
            return Err(CliError::Config("replications must be ≥ 1".into()));
        }
        if self.grid.episodes.contains(&0) {
            return Err(CliError::Config("grid episodes must be ≥ 1".into()));
        }
        if !self.grid.gamma.is_empty() && !matches!(self.experiment.agent, AgentSection::Config(_)) {
            return Err(CliError::Config("a gamma grid needs an explicit agent config".into()));
        }
        let mut base = self.experiment.clone();
        base.seeds = vec![0];
        base.check()
    }

    pub fn cells(&self) -> Vec<SweepCell> {
        let ks = if self.grid.episodes.is_empty() {
            vec![self.experiment.episodes]
        } else {
            self.grid.episodes.clone()
        };
        let gammas: Vec<Option<f64>> = if self.grid.gamma.is_empty() {
            vec![None]
        } else {
            self.grid.gamma.iter().copied().map(Some).collect()
        };
        ks.iter()
            .flat_map(|&episodes| gammas.iter().map(move |&gamma| SweepCell { episodes, gamma }))
            .collect()
    }

    /// The experiment for one cell and replication seeds `base..base + r`.
    pub fn cell_experiment(&self, cell: SweepCell, base_seed: u64) -> ExperimentConfig {
        let mut exp = self.experiment.clone();
        exp.episodes = cell.episodes;
        exp.seeds = (0..self.replications as u64).map(|r| base_seed.wrapping_add(r)).collect();
        if let (Some(g), AgentSection::Config(c)) = (cell.gamma, &mut exp.agent) {
            c.gamma = g;
        }
        exp
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Parses a JSON document; errors carry the file name, line and column.
pub fn parse<T: DeserializeOwned>(path: &Path, text: &str) -> Result<T, CliError> {
    serde_json::from_str(text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    parse(path, &read(path)?)
}

/// Directory used to resolve relative paths inside a config file.
pub fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}
