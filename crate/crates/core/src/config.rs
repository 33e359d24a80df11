//! Scenario description: topology, surrogate calibration, grids, load
//! patterns, reward, agent settings and seeds, stored as TOML.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agent::ppo::AgentConfig;
use crate::error::{Error, Result};
use crate::loadgen::{default_patterns, LoadPattern};
use crate::mesh::{ActionGrid, ActionSpace, MeshTopology};
use crate::objectives::{RewardSpec, Scenario};
use crate::surrogate::{Surrogate, SurrogateConfig};
use crate::sysmodel::{DEFAULT_TREE_COUNT, DEFAULT_VARIANCE_RATIO};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSettings {
    pub tree_count: usize,
    /// Operating-region variance-to-mean threshold.
    pub region_ratio: f64,
    /// Records collected from the surrogate for fitting.
    pub trace_steps: u64,
    /// Fraction of records held out for NMAE.
    pub held_out: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    /// Action sampling during trace collection.
    pub collect: u64,
    /// Surrogate delay noise during trace collection.
    pub noise: u64,
    pub fit: u64,
    pub split: u64,
    /// Fixed seed of the learning-curve evaluations.
    pub curve: u64,
    pub evaluate: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    pub random_steps: u64,
    pub sine_steps: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Patterns {
    pub training: LoadPattern,
    pub evaluation: LoadPattern,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    /// Wall-clock length of one agent step on the real system, seconds.
    /// Recorded as metadata; surrogate steps are logical.
    pub step_seconds: f64,
    pub output_dir: String,
    pub topology: MeshTopology,
    pub surrogate: SurrogateConfig,
    pub grid: ActionGrid,
    pub patterns: Patterns,
    pub reward: RewardSpec,
    pub model: ModelSettings,
    pub agent: AgentConfig,
    pub evaluation: EvalSettings,
    pub seeds: Seeds,
}

fn levels(count: usize, max: f64) -> Vec<f64> {
    (0..count)
        .map(|k| max * k as f64 / (count - 1) as f64)
        .collect()
}

impl ScenarioConfig {
    pub fn default_for(scenario: Scenario) -> Result<Self> {
        let ids = scenario.service_ids();
        let topology = MeshTopology::testbed(ids)?;
        let grid = match scenario {
            Scenario::Cost => ActionGrid::routing_and_scaling(levels(5, 1.0), vec![1, 2, 3, 4]),
            _ => ActionGrid::admission_and_routing(levels(5, 0.8), levels(5, 1.0), vec![4]),
        };
        let (training, evaluation) = default_patterns(scenario.id())?;
        let id = scenario.id() as u64;
        Ok(ScenarioConfig {
            scenario,
            step_seconds: if scenario == Scenario::Cost {
                60.0
            } else {
                5.0
            },
            output_dir: format!("runs/scenario{id}"),
            surrogate: SurrogateConfig::testbed(ids)?,
            reward: RewardSpec::for_scenario(scenario, topology.delay_bounds()),
            topology,
            grid,
            patterns: Patterns {
                training,
                evaluation,
            },
            model: ModelSettings {
                tree_count: DEFAULT_TREE_COUNT,
                region_ratio: DEFAULT_VARIANCE_RATIO,
                trace_steps: 20_000,
                held_out: 0.2,
            },
            agent: AgentConfig {
                seed: 100 + id,
                ..AgentConfig::default()
            },
            evaluation: EvalSettings {
                random_steps: 150,
                sine_steps: 400,
            },
            seeds: Seeds {
                collect: 10 + id,
                noise: 20 + id,
                fit: 30 + id,
                split: 40 + id,
                curve: 50 + id,
                evaluate: 60 + id,
            },
        })
    }

    /// Cross-section consistency.
    pub fn validate(&self) -> Result<()> {
        let m = self.topology.service_count();
        let bad = |reason: &str| Err(Error::invalid("scenario config", reason));
        if self.scenario.service_ids().len() != m {
            return bad("service count differs from the scenario's");
        }
        self.surrogate.validate(&self.topology)?;
        self.grid.validate()?;
        self.patterns.training.validate()?;
        self.patterns.evaluation.validate()?;
        if self.patterns.training.service_count() != m
            || self.patterns.evaluation.service_count() != m
        {
            return bad("load patterns must cover every service");
        }
        if self.reward.scenario != self.scenario {
            return bad("reward spec belongs to another scenario");
        }
        self.reward.validate(m)?;
        self.agent.validate()?;
        if !(self.model.region_ratio > 0.0)
            || self.model.tree_count == 0
            || self.model.trace_steps == 0
        {
            return bad("model settings must be positive");
        }
        if !(self.model.held_out > 0.0 && self.model.held_out < 1.0) {
            return bad("held-out fraction must lie strictly between 0 and 1");
        }
        if !(self.step_seconds > 0.0) {
            return bad("step length must be positive");
        }
        Ok(())
    }

    pub fn action_space(&self) -> Result<ActionSpace> {
        ActionSpace::new(&self.grid, &self.topology)
    }

    pub fn surrogate(&self) -> Result<Surrogate> {
        Surrogate::new(self.surrogate.clone(), self.topology.clone())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: ScenarioConfig =
            toml::from_str(text).map_err(|e| Error::invalid("scenario config", e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::invalid("scenario config", e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::parse(path, e.to_string()))
    }
}
