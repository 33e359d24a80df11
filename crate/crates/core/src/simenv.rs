//! Training environment backed by the learned system model.
//!
//! Because the model ignores previous delays, everything the environment
//! needs at a given offered load (predictions for every action, the action
//! mask) is a pure function of that load and is cached per load.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use crate::agent::policy::{normalize_state, NormBounds};
use crate::agent::ppo::TrainingEnv;
use crate::error::{Error, Result};
use crate::loadgen::LoadPattern;
use crate::mesh::{ActionSpace, ControlAction, LoadVector, ServiceObservation, SystemState};
use crate::objectives::{reward, RewardSpec};
use crate::sysmodel::{mask_from_predictions, ActionMask, Prediction, SystemModel};

/// Cached tables are dropped wholesale beyond this many distinct loads.
const MAX_CACHED_LOADS: usize = 8192;

/// Shared, immutable ingredients of a simulator.
#[derive(Debug, Clone, Copy)]
pub struct SimSetup<'a> {
    pub model: &'a SystemModel,
    pub space: &'a ActionSpace,
    pub spec: &'a RewardSpec,
    /// Operating-region variance-to-mean threshold.
    pub region_ratio: f64,
}

impl SimSetup<'_> {
    pub fn validate(&self) -> Result<()> {
        if self.model.services != self.space.services()
            || self.model.scalable != self.space.scalable()
        {
            return Err(Error::Incompatible(
                "system model and action grid disagree on dimensions".into(),
            ));
        }
        self.spec.validate(self.space.services())?;
        if !(self.region_ratio > 0.0) {
            return Err(Error::invalid(
                "operating region",
                "variance ratio must be positive",
            ));
        }
        Ok(())
    }
}

/// Model predictions, rewards and mask for every action at one load.
#[derive(Debug)]
pub struct LoadTable {
    pub load: LoadVector,
    pub predictions: Vec<Prediction>,
    pub rewards: Vec<f64>,
    pub mask: Arc<ActionMask>,
}

/// Observations implied by a model prediction: carried load is analytic.
pub fn model_observations(
    load: &LoadVector,
    action: &ControlAction,
    prediction: &Prediction,
) -> Vec<ServiceObservation> {
    load.0
        .iter()
        .enumerate()
        .map(|(i, &l)| ServiceObservation {
            offered: l,
            carried: l * (1.0 - action.b[i]),
            delay_mean: prediction.mean[i],
            delay_var: prediction.var[i],
        })
        .collect()
}

fn load_key(load: &LoadVector) -> Vec<u64> {
    load.0.iter().map(|v| v.to_bits()).collect()
}

/// Per-load memo of [`LoadTable`]s for one setup. Clones share storage.
#[derive(Debug, Clone)]
pub struct TableCache<'a> {
    setup: SimSetup<'a>,
    tables: Arc<Mutex<HashMap<Vec<u64>, Arc<LoadTable>>>>,
}

impl<'a> TableCache<'a> {
    pub fn new(setup: SimSetup<'a>) -> Self {
        TableCache {
            setup,
            tables: Arc::default(),
        }
    }

    pub fn setup(&self) -> SimSetup<'a> {
        self.setup
    }

    pub fn table(&mut self, load: &LoadVector) -> Result<Arc<LoadTable>> {
        let key = load_key(load);
        if let Some(t) = self.lock().get(&key) {
            return Ok(Arc::clone(t));
        }
        let s = self.setup;
        let predictions = s.model.predict_all(load, s.space)?;
        let rewards = s
            .space
            .actions()
            .iter()
            .zip(&predictions)
            .map(|(a, p)| reward(s.spec, &model_observations(load, a, p), a, s.space.grid()))
            .collect();
        let mask = Arc::new(mask_from_predictions(&predictions, s.region_ratio));
        let table = Arc::new(LoadTable {
            load: load.clone(),
            predictions,
            rewards,
            mask,
        });
        let mut tables = self.lock();
        if tables.len() >= MAX_CACHED_LOADS {
            tables.clear();
        }
        tables.insert(key, Arc::clone(&table));
        Ok(table)
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, HashMap<Vec<u64>, Arc<LoadTable>>> {
        // Entries are inserted whole, so a poisoned map is still consistent.
        self.tables.lock().unwrap_or_else(|e| e.into_inner())
    }
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub state: SystemState,
    pub reward: f64,
    /// Mask for the new state.
    pub mask: Arc<ActionMask>,
    /// Observations the reward was computed from.
    pub observations: Vec<ServiceObservation>,
}

#[derive(Debug)]
pub struct SimEnvironment<'a> {
    cache: TableCache<'a>,
    pattern: LoadPattern,
    t: u64,
    state: SystemState,
    table: Arc<LoadTable>,
    /// Rewards computed for actions outside the current mask.
    masked_reward_evaluations: u64,
}

impl<'a> SimEnvironment<'a> {
    pub fn new(setup: SimSetup<'a>, pattern: LoadPattern) -> Result<Self> {
        Self::with_cache(TableCache::new(setup), pattern)
    }

    /// An environment reading and filling a shared table cache.
    pub fn with_cache(mut cache: TableCache<'a>, pattern: LoadPattern) -> Result<Self> {
        let setup = cache.setup;
        setup.validate()?;
        pattern.validate()?;
        if pattern.service_count() != setup.space.services() {
            return Err(Error::invalid(
                "load pattern",
                "service count differs from the action grid",
            ));
        }
        let load = pattern.load_at(0);
        let table = cache.table(&load)?;
        let default = setup.space.default_action();
        let delays = setup.model.predict_action(&load, &default)?.mean;
        Ok(SimEnvironment {
            cache,
            pattern,
            t: 0,
            state: SystemState {
                loads: load,
                delays,
            },
            table,
            masked_reward_evaluations: 0,
        })
    }

    pub fn setup(&self) -> SimSetup<'a> {
        self.cache.setup
    }

    pub fn cache(&self) -> &TableCache<'a> {
        &self.cache
    }

    pub fn pattern(&self) -> &LoadPattern {
        &self.pattern
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn state(&self) -> &SystemState {
        &self.state
    }

    pub fn mask(&self) -> Arc<ActionMask> {
        Arc::clone(&self.table.mask)
    }

    /// Model table at the current load.
    pub fn table(&self) -> Arc<LoadTable> {
        Arc::clone(&self.table)
    }

    pub fn masked_reward_evaluations(&self) -> u64 {
        self.masked_reward_evaluations
    }

    /// Restart at step 0. Random load patterns are re-keyed with `seed`.
    pub fn reset(&mut self, seed: u64) -> Result<SystemState> {
        self.pattern = self.pattern.with_seed(seed);
        self.t = 0;
        let load = self.pattern.load_at(0);
        self.table = self.cache.table(&load)?;
        let s = self.cache.setup;
        let default = s.space.default_action();
        let delays = s.model.predict_action(&load, &default)?.mean;
        self.state = SystemState {
            loads: load,
            delays,
        };
        Ok(self.state.clone())
    }

    pub fn step(&mut self, action: &ControlAction) -> Result<StepOutcome> {
        let index = self
            .cache
            .setup
            .space
            .index_of(action)
            .ok_or_else(|| Error::Domain("action is not on the grid".into()))?;
        self.step_index(index)
    }

    pub fn step_index(&mut self, index: usize) -> Result<StepOutcome> {
        let space = self.cache.setup.space;
        if index >= space.len() {
            return Err(Error::Domain(format!("action index {index} out of range")));
        }
        if !self.table.mask.admits(index) {
            self.masked_reward_evaluations += 1;
        }
        let action = space.get(index);
        let prediction = &self.table.predictions[index];
        let observations = model_observations(&self.state.loads, action, prediction);
        let reward = self.table.rewards[index];
        let delays = prediction.mean.clone();

        self.t += 1;
        let load = self.pattern.load_at(self.t);
        self.table = self.cache.table(&load)?;
        self.state = SystemState {
            loads: load,
            delays,
        };
        Ok(StepOutcome {
            state: self.state.clone(),
            reward,
            mask: self.mask(),
            observations,
        })
    }
}

/// Loads scaled by the pattern's range, delays by `[0, 2·O_i]`.
pub fn norm_bounds(pattern: &LoadPattern, spec: &RewardSpec) -> NormBounds {
    NormBounds {
        loads: pattern.bounds(),
        delays: spec.delay_bounds.iter().map(|&o| (0.0, 2.0 * o)).collect(),
    }
}

impl TrainingEnv for SimEnvironment<'_> {
    fn action_count(&self) -> usize {
        self.cache.setup.space.len()
    }

    fn feature_len(&self) -> usize {
        2 * self.cache.setup.space.services()
    }

    fn reset(&mut self, seed: u64) -> Result<()> {
        SimEnvironment::reset(self, seed).map(|_| ())
    }

    fn features(&self) -> Result<Vec<f64>> {
        normalize_state(&self.state, &self.norm_bounds())
    }

    fn mask(&self) -> Arc<ActionMask> {
        SimEnvironment::mask(self)
    }

    fn step(&mut self, action: usize) -> Result<f64> {
        self.step_index(action).map(|o| o.reward)
    }

    fn fingerprint(&self) -> String {
        self.cache.setup.space.fingerprint().to_string()
    }

    fn norm_bounds(&self) -> NormBounds {
        norm_bounds(&self.pattern, self.cache.setup.spec)
    }

    fn masked_evaluations(&self) -> u64 {
        self.masked_reward_evaluations
    }
}
