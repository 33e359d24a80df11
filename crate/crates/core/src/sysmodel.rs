//! Learned system model and operating region.
//!
//! The model maps `(offered load, action)` to next-step response time mean
//! and variance per service; previous delays are not inputs. The operating
//! region admits an action when every service's predicted variance is below
//! a fraction `ρ` of its predicted mean.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forest::{fit_forests, Dataset, RandomForest, TreeParams};
use crate::mesh::{ActionSpace, ControlAction, LoadVector, TraceRecord};

pub const DEFAULT_TREE_COUNT: usize = 120;
pub const DEFAULT_VARIANCE_RATIO: f64 = 0.5;
pub const MIN_TRAINING_RECORDS: usize = 100;

/// Model input: `(l_1..l_m, b_1..b_m, p_1..p_m, c_1..c_k)`.
pub fn features(load: &LoadVector, action: &ControlAction) -> Vec<f64> {
    let mut x = Vec::with_capacity(3 * load.len() + action.c.len());
    x.extend_from_slice(&load.0);
    x.extend_from_slice(&action.b);
    x.extend_from_slice(&action.p);
    x.extend(action.c.iter().map(|&c| c as f64));
    x
}

pub fn feature_names(services: usize, scalable: usize) -> Vec<String> {
    let mut names = Vec::new();
    for prefix in ["l", "b", "p"] {
        names.extend((1..=services).map(|i| format!("{prefix}{i}")));
    }
    names.extend((1..=scalable).map(|k| format!("c{k}")));
    names
}

pub fn target_names(services: usize) -> Vec<String> {
    let mut names: Vec<String> = (1..=services).map(|i| format!("d_mean{i}")).collect();
    names.extend((1..=services).map(|i| format!("d_var{i}")));
    names
}

/// Predicted delay statistics per service.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemModel {
    pub services: usize,
    pub scalable: usize,
    pub feature_names: Vec<String>,
    /// Means of every service, then variances of every service.
    pub target_names: Vec<String>,
    pub tree_count: usize,
    pub seed: u64,
    pub params: TreeParams,
    pub forests: Vec<RandomForest>,
}

impl SystemModel {
    pub fn fit(traces: &[TraceRecord], tree_count: usize, seed: u64) -> Result<Self> {
        Self::fit_with(traces, tree_count, seed, TreeParams::default())
    }

    pub fn fit_with(
        traces: &[TraceRecord],
        tree_count: usize,
        seed: u64,
        params: TreeParams,
    ) -> Result<Self> {
        if traces.len() < MIN_TRAINING_RECORDS {
            return Err(Error::InsufficientData(format!(
                "{} trace records, at least {MIN_TRAINING_RECORDS} required",
                traces.len()
            )));
        }
        let services = traces[0].state.loads.len();
        let scalable = traces[0].action.c.len();
        let mut rows = Vec::with_capacity(traces.len());
        let mut targets = vec![Vec::with_capacity(traces.len()); 2 * services];
        for r in traces {
            check_record(r, services, scalable)?;
            rows.push(features(&r.state.loads, &r.action));
            for (i, obs) in r.next.iter().enumerate() {
                targets[i].push(obs.delay_mean);
                targets[services + i].push(obs.delay_var);
            }
        }
        let data = Dataset::from_rows(&rows)?;
        let forests = fit_forests(&data, &targets, tree_count, seed, params)?;
        Ok(SystemModel {
            services,
            scalable,
            feature_names: feature_names(services, scalable),
            target_names: target_names(services),
            tree_count,
            seed,
            params,
            forests,
        })
    }

    pub fn feature_arity(&self) -> usize {
        self.feature_names.len()
    }

    pub fn predict(&self, x: &[f64]) -> Result<Prediction> {
        if x.len() != self.feature_arity() {
            return Err(Error::invalid(
                "feature vector",
                format!(
                    "{} features, model expects {}",
                    x.len(),
                    self.feature_arity()
                ),
            ));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("feature vector", "non-finite feature"));
        }
        Ok(self.predict_unchecked(x))
    }

    fn predict_unchecked(&self, x: &[f64]) -> Prediction {
        let mut outputs = self.forests.iter().map(|f| f.predict(x));
        let mean = outputs.by_ref().take(self.services).collect();
        let var = outputs.collect();
        Prediction { mean, var }
    }

    pub fn predict_action(&self, load: &LoadVector, action: &ControlAction) -> Result<Prediction> {
        self.predict(&features(load, action))
    }

    /// Predictions for every action of `space` at one offered load.
    pub fn predict_all(&self, load: &LoadVector, space: &ActionSpace) -> Result<Vec<Prediction>> {
        if load.len() != self.services
            || space.services() != self.services
            || space.scalable() != self.scalable
        {
            return Err(Error::Incompatible(
                "action space dimensions differ from the system model".into(),
            ));
        }
        Ok(space
            .actions()
            .iter()
            .map(|a| self.predict_unchecked(&features(load, a)))
            .collect())
    }

    /// Whether traces have the arity this model was fitted on.
    pub fn accepts(&self, record: &TraceRecord) -> bool {
        check_record(record, self.services, self.scalable).is_ok()
    }
}

fn check_record(r: &TraceRecord, services: usize, scalable: usize) -> Result<()> {
    let arity_ok = r.state.loads.len() == services
        && r.action.b.len() == services
        && r.action.p.len() == services
        && r.action.c.len() == scalable
        && r.next.len() == services;
    if !arity_ok {
        return Err(Error::invalid(
            "trace record",
            format!("record t={} has mismatched feature arity", r.t),
        ));
    }
    let finite = r
        .state
        .loads
        .0
        .iter()
        .chain(&r.action.b)
        .chain(&r.action.p)
        .all(|v| v.is_finite())
        && r.next
            .iter()
            .all(|o| o.delay_mean.is_finite() && o.delay_var.is_finite());
    if !finite {
        return Err(Error::invalid(
            "trace record",
            format!("record t={} contains non-finite values", r.t),
        ));
    }
    Ok(())
}

/// Variance-to-mean stationarity test on model predictions.
#[derive(Debug, Clone, Copy)]
pub struct OperatingRegion<'a> {
    pub model: &'a SystemModel,
    pub ratio: f64,
}

impl<'a> OperatingRegion<'a> {
    pub fn new(model: &'a SystemModel, ratio: f64) -> Result<Self> {
        if !(ratio > 0.0 && ratio.is_finite()) {
            return Err(Error::invalid(
                "operating region",
                format!("variance ratio {ratio} must be positive"),
            ));
        }
        Ok(OperatingRegion { model, ratio })
    }

    pub fn admits(&self, prediction: &Prediction) -> bool {
        prediction_in_region(prediction, self.ratio)
    }

    pub fn in_region(&self, load: &LoadVector, action: &ControlAction) -> Result<bool> {
        Ok(self.admits(&self.model.predict_action(load, action)?))
    }
}

pub fn prediction_in_region(prediction: &Prediction, ratio: f64) -> bool {
    prediction
        .mean
        .iter()
        .zip(&prediction.var)
        .all(|(&m, &v)| v == 0.0 || v < ratio * m)
}

/// Admissible actions for one state, in enumeration order.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionMask {
    pub allowed: Vec<bool>,
    /// Set when no action was in region and every action was admitted instead.
    pub fallback: bool,
}

impl ActionMask {
    pub fn all(n: usize) -> Self {
        ActionMask {
            allowed: vec![true; n],
            fallback: false,
        }
    }

    pub fn from_flags(flags: Vec<bool>) -> Self {
        if flags.iter().any(|&f| f) {
            ActionMask {
                allowed: flags,
                fallback: false,
            }
        } else {
            log::warn!("operating region admits no action; falling back to the full action set");
            ActionMask {
                allowed: vec![true; flags.len()],
                fallback: true,
            }
        }
    }

    pub fn len(&self) -> usize {
        self.allowed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.allowed.is_empty()
    }

    pub fn admits(&self, index: usize) -> bool {
        self.allowed[index]
    }

    pub fn admitted(&self) -> impl Iterator<Item = usize> + '_ {
        self.allowed
            .iter()
            .enumerate()
            .filter(|(_, &a)| a)
            .map(|(k, _)| k)
    }

    pub fn count(&self) -> usize {
        self.allowed.iter().filter(|&&a| a).count()
    }
}

pub fn mask_from_predictions(predictions: &[Prediction], ratio: f64) -> ActionMask {
    ActionMask::from_flags(
        predictions
            .iter()
            .map(|p| prediction_in_region(p, ratio))
            .collect(),
    )
}

/// Mask of `space` at the state's offered load.
pub fn action_mask(
    region: &OperatingRegion<'_>,
    load: &LoadVector,
    space: &ActionSpace,
) -> Result<ActionMask> {
    let predictions = region.model.predict_all(load, space)?;
    Ok(mask_from_predictions(&predictions, region.ratio))
}

/// Seeded shuffle into `(training, held_out)`, holding out `fraction` of
/// the records; both parts keep trace order.
pub fn split_records(
    records: &[TraceRecord],
    fraction: f64,
    seed: u64,
) -> Result<(Vec<TraceRecord>, Vec<TraceRecord>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::invalid(
            "split",
            format!("held-out fraction {fraction} must lie in (0, 1)"),
        ));
    }
    let held = ((records.len() as f64) * fraction).round() as usize;
    if held == 0 || held == records.len() {
        return Err(Error::InsufficientData(format!(
            "{} records are too few to split",
            records.len()
        )));
    }
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut is_held = vec![false; records.len()];
    order[..held].iter().for_each(|&k| is_held[k] = true);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (r, &h) in records.iter().zip(&is_held) {
        if h {
            test.push(r.clone())
        } else {
            train.push(r.clone())
        }
    }
    Ok((train, test))
}

/// `(1/ȳ) · (1/m) Σ |y_i − ŷ_i|`.
pub fn nmae_of(truth: &[f64], predicted: &[f64]) -> Result<f64> {
    if truth.is_empty() || truth.len() != predicted.len() {
        return Err(Error::InsufficientData(
            "NMAE needs equally many, and at least one, values".into(),
        ));
    }
    let m = truth.len() as f64;
    let mean = truth.iter().sum::<f64>() / m;
    if mean == 0.0 {
        return Err(Error::Domain(
            "NMAE is undefined for a zero-mean target".into(),
        ));
    }
    let mae = truth
        .iter()
        .zip(predicted)
        .map(|(y, yh)| (y - yh).abs())
        .sum::<f64>()
        / m;
    Ok(mae / mean)
}

/// NMAE of every model target on held-out records, in `target_names` order.
pub fn nmae(model: &SystemModel, held_out: &[TraceRecord]) -> Result<Vec<f64>> {
    if held_out.is_empty() {
        return Err(Error::InsufficientData("held-out set is empty".into()));
    }
    let s = model.services;
    let mut truth = vec![Vec::with_capacity(held_out.len()); 2 * s];
    let mut predicted = vec![Vec::with_capacity(held_out.len()); 2 * s];
    for r in held_out {
        check_record(r, model.services, model.scalable)?;
        let p = model.predict_action(&r.state.loads, &r.action)?;
        for i in 0..s {
            truth[i].push(r.next[i].delay_mean);
            predicted[i].push(p.mean[i]);
            truth[s + i].push(r.next[i].delay_var);
            predicted[s + i].push(p.var[i]);
        }
    }
    truth
        .iter()
        .zip(&predicted)
        .map(|(y, yh)| nmae_of(y, yh))
        .collect()
}
