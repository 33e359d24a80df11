use rand::Rng;
use serde::{Deserialize, Serialize};

use super::network::Mlp;
use crate::error::{Error, Result};
use crate::mesh::SystemState;
use crate::sysmodel::ActionMask;

/// Affine bounds used to map state components into `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormBounds {
    pub loads: Vec<(f64, f64)>,
    pub delays: Vec<(f64, f64)>,
}

impl NormBounds {
    pub fn validate(&self) -> Result<()> {
        for &(lo, hi) in self.loads.iter().chain(&self.delays) {
            if !(lo.is_finite() && hi.is_finite() && hi > lo) {
                return Err(Error::Domain(format!(
                    "normalization bounds ({lo}, {hi}) are degenerate"
                )));
            }
        }
        Ok(())
    }

    pub fn feature_len(&self) -> usize {
        self.loads.len() + self.delays.len()
    }
}

/// Loads then delays, each mapped affinely into `[0, 1]` and clamped.
pub fn normalize_state(state: &SystemState, bounds: &NormBounds) -> Result<Vec<f64>> {
    bounds.validate()?;
    if state.loads.len() != bounds.loads.len() || state.delays.len() != bounds.delays.len() {
        return Err(Error::invalid(
            "state",
            "dimensions differ from the normalization bounds",
        ));
    }
    let scale = |v: f64, (lo, hi): (f64, f64)| ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
    Ok(state
        .loads
        .0
        .iter()
        .zip(&bounds.loads)
        .chain(state.delays.iter().zip(&bounds.delays))
        .map(|(&v, &b)| scale(v, b))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActMode {
    Sample,
    Greedy,
}

/// Softmax over admitted actions; masked actions get probability 0.
pub fn masked_softmax(logits: &[f64], mask: &ActionMask) -> Vec<f64> {
    let max = logits
        .iter()
        .zip(&mask.allowed)
        .filter(|(_, &a)| a)
        .map(|(&z, _)| z)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<f64> = logits
        .iter()
        .zip(&mask.allowed)
        .map(|(&z, &a)| if a { (z - max).exp() } else { 0.0 })
        .collect();
    let total: f64 = probs.iter().sum();
    for p in &mut probs {
        *p /= total;
    }
    probs
}

/// Actor-critic pair over an enumerated action list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyNetwork {
    pub actor: Mlp,
    pub critic: Mlp,
    pub norm: NormBounds,
    /// Fingerprint of the action grid the logits are indexed by.
    pub grid_fingerprint: String,
}

impl PolicyNetwork {
    pub fn new<R: Rng + ?Sized>(
        features: usize,
        actions: usize,
        hidden: &[usize],
        norm: NormBounds,
        grid_fingerprint: String,
        rng: &mut R,
    ) -> Result<Self> {
        let sizes = |out: usize| {
            let mut s = vec![features];
            s.extend_from_slice(hidden);
            s.push(out);
            s
        };
        Ok(PolicyNetwork {
            actor: Mlp::new(sizes(actions), 0.01, rng)?,
            critic: Mlp::new(sizes(1), 1.0, rng)?,
            norm,
            grid_fingerprint,
        })
    }

    pub fn action_count(&self) -> usize {
        self.actor.output_len()
    }

    pub fn probabilities(&self, features: &[f64], mask: &ActionMask) -> Vec<f64> {
        masked_softmax(&self.actor.forward(features), mask)
    }

    pub fn value(&self, features: &[f64]) -> f64 {
        self.critic.forward(features)[0]
    }

    pub fn act_features<R: Rng + ?Sized>(
        &self,
        features: &[f64],
        mask: &ActionMask,
        mode: ActMode,
        rng: &mut R,
    ) -> Result<usize> {
        if mask.len() != self.action_count() {
            return Err(Error::invalid(
                "action mask",
                "length differs from the policy's action count",
            ));
        }
        if mask.count() == 0 {
            return Err(Error::Domain("action mask admits no action".into()));
        }
        let probs = self.probabilities(features, mask);
        Ok(match mode {
            ActMode::Greedy => greedy(&probs, mask),
            ActMode::Sample => sample(&probs, mask, rng),
        })
    }

    pub fn act<R: Rng + ?Sized>(
        &self,
        state: &SystemState,
        mask: &ActionMask,
        mode: ActMode,
        rng: &mut R,
    ) -> Result<usize> {
        let x = normalize_state(state, &self.norm)?;
        self.act_features(&x, mask, mode, rng)
    }
}

/// Highest-probability admitted action, lowest index on ties.
pub fn greedy(probs: &[f64], mask: &ActionMask) -> usize {
    let mut best = None;
    for k in mask.admitted() {
        if best.is_none_or(|b: usize| probs[k] > probs[b]) {
            best = Some(k);
        }
    }
    best.unwrap_or(0)
}

pub fn sample<R: Rng + ?Sized>(probs: &[f64], mask: &ActionMask, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for k in mask.admitted() {
        acc += probs[k];
        last = k;
        if u < acc {
            return k;
        }
    }
    last
}
