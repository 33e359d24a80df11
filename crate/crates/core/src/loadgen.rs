//! Seedable offered-load processes.
//!
//! Random patterns are counter-based: the value for `(seed, service, t)` is
//! read from a ChaCha stream positioned at a fixed word offset, so
//! `load_at` is a pure function and traces replay without stored streams.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{LoadVector, ServiceKind};

/// Word stride between consecutive steps in the ChaCha stream.
const WORDS_PER_STEP: u128 = 16;

pub const INFORMATION_LEVELS: [f64; 4] = [5.0, 10.0, 15.0, 20.0];
pub const COMPUTE_LEVELS: [f64; 5] = [1.0, 2.0, 3.0, 4.0, 5.0];
pub const DEFAULT_PERIOD: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PatternKind {
    Random,
    Sinusoidal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SineWave {
    pub mean: f64,
    pub amplitude: f64,
    /// Period in steps.
    pub period: f64,
    /// Phase in radians.
    pub phase: f64,
}

impl SineWave {
    pub fn at(&self, t: u64) -> f64 {
        self.mean + self.amplitude * (2.0 * PI * t as f64 / self.period + self.phase).sin()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LoadPattern {
    /// Every step, each service's load is drawn uniformly from its value set.
    Random {
        values: Vec<Vec<f64>>,
        seed: u64,
    },
    Sinusoidal {
        waves: Vec<SineWave>,
    },
}

impl LoadPattern {
    pub fn kind(&self) -> PatternKind {
        match self {
            LoadPattern::Random { .. } => PatternKind::Random,
            LoadPattern::Sinusoidal { .. } => PatternKind::Sinusoidal,
        }
    }

    pub fn service_count(&self) -> usize {
        match self {
            LoadPattern::Random { values, .. } => values.len(),
            LoadPattern::Sinusoidal { waves } => waves.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Err(Error::invalid("load pattern", reason));
        match self {
            LoadPattern::Random { values, .. } => {
                for set in values {
                    if set.is_empty() {
                        return bad("random value set is empty".into());
                    }
                    if let Some(v) = set.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
                        return bad(format!("random load value {v} is negative"));
                    }
                }
            }
            LoadPattern::Sinusoidal { waves } => {
                for w in waves {
                    if !(w.period > 0.0 && w.period.is_finite()) {
                        return bad(format!("period {} must be positive", w.period));
                    }
                    if !(w.amplitude >= 0.0 && w.amplitude <= w.mean) {
                        return bad(format!(
                            "amplitude {} must lie in [0, mean {}]",
                            w.amplitude, w.mean
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    /// The same pattern with its random stream re-keyed; sinusoidal
    /// patterns are returned unchanged.
    pub fn with_seed(&self, seed: u64) -> LoadPattern {
        match self {
            LoadPattern::Random { values, .. } => LoadPattern::Random {
                values: values.clone(),
                seed,
            },
            other => other.clone(),
        }
    }

    pub fn load_at(&self, t: u64) -> LoadVector {
        match self {
            LoadPattern::Random { values, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let loads = values
                    .iter()
                    .enumerate()
                    .map(|(service, set)| {
                        rng.set_stream(service as u64);
                        rng.set_word_pos(t as u128 * WORDS_PER_STEP);
                        set[rng.random_range(0..set.len())]
                    })
                    .collect();
                LoadVector(loads)
            }
            LoadPattern::Sinusoidal { waves } => {
                LoadVector(waves.iter().map(|w| w.at(t)).collect())
            }
        }
    }

    /// Smallest and largest load each service can take.
    pub fn bounds(&self) -> Vec<(f64, f64)> {
        match self {
            LoadPattern::Random { values, .. } => values
                .iter()
                .map(|set| {
                    let lo = set.iter().copied().fold(f64::INFINITY, f64::min);
                    let hi = set.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    (lo, hi)
                })
                .collect(),
            LoadPattern::Sinusoidal { waves } => waves
                .iter()
                .map(|w| (w.mean - w.amplitude, w.mean + w.amplitude))
                .collect(),
        }
    }
}

/// Training (random) and evaluation (sinusoidal) patterns for a list of
/// service kinds. Phases alternate between 0 and π/2.
pub fn patterns_for(kinds: &[ServiceKind], seed: u64) -> (LoadPattern, LoadPattern) {
    let values = kinds
        .iter()
        .map(|k| match k {
            ServiceKind::Information => INFORMATION_LEVELS.to_vec(),
            ServiceKind::Compute => COMPUTE_LEVELS.to_vec(),
        })
        .collect();
    let waves = kinds
        .iter()
        .enumerate()
        .map(|(i, k)| {
            let (mean, amplitude) = match k {
                ServiceKind::Information => (12.5, 7.5),
                ServiceKind::Compute => (3.0, 2.0),
            };
            SineWave {
                mean,
                amplitude,
                period: DEFAULT_PERIOD,
                phase: if i % 2 == 0 { 0.0 } else { FRAC_PI_2 },
            }
        })
        .collect();
    (
        LoadPattern::Random { values, seed },
        LoadPattern::Sinusoidal { waves },
    )
}

/// Default `(training, evaluation)` patterns of a shipped scenario.
pub fn default_patterns(scenario_id: u8) -> Result<(LoadPattern, LoadPattern)> {
    let kinds: &[ServiceKind] = match scenario_id {
        1..=3 => &[ServiceKind::Information, ServiceKind::Information],
        4 => &[ServiceKind::Information, ServiceKind::Compute],
        other => {
            return Err(Error::invalid(
                "scenario",
                format!("unknown scenario id {other}"),
            ))
        }
    };
    Ok(patterns_for(kinds, 1))
}
