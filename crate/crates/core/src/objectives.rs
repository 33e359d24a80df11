//! Reward functions for the four management objectives.
//!
//! Delay and throughput constraints are soft: `tanh` steps centred on the
//! bound, with the argument normalized by the bound so that the steepness
//! `κ` is dimensionless.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{ActionGrid, ControlAction, ServiceObservation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Scenario {
    /// Maximize total carried load under delay bounds.
    Throughput,
    /// Maximize weighted carried load (utility) under delay bounds.
    Utility,
    /// Maximize service 2's carried load under its delay bound while
    /// keeping service 1 above a throughput floor.
    Protected,
    /// Minimize allocated cores under delay bounds.
    Cost,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [
        Scenario::Throughput,
        Scenario::Utility,
        Scenario::Protected,
        Scenario::Cost,
    ];

    pub fn id(self) -> u8 {
        match self {
            Scenario::Throughput => 1,
            Scenario::Utility => 2,
            Scenario::Protected => 3,
            Scenario::Cost => 4,
        }
    }

    /// Testbed service ids running in the scenario.
    pub fn service_ids(self) -> &'static [usize] {
        match self {
            Scenario::Cost => &[2, 3],
            _ => &[1, 2],
        }
    }
}

impl TryFrom<u8> for Scenario {
    type Error = Error;

    fn try_from(id: u8) -> Result<Self> {
        match id {
            1 => Ok(Scenario::Throughput),
            2 => Ok(Scenario::Utility),
            3 => Ok(Scenario::Protected),
            4 => Ok(Scenario::Cost),
            other => Err(Error::invalid(
                "scenario",
                format!("unknown scenario id {other}"),
            )),
        }
    }
}

impl From<Scenario> for u8 {
    fn from(s: Scenario) -> u8 {
        s.id()
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "scenario {}", self.id())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardSpec {
    pub scenario: Scenario,
    /// Delay bound per service, seconds.
    pub delay_bounds: Vec<f64>,
    /// Utility weight per service (used by the utility objective).
    pub weights: Vec<f64>,
    /// Carried-load floor for the protected service, req/s.
    pub min_carried: f64,
    pub steepness: f64,
    /// Cost factor at full allocation.
    pub cost_floor: f64,
}

impl RewardSpec {
    pub fn for_scenario(scenario: Scenario, delay_bounds: Vec<f64>) -> Self {
        let weights = match scenario {
            Scenario::Utility => vec![1.0, 5.0],
            _ => vec![1.0; delay_bounds.len()],
        };
        RewardSpec {
            scenario,
            delay_bounds,
            weights,
            min_carried: 5.0,
            steepness: 10.0,
            cost_floor: 0.5,
        }
    }

    pub fn validate(&self, services: usize) -> Result<()> {
        let bad = |reason: String| Err(Error::invalid("reward spec", reason));
        if self.delay_bounds.len() != services || self.weights.len() != services {
            return bad(format!("expected {services} delay bounds and weights"));
        }
        if self
            .delay_bounds
            .iter()
            .any(|&o| !(o > 0.0 && o.is_finite()))
        {
            return bad("delay bounds must be positive".into());
        }
        if !(self.steepness > 0.0) || !(self.min_carried > 0.0) {
            return bad("steepness and carried-load floor must be positive".into());
        }
        if !(self.cost_floor > 0.0 && self.cost_floor < 1.0) {
            return bad("cost floor must lie strictly between 0 and 1".into());
        }
        if services < 2 {
            return bad("every objective involves two services".into());
        }
        Ok(())
    }
}

/// `0.5 · (1 − tanh(κ (d − O) / O))`: near 1 well inside the bound, 0.5 at
/// the bound, near 0 beyond it.
pub fn r_delay(delay: f64, bound: f64, steepness: f64) -> f64 {
    0.5 * (1.0 - (steepness * (delay - bound) / bound).tanh())
}

/// `0.5 · (1 + tanh(κ (l_c − l_min) / l_min))`.
pub fn r_floor(carried: f64, floor: f64, steepness: f64) -> f64 {
    0.5 * (1.0 + (steepness * (carried - floor) / floor).tanh())
}

/// Linear in total allocated cores: 1 at the smallest allocation, the
/// floor at the largest.
pub fn cost_factor(action: &ControlAction, spec: &RewardSpec, grid: &ActionGrid) -> f64 {
    let k = action.c.len() as f64;
    let c_min = *grid.c_levels.first().unwrap_or(&1) as f64 * k;
    let c_max = *grid.c_levels.last().unwrap_or(&1) as f64 * k;
    if c_max <= c_min {
        return 1.0;
    }
    let used = action.total_cores() as f64;
    1.0 - (1.0 - spec.cost_floor) * (used - c_min) / (c_max - c_min)
}

pub fn reward(
    spec: &RewardSpec,
    obs: &[ServiceObservation],
    action: &ControlAction,
    grid: &ActionGrid,
) -> f64 {
    let k = spec.steepness;
    let delay_term = |i: usize| r_delay(obs[i].delay_mean, spec.delay_bounds[i], k);
    match spec.scenario {
        Scenario::Throughput => (0..obs.len()).map(|i| obs[i].carried * delay_term(i)).sum(),
        Scenario::Utility => (0..obs.len())
            .map(|i| spec.weights[i] * obs[i].carried * delay_term(i))
            .sum(),
        Scenario::Protected => {
            obs[1].carried * (r_floor(obs[0].carried, spec.min_carried, k) + delay_term(1))
        }
        Scenario::Cost => cost_factor(action, spec, grid) * (delay_term(0) + delay_term(1)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs(carried: f64, delay: f64) -> ServiceObservation {
        ServiceObservation {
            offered: 20.0,
            carried,
            delay_mean: delay,
            delay_var: 0.0,
        }
    }

    fn spec(s: Scenario) -> RewardSpec {
        RewardSpec::for_scenario(s, vec![0.1, 0.1])
    }

    fn info_action() -> ControlAction {
        ControlAction {
            b: vec![0.0, 0.0],
            p: vec![0.5, 0.5],
            c: vec![4, 4],
        }
    }

    fn grid() -> ActionGrid {
        ActionGrid::routing_and_scaling(vec![0.0, 0.5, 1.0], vec![1, 2, 3, 4])
    }

    #[test]
    fn delay_reward_values() {
        assert_eq!(r_delay(0.1, 0.1, 10.0), 0.5);
        assert!((r_delay(0.0, 0.1, 10.0) - 1.0).abs() < 1e-8);
        // 0.5 · (1 − tanh 1)
        assert!((r_delay(0.11, 0.1, 10.0) - 0.119_202_922_022_117_6).abs() < 1e-9);
    }

    #[test]
    fn floor_reward_values() {
        assert_eq!(r_floor(5.0, 5.0, 10.0), 0.5);
        assert!(r_floor(0.0, 5.0, 10.0).abs() < 1e-8);
        assert!((r_floor(10.0, 5.0, 10.0) - 1.0).abs() < 1e-8);
    }

    #[test]
    fn cost_factor_is_linear() {
        let s = spec(Scenario::Cost);
        let g = grid();
        let with = |c: Vec<u32>| ControlAction { c, ..info_action() };
        assert_eq!(cost_factor(&with(vec![1, 1]), &s, &g), 1.0);
        assert_eq!(cost_factor(&with(vec![4, 4]), &s, &g), 0.5);
        assert!((cost_factor(&with(vec![2, 3]), &s, &g) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn scenario_compositions() {
        let o = [obs(20.0, 0.0), obs(15.0, 0.0)];
        let a = info_action();
        let g = grid();
        assert!((reward(&spec(Scenario::Throughput), &o, &a, &g) - 35.0).abs() < 1e-6);
        assert!((reward(&spec(Scenario::Utility), &o, &a, &g) - 95.0).abs() < 1e-6);

        let starved = [obs(0.0, 0.0), obs(15.0, 0.0)];
        let r3 = reward(&spec(Scenario::Protected), &starved, &a, &g);
        assert!((r3 - 15.0).abs() < 1e-6, "floor term should vanish: {r3}");

        let blocked = [obs(0.0, 0.01), obs(0.0, 0.01)];
        assert_eq!(reward(&spec(Scenario::Throughput), &blocked, &a, &g), 0.0);
    }

    #[test]
    fn scenario_ids_roundtrip() {
        for s in Scenario::ALL {
            assert_eq!(Scenario::try_from(s.id()).unwrap(), s);
        }
        assert!(Scenario::try_from(0).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn delay_reward_monotone(d1 in 0.0f64..1.0, d2 in 0.0f64..1.0, o in 0.01f64..1.0, k in 0.1f64..20.0) {
                let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
                prop_assert!(r_delay(lo, o, k) >= r_delay(hi, o, k));
                let r = r_delay(d1, o, k);
                prop_assert!((0.0..=1.0).contains(&r));
            }

            #[test]
            fn utility_minus_throughput_identity(l1 in 0.0f64..20.0, l2 in 0.0f64..20.0, d1 in 0.0f64..0.3, d2 in 0.0f64..0.3) {
                let o = [obs(l1, d1), obs(l2, d2)];
                let a = info_action();
                let g = grid();
                let diff = reward(&spec(Scenario::Utility), &o, &a, &g) - reward(&spec(Scenario::Throughput), &o, &a, &g);
                let expected = 4.0 * l2 * r_delay(d2, 0.1, 10.0);
                prop_assert!((diff - expected).abs() <= 1e-12 * (1.0 + expected.abs()));
                prop_assert!(diff >= 0.0);
            }

            #[test]
            fn throughput_nondecreasing_in_carried(l1 in 0.0f64..20.0, l2 in 0.0f64..20.0, dl in 0.0f64..5.0, d1 in 0.0f64..0.3, d2 in 0.0f64..0.3) {
                let a = info_action();
                let g = grid();
                let s = spec(Scenario::Throughput);
                let base = reward(&s, &[obs(l1, d1), obs(l2, d2)], &a, &g);
                prop_assert!(reward(&s, &[obs(l1 + dl, d1), obs(l2, d2)], &a, &g) >= base);
                prop_assert!(reward(&s, &[obs(l1, d1), obs(l2 + dl, d2)], &a, &g) >= base);
            }

            #[test]
            fn cost_reward_prefers_fewer_cores(c1 in 1u32..4, c2 in 1u32..5, d1 in 0.0f64..0.3, d2 in 0.0f64..1.0) {
                let s = RewardSpec::for_scenario(Scenario::Cost, vec![0.1, 0.5]);
                let g = grid();
                let o = [obs(10.0, d1), obs(3.0, d2)];
                let fewer = ControlAction { c: vec![c1, c2], ..info_action() };
                let more = ControlAction { c: vec![c1 + 1, c2], ..info_action() };
                prop_assert!(reward(&s, &o, &fewer, &g) > reward(&s, &o, &more, &g));
            }
        }
    }
}
