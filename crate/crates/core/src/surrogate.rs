//! Parametric queueing stand-in for the target system.
//!
//! Each node is a processor-sharing server with capacity `μ_j · c_j` work
//! units per second. A request of service `i` brings `w_ij` work units to
//! node `j` and spends `d0_j + w_ij / (μ_j c_j − λ_j)` there, where `λ_j`
//! is the node's total work arrival rate; with `w_ij = 1` this is the
//! familiar `d0 + 1/(μc − λ)`. A node with `λ_j ≥ μ_j c_j` is saturated
//! and contributes the overload delay cap instead.
//!
//! Routing and blocking changes take effect within the step that requests
//! them; scaling changes take a configurable number of whole steps to settle.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loadgen::LoadPattern;
use crate::mesh::{
    ActionSpace, ControlAction, LoadVector, MeshTopology, ServiceObservation, SystemState,
    TraceRecord,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeParams {
    /// Work units served per second per core.
    pub service_rate: f64,
    /// Latency added by the node regardless of load, seconds.
    pub base_latency: f64,
    /// Core count used when the node is not scalable.
    pub cores: u32,
}

/// Steps a knob change needs before it is effective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SettleSteps {
    pub routing: u32,
    pub blocking: u32,
    pub scaling: u32,
}

impl Default for SettleSteps {
    fn default() -> Self {
        SettleSteps {
            routing: 0,
            blocking: 0,
            scaling: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateConfig {
    pub nodes: Vec<NodeParams>,
    /// Work units a request of each service (by position) brings to each node.
    pub demand: Vec<Vec<f64>>,
    /// Standard deviation of the log of the multiplicative delay noise.
    pub noise: f64,
    /// Delay reported by a saturated node, seconds.
    pub max_delay: f64,
    /// In overload the delay coefficient of variation becomes this factor's
    /// square root, so variance = factor × mean².
    pub saturation_variance_factor: f64,
    pub settle: SettleSteps,
}

impl SurrogateConfig {
    /// Calibration for the testbed mesh with the given service ids.
    ///
    /// Information nodes serve 30 work units/s/core on 4 fixed cores;
    /// compute nodes serve 4 req/s/core. A service-2 request is heavier
    /// than a service-1 request (5 vs 3 work units), so both information
    /// services peaking on one path saturate it while balanced routing at
    /// low load meets the 100 ms bound.
    pub fn testbed(service_ids: &[usize]) -> Result<Self> {
        let info = NodeParams {
            service_rate: 30.0,
            base_latency: 0.005,
            cores: 4,
        };
        let compute = NodeParams {
            service_rate: 4.0,
            base_latency: 0.005,
            cores: 4,
        };
        let front = NodeParams {
            service_rate: 1000.0,
            base_latency: 0.005,
            cores: 1,
        };
        let nodes = vec![front, info.clone(), info, compute.clone(), compute];
        let demand = service_ids
            .iter()
            .map(|&id| match id {
                1 => Ok(vec![0.0, 3.0, 3.0, 0.0, 0.0]),
                2 => Ok(vec![0.0, 5.0, 5.0, 0.0, 0.0]),
                3 => Ok(vec![0.0, 0.0, 0.0, 1.0, 1.0]),
                other => Err(Error::invalid(
                    "surrogate",
                    format!("unknown testbed service {other}"),
                )),
            })
            .collect::<Result<_>>()?;
        Ok(SurrogateConfig {
            nodes,
            demand,
            noise: 0.1,
            max_delay: 2.0,
            saturation_variance_factor: 4.0,
            settle: SettleSteps::default(),
        })
    }

    pub fn validate(&self, topology: &MeshTopology) -> Result<()> {
        let bad = |reason: String| Err(Error::invalid("surrogate config", reason));
        if self.nodes.len() != topology.node_count() {
            return bad(format!(
                "{} node entries for {} nodes",
                self.nodes.len(),
                topology.node_count()
            ));
        }
        if self.demand.len() != topology.service_count()
            || self.demand.iter().any(|d| d.len() != self.nodes.len())
        {
            return bad("demand matrix must be services × nodes".into());
        }
        if self
            .demand
            .iter()
            .flatten()
            .any(|w| !(w.is_finite() && *w >= 0.0))
        {
            return bad("demand weights must be non-negative".into());
        }
        for (j, n) in self.nodes.iter().enumerate() {
            if !(n.service_rate > 0.0 && n.service_rate.is_finite()) {
                return bad(format!("node {j} service rate must be positive"));
            }
            if !(n.base_latency >= 0.0) || n.cores == 0 {
                return bad(format!(
                    "node {j} needs non-negative base latency and at least one core"
                ));
            }
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad("noise must be non-negative".into());
        }
        if !(self.max_delay > 0.0 && self.max_delay.is_finite()) {
            return bad("overload delay cap must be positive".into());
        }
        if !(self.saturation_variance_factor >= 0.0) {
            return bad("saturation variance factor must be non-negative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pending<T> {
    pub value: Vec<T>,
    pub remaining: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateState {
    /// Knob values currently in force.
    pub effective: ControlAction,
    pub pending_blocking: Option<Pending<f64>>,
    pub pending_routing: Option<Pending<f64>>,
    pub pending_scaling: Option<Pending<u32>>,
}

impl SurrogateState {
    pub fn new(effective: ControlAction) -> Self {
        SurrogateState {
            effective,
            pending_blocking: None,
            pending_routing: None,
            pending_scaling: None,
        }
    }

    /// True when no knob change is still settling.
    pub fn is_settled(&self) -> bool {
        self.pending_blocking.is_none()
            && self.pending_routing.is_none()
            && self.pending_scaling.is_none()
    }
}

fn advance<T: PartialEq + Clone>(
    effective: &mut Vec<T>,
    pending: &mut Option<Pending<T>>,
    requested: &[T],
    settle: u32,
) {
    if effective.as_slice() == requested {
        *pending = None;
    } else if pending.as_ref().is_none_or(|p| p.value != requested) {
        *pending = Some(Pending {
            value: requested.to_vec(),
            remaining: settle,
        });
    }
    if pending.as_ref().is_some_and(|p| p.remaining == 0) {
        *effective = pending.take().map(|p| p.value).unwrap_or_default();
    }
}

fn count_down<T>(pending: &mut Option<Pending<T>>) {
    if let Some(p) = pending {
        p.remaining = p.remaining.saturating_sub(1);
    }
}

/// Noiseless response of the mesh to a load and an (effective) action.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub observations: Vec<ServiceObservation>,
    /// Whether any node the service's traffic traverses is saturated.
    pub saturated: Vec<bool>,
    /// Work arrival rate per node.
    pub node_arrivals: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Surrogate {
    config: SurrogateConfig,
    topology: MeshTopology,
}

impl Surrogate {
    pub fn new(config: SurrogateConfig, topology: MeshTopology) -> Result<Self> {
        config.validate(&topology)?;
        Ok(Surrogate { config, topology })
    }

    pub fn config(&self) -> &SurrogateConfig {
        &self.config
    }

    pub fn topology(&self) -> &MeshTopology {
        &self.topology
    }

    fn cores(&self, action: &ControlAction) -> Vec<u32> {
        (0..self.topology.node_count())
            .map(|j| match self.topology.scalable_index(j) {
                Some(k) => action.c[k],
                None => self.config.nodes[j].cores,
            })
            .collect()
    }

    /// Work arrival rate per node.
    pub fn node_arrivals(&self, load: &LoadVector, action: &ControlAction) -> Vec<f64> {
        let carried = action.carried(load);
        let mut arrivals = vec![0.0; self.topology.node_count()];
        for (i, svc) in self.topology.services().iter().enumerate() {
            for (path, q) in svc.paths.iter().zip(svc.path_weights(action.p[i])) {
                for &j in path {
                    arrivals[j] += carried[i] * q * self.config.demand[i][j];
                }
            }
        }
        arrivals
    }

    /// Closed-form (noiseless) delays, variances and carried loads.
    pub fn closed_form(&self, load: &LoadVector, action: &ControlAction) -> Outcome {
        let cfg = &self.config;
        let carried = action.carried(load);
        let arrivals = self.node_arrivals(load, action);
        let capacity: Vec<f64> = self
            .cores(action)
            .iter()
            .zip(&cfg.nodes)
            .map(|(&c, n)| n.service_rate * c as f64)
            .collect();
        let node_saturated: Vec<bool> = arrivals
            .iter()
            .zip(&capacity)
            .map(|(&l, &cap)| l > 0.0 && l >= cap)
            .collect();

        let mut observations = Vec::with_capacity(self.topology.service_count());
        let mut saturated = Vec::with_capacity(self.topology.service_count());
        for (i, svc) in self.topology.services().iter().enumerate() {
            let mut mean = 0.0;
            let mut admitted = 0.0;
            let mut hits_saturation = false;
            for (path, q) in svc.paths.iter().zip(svc.path_weights(action.p[i])) {
                let mut path_delay = 0.0;
                let mut survive = 1.0;
                for &j in path {
                    let node = &cfg.nodes[j];
                    let work = cfg.demand[i][j];
                    path_delay += if work == 0.0 || carried[i] == 0.0 {
                        node.base_latency
                    } else if node_saturated[j] {
                        cfg.max_delay
                    } else {
                        (node.base_latency + work / (capacity[j] - arrivals[j])).min(cfg.max_delay)
                    };
                    if node_saturated[j] && work > 0.0 {
                        survive *= capacity[j] / arrivals[j];
                        if q > 0.0 && carried[i] > 0.0 {
                            hits_saturation = true;
                        }
                    }
                }
                mean += q * path_delay;
                admitted += q * survive;
            }
            let var = if hits_saturation {
                cfg.saturation_variance_factor * mean * mean
            } else {
                (cfg.noise * mean).powi(2)
            };
            observations.push(ServiceObservation {
                offered: load.0[i],
                carried: (carried[i] * admitted).min(load.0[i]),
                delay_mean: mean,
                delay_var: var,
            });
            saturated.push(hits_saturation);
        }
        Outcome {
            observations,
            saturated,
            node_arrivals: arrivals,
        }
    }

    pub fn initial_state(&self, action: ControlAction) -> SurrogateState {
        SurrogateState::new(action)
    }

    /// Advance one step: apply the requested action subject to settling,
    /// then observe the mesh with multiplicative lognormal delay noise.
    pub fn step<R: Rng + ?Sized>(
        &self,
        state: &SurrogateState,
        load: &LoadVector,
        requested: &ControlAction,
        rng: &mut R,
    ) -> (Vec<ServiceObservation>, SurrogateState) {
        let settle = self.config.settle;
        let mut next = state.clone();
        advance(
            &mut next.effective.b,
            &mut next.pending_blocking,
            &requested.b,
            settle.blocking,
        );
        advance(
            &mut next.effective.p,
            &mut next.pending_routing,
            &requested.p,
            settle.routing,
        );
        advance(
            &mut next.effective.c,
            &mut next.pending_scaling,
            &requested.c,
            settle.scaling,
        );

        let outcome = self.closed_form(load, &next.effective);
        let nu = self.config.noise;
        let observations = outcome
            .observations
            .iter()
            .zip(&outcome.saturated)
            .map(|(obs, &sat)| {
                let z: f64 = rng.sample(StandardNormal);
                let mean = obs.delay_mean * (nu * z - 0.5 * nu * nu).exp();
                let var = if sat {
                    self.config.saturation_variance_factor * mean * mean
                } else {
                    (nu * mean).powi(2)
                };
                ServiceObservation {
                    delay_mean: mean,
                    delay_var: var,
                    ..*obs
                }
            })
            .collect();

        count_down(&mut next.pending_blocking);
        count_down(&mut next.pending_routing);
        count_down(&mut next.pending_scaling);
        (observations, next)
    }
}

pub trait ActionSampler {
    fn sample(&mut self, state: &SystemState) -> ControlAction;
}

/// Uniform draws from the enumerated action set.
pub struct UniformSampler<'a> {
    space: &'a ActionSpace,
    rng: ChaCha8Rng,
}

impl<'a> UniformSampler<'a> {
    pub fn new(space: &'a ActionSpace, seed: u64) -> Self {
        UniformSampler {
            space,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl ActionSampler for UniformSampler<'_> {
    fn sample(&mut self, _state: &SystemState) -> ControlAction {
        self.space
            .get(self.rng.random_range(0..self.space.len()))
            .clone()
    }
}

/// Run the surrogate for `n_steps` steps, recording `(s_t, a_t, obs_{t+1})`.
///
/// A sampled action is held until all of its knob changes have settled;
/// steps observed while a change is still pending are not recorded.
pub fn collect_traces(
    surrogate: &Surrogate,
    pattern: &LoadPattern,
    initial: ControlAction,
    sampler: &mut dyn ActionSampler,
    n_steps: u64,
    noise_seed: u64,
) -> Result<Vec<TraceRecord>> {
    if n_steps == 0 {
        return Err(Error::Domain(
            "trace collection needs at least one step".into(),
        ));
    }
    if pattern.service_count() != surrogate.topology.service_count() {
        return Err(Error::invalid(
            "load pattern",
            "service count differs from the topology",
        ));
    }
    let mut noise = ChaCha8Rng::seed_from_u64(noise_seed);
    let load0 = pattern.load_at(0);
    let delays0 = surrogate
        .closed_form(&load0, &initial)
        .observations
        .iter()
        .map(|o| o.delay_mean)
        .collect();
    let mut state = SystemState {
        loads: load0,
        delays: delays0,
    };
    let mut sim = surrogate.initial_state(initial);
    let mut held: Option<ControlAction> = None;
    let mut records = Vec::new();

    for t in 0..n_steps {
        let action = match held.take() {
            Some(a) => a,
            None => sampler.sample(&state),
        };
        let (obs, next) = surrogate.step(&sim, &state.loads, &action, &mut noise);
        if next.is_settled() {
            records.push(TraceRecord {
                t,
                state: state.clone(),
                action,
                next: obs.clone(),
            });
        } else {
            held = Some(action);
        }
        sim = next;
        state = SystemState {
            loads: pattern.load_at(t + 1),
            delays: obs.iter().map(|o| o.delay_mean).collect(),
        };
    }
    Ok(records)
}
