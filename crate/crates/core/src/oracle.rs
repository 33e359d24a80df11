//! Brute-force optimal policy, normalized reward (NR/ANR) and the
//! evaluation protocol on the simulator and on the target.

use std::collections::HashMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::policy::{normalize_state, ActMode, PolicyNetwork};
use crate::agent::ppo::{train, AgentConfig, CurvePoint, TrainingOutcome};
use crate::error::{Error, Result};
use crate::loadgen::{LoadPattern, PatternKind};
use crate::mesh::{ControlAction, LoadVector, SystemState};
use crate::objectives::reward;
use crate::simenv::{norm_bounds, LoadTable, SimEnvironment, SimSetup, TableCache};
use crate::surrogate::Surrogate;
use crate::sysmodel::ActionMask;

/// Argmax of `rewards` over the admitted actions, lowest index on ties.
/// An empty mask means every action is admitted.
pub fn optimal_action(rewards: &[f64], mask: &ActionMask) -> (usize, f64) {
    let mut best: Option<(usize, f64)> = None;
    let mut consider = |k: usize| {
        if best.is_none_or(|(_, r)| rewards[k] > r) {
            best = Some((k, rewards[k]));
        }
    };
    if mask.count() == 0 {
        (0..rewards.len()).for_each(&mut consider);
    } else {
        mask.admitted().for_each(&mut consider);
    }
    best.unwrap_or((0, f64::NAN))
}

/// Ground-truth rewards of every action: the surrogate's noiseless
/// closed form, memoized per load.
#[derive(Debug)]
pub struct SurrogateRewards<'a> {
    setup: SimSetup<'a>,
    surrogate: &'a Surrogate,
    tables: HashMap<Vec<u64>, Arc<Vec<f64>>>,
}

impl<'a> SurrogateRewards<'a> {
    pub fn new(setup: SimSetup<'a>, surrogate: &'a Surrogate) -> Result<Self> {
        if surrogate.topology().service_count() != setup.space.services()
            || surrogate.topology().scalable_nodes().len() != setup.space.scalable()
        {
            return Err(Error::Incompatible(
                "surrogate and action grid disagree on dimensions".into(),
            ));
        }
        Ok(SurrogateRewards {
            setup,
            surrogate,
            tables: HashMap::new(),
        })
    }

    pub fn action_reward(&self, load: &LoadVector, action: &ControlAction) -> f64 {
        let outcome = self.surrogate.closed_form(load, action);
        reward(
            self.setup.spec,
            &outcome.observations,
            action,
            self.setup.space.grid(),
        )
    }

    pub fn rewards(&mut self, load: &LoadVector) -> Arc<Vec<f64>> {
        let key: Vec<u64> = load.0.iter().map(|v| v.to_bits()).collect();
        if let Some(r) = self.tables.get(&key) {
            return Arc::clone(r);
        }
        let r: Vec<f64> = self
            .setup
            .space
            .actions()
            .par_iter()
            .map(|a| self.action_reward(load, a))
            .collect();
        let r = Arc::new(r);
        if self.tables.len() >= 8192 {
            self.tables.clear();
        }
        self.tables.insert(key, Arc::clone(&r));
        r
    }
}

/// What a policy sees when choosing an action.
pub struct Decision<'d> {
    pub state: &'d SystemState,
    pub mask: &'d ActionMask,
    /// Model table at the current load.
    pub table: &'d LoadTable,
}

pub trait Policy {
    fn label(&self) -> String;
    /// Fingerprint of the grid the policy indexes; `None` works on any grid.
    fn grid_fingerprint(&self) -> Option<&str>;
    fn select(&mut self, decision: &Decision<'_>) -> Result<usize>;
}

/// A trained network acting greedily.
pub struct GreedyPolicy<'p> {
    pub network: &'p PolicyNetwork,
}

impl Policy for GreedyPolicy<'_> {
    fn label(&self) -> String {
        "agent".into()
    }

    fn grid_fingerprint(&self) -> Option<&str> {
        Some(&self.network.grid_fingerprint)
    }

    fn select(&mut self, d: &Decision<'_>) -> Result<usize> {
        let x = normalize_state(d.state, &self.network.norm)?;
        // Greedy mode never draws from the generator.
        let mut unused = ChaCha8Rng::seed_from_u64(0);
        self.network
            .act_features(&x, d.mask, ActMode::Greedy, &mut unused)
    }
}

/// Model-optimal action at every step.
pub struct OraclePolicy;

impl Policy for OraclePolicy {
    fn label(&self) -> String {
        "oracle".into()
    }

    fn grid_fingerprint(&self) -> Option<&str> {
        None
    }

    fn select(&mut self, d: &Decision<'_>) -> Result<usize> {
        Ok(optimal_action(&d.table.rewards, d.mask).0)
    }
}

/// Uniform draws over admitted actions.
pub struct UniformPolicy {
    rng: ChaCha8Rng,
}

impl UniformPolicy {
    pub fn new(seed: u64) -> Self {
        UniformPolicy {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Policy for UniformPolicy {
    fn label(&self) -> String {
        "uniform".into()
    }

    fn grid_fingerprint(&self) -> Option<&str> {
        None
    }

    fn select(&mut self, d: &Decision<'_>) -> Result<usize> {
        let admitted: Vec<usize> = d.mask.admitted().collect();
        if admitted.is_empty() {
            return Err(Error::Domain("action mask admits no action".into()));
        }
        Ok(admitted[self.rng.random_range(0..admitted.len())])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    Simulator,
    Target,
}

/// Reward source for NR on the target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scoring {
    /// Agent and optimum both scored by the surrogate's noiseless closed form.
    GroundTruth,
    /// Agent scored by its measured outcome, optimum by the learned model.
    Model,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: u64,
    pub load: Vec<f64>,
    pub carried: Vec<f64>,
    pub agent_action: ControlAction,
    pub agent_index: usize,
    pub agent_reward: f64,
    pub optimal_action: ControlAction,
    pub optimal_index: usize,
    pub optimal_reward: f64,
    pub nr: f64,
    /// Mean response time per service after the action.
    pub delays: Vec<f64>,
    /// Cores in effect per scalable node.
    pub cores: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub policy: String,
    pub environment: EnvKind,
    pub pattern: PatternKind,
    pub scoring: Scoring,
    pub steps: Vec<StepRecord>,
    pub anr: f64,
    pub ci: f64,
}

/// `r_agent / r_opt`, clamped to `[0, 1]`; 1 when nothing is attainable.
pub fn normalized_reward(agent: f64, optimal: f64) -> f64 {
    if optimal <= 0.0 {
        1.0
    } else {
        (agent / optimal).clamp(0.0, 1.0)
    }
}

/// Mean and normal-approximation 95% half-width.
pub fn mean_and_ci(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, 1.96 * var.sqrt() / n.sqrt())
}

/// Where an evaluation runs.
#[derive(Debug, Clone, Copy)]
pub struct EvalTarget<'a> {
    pub setup: SimSetup<'a>,
    /// Required for target runs.
    pub surrogate: Option<&'a Surrogate>,
    /// Model tables shared with other runs on the same setup.
    pub cache: Option<&'a TableCache<'a>>,
}

impl<'a> EvalTarget<'a> {
    pub fn simulator(setup: SimSetup<'a>) -> Self {
        EvalTarget {
            setup,
            surrogate: None,
            cache: None,
        }
    }

    fn tables(&self) -> TableCache<'a> {
        self.cache
            .cloned()
            .unwrap_or_else(|| TableCache::new(self.setup))
    }
}

/// Run `n_steps` of `policy` and score every step against the optimum.
/// Random load patterns are keyed by `seed`, as is the target's noise.
pub fn evaluate(
    policy: &mut dyn Policy,
    target: EvalTarget<'_>,
    env: EnvKind,
    scoring: Scoring,
    pattern: &LoadPattern,
    n_steps: u64,
    seed: u64,
) -> Result<EvaluationReport> {
    let setup = target.setup;
    setup.validate()?;
    if let Some(fp) = policy.grid_fingerprint() {
        if fp != setup.space.fingerprint() {
            return Err(Error::Incompatible(format!(
                "policy was trained on grid {fp}, environment uses {}",
                setup.space.fingerprint()
            )));
        }
    }
    if n_steps == 0 {
        return Err(Error::Domain("evaluation needs at least one step".into()));
    }
    let steps = match env {
        EnvKind::Simulator => run_simulator(policy, target.tables(), pattern, n_steps, seed)?,
        EnvKind::Target => {
            let surrogate = target
                .surrogate
                .ok_or_else(|| Error::invalid("evaluation", "target runs need a surrogate"))?;
            run_target(
                policy,
                target.tables(),
                surrogate,
                scoring,
                pattern,
                n_steps,
                seed,
            )?
        }
    };
    let nr: Vec<f64> = steps.iter().map(|s| s.nr).collect();
    let (anr, ci) = mean_and_ci(&nr);
    Ok(EvaluationReport {
        policy: policy.label(),
        environment: env,
        pattern: pattern.kind(),
        scoring: match env {
            EnvKind::Simulator => Scoring::Model,
            EnvKind::Target => scoring,
        },
        steps,
        anr,
        ci,
    })
}

fn run_simulator(
    policy: &mut dyn Policy,
    cache: TableCache<'_>,
    pattern: &LoadPattern,
    n_steps: u64,
    seed: u64,
) -> Result<Vec<StepRecord>> {
    let setup = cache.setup();
    let mut env = SimEnvironment::with_cache(cache, pattern.clone())?;
    env.reset(seed)?;
    let mut records = Vec::with_capacity(n_steps as usize);
    for t in 0..n_steps {
        let table = env.table();
        let state = env.state().clone();
        let k = policy.select(&Decision {
            state: &state,
            mask: &table.mask,
            table: &table,
        })?;
        check_admitted(&table.mask, k)?;
        let out = env.step_index(k)?;
        let (opt, opt_r) = optimal_action(&table.rewards, &table.mask);
        let action = setup.space.get(k).clone();
        records.push(StepRecord {
            t,
            load: state.loads.0.clone(),
            carried: out.observations.iter().map(|o| o.carried).collect(),
            cores: action.c.clone(),
            agent_action: action,
            agent_index: k,
            agent_reward: out.reward,
            optimal_action: setup.space.get(opt).clone(),
            optimal_index: opt,
            optimal_reward: opt_r,
            nr: normalized_reward(out.reward, opt_r),
            delays: out.observations.iter().map(|o| o.delay_mean).collect(),
        });
    }
    Ok(records)
}

fn check_admitted(mask: &ActionMask, k: usize) -> Result<()> {
    if k >= mask.len() || !mask.admits(k) {
        return Err(Error::Domain(format!(
            "policy chose action {k}, which the mask excludes"
        )));
    }
    Ok(())
}

fn run_target(
    policy: &mut dyn Policy,
    mut cache: TableCache<'_>,
    surrogate: &Surrogate,
    scoring: Scoring,
    pattern: &LoadPattern,
    n_steps: u64,
    seed: u64,
) -> Result<Vec<StepRecord>> {
    let setup = cache.setup();
    let pattern = pattern.with_seed(seed);
    let mut noise = ChaCha8Rng::seed_from_u64(seed);
    let mut truth = SurrogateRewards::new(setup, surrogate)?;
    let default = setup.space.default_action();
    let load0 = pattern.load_at(0);
    let mut state = SystemState {
        delays: surrogate
            .closed_form(&load0, &default)
            .observations
            .iter()
            .map(|o| o.delay_mean)
            .collect(),
        loads: load0,
    };
    let mut sim = surrogate.initial_state(default);
    let mut records = Vec::with_capacity(n_steps as usize);
    for t in 0..n_steps {
        let table = cache.table(&state.loads)?;
        let k = policy.select(&Decision {
            state: &state,
            mask: &table.mask,
            table: &table,
        })?;
        check_admitted(&table.mask, k)?;
        let requested = setup.space.get(k);
        let (obs, next) = surrogate.step(&sim, &state.loads, requested, &mut noise);
        let effective = &next.effective;
        let (agent_reward, (opt, opt_r)) = match scoring {
            Scoring::GroundTruth => {
                let rewards = truth.rewards(&state.loads);
                (
                    truth.action_reward(&state.loads, effective),
                    optimal_action(&rewards, &table.mask),
                )
            }
            Scoring::Model => (
                reward(setup.spec, &obs, effective, setup.space.grid()),
                optimal_action(&table.rewards, &table.mask),
            ),
        };
        records.push(StepRecord {
            t,
            load: state.loads.0.clone(),
            carried: obs.iter().map(|o| o.carried).collect(),
            agent_action: requested.clone(),
            agent_index: k,
            agent_reward,
            optimal_action: setup.space.get(opt).clone(),
            optimal_index: opt,
            optimal_reward: opt_r,
            nr: normalized_reward(agent_reward, opt_r),
            delays: obs.iter().map(|o| o.delay_mean).collect(),
            cores: effective.c.clone(),
        });
        sim = next;
        state = SystemState {
            loads: pattern.load_at(t + 1),
            delays: obs.iter().map(|o| o.delay_mean).collect(),
        };
    }
    Ok(records)
}

/// Train on the simulator, recording a learning curve of greedy ANR over
/// `config.eval_steps` simulator steps on the training pattern.
pub fn train_on_simulator(
    setup: SimSetup<'_>,
    pattern: &LoadPattern,
    config: &AgentConfig,
    eval_seed: u64,
) -> Result<TrainingOutcome> {
    let mut env = SimEnvironment::new(setup, pattern.clone())?;
    let cache = env.cache().clone();
    let target = EvalTarget {
        cache: Some(&cache),
        ..EvalTarget::simulator(setup)
    };
    let mut curve_point = |network: &PolicyNetwork, step: u64| -> Result<CurvePoint> {
        let report = evaluate(
            &mut GreedyPolicy { network },
            target,
            EnvKind::Simulator,
            Scoring::Model,
            pattern,
            config.eval_steps.max(1),
            eval_seed,
        )?;
        Ok(CurvePoint {
            step,
            anr: report.anr,
            ci: report.ci,
        })
    };
    let outcome = train(&mut env, config, &mut curve_point)?;
    debug_assert_eq!(outcome.policy.norm, norm_bounds(pattern, setup.spec));
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forest::{RandomForest, RegressionTree, TreeParams};
    use crate::loadgen::default_patterns;
    use crate::mesh::{ActionGrid, ActionSpace, MeshTopology};
    use crate::objectives::{RewardSpec, Scenario};
    use crate::sysmodel::{feature_names, target_names, SystemModel};

    fn constant_model(mean: f64, var: f64) -> SystemModel {
        let forest = |v| RandomForest {
            trees: vec![RegressionTree::constant(v)],
            tree_seeds: vec![0],
        };
        SystemModel {
            services: 2,
            scalable: 2,
            feature_names: feature_names(2, 2),
            target_names: target_names(2),
            tree_count: 1,
            seed: 0,
            params: TreeParams::default(),
            forests: vec![forest(mean), forest(mean), forest(var), forest(var)],
        }
    }

    struct Fixture {
        model: SystemModel,
        space: ActionSpace,
        spec: RewardSpec,
        surrogate: Surrogate,
    }

    impl Fixture {
        fn new(scenario: Scenario) -> Self {
            let ids = scenario.service_ids();
            let topo = MeshTopology::testbed(ids).unwrap();
            let grid = ActionGrid::admission_and_routing(
                vec![0.0, 0.5, 1.0],
                vec![0.0, 0.5, 1.0],
                vec![4],
            );
            Fixture {
                model: constant_model(0.02, 0.0),
                space: ActionSpace::new(&grid, &topo).unwrap(),
                spec: RewardSpec::for_scenario(scenario, topo.delay_bounds()),
                surrogate: Surrogate::new(
                    crate::surrogate::SurrogateConfig::testbed(ids).unwrap(),
                    topo,
                )
                .unwrap(),
            }
        }

        fn setup(&self) -> SimSetup<'_> {
            SimSetup {
                model: &self.model,
                space: &self.space,
                spec: &self.spec,
                region_ratio: 0.5,
            }
        }

        fn target(&self) -> EvalTarget<'_> {
            EvalTarget {
                surrogate: Some(&self.surrogate),
                ..EvalTarget::simulator(self.setup())
            }
        }
    }

    #[test]
    fn optimum_ties_and_mask() {
        let rewards = [1.0, 3.0, 3.0, 2.0];
        assert_eq!(optimal_action(&rewards, &ActionMask::all(4)), (1, 3.0));
        let mask = ActionMask {
            allowed: vec![true, false, false, true],
            fallback: false,
        };
        assert_eq!(optimal_action(&rewards, &mask), (3, 2.0));
        let empty = ActionMask {
            allowed: vec![false; 4],
            fallback: false,
        };
        assert_eq!(optimal_action(&rewards, &empty), (1, 3.0));
        assert_eq!(optimal_action(&[0.5], &ActionMask::all(1)), (0, 0.5));
    }

    #[test]
    fn low_constant_delay_means_no_blocking() {
        let f = Fixture::new(Scenario::Throughput);
        let mut cache = TableCache::new(f.setup());
        let table = cache.table(&LoadVector(vec![20.0, 15.0])).unwrap();
        let (k, r) = optimal_action(&table.rewards, &table.mask);
        assert_eq!(f.space.get(k).b, vec![0.0, 0.0]);
        assert!((r - 35.0).abs() < 1e-3);
    }

    #[test]
    fn oracle_as_policy_scores_one_on_simulator() {
        let f = Fixture::new(Scenario::Throughput);
        let (training, evaluation) = default_patterns(1).unwrap();
        for pattern in [&training, &evaluation] {
            let report = evaluate(
                &mut OraclePolicy,
                f.target(),
                EnvKind::Simulator,
                Scoring::Model,
                pattern,
                50,
                3,
            )
            .unwrap();
            assert_eq!(report.anr, 1.0);
            assert_eq!(report.steps.len(), 50);
        }
    }

    #[test]
    fn uniform_policy_is_worse_and_nr_bounded() {
        let f = Fixture::new(Scenario::Throughput);
        let (training, _) = default_patterns(1).unwrap();
        for (env, scoring) in [
            (EnvKind::Simulator, Scoring::Model),
            (EnvKind::Target, Scoring::GroundTruth),
            (EnvKind::Target, Scoring::Model),
        ] {
            let report = evaluate(
                &mut UniformPolicy::new(1),
                f.target(),
                env,
                scoring,
                &training,
                100,
                9,
            )
            .unwrap();
            assert!(report.anr < 1.0);
            assert!(report.steps.iter().all(|s| (0.0..=1.0).contains(&s.nr)));
        }
    }

    #[test]
    fn target_requires_surrogate_and_matching_grid() {
        let f = Fixture::new(Scenario::Throughput);
        let (training, _) = default_patterns(1).unwrap();
        let no_surrogate = EvalTarget::simulator(f.setup());
        assert!(evaluate(
            &mut OraclePolicy,
            no_surrogate,
            EnvKind::Target,
            Scoring::GroundTruth,
            &training,
            5,
            0
        )
        .is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let network = PolicyNetwork::new(
            4,
            f.space.len(),
            &[8],
            norm_bounds(&training, &f.spec),
            "some other grid".into(),
            &mut rng,
        )
        .unwrap();
        let err = evaluate(
            &mut GreedyPolicy { network: &network },
            f.target(),
            EnvKind::Simulator,
            Scoring::Model,
            &training,
            5,
            0,
        );
        assert!(matches!(err, Err(Error::Incompatible(_))));
    }

    #[test]
    fn evaluation_is_deterministic() {
        let f = Fixture::new(Scenario::Utility);
        let (_, evaluation) = default_patterns(2).unwrap();
        let run = || {
            evaluate(
                &mut UniformPolicy::new(4),
                f.target(),
                EnvKind::Target,
                Scoring::GroundTruth,
                &evaluation,
                40,
                2,
            )
            .unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn ci_matches_normal_approximation() {
        let (m, ci) = mean_and_ci(&[0.0, 1.0, 0.0, 1.0]);
        assert_eq!(m, 0.5);
        let sd = (1.0f64 / 3.0).sqrt();
        assert!((ci - 1.96 * sd / 2.0).abs() < 1e-12);
        assert_eq!(mean_and_ci(&[0.7]), (0.7, 0.0));
    }
}
