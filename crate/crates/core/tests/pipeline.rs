use meshrl::agent::{masked_softmax, PolicyNetwork};
use meshrl::config::ScenarioConfig;
use meshrl::mesh::TraceRecord;
use meshrl::objectives::Scenario;
use meshrl::oracle::{
    evaluate, normalized_reward, EnvKind, EvalTarget, OraclePolicy, Policy, Scoring, UniformPolicy,
};
use meshrl::persist;
use meshrl::simenv::SimSetup;
use meshrl::surrogate::{collect_traces, UniformSampler};
use meshrl::sysmodel::{split_records, ActionMask, SystemModel};
use proptest::prelude::*;

fn small_traces(config: &ScenarioConfig, steps: u64) -> Vec<TraceRecord> {
    let space = config.action_space().unwrap();
    let surrogate = config.surrogate().unwrap();
    let mut sampler = UniformSampler::new(&space, config.seeds.collect);
    collect_traces(
        &surrogate,
        &config.patterns.training,
        space.default_action(),
        &mut sampler,
        steps,
        config.seeds.noise,
    )
    .unwrap()
}

#[test]
fn traces_survive_a_file_round_trip() {
    let config = ScenarioConfig::default_for(Scenario::Cost).unwrap();
    let records = small_traces(&config, 400);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.jsonl");
    persist::write_traces(&path, &records).unwrap();
    assert_eq!(persist::read_traces(&path).unwrap(), records);
}

#[test]
fn tampered_model_is_rejected() {
    let config = ScenarioConfig::default_for(Scenario::Throughput).unwrap();
    let model = SystemModel::fit(&small_traces(&config, 600), 5, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    persist::save_model(&path, &model).unwrap();
    assert_eq!(persist::load_model(&path).unwrap(), model);
    let text = std::fs::read_to_string(&path).unwrap();
    let tampered = text.replacen("\"tree_count\":5", "\"tree_count\":6", 1);
    assert_ne!(text, tampered);
    std::fs::write(&path, tampered).unwrap();
    assert!(persist::load_model(&path).is_err());
}

#[test]
fn oracle_bounds_every_policy_on_the_simulator() {
    let config = ScenarioConfig::default_for(Scenario::Protected).unwrap();
    let model = SystemModel::fit(&small_traces(&config, 1500), 10, 2).unwrap();
    let space = config.action_space().unwrap();
    let setup = SimSetup {
        model: &model,
        space: &space,
        spec: &config.reward,
        region_ratio: config.model.region_ratio,
    };
    let target = EvalTarget::simulator(setup);
    let pattern = &config.patterns.evaluation;
    let oracle = evaluate(
        &mut OraclePolicy,
        target,
        EnvKind::Simulator,
        Scoring::GroundTruth,
        pattern,
        40,
        3,
    )
    .unwrap();
    assert_eq!(oracle.anr, 1.0);
    let mut uniform = UniformPolicy::new(4);
    assert!(uniform.grid_fingerprint().is_none());
    let random = evaluate(
        &mut uniform,
        target,
        EnvKind::Simulator,
        Scoring::GroundTruth,
        pattern,
        40,
        3,
    )
    .unwrap();
    assert!(random.anr < 1.0);
    assert!(random
        .steps
        .iter()
        .all(|s| (0.0..=1.0).contains(&s.nr) && s.agent_reward <= s.optimal_reward + 1e-12));
}

#[test]
fn untrained_network_refuses_a_foreign_grid() {
    let one = ScenarioConfig::default_for(Scenario::Throughput).unwrap();
    let four = ScenarioConfig::default_for(Scenario::Cost).unwrap();
    assert_ne!(
        one.action_space().unwrap().fingerprint(),
        four.action_space().unwrap().fingerprint()
    );
    let model = SystemModel::fit(&small_traces(&four, 600), 5, 1).unwrap();
    let space = four.action_space().unwrap();
    let norm = meshrl::simenv::norm_bounds(&four.patterns.training, &four.reward);
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
    let wrong = one.action_space().unwrap();
    let network = PolicyNetwork::new(
        4,
        wrong.len(),
        &[8],
        norm,
        wrong.fingerprint().to_string(),
        &mut rng,
    )
    .unwrap();
    let setup = SimSetup {
        model: &model,
        space: &space,
        spec: &four.reward,
        region_ratio: four.model.region_ratio,
    };
    let err = evaluate(
        &mut meshrl::oracle::GreedyPolicy { network: &network },
        EvalTarget::simulator(setup),
        EnvKind::Simulator,
        Scoring::GroundTruth,
        &four.patterns.training,
        5,
        0,
    )
    .unwrap_err();
    assert!(matches!(err, meshrl::Error::Incompatible(_)), "{err}");
}

proptest! {
    #[test]
    fn split_partitions_in_order(n in 5usize..300, seed in any::<u64>(), fraction in 0.05f64..0.95) {
        let config = ScenarioConfig::default_for(Scenario::Throughput).unwrap();
        let mut records = small_traces(&config, 20);
        records.truncate(1);
        let template = records.pop().unwrap();
        let records: Vec<TraceRecord> = (0..n as u64).map(|t| TraceRecord { t, ..template.clone() }).collect();
        match split_records(&records, fraction, seed) {
            Ok((train, held)) => {
                prop_assert_eq!(train.len() + held.len(), n);
                prop_assert_eq!(held.len(), ((n as f64) * fraction).round() as usize);
                prop_assert!(train.windows(2).all(|w| w[0].t < w[1].t));
                prop_assert!(held.windows(2).all(|w| w[0].t < w[1].t));
                prop_assert!(held.iter().all(|h| train.iter().all(|r| r.t != h.t)));
            }
            Err(_) => {
                let held = ((n as f64) * fraction).round() as usize;
                prop_assert!(held == 0 || held == n);
            }
        }
    }

    #[test]
    fn masked_softmax_is_a_distribution_on_the_mask(
        logits in prop::collection::vec(-50.0f64..50.0, 1..40),
        bits in any::<u64>(),
    ) {
        let flags: Vec<bool> = (0..logits.len()).map(|k| bits >> (k % 64) & 1 == 1).collect();
        let mask = ActionMask::from_flags(flags);
        let p = masked_softmax(&logits, &mask);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        for (k, &pk) in p.iter().enumerate() {
            prop_assert!(pk >= 0.0);
            if !mask.admits(k) {
                prop_assert_eq!(pk, 0.0);
            }
        }
    }

    #[test]
    fn normalized_reward_is_clamped(agent in -100.0f64..100.0, optimal in -100.0f64..100.0) {
        let nr = normalized_reward(agent, optimal);
        prop_assert!((0.0..=1.0).contains(&nr));
        if optimal > 0.0 && agent >= 0.0 && agent <= optimal {
            prop_assert!((nr - agent / optimal).abs() < 1e-12);
        }
    }
}
