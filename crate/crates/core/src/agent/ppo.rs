//! Proximal policy optimization with a masked categorical policy.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::Adam;
use super::policy::{masked_softmax, sample, NormBounds, PolicyNetwork};
use crate::error::{Error, Result};
use crate::sysmodel::ActionMask;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub learning_rate: f64,
    pub gamma: f64,
    pub minibatch: usize,
    /// Environment steps collected between updates.
    pub rollout: usize,
    pub epochs: usize,
    pub clip: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub max_grad_norm: f64,
    /// Budget in minibatch gradient steps.
    pub max_updates: usize,
    /// Environment steps between learning-curve points; 0 disables.
    pub eval_every: u64,
    pub eval_steps: u64,
    pub hidden: Vec<usize>,
    pub seed: u64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            learning_rate: 1e-3,
            gamma: 0.0,
            minibatch: 64,
            rollout: 1024,
            epochs: 10,
            clip: 0.2,
            entropy_coef: 0.01,
            value_coef: 0.5,
            max_grad_norm: 0.5,
            max_updates: 5000,
            eval_every: 1000,
            eval_steps: 100,
            hidden: vec![64, 64],
            seed: 0,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: &str| Err(Error::invalid("agent config", reason));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("discount must lie in [0, 1)");
        }
        if self.minibatch == 0 || self.rollout == 0 || self.minibatch > self.rollout {
            return bad("need 0 < minibatch <= rollout");
        }
        if self.epochs == 0 || self.max_updates == 0 {
            return bad("epochs and update budget must be positive");
        }
        if !(self.clip > 0.0)
            || self.entropy_coef < 0.0
            || self.value_coef < 0.0
            || !(self.max_grad_norm > 0.0)
        {
            return bad("clip and gradient norm must be positive, coefficients non-negative");
        }
        if self.hidden.contains(&0) {
            return bad("hidden layers must be non-empty");
        }
        Ok(())
    }

    /// Environment steps needed to spend the update budget.
    pub fn environment_steps(&self) -> u64 {
        let per_rollout = self.epochs * self.rollout.div_ceil(self.minibatch);
        (self.max_updates.div_ceil(per_rollout) * self.rollout) as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: u64,
    pub anr: f64,
    pub ci: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub points: Vec<CurvePoint>,
}

impl LearningCurve {
    pub fn push(&mut self, point: CurvePoint) -> Result<()> {
        if self.points.last().is_some_and(|p| p.step >= point.step) {
            return Err(Error::invalid(
                "learning curve",
                "steps must be strictly increasing",
            ));
        }
        self.points.push(point);
        Ok(())
    }

    pub fn last(&self) -> Option<&CurvePoint> {
        self.points.last()
    }
}

/// What the trainer needs from an environment.
pub trait TrainingEnv {
    fn action_count(&self) -> usize;
    fn feature_len(&self) -> usize;
    fn reset(&mut self, seed: u64) -> Result<()>;
    fn features(&self) -> Result<Vec<f64>>;
    fn mask(&self) -> Arc<ActionMask>;
    /// Apply an action and return its reward.
    fn step(&mut self, action: usize) -> Result<f64>;
    /// Grid fingerprint stamped on the trained policy.
    fn fingerprint(&self) -> String;
    fn norm_bounds(&self) -> NormBounds;
    /// Rewards evaluated for actions outside the mask (instrumentation).
    fn masked_evaluations(&self) -> u64 {
        0
    }
}

/// One stored transition.
#[derive(Debug, Clone)]
pub struct Sample {
    pub features: Vec<f64>,
    pub mask: Arc<ActionMask>,
    pub action: usize,
    pub log_prob: f64,
    pub advantage: f64,
    pub ret: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct Gradients {
    pub actor: Vec<f64>,
    pub critic: Vec<f64>,
}

fn normalized_advantages(batch: &[Sample]) -> Vec<f64> {
    let adv: Vec<f64> = batch.iter().map(|s| s.advantage).collect();
    if adv.len() < 2 {
        return adv;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let sd = (adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    adv.iter().map(|a| (a - mean) / (sd + 1e-8)).collect()
}

/// Clipped-surrogate loss with entropy bonus and value regression, and its
/// exact gradient with respect to actor and critic parameters.
pub fn ppo_loss(
    policy: &PolicyNetwork,
    batch: &[Sample],
    config: &AgentConfig,
) -> Result<(LossParts, Gradients)> {
    if batch.is_empty() {
        return Err(Error::invalid("minibatch", "empty"));
    }
    let b = batch.len() as f64;
    let adv = normalized_advantages(batch);
    let mut grads = Gradients {
        actor: vec![0.0; policy.actor.params.len()],
        critic: vec![0.0; policy.critic.params.len()],
    };
    let (mut pg, mut vl, mut ent) = (0.0, 0.0, 0.0);
    for (s, &a) in batch.iter().zip(&adv) {
        let acts = policy.actor.forward_cached(&s.features);
        let probs = masked_softmax(acts.output(), &s.mask);
        let log_prob = probs[s.action].ln();
        let ratio = (log_prob - s.log_prob).exp();
        let clipped = ratio.clamp(1.0 - config.clip, 1.0 + config.clip);
        let unclipped_active = ratio * a <= clipped * a;
        pg -= (ratio * a).min(clipped * a);
        let entropy: f64 = -s
            .mask
            .admitted()
            .filter(|&k| probs[k] > 0.0)
            .map(|k| probs[k] * probs[k].ln())
            .sum::<f64>();
        ent += entropy;

        let d_logp = if unclipped_active {
            -a * ratio / b
        } else {
            0.0
        };
        let mut grad_logits = vec![0.0; probs.len()];
        for k in s.mask.admitted().filter(|&k| probs[k] > 0.0) {
            let onehot = if k == s.action { 1.0 } else { 0.0 };
            grad_logits[k] = d_logp * (onehot - probs[k])
                + config.entropy_coef * probs[k] * (probs[k].ln() + entropy) / b;
        }
        policy.actor.backward(&acts, &grad_logits, &mut grads.actor);

        let cacts = policy.critic.forward_cached(&s.features);
        let v = cacts.output()[0];
        vl += (v - s.ret).powi(2);
        policy.critic.backward(
            &cacts,
            &[config.value_coef * 2.0 * (v - s.ret) / b],
            &mut grads.critic,
        );
    }
    let parts = LossParts {
        policy: pg / b,
        value: vl / b,
        entropy: ent / b,
        total: pg / b + config.value_coef * vl / b - config.entropy_coef * ent / b,
    };
    if !parts.total.is_finite() {
        return Err(Error::Numerical(format!(
            "non-finite loss (policy {}, value {}, entropy {})",
            parts.policy, parts.value, parts.entropy
        )));
    }
    Ok((parts, grads))
}

fn clip_global_norm(grads: &mut Gradients, max_norm: f64) {
    let norm = grads
        .actor
        .iter()
        .chain(&grads.critic)
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let scale = max_norm / (norm + 1e-6);
        grads
            .actor
            .iter_mut()
            .chain(grads.critic.iter_mut())
            .for_each(|g| *g *= scale);
    }
}

/// Summary of a training run.
#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub policy: PolicyNetwork,
    pub curve: LearningCurve,
    pub updates: usize,
    pub environment_steps: u64,
    pub masked_evaluations: u64,
}

/// Train a policy on `env`. `evaluate` is called every `eval_every`
/// environment steps with the current policy and the step count.
pub fn train<E: TrainingEnv + ?Sized>(
    env: &mut E,
    config: &AgentConfig,
    evaluate: &mut dyn FnMut(&PolicyNetwork, u64) -> Result<CurvePoint>,
) -> Result<TrainingOutcome> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut policy = PolicyNetwork::new(
        env.feature_len(),
        env.action_count(),
        &config.hidden,
        env.norm_bounds(),
        env.fingerprint(),
        &mut rng,
    )?;
    let mut actor_opt = Adam::new(policy.actor.params.len(), config.learning_rate);
    let mut critic_opt = Adam::new(policy.critic.params.len(), config.learning_rate);
    let mut curve = LearningCurve::default();
    let (mut updates, mut steps) = (0usize, 0u64);

    while updates < config.max_updates {
        // Each rollout is one episode on a freshly keyed load sequence.
        env.reset(rng.next_u64())?;
        let mut batch = Vec::with_capacity(config.rollout);
        let mut values = Vec::with_capacity(config.rollout);
        let mut rewards = Vec::with_capacity(config.rollout);
        for _ in 0..config.rollout {
            let features = env.features()?;
            let mask = env.mask();
            if mask.count() == 0 {
                return Err(Error::Domain(
                    "environment produced an empty action mask".into(),
                ));
            }
            let probs = policy.probabilities(&features, &mask);
            let action = sample(&probs, &mask, &mut rng);
            values.push(policy.value(&features));
            rewards.push(env.step(action)?);
            batch.push(Sample {
                log_prob: probs[action].ln(),
                features,
                mask,
                action,
                advantage: 0.0,
                ret: 0.0,
            });
            steps += 1;
            if config.eval_every > 0 && steps % config.eval_every == 0 {
                curve.push(evaluate(&policy, steps)?)?;
            }
        }
        let mut next_return = if config.gamma > 0.0 {
            policy.value(&env.features()?)
        } else {
            0.0
        };
        for k in (0..batch.len()).rev() {
            next_return = rewards[k] + config.gamma * next_return;
            batch[k].ret = next_return;
            batch[k].advantage = next_return - values[k];
        }

        let mut order: Vec<usize> = (0..batch.len()).collect();
        'epochs: for _ in 0..config.epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(config.minibatch) {
                let mb: Vec<Sample> = chunk.iter().map(|&i| batch[i].clone()).collect();
                let (_, mut grads) = ppo_loss(&policy, &mb, config)?;
                clip_global_norm(&mut grads, config.max_grad_norm);
                actor_opt.step(&mut policy.actor.params, &grads.actor);
                critic_opt.step(&mut policy.critic.params, &grads.critic);
                updates += 1;
                if updates >= config.max_updates {
                    break 'epochs;
                }
            }
        }
        if policy
            .actor
            .params
            .iter()
            .chain(&policy.critic.params)
            .any(|w| !w.is_finite())
        {
            return Err(Error::Numerical(
                "network parameters became non-finite".into(),
            ));
        }
    }
    Ok(TrainingOutcome {
        policy,
        curve,
        updates,
        environment_steps: steps,
        masked_evaluations: env.masked_evaluations(),
    })
}

/// Deterministic contextual bandit over a reward table, with one-hot state
/// features and states drawn uniformly each step.
#[derive(Debug, Clone)]
pub struct TableBandit {
    rewards: Vec<Vec<f64>>,
    masks: Vec<Arc<ActionMask>>,
    state: usize,
    rng: ChaCha8Rng,
    masked_evaluations: u64,
}

impl TableBandit {
    pub fn new(rewards: Vec<Vec<f64>>) -> Result<Self> {
        let actions = rewards.first().map_or(0, Vec::len);
        Self::with_masks(
            rewards.clone(),
            (0..rewards.len())
                .map(|_| ActionMask::all(actions))
                .collect(),
        )
    }

    pub fn with_masks(rewards: Vec<Vec<f64>>, masks: Vec<ActionMask>) -> Result<Self> {
        let actions = rewards.first().map_or(0, Vec::len);
        if actions == 0
            || rewards.iter().any(|r| r.len() != actions)
            || masks.len() != rewards.len()
        {
            return Err(Error::invalid(
                "bandit",
                "reward table must be rectangular and non-empty",
            ));
        }
        if masks.iter().any(|m| m.len() != actions || m.count() == 0) {
            return Err(Error::invalid(
                "bandit",
                "every state needs a non-empty mask",
            ));
        }
        Ok(TableBandit {
            rewards,
            masks: masks.into_iter().map(Arc::new).collect(),
            state: 0,
            rng: ChaCha8Rng::seed_from_u64(0),
            masked_evaluations: 0,
        })
    }

    pub fn states(&self) -> usize {
        self.rewards.len()
    }

    pub fn one_hot(&self, state: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.states()];
        x[state] = 1.0;
        x
    }

    pub fn state_mask(&self, state: usize) -> Arc<ActionMask> {
        Arc::clone(&self.masks[state])
    }

    /// Best admitted action per state, lowest index on ties.
    pub fn argmax(&self, state: usize) -> usize {
        let r = &self.rewards[state];
        let mut best = None;
        for k in self.masks[state].admitted() {
            if best.is_none_or(|b: usize| r[k] > r[b]) {
                best = Some(k);
            }
        }
        best.unwrap_or(0)
    }
}

impl TrainingEnv for TableBandit {
    fn action_count(&self) -> usize {
        self.rewards[0].len()
    }

    fn feature_len(&self) -> usize {
        self.states()
    }

    fn reset(&mut self, seed: u64) -> Result<()> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.state = self.rng.random_range(0..self.states());
        Ok(())
    }

    fn features(&self) -> Result<Vec<f64>> {
        Ok(self.one_hot(self.state))
    }

    fn mask(&self) -> Arc<ActionMask> {
        self.state_mask(self.state)
    }

    fn step(&mut self, action: usize) -> Result<f64> {
        if !self.masks[self.state].admits(action) {
            self.masked_evaluations += 1;
        }
        let r = self.rewards[self.state][action];
        self.state = self.rng.random_range(0..self.states());
        Ok(r)
    }

    fn fingerprint(&self) -> String {
        format!("bandit-{}x{}", self.states(), self.action_count())
    }

    fn norm_bounds(&self) -> NormBounds {
        NormBounds {
            loads: vec![(0.0, 1.0); self.states()],
            delays: Vec::new(),
        }
    }

    fn masked_evaluations(&self) -> u64 {
        self.masked_evaluations
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::policy::ActMode;

    fn no_eval(_: &PolicyNetwork, step: u64) -> Result<CurvePoint> {
        Ok(CurvePoint {
            step,
            anr: 0.0,
            ci: 0.0,
        })
    }

    fn small_config(max_updates: usize) -> AgentConfig {
        AgentConfig {
            rollout: 256,
            max_updates,
            eval_every: 0,
            hidden: vec![16, 16],
            seed: 5,
            ..AgentConfig::default()
        }
    }

    #[test]
    fn two_state_bandit_is_solved() {
        let mut env = TableBandit::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let config = small_config(400);
        let out = train(&mut env, &config, &mut no_eval).unwrap();
        assert!(out.environment_steps <= 10_000);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for s in 0..2 {
            let a = out
                .policy
                .act_features(
                    &env.one_hot(s),
                    &env.state_mask(s),
                    ActMode::Greedy,
                    &mut rng,
                )
                .unwrap();
            assert_eq!(a, s);
        }
    }

    #[test]
    fn training_never_evaluates_masked_actions() {
        let rewards = vec![vec![0.0, 5.0, 1.0], vec![2.0, 9.0, 0.0]];
        let masks = vec![
            ActionMask::from_flags(vec![true, false, true]),
            ActionMask::from_flags(vec![true, false, false]),
        ];
        let mut env = TableBandit::with_masks(rewards, masks).unwrap();
        let out = train(&mut env, &small_config(100), &mut no_eval).unwrap();
        assert_eq!(out.masked_evaluations, 0);
        assert_eq!(env.argmax(0), 2);
    }

    #[test]
    fn identical_seeds_give_identical_policies() {
        let table = vec![vec![0.3, 0.1, 0.7], vec![0.9, 0.2, 0.4]];
        let mut curve_eval = |p: &PolicyNetwork, step: u64| {
            Ok(CurvePoint {
                step,
                anr: p.value(&[1.0, 0.0]).clamp(0.0, 1.0),
                ci: 0.0,
            })
        };
        let config = AgentConfig {
            eval_every: 128,
            ..small_config(60)
        };
        let a = train(
            &mut TableBandit::new(table.clone()).unwrap(),
            &config,
            &mut curve_eval,
        )
        .unwrap();
        let b = train(
            &mut TableBandit::new(table).unwrap(),
            &config,
            &mut curve_eval,
        )
        .unwrap();
        assert_eq!(a.policy, b.policy);
        assert_eq!(a.curve, b.curve);
        assert!(!a.curve.points.is_empty());
    }

    #[test]
    fn update_budget_counts_minibatch_steps() {
        let config = AgentConfig::default();
        // 10 epochs × 16 minibatches per rollout.
        assert_eq!(config.environment_steps(), 32 * 1024);
        let mut env = TableBandit::new(vec![vec![1.0, 0.0]]).unwrap();
        let out = train(&mut env, &small_config(45), &mut no_eval).unwrap();
        assert_eq!(out.updates, 45);
        // 40 updates per 256-step rollout, so two rollouts.
        assert_eq!(out.environment_steps, 512);
    }

    #[test]
    fn discounted_returns_supported() {
        let mut env = TableBandit::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let config = AgentConfig {
            gamma: 0.5,
            ..small_config(50)
        };
        assert!(train(&mut env, &config, &mut no_eval).is_ok());
        let bad = AgentConfig {
            gamma: 1.0,
            ..config
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn curve_rejects_non_increasing_steps() {
        let mut curve = LearningCurve::default();
        curve
            .push(CurvePoint {
                step: 10,
                anr: 0.5,
                ci: 0.1,
            })
            .unwrap();
        assert!(curve
            .push(CurvePoint {
                step: 10,
                anr: 0.5,
                ci: 0.1
            })
            .is_err());
    }

    #[test]
    fn non_finite_loss_is_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let policy = PolicyNetwork::new(
            1,
            2,
            &[4],
            NormBounds {
                loads: vec![(0.0, 1.0)],
                delays: vec![],
            },
            String::new(),
            &mut rng,
        )
        .unwrap();
        let s = Sample {
            features: vec![0.5],
            mask: Arc::new(ActionMask::all(2)),
            action: 0,
            log_prob: -0.7,
            advantage: 1.0,
            ret: f64::NAN,
        };
        assert!(matches!(
            ppo_loss(&policy, &[s], &AgentConfig::default()),
            Err(Error::Numerical(_))
        ));
    }
}
