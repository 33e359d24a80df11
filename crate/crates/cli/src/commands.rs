use std::path::{Path, PathBuf};

use meshrl::config::ScenarioConfig;
use meshrl::loadgen::LoadPattern;
use meshrl::oracle::{
    evaluate as run_evaluation, train_on_simulator, EnvKind, EvalTarget, EvaluationReport,
    GreedyPolicy, OraclePolicy, Policy, Scoring,
};
use meshrl::persist::{self, PolicyFile, TraceMetadata};
use meshrl::simenv::SimSetup;
use meshrl::surrogate::{collect_traces, UniformSampler};
use meshrl::sysmodel::{nmae, split_records, SystemModel};
use meshrl::{Error, Result};
use rayon::prelude::*;

use crate::plots;
use crate::{
    CollectArgs, EnvArg, EvalCommon, EvaluateArgs, FitArgs, OracleArgs, PatternArg, ReportArgs,
    ScoringArg, TrainArgs,
};

pub fn collect(a: &CollectArgs) -> Result<()> {
    let config = ScenarioConfig::load(&a.config)?;
    let space = config.action_space()?;
    let surrogate = config.surrogate()?;
    let steps = a.steps.unwrap_or(config.model.trace_steps);
    let action_seed = a.seed.unwrap_or(config.seeds.collect);
    let noise_seed = a.seed.map_or(config.seeds.noise, |s| s.wrapping_add(1));
    let pattern = &config.patterns.training;
    let mut sampler = UniformSampler::new(&space, action_seed);
    let records = collect_traces(
        &surrogate,
        pattern,
        space.default_action(),
        &mut sampler,
        steps,
        noise_seed,
    )?;
    persist::write_traces(&a.out, &records)?;
    let meta = TraceMetadata {
        scenario: config.scenario,
        step_seconds: config.step_seconds,
        steps,
        records: records.len(),
        grid_fingerprint: space.fingerprint().to_string(),
        pattern: pattern.clone(),
        action_seed,
        noise_seed,
    };
    persist::write_json(&persist::metadata_path(&a.out), &meta)?;
    println!(
        "{} records from {steps} steps written to {}",
        records.len(),
        a.out.display()
    );
    Ok(())
}

pub fn fit_model(a: &FitArgs) -> Result<()> {
    let config = ScenarioConfig::load(&a.config)?;
    let records = persist::read_traces(&a.traces)?;
    let meta_path = persist::metadata_path(&a.traces);
    if meta_path.exists() {
        let meta: TraceMetadata = persist::read_json(&meta_path)?;
        let space = config.action_space()?;
        if meta.grid_fingerprint != space.fingerprint() {
            return Err(Error::Incompatible(format!(
                "traces were collected over grid {} but the config defines grid {}",
                meta.grid_fingerprint,
                space.fingerprint()
            )));
        }
    }
    let (services, scalable) = (
        config.topology.service_count(),
        config.topology.scalable_nodes().len(),
    );
    if let Some(bad) = records.iter().find(|r| {
        r.state.loads.len() != services
            || r.action.b.len() != services
            || r.action.c.len() != scalable
    }) {
        return Err(Error::Incompatible(format!(
            "trace record t={} does not match the scenario's feature arity",
            bad.t
        )));
    }
    let (train, held_out) = split_records(&records, config.model.held_out, config.seeds.split)?;
    let seed = a.seed.unwrap_or(config.seeds.fit);
    let start = std::time::Instant::now();
    let model = SystemModel::fit(&train, config.model.tree_count, seed)?;
    let elapsed = start.elapsed();
    let errors = nmae(&model, &held_out)?;
    println!(
        "fitted {} trees per target on {} records in {:.1} s; held-out records: {}",
        model.tree_count,
        train.len(),
        elapsed.as_secs_f64(),
        held_out.len()
    );
    for (name, e) in model.target_names.iter().zip(&errors) {
        println!("NMAE {name:<8} {e:.4}");
    }
    persist::save_model(&a.out, &model)
}

fn policy_path(dir: &Path, scenario: u8) -> PathBuf {
    dir.join(format!("policy-scenario{scenario}.json"))
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let configs = a
        .config
        .iter()
        .map(|p| ScenarioConfig::load(p))
        .collect::<Result<Vec<_>>>()?;
    let mut ids: Vec<u8> = configs.iter().map(|c| c.scenario.id()).collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::invalid(
            "train",
            "each scenario may be given only once",
        ));
    }
    let model = persist::load_model(&a.model)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.workers.max(1))
        .build()
        .map_err(|e| Error::invalid("workers", e.to_string()))?;
    let results: Vec<Result<(u8, f64)>> = pool.install(|| {
        configs
            .par_iter()
            .map(|config| train_one(config, &model, a))
            .collect()
    });
    for r in results {
        let (id, anr) = r?;
        println!("scenario {id}: final curve ANR {anr:.3}");
    }
    Ok(())
}

fn train_one(config: &ScenarioConfig, model: &SystemModel, a: &TrainArgs) -> Result<(u8, f64)> {
    let space = config.action_space()?;
    let setup = SimSetup {
        model,
        space: &space,
        spec: &config.reward,
        region_ratio: config.model.region_ratio,
    };
    let mut agent = config.agent.clone();
    if let Some(seed) = a.seed {
        agent.seed = seed;
    }
    if let Some(steps) = a.steps {
        agent.max_updates = steps;
    }
    let outcome = train_on_simulator(setup, &config.patterns.training, &agent, config.seeds.curve)?;
    let id = config.scenario.id();
    plots::write_curve(
        &a.out.join(format!("curve-scenario{id}.csv")),
        &outcome.curve,
    )?;
    persist::save_policy(
        &policy_path(&a.out, id),
        &PolicyFile {
            scenario: config.scenario,
            network: outcome.policy,
        },
    )?;
    log::info!(
        "scenario {id}: {} updates over {} environment steps",
        outcome.updates,
        outcome.environment_steps
    );
    Ok((id, outcome.curve.last().map_or(f64::NAN, |p| p.anr)))
}

struct EvalContext {
    config: ScenarioConfig,
    model: SystemModel,
}

impl EvalContext {
    fn load(common: &EvalCommon) -> Result<Self> {
        Ok(EvalContext {
            config: ScenarioConfig::load(&common.config)?,
            model: persist::load_model(&common.model)?,
        })
    }

    fn pattern(&self, p: PatternArg) -> (&LoadPattern, u64) {
        match p {
            PatternArg::Random => (
                &self.config.patterns.training,
                self.config.evaluation.random_steps,
            ),
            PatternArg::Sine => (
                &self.config.patterns.evaluation,
                self.config.evaluation.sine_steps,
            ),
        }
    }

    fn run(
        &self,
        policy: &mut dyn Policy,
        common: &EvalCommon,
        env: EnvArg,
        pattern: PatternArg,
        steps: Option<u64>,
    ) -> Result<EvaluationReport> {
        let space = self.config.action_space()?;
        let surrogate = self.config.surrogate()?;
        let setup = SimSetup {
            model: &self.model,
            space: &space,
            spec: &self.config.reward,
            region_ratio: self.config.model.region_ratio,
        };
        let target = EvalTarget {
            surrogate: Some(&surrogate),
            ..EvalTarget::simulator(setup)
        };
        let (load, default_steps) = self.pattern(pattern);
        let scoring = match common.scoring {
            ScoringArg::Truth => Scoring::GroundTruth,
            ScoringArg::Model => Scoring::Model,
        };
        let env_kind = match env {
            EnvArg::Sim => EnvKind::Simulator,
            EnvArg::Target => EnvKind::Target,
        };
        let seed = common.seed.unwrap_or(self.config.seeds.evaluate);
        let report = run_evaluation(
            policy,
            target,
            env_kind,
            scoring,
            load,
            steps.unwrap_or(default_steps),
            seed,
        )?;
        let stem = format!(
            "{}-{}-{}",
            report.policy,
            env_name(env),
            pattern_name(pattern)
        );
        persist::write_report(&common.out.join(format!("report-{stem}.jsonl")), &report)?;
        plots::write_plot(
            &common.out.join(format!("plot-{stem}.csv")),
            &report,
            &self.config.reward.delay_bounds,
        )?;
        Ok(report)
    }
}

fn env_name(e: EnvArg) -> &'static str {
    match e {
        EnvArg::Sim => "sim",
        EnvArg::Target => "target",
    }
}

fn pattern_name(p: PatternArg) -> &'static str {
    match p {
        PatternArg::Random => "random",
        PatternArg::Sine => "sine",
    }
}

fn load_policy_for(path: &Path, config: &ScenarioConfig) -> Result<PolicyFile> {
    let policy = persist::load_policy(path)?;
    if policy.scenario != config.scenario {
        return Err(Error::Incompatible(format!(
            "policy was trained for {}, config describes {}",
            policy.scenario, config.scenario
        )));
    }
    Ok(policy)
}

fn print_row(env: EnvArg, pattern: PatternArg, r: &EvaluationReport) {
    println!(
        "{:<10} {:<8} {:>6} {:>7.3} ± {:.3}",
        env_name(env),
        pattern_name(pattern),
        r.steps.len(),
        r.anr,
        r.ci
    );
}

pub fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let ctx = EvalContext::load(&a.common)?;
    let policy = load_policy_for(&a.policy, &ctx.config)?;
    let report = ctx.run(
        &mut GreedyPolicy {
            network: &policy.network,
        },
        &a.common,
        a.env,
        a.pattern,
        a.steps,
    )?;
    print_row(a.env, a.pattern, &report);
    Ok(())
}

pub fn oracle(a: &OracleArgs) -> Result<()> {
    let ctx = EvalContext::load(&a.common)?;
    let report = ctx.run(&mut OraclePolicy, &a.common, a.env, a.pattern, a.steps)?;
    print_row(a.env, a.pattern, &report);
    Ok(())
}

pub fn report(a: &ReportArgs) -> Result<()> {
    let ctx = EvalContext::load(&a.common)?;
    let policy = load_policy_for(&a.policy, &ctx.config)?;
    let cells = [
        (EnvArg::Sim, PatternArg::Random),
        (EnvArg::Sim, PatternArg::Sine),
        (EnvArg::Target, PatternArg::Random),
        (EnvArg::Target, PatternArg::Sine),
    ];
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.workers.max(1))
        .build()
        .map_err(|e| Error::invalid("workers", e.to_string()))?;
    let reports: Vec<Result<EvaluationReport>> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(env, pattern)| {
                ctx.run(
                    &mut GreedyPolicy {
                        network: &policy.network,
                    },
                    &a.common,
                    env,
                    pattern,
                    None,
                )
            })
            .collect()
    });
    let reports = reports.into_iter().collect::<Result<Vec<_>>>()?;
    println!("{}", ctx.config.scenario);
    println!("{:<10} {:<8} {:>6} {:>7}", "env", "pattern", "steps", "ANR");
    let mut rows = Vec::new();
    for (&(env, pattern), r) in cells.iter().zip(&reports) {
        print_row(env, pattern, r);
        rows.push(plots::SummaryRow {
            environment: env_name(env),
            pattern: pattern_name(pattern),
            steps: r.steps.len(),
            anr: r.anr,
            ci: r.ci,
        });
    }
    plots::write_summary(&a.common.out.join("summary.csv"), &rows)
}
