use std::cell::RefCell;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use aoi_core::config::SystemConfig;
use aoi_core::dqn::{load_checkpoint, save_checkpoint, train_dqn, DqnHyperparams, GreedyDqnPolicy};
use aoi_core::env::{simulate_policy, Action, Policy, SystemModel, SystemState};
use aoi_core::experiment::{run_sweep, solve_exact, write_sweep_csv, Agent, SweepOptions, SweepParam};
use aoi_core::export::{read_policy_csv, write_dqn_trace_csv, write_gain_trace_csv, write_policy_csv};
use aoi_core::mdp::{enumerate_states, Objective, PolicyTable, RviaOptions, StateIndexer, DEFAULT_STATE_LIMIT};
use aoi_core::tabular::{train_tabular, LearningSchedule};
use aoi_core::verify::{
    check_threshold_aoi, check_threshold_single_source, check_value_monotone_age, failures, write_violations_csv,
    Violation, VALUE_TOLERANCE,
};

mod manifest;

use manifest::Manifest;

#[derive(Parser)]
#[command(
    name = "aoi-rl",
    version,
    about = "Age-of-information scheduling for RF-powered sources"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the MDP exactly and write the optimal policy with its values.
    Solve(SolveArgs),
    /// Train a tabular or deep Q-learning agent.
    Train(TrainArgs),
    /// Check a policy table or checkpoint for the expected structure.
    Verify(VerifyArgs),
    /// Re-solve or re-train across battery capacities or packet sizes.
    Sweep(SweepArgs),
    /// Roll out a policy and report its average age.
    Simulate(SimulateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ObjectiveArg {
    Age,
    Throughput,
}

impl From<ObjectiveArg> for Objective {
    fn from(o: ObjectiveArg) -> Self {
        match o {
            ObjectiveArg::Age => Objective::Age,
            ObjectiveArg::Throughput => Objective::Throughput,
        }
    }
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum AgentArg {
    Exact,
    Tabular,
    Dqn,
}

impl From<AgentArg> for Agent {
    fn from(a: AgentArg) -> Self {
        match a {
            AgentArg::Exact => Agent::Exact,
            AgentArg::Tabular => Agent::Tabular,
            AgentArg::Dqn => Agent::Dqn,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum VaryArg {
    #[value(name = "battery_capacity")]
    BatteryCapacity,
    #[value(name = "packet_bits")]
    PacketBits,
}

impl From<VaryArg> for SweepParam {
    fn from(v: VaryArg) -> Self {
        match v {
            VaryArg::BatteryCapacity => SweepParam::BatteryCapacity,
            VaryArg::PacketBits => SweepParam::PacketBits,
        }
    }
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_enum, default_value = "age")]
    objective: ObjectiveArg,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// RVIA stopping tolerance, relative to the largest stage reward.
    #[arg(long, default_value_t = 1e-9)]
    tolerance: f64,
}

/// Learning hyperparameters. A JSON file (`--hyperparams`) is applied first,
/// then individual flags.
#[derive(Args, Clone)]
struct LearnArgs {
    /// Training slots.
    #[arg(long)]
    slots: Option<u64>,
    /// Initial exploration probability.
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    epsilon_min: Option<f64>,
    #[arg(long)]
    epsilon_decay: Option<f64>,
    #[arg(long)]
    epsilon_period: Option<u64>,
    /// DQN hyperparameters as JSON (keys of the checkpoint's `hyperparams`).
    #[arg(long)]
    hyperparams: Option<PathBuf>,
    /// Hidden layer widths, e.g. `64,64`.
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    replay_capacity: Option<usize>,
    /// Slots between target-network refreshes.
    #[arg(long)]
    target_period: Option<u64>,
    /// Tabular learning-rate scale α₀ in α(k) = α₀·τ/(τ+k).
    #[arg(long)]
    alpha0: Option<f64>,
    /// Tabular learning-rate half-life τ.
    #[arg(long)]
    alpha_tau: Option<f64>,
}

impl LearnArgs {
    fn dqn(&self, seed: u64) -> anyhow::Result<DqnHyperparams> {
        let mut h = match &self.hyperparams {
            Some(p) => {
                serde_json::from_str(&std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)
                    .with_context(|| format!("parsing {}", p.display()))?
            }
            None => DqnHyperparams::default(),
        };
        h.seed = seed;
        if let Some(v) = self.slots {
            h.total_slots = v;
        }
        if let Some(v) = self.epsilon {
            h.epsilon0 = v;
        }
        if let Some(v) = self.epsilon_min {
            h.epsilon_min = v;
        }
        if let Some(v) = self.epsilon_decay {
            h.epsilon_decay = v;
        }
        if let Some(v) = self.epsilon_period {
            h.epsilon_period = v;
        }
        if let Some(v) = &self.hidden {
            h.hidden = v.clone();
        }
        if let Some(v) = self.learning_rate {
            h.learning_rate = v;
        }
        if let Some(v) = self.batch_size {
            h.batch_size = v;
        }
        if let Some(v) = self.replay_capacity {
            h.replay_capacity = v;
        }
        if let Some(v) = self.target_period {
            h.target_period = v;
        }
        h.validate()?;
        Ok(h)
    }

    fn schedule(&self) -> anyhow::Result<LearningSchedule> {
        let mut s = LearningSchedule::default();
        if let Some(v) = self.epsilon {
            s.epsilon0 = v;
        }
        if let Some(v) = self.epsilon_min {
            s.epsilon_min = v;
        }
        if let Some(v) = self.epsilon_decay {
            s.epsilon_decay = v;
        }
        if let Some(v) = self.epsilon_period {
            s.epsilon_period = v;
        }
        if let Some(v) = self.alpha0 {
            s.alpha0 = v;
        }
        if let Some(v) = self.alpha_tau {
            s.alpha_tau = v;
        }
        s.validate()?;
        Ok(s)
    }

    fn tabular_slots(&self) -> u64 {
        self.slots.unwrap_or(1_000_000)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_enum)]
    agent: AgentArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Keep every n-th slot of the trace (the last slot is always kept).
    #[arg(long, default_value_t = 1)]
    trace_every: usize,
    #[command(flatten)]
    learn: LearnArgs,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    config: PathBuf,
    /// Policy table written by `solve` or `train --agent tabular`.
    #[arg(long, conflicts_with = "checkpoint", required_unless_present = "checkpoint")]
    policy: Option<PathBuf>,
    /// Network checkpoint written by `train --agent dqn`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Defaults to the objective matching the policy file's columns.
    #[arg(long, value_enum)]
    objective: Option<ObjectiveArg>,
    /// Report violations without failing; implied for checkpoints.
    #[arg(long)]
    advisory: bool,
    /// Violation report CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_enum)]
    vary: VaryArg,
    /// Battery capacities in mJ or packet sizes in Mbit.
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<f64>,
    #[arg(long, value_enum, default_value = "exact")]
    agent: AgentArg,
    #[arg(long, value_enum, default_value = "age")]
    objective: ObjectiveArg,
    /// Seeds for learning agents, e.g. `0,1,2`.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    seed: Vec<u64>,
    /// Simulation slots used to score trained networks.
    #[arg(long, default_value_t = 100_000)]
    eval_slots: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    learn: LearnArgs,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    /// Policy table to follow; without it or `--checkpoint` the exact age
    /// policy is solved first.
    #[arg(long, conflicts_with = "checkpoint")]
    policy: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Horizon in slots.
    #[arg(long, default_value_t = 100_000)]
    slots: u64,
    /// Probability of replacing the policy's action by a uniformly random
    /// feasible one.
    #[arg(long, default_value_t = 0.0)]
    epsilon: f64,
    /// Output directory for the per-slot trace; omitted traces are not kept.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::FAILURE;
    }
    let result = match cli.command {
        Command::Solve(a) => solve(a),
        Command::Train(a) => train(a),
        Command::Verify(a) => verify(a),
        Command::Sweep(a) => sweep(a),
        Command::Simulate(a) => simulate(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn configure_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("AOI_RL_THREADS") {
        let n: usize = v
            .parse()
            .with_context(|| format!("AOI_RL_THREADS={v:?} is not a thread count"))?;
        if n == 0 {
            bail!("AOI_RL_THREADS must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn load(path: &Path) -> anyhow::Result<(String, SystemModel)> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let config = SystemConfig::from_toml_str(&text).with_context(|| format!("loading {}", path.display()))?;
    Ok((text, SystemModel::new(config)?))
}

fn out_dir(path: &Path) -> anyhow::Result<&Path> {
    std::fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(path)
}

fn solve(a: SolveArgs) -> anyhow::Result<ExitCode> {
    let (text, model) = load(&a.config)?;
    let objective = Objective::from(a.objective);
    let options = RviaOptions {
        epsilon: a.tolerance,
        ..RviaOptions::default()
    };
    let exact = solve_exact(&model, objective, &options)?;
    let dir = out_dir(&a.out)?;
    let gain = exact.solution.values.gain;
    write_policy_csv(
        dir.join("policy.csv"),
        &exact.indexer,
        &exact.solution.policy,
        Some(&exact.solution.values.values),
    )?;
    Manifest::new("solve", &text, None)
        .field("objective", objective)
        .field("states", exact.indexer.num_states())
        .field("sweeps", exact.solution.sweeps)
        .field("gain", gain)
        .write(dir)?;
    println!("states {}", exact.indexer.num_states());
    println!("gain {gain}");
    Ok(ExitCode::SUCCESS)
}

fn train(a: TrainArgs) -> anyhow::Result<ExitCode> {
    let (text, model) = load(&a.config)?;
    let dir = out_dir(&a.out)?;
    let manifest = Manifest::new("train", &text, Some(a.seed));
    match a.agent {
        AgentArg::Tabular => {
            let schedule = a.learn.schedule()?;
            let slots = a.learn.tabular_slots();
            let run = train_tabular(&model, &schedule, slots, a.seed)?;
            write_gain_trace_csv(dir.join("trace.csv"), &run.gain_trace, a.trace_every)?;
            let values: Vec<f64> = (0..run.table.num_states()).map(|s| run.table.best(s).1).collect();
            write_policy_csv(dir.join("policy.csv"), &run.indexer, &run.policy, Some(&values))?;
            let last = run.gain_trace.last().copied().unwrap_or(0.0);
            manifest
                .field("agent", "tabular")
                .field("slots", slots)
                .field("final_gain_estimate", last)
                .write(dir)?;
            println!("final gain estimate {last}");
        }
        AgentArg::Dqn => {
            let hyper = a.learn.dqn(a.seed)?;
            let run = train_dqn(&model, &hyper)?;
            write_dqn_trace_csv(dir.join("trace.csv"), &run.trace, a.trace_every)?;
            save_checkpoint(dir.join("checkpoint.json"), &run.network, Some(&hyper))?;
            let last = run.trace.last().map_or(0.0, |p| p.gain_estimate);
            manifest
                .field("agent", "dqn")
                .field("hyperparams", &hyper)
                .field("reference_state", run.reference_state.to_string())
                .field("final_gain_estimate", last)
                .write(dir)?;
            println!("final gain estimate {last}");
        }
        AgentArg::Exact => bail!("use `solve` for the exact solver"),
    }
    Ok(ExitCode::SUCCESS)
}

fn policy_objective(path: &Path) -> anyhow::Result<Objective> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let header = text.lines().next().unwrap_or_default();
    Ok(if header.split(',').any(|c| c == "A_1") {
        Objective::Age
    } else {
        Objective::Throughput
    })
}

/// Greedy values `min_a Q(s, a)` of a network over an enumerated state space.
fn network_values(model: &SystemModel, indexer: &StateIndexer, policy: &GreedyDqnPolicy) -> anyhow::Result<Vec<f64>> {
    (0..indexer.num_states())
        .map(|s| {
            let st = indexer.decode(s);
            let q = policy.network.forward(&aoi_core::dqn::encode_state(model, &st))?;
            Ok(aoi_core::dqn::masked_min(&q, model.feasible_mask(&st)).1)
        })
        .collect()
}

fn verify(a: VerifyArgs) -> anyhow::Result<ExitCode> {
    let (_, model) = load(&a.config)?;
    let (objective, policy, values, indexer, advisory) = if let Some(path) = &a.policy {
        let objective = a.objective.map_or_else(|| policy_objective(path), |o| Ok(o.into()))?;
        let indexer = enumerate_states(&model, objective, DEFAULT_STATE_LIMIT)?;
        let (policy, values) =
            read_policy_csv(path, &indexer).with_context(|| format!("reading {}", path.display()))?;
        (objective, policy, values, indexer, a.advisory)
    } else {
        let path = a.checkpoint.as_ref().expect("clap requires a policy or checkpoint");
        let (network, _) = load_checkpoint(path).with_context(|| format!("reading {}", path.display()))?;
        if network.input_len() != 4 * model.num_sources() || network.output_len() != model.num_actions() {
            bail!(
                "checkpoint shape {:?} does not fit the configured sources",
                network.sizes()
            );
        }
        let objective = Objective::Age;
        let indexer = enumerate_states(&model, objective, DEFAULT_STATE_LIMIT)?;
        let greedy = GreedyDqnPolicy {
            model: &model,
            network: &network,
        };
        let values = network_values(&model, &indexer, &greedy)?;
        (objective, greedy.table(&indexer), Some(values), indexer, true)
    };

    let mut report: Vec<(&str, Vec<Violation>)> = Vec::new();
    if objective == Objective::Age {
        if let Some(v) = &values {
            report.push((
                "value monotone in each variable",
                check_value_monotone_age(&indexer, v, VALUE_TOLERANCE)?,
            ));
        }
        report.push(("threshold in age", check_threshold_aoi(&indexer, &policy)?));
    }
    if model.num_sources() == 1 {
        report.push((
            "threshold in battery and channels",
            check_threshold_single_source(&indexer, &policy, &model, objective)?,
        ));
    }

    let mut all = Vec::new();
    for (name, v) in report {
        println!("{name}: {} failures, {} warnings", failures(&v), v.len() - failures(&v));
        all.extend(v);
    }
    if let Some(out) = &a.out {
        write_violations_csv(out, &all)?;
    }
    let failed = failures(&all);
    if failed > 0 && !advisory {
        println!("FAILED: {failed} violations");
        Ok(ExitCode::from(2))
    } else {
        if failed > 0 {
            println!("advisory: {failed} violations on a learned policy");
        }
        Ok(ExitCode::SUCCESS)
    }
}

fn sweep(a: SweepArgs) -> anyhow::Result<ExitCode> {
    let (text, model) = load(&a.config)?;
    let agent = Agent::from(a.agent);
    let param = SweepParam::from(a.vary);
    let options = SweepOptions {
        objective: a.objective.into(),
        schedule: a.learn.schedule()?,
        tabular_slots: a.learn.tabular_slots(),
        dqn: a.learn.dqn(0)?,
        evaluation_slots: a.eval_slots,
        seeds: a.seed.clone(),
        ..SweepOptions::default()
    };
    let points = run_sweep(model.config(), param, &a.values, agent, &options)?;
    let dir = out_dir(&a.out)?;
    write_sweep_csv(dir.join("sweep.csv"), param, &points)?;
    let seeds = (a.agent != AgentArg::Exact).then_some(&a.seed);
    Manifest::new("sweep", &text, None)
        .field("parameter", param.name())
        .field("values", &a.values)
        .field("agent", agent)
        .field("objective", options.objective)
        .field("seeds", seeds)
        .write(dir)?;
    for p in &points {
        match p.seed {
            Some(s) => println!("{} {} seed {s}: {}", param.name(), p.value, p.gain),
            None => println!("{} {}: {}", param.name(), p.value, p.gain),
        }
    }
    Ok(ExitCode::SUCCESS)
}

/// Wraps a policy with uniform exploration over feasible actions.
struct Explore<'a> {
    model: &'a SystemModel,
    inner: &'a dyn Policy,
    epsilon: f64,
    rng: RefCell<ChaCha8Rng>,
}

impl Policy for Explore<'_> {
    fn act(&self, state: &SystemState) -> Action {
        let mut rng = self.rng.borrow_mut();
        if self.epsilon > 0.0 && rng.gen::<f64>() < self.epsilon {
            let mask = self.model.feasible_mask(state);
            Action::from_index(mask.nth(rng.gen_range(0..mask.count())).expect("harvest is feasible"))
        } else {
            self.inner.act(state)
        }
    }
}

fn simulate(a: SimulateArgs) -> anyhow::Result<ExitCode> {
    if !(0.0..=1.0).contains(&a.epsilon) {
        bail!("--epsilon must lie in [0, 1]");
    }
    let (text, model) = load(&a.config)?;
    let checkpoint;
    let table: Option<(StateIndexer, PolicyTable)> = match (&a.policy, &a.checkpoint) {
        (Some(path), _) => {
            let indexer = enumerate_states(&model, Objective::Age, DEFAULT_STATE_LIMIT)?;
            let (policy, _) = read_policy_csv(path, &indexer).with_context(|| format!("reading {}", path.display()))?;
            Some((indexer, policy))
        }
        (None, Some(_)) => None,
        (None, None) => {
            let exact = solve_exact(&model, Objective::Age, &RviaOptions::default())?;
            Some((exact.indexer, exact.solution.policy))
        }
    };
    let tabulated = table
        .as_ref()
        .map(|(ix, p)| move |s: &SystemState| p.action(ix.encode(s)));
    let greedy;
    let inner: &dyn Policy = match &tabulated {
        Some(f) => f,
        None => {
            let path = a.checkpoint.as_ref().expect("checked above");
            checkpoint = load_checkpoint(path)
                .with_context(|| format!("reading {}", path.display()))?
                .0;
            if checkpoint.input_len() != 4 * model.num_sources() || checkpoint.output_len() != model.num_actions() {
                bail!(
                    "checkpoint shape {:?} does not fit the configured sources",
                    checkpoint.sizes()
                );
            }
            greedy = GreedyDqnPolicy {
                model: &model,
                network: &checkpoint,
            };
            &greedy
        }
    };
    let policy = Explore {
        model: &model,
        inner,
        epsilon: a.epsilon,
        rng: RefCell::new(ChaCha8Rng::seed_from_u64(a.seed ^ 0x5151_5151)),
    };
    let report = simulate_policy(&model, &policy, a.slots, a.seed, a.out.is_some())?;
    if let Some(out) = &a.out {
        let dir = out_dir(out)?;
        let mut w = csv::Writer::from_path(dir.join("trace.csv"))?;
        w.write_record(["slot", "state", "action", "cost"])?;
        for t in report.trace.as_deref().unwrap_or_default() {
            w.write_record([
                t.slot.to_string(),
                t.state.to_string(),
                t.action.to_string(),
                t.cost.to_string(),
            ])?;
        }
        w.flush()?;
        Manifest::new("simulate", &text, Some(a.seed))
            .field("slots", a.slots)
            .field("epsilon", a.epsilon)
            .field("avg_weighted_aoi", report.avg_weighted_aoi)
            .field("avg_throughput_bits", report.avg_throughput_bits)
            .write(dir)?;
    }
    println!("average weighted age {}", report.avg_weighted_aoi);
    if let Some(t) = report.avg_throughput_bits {
        println!("average throughput {t} bits/slot");
    }
    Ok(ExitCode::SUCCESS)
}
