//! Parameter sweeps over battery capacity and packet size.

use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::config::SystemConfig;
use crate::dqn::{train_dqn, DqnHyperparams, GreedyDqnPolicy};
use crate::env::{simulate_policy, SystemModel};
use crate::error::{Error, Result};
use crate::mdp::{
    build_kernel, enumerate_states, evaluate_policy, solve_rvia, Objective, RviaOptions, RviaSolution, StateIndexer,
    TransitionKernel, DEFAULT_STATE_LIMIT,
};
use crate::tabular::{train_tabular, LearningSchedule};

/// Everything an exact solve produces.
#[derive(Debug, Clone)]
pub struct ExactSolution {
    pub indexer: StateIndexer,
    pub kernel: TransitionKernel,
    pub solution: RviaSolution,
}

pub fn solve_exact(model: &SystemModel, objective: Objective, options: &RviaOptions) -> Result<ExactSolution> {
    let indexer = enumerate_states(model, objective, DEFAULT_STATE_LIMIT)?;
    let kernel = build_kernel(model, &indexer, objective)?;
    let solution = solve_rvia(&kernel, options)?;
    Ok(ExactSolution {
        indexer,
        kernel,
        solution,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    /// Battery capacity of every source, in mJ, at a fixed energy quantum:
    /// the number of quanta scales with the capacity.
    BatteryCapacity,
    /// Update packet size, in Mbit.
    PacketBits,
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "battery_capacity" => Ok(SweepParam::BatteryCapacity),
            "packet_bits" => Ok(SweepParam::PacketBits),
            other => Err(Error::Parse(format!(
                "unknown sweep parameter {other:?} (battery_capacity or packet_bits)"
            ))),
        }
    }
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::BatteryCapacity => "battery_capacity_mj",
            SweepParam::PacketBits => "packet_mbits",
        }
    }

    /// Config with the parameter set to `value` (mJ or Mbit).
    pub fn apply(self, config: &SystemConfig, value: f64) -> Result<SystemConfig> {
        if !(value > 0.0 && value.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "sweep values must be positive, got {value}"
            )));
        }
        let c = match self {
            SweepParam::BatteryCapacity => {
                let mut c = config.clone();
                for s in &mut c.sources {
                    let quanta = (s.battery_quanta as f64 * value * 1e-3 / s.battery_capacity_j).round();
                    s.battery_quanta = (quanta as u32).max(1);
                }
                c.with_battery_capacity(value * 1e-3)
            }
            SweepParam::PacketBits => config.clone().with_packet_bits(value * 1e6),
        };
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Agent {
    Exact,
    Tabular,
    Dqn,
}

impl FromStr for Agent {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Agent::Exact),
            "tabular" => Ok(Agent::Tabular),
            "dqn" => Ok(Agent::Dqn),
            other => Err(Error::Parse(format!("unknown agent {other:?} (exact, tabular or dqn)"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepOptions {
    pub objective: Objective,
    pub rvia: RviaOptions,
    pub schedule: LearningSchedule,
    pub tabular_slots: u64,
    /// `seed` is overridden per run.
    pub dqn: DqnHyperparams,
    /// Horizon of the simulation that scores a trained network.
    pub evaluation_slots: u64,
    /// Learning agents run once per seed; the exact solver ignores seeds.
    pub seeds: Vec<u64>,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            objective: Objective::Age,
            rvia: RviaOptions::default(),
            schedule: LearningSchedule::default(),
            tabular_slots: 1_000_000,
            dqn: DqnHyperparams::default(),
            evaluation_slots: 100_000,
            seeds: vec![0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepPoint {
    pub value: f64,
    pub seed: Option<u64>,
    pub gain: f64,
}

/// Long-run average reached by `agent` on `config`.
///
/// Exact solves report the optimal gain; tabular runs report the exact
/// average of their greedy policy; networks are scored by simulating their
/// greedy policy, since their state spaces need not be enumerable.
pub fn agent_gain(config: &SystemConfig, agent: Agent, seed: u64, options: &SweepOptions) -> Result<f64> {
    let model = SystemModel::new(config.clone())?;
    match agent {
        Agent::Exact => Ok(solve_exact(&model, options.objective, &options.rvia)?
            .solution
            .values
            .gain),
        Agent::Tabular | Agent::Dqn if options.objective != Objective::Age => {
            Err(Error::Scope("learning agents minimize age only".into()))
        }
        Agent::Tabular => {
            let run = train_tabular(&model, &options.schedule, options.tabular_slots, seed)?;
            let kernel = build_kernel(&model, &run.indexer, Objective::Age)?;
            evaluate_policy(&kernel, &run.policy)
        }
        Agent::Dqn => {
            let hyper = DqnHyperparams {
                seed,
                ..options.dqn.clone()
            };
            let run = train_dqn(&model, &hyper)?;
            let policy = GreedyDqnPolicy {
                model: &model,
                network: &run.network,
            };
            let report = simulate_policy(&model, &policy, options.evaluation_slots, seed ^ 0x9e37_79b9, false)?;
            Ok(report.avg_weighted_aoi)
        }
    }
}

/// Runs every `(value, seed)` combination in parallel; results are ordered by
/// value, then seed.
pub fn run_sweep(
    config: &SystemConfig,
    param: SweepParam,
    values: &[f64],
    agent: Agent,
    options: &SweepOptions,
) -> Result<Vec<SweepPoint>> {
    if values.is_empty() {
        return Err(Error::InvalidConfig("empty sweep".into()));
    }
    let seeds: Vec<Option<u64>> = match agent {
        Agent::Exact => vec![None],
        _ => options.seeds.iter().copied().map(Some).collect(),
    };
    let jobs: Vec<(f64, Option<u64>)> = values
        .iter()
        .flat_map(|&v| seeds.iter().map(move |&s| (v, s)))
        .collect();
    jobs.par_iter()
        .map(|&(value, seed)| {
            let c = param.apply(config, value)?;
            let gain = agent_gain(&c, agent, seed.unwrap_or(0), options)?;
            log::info!("{} = {value}, seed {seed:?}: gain {gain}", param.name());
            Ok(SweepPoint { value, seed, gain })
        })
        .collect()
}

pub fn write_sweep_csv(path: impl AsRef<Path>, param: SweepParam, points: &[SweepPoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["parameter", "value", "seed", "gain"])?;
    for p in points {
        w.write_record([
            param.name().to_string(),
            p.value.to_string(),
            p.seed.map_or(String::new(), |s| s.to_string()),
            p.gain.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::presets;

    #[test]
    fn parses_names() {
        assert_eq!("packet_bits".parse::<SweepParam>().unwrap(), SweepParam::PacketBits);
        assert_eq!("dqn".parse::<Agent>().unwrap(), Agent::Dqn);
        assert!("voltage".parse::<SweepParam>().is_err());
    }

    #[test]
    fn single_value_sweep_matches_direct_solve() {
        let c = presets::single_source_learning();
        let opts = SweepOptions::default();
        let pts = run_sweep(&c, SweepParam::PacketBits, &[12.0], Agent::Exact, &opts).unwrap();
        let direct = solve_exact(&SystemModel::new(c).unwrap(), Objective::Age, &opts.rvia).unwrap();
        assert_eq!(pts.len(), 1);
        assert_eq!(pts[0].gain, direct.solution.values.gain);
    }

    #[test]
    fn capacity_sweep_keeps_the_quantum() {
        let c = presets::single_source_learning();
        let q = c.sources[0].battery_capacity_j / c.sources[0].battery_quanta as f64;
        for (mj, quanta) in [(0.1, 1), (0.3, 3), (0.6, 6), (1.0, 10)] {
            let s = &SweepParam::BatteryCapacity.apply(&c, mj).unwrap().sources[0];
            assert_eq!(s.battery_quanta, quanta);
            assert!((s.battery_capacity_j / s.battery_quanta as f64 - q).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_non_positive_values() {
        let c = presets::single_source_learning();
        assert!(SweepParam::BatteryCapacity.apply(&c, 0.0).is_err());
        assert!(SweepParam::PacketBits.apply(&c, -1.0).is_err());
    }
}
