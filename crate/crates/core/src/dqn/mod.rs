//! Deep Q-learning with experience replay for the average-age objective.

mod network;
mod replay;

pub use network::{Dense, QNetwork, Sample};
pub use replay::{Experience, ReplayMemory};

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Action, ActionMask, Policy, SystemModel, SystemState};
use crate::error::{Error, Result};
use crate::mdp::{PolicyTable, StateIndexer};
use crate::tabular::reference_state;

/// Q-values beyond this magnitude abort training.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

/// Per-source `(b / b_max, (A-1)/(A_max-1), (g-1)/(G-1), (h-1)/(H-1))`, with
/// 0 for variables that take a single value.
pub fn encode_state(model: &SystemModel, state: &SystemState) -> Vec<f64> {
    let ratio = |v: u32, top: u32| if top == 0 { 0.0 } else { v as f64 / top as f64 };
    let mut out = Vec::with_capacity(4 * state.per_source.len());
    for (i, s) in state.per_source.iter().enumerate() {
        out.push(ratio(s.battery, model.battery_quanta(i)));
        out.push(ratio(s.aoi - 1, model.aoi_cap(i) - 1));
        out.push(ratio(s.g_level - 1, model.levels_downlink(i) - 1));
        out.push(ratio(s.h_level - 1, model.levels_uplink(i) - 1));
    }
    out
}

/// Lowest-index feasible action with the smallest value, and that value.
pub fn masked_min(values: &[f64], mask: ActionMask) -> (usize, f64) {
    let mut best = (usize::MAX, f64::INFINITY);
    for a in mask.iter() {
        if values[a] < best.1 {
            best = (a, values[a]);
        }
    }
    best
}

/// Relative Bellman target `c + min Q_prev(s', ·) - min Q_prev(s̄, ·)`, both
/// minimizations over feasible actions.
pub fn target_value(
    previous: &QNetwork,
    experience: &Experience,
    reference: &[f64],
    reference_mask: ActionMask,
) -> Result<f64> {
    let next = masked_min(&previous.forward(&experience.next_state)?, experience.next_mask).1;
    let bar = masked_min(&previous.forward(reference)?, reference_mask).1;
    Ok(experience.cost + next - bar)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DqnHyperparams {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    /// Slots between refreshes of the target weights; 1 uses the previous
    /// step's weights.
    pub target_period: u64,
    pub epsilon0: f64,
    pub epsilon_min: f64,
    pub epsilon_decay: f64,
    pub epsilon_period: u64,
    pub total_slots: u64,
    pub seed: u64,
}

impl Default for DqnHyperparams {
    fn default() -> Self {
        DqnHyperparams {
            hidden: vec![64, 64],
            learning_rate: 1e-3,
            batch_size: 32,
            replay_capacity: 100_000,
            target_period: 1,
            epsilon0: 0.3,
            epsilon_min: 0.01,
            epsilon_decay: 0.9,
            epsilon_period: 10_000,
            total_slots: 1_000_000,
            seed: 0,
        }
    }
}

impl DqnHyperparams {
    pub fn validate(&self) -> Result<()> {
        let ok = !self.hidden.is_empty()
            && !self.hidden.contains(&0)
            && self.learning_rate > 0.0
            && self.batch_size > 0
            && self.replay_capacity > 0
            && self.target_period >= 1
            && self.epsilon0 > 0.0
            && self.epsilon0 <= 1.0
            && (0.0..=self.epsilon0).contains(&self.epsilon_min)
            && self.epsilon_decay > 0.0
            && self.epsilon_decay <= 1.0
            && self.epsilon_period > 0
            && self.total_slots > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("bad DQN hyperparameters {self:?}")))
        }
    }

    pub fn epsilon(&self, k: u64) -> f64 {
        let steps = (k / self.epsilon_period).min(i32::MAX as u64) as i32;
        (self.epsilon0 * self.epsilon_decay.powi(steps)).max(self.epsilon_min)
    }

    pub fn layer_sizes(&self, model: &SystemModel) -> Vec<usize> {
        std::iter::once(4 * model.num_sources())
            .chain(self.hidden.iter().copied())
            .chain(std::iter::once(model.num_actions()))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DqnTracePoint {
    pub slot: u64,
    /// `min_a Q(s̄, a)` after the slot's update.
    pub gain_estimate: f64,
    pub epsilon: f64,
    /// Batch loss `½ mean (t - Q)²`; absent until the memory holds a batch.
    pub loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct DqnRun {
    pub network: QNetwork,
    pub trace: Vec<DqnTracePoint>,
    pub reference_state: SystemState,
}

fn check_finite(value: f64, what: &str, slot: u64) -> Result<()> {
    if value.is_finite() && value.abs() <= DIVERGENCE_LIMIT {
        Ok(())
    } else {
        Err(Error::Divergence(format!("{what} reached {value} at slot {slot}")))
    }
}

/// Trains a Q-network along one simulated trajectory: ε-greedy action over
/// the feasible set, environment step, store the experience, then one
/// gradient step on a uniformly sampled batch with targets from the snapshot
/// weights.
pub fn train_dqn(model: &SystemModel, hyper: &DqnHyperparams) -> Result<DqnRun> {
    hyper.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut network = QNetwork::glorot(&hyper.layer_sizes(model), &mut rng)?;
    let mut snapshot = network.clone();
    let mut memory = ReplayMemory::new(hyper.replay_capacity);
    let reference = reference_state(model);
    let reference_x = encode_state(model, &reference);
    let reference_mask = model.feasible_mask(&reference);

    let mut state = model.initial_state(&model.sample_levels(&mut rng));
    let mut trace = Vec::with_capacity(hyper.total_slots as usize);
    let mut targets = vec![0.0; hyper.batch_size];
    for k in 0..hyper.total_slots {
        let epsilon = hyper.epsilon(k);
        let x = encode_state(model, &state);
        let mask = model.feasible_mask(&state);
        let action = if rng.gen::<f64>() < epsilon {
            mask.nth(rng.gen_range(0..mask.count())).expect("harvest is feasible")
        } else {
            masked_min(&network.forward(&x)?, mask).0
        };
        let cost = model.stage_cost(&state);
        let next = model.step(&state, Action::from_index(action), &model.sample_levels(&mut rng))?;
        memory.push(Experience {
            state: x,
            action,
            cost,
            next_state: encode_state(model, &next),
            next_mask: model.feasible_mask(&next),
        });
        state = next;

        let mut loss = None;
        if memory.len() >= hyper.batch_size {
            let picks = memory.sample_indices(hyper.batch_size, &mut rng);
            let bar = masked_min(&snapshot.forward(&reference_x)?, reference_mask).1;
            for (t, &i) in targets.iter_mut().zip(&picks) {
                let e = memory.get(i);
                *t = e.cost + masked_min(&snapshot.forward(&e.next_state)?, e.next_mask).1 - bar;
                check_finite(*t, "target", k)?;
            }
            let batch: Vec<Sample> = picks
                .iter()
                .zip(&targets)
                .map(|(&i, &target)| Sample {
                    input: &memory.get(i).state,
                    output: memory.get(i).action,
                    target,
                })
                .collect();
            loss = Some(network.gradient_step(&batch, hyper.learning_rate)?);
        }
        if (k + 1) % hyper.target_period == 0 {
            snapshot.copy_from(&network);
        }
        let gain_estimate = masked_min(&network.forward(&reference_x)?, reference_mask).1;
        check_finite(gain_estimate, "Q(s̄)", k)?;
        trace.push(DqnTracePoint {
            slot: k,
            gain_estimate,
            epsilon,
            loss,
        });
    }
    Ok(DqnRun {
        network,
        trace,
        reference_state: reference,
    })
}

/// Acts greedily with respect to a trained network over feasible actions.
pub struct GreedyDqnPolicy<'a> {
    pub model: &'a SystemModel,
    pub network: &'a QNetwork,
}

impl Policy for GreedyDqnPolicy<'_> {
    fn act(&self, state: &SystemState) -> Action {
        let q = self
            .network
            .forward(&encode_state(self.model, state))
            .expect("network input matches the model");
        Action::from_index(masked_min(&q, self.model.feasible_mask(state)).0)
    }
}

impl GreedyDqnPolicy<'_> {
    /// Tabulates the policy over an enumerated state space.
    pub fn table(&self, indexer: &StateIndexer) -> PolicyTable {
        PolicyTable {
            actions: (0..indexer.num_states())
                .map(|s| self.act(&indexer.decode(s)))
                .collect(),
        }
    }
}

const CHECKPOINT_FORMAT: &str = "aoi-rl-qnetwork";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    layers: Vec<Dense>,
    hyperparams: Option<DqnHyperparams>,
}

pub fn save_checkpoint(path: impl AsRef<Path>, network: &QNetwork, hyper: Option<&DqnHyperparams>) -> Result<()> {
    let ck = Checkpoint {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        layers: network.layers().to_vec(),
        hyperparams: hyper.cloned(),
    };
    std::fs::write(path, serde_json::to_string(&ck)?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(QNetwork, Option<DqnHyperparams>)> {
    let ck: Checkpoint = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
        return Err(Error::Parse(format!(
            "unsupported checkpoint {} v{} (expected {CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION})",
            ck.format, ck.version
        )));
    }
    Ok((QNetwork::from_layers(ck.layers)?, ck.hyperparams))
}
