//! Relative Q-learning for the average-age MDP on an enumerated state space.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Action, ActionMask, SourceState, SystemModel, SystemState};
use crate::error::{Error, Result};
use crate::mdp::{enumerate_states, Objective, PolicyTable, StateIndexer, DEFAULT_STATE_LIMIT};

/// Q-values with per-state feasibility masks and visit counts.
#[derive(Debug, Clone)]
pub struct QTable {
    num_actions: usize,
    q: Vec<f64>,
    masks: Vec<ActionMask>,
    visits: Vec<u64>,
    reference_state: usize,
}

impl QTable {
    /// Zero-initialized table; `masks[s]` lists the feasible actions of `s`.
    pub fn new(num_actions: usize, masks: Vec<ActionMask>, reference_state: usize) -> Result<Self> {
        if reference_state >= masks.len() {
            return Err(Error::InvalidConfig("reference state out of range".into()));
        }
        if masks
            .iter()
            .any(|m| m.count() == 0 || m.iter().any(|a| a >= num_actions))
        {
            return Err(Error::InvalidConfig(
                "every state needs a non-empty feasible set".into(),
            ));
        }
        let len = masks.len() * num_actions;
        Ok(QTable {
            num_actions,
            q: vec![0.0; len],
            masks,
            visits: vec![0; len],
            reference_state,
        })
    }

    /// Table over every state of `indexer`, with masks from the model and
    /// [`reference_state`] as `s̄`.
    pub fn for_model(model: &SystemModel, indexer: &StateIndexer) -> Self {
        let masks = (0..indexer.num_states())
            .map(|s| model.feasible_mask(&indexer.decode(s)))
            .collect();
        QTable::new(model.num_actions(), masks, indexer.encode(&reference_state(model)))
            .expect("harvesting is always feasible")
    }

    pub fn num_states(&self) -> usize {
        self.masks.len()
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn reference_state(&self) -> usize {
        self.reference_state
    }

    pub fn mask(&self, s: usize) -> ActionMask {
        self.masks[s]
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.q[s * self.num_actions + a]
    }

    pub fn set(&mut self, s: usize, a: usize, value: f64) {
        self.q[s * self.num_actions + a] = value;
    }

    pub fn visits(&self, s: usize, a: usize) -> u64 {
        self.visits[s * self.num_actions + a]
    }

    pub fn total_visits(&self) -> u64 {
        self.visits.iter().sum()
    }

    /// Lowest-index feasible action with the smallest Q-value, and that value.
    pub fn best(&self, s: usize) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        for a in self.masks[s].iter() {
            let v = self.get(s, a);
            if v < best.1 {
                best = (a, v);
            }
        }
        best
    }

    /// `min_a Q(s̄, a)`, the running estimate of the optimal average cost.
    pub fn gain_estimate(&self) -> f64 {
        self.best(self.reference_state).1
    }

    pub fn greedy_policy(&self) -> PolicyTable {
        PolicyTable {
            actions: (0..self.num_states())
                .map(|s| Action::from_index(self.best(s).0))
                .collect(),
        }
    }
}

/// Slots of the uniformly random rollout that picks the reference state.
const REFERENCE_ROLLOUT_SLOTS: u64 = 10_000;

/// The state visited most often by a uniformly random feasible policy over a
/// fixed-seed rollout (ties go to the smallest state). Depends only on the
/// model, so every training seed shares the same `s̄`.
///
/// Fixed choices such as "empty batteries, unit ages" can be unreachable: with
/// two or more sources all ages are never 1 at once.
pub fn reference_state(model: &SystemModel) -> SystemState {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut state = model.initial_state(&model.sample_levels(&mut rng));
    let mut counts: BTreeMap<Vec<(u32, u32, u32, u32)>, u64> = BTreeMap::new();
    for _ in 0..REFERENCE_ROLLOUT_SLOTS {
        let key = state
            .per_source
            .iter()
            .map(|s| (s.battery, s.aoi, s.g_level, s.h_level))
            .collect();
        *counts.entry(key).or_default() += 1;
        let mask = model.feasible_mask(&state);
        let action = Action::from_index(mask.nth(rng.gen_range(0..mask.count())).expect("harvest is feasible"));
        state = model
            .step(&state, action, &model.sample_levels(&mut rng))
            .expect("feasible action");
    }
    let (key, _) = counts
        .into_iter()
        .fold(None, |best: Option<(Vec<_>, u64)>, (k, c)| match best {
            Some((_, bc)) if bc >= c => best,
            _ => Some((k, c)),
        })
        .expect("rollout is non-empty");
    SystemState {
        per_source: key
            .into_iter()
            .map(|(battery, aoi, g_level, h_level)| SourceState {
                battery,
                aoi,
                g_level,
                h_level,
            })
            .collect(),
    }
}

/// One relative Q-learning step:
/// `Q(s,a) += α (c + min Q(s',·) - min Q(s̄,·) - Q(s,a))`, minimizing over
/// feasible actions only. Returns the new `Q(s,a)`.
pub fn q_update(table: &mut QTable, s: usize, a: usize, cost: f64, s_next: usize, alpha: f64) -> f64 {
    debug_assert!(table.masks[s].contains(a), "update of an infeasible action");
    let target = cost + table.best(s_next).1 - table.gain_estimate();
    let i = s * table.num_actions + a;
    table.q[i] += alpha * (target - table.q[i]);
    table.visits[i] += 1;
    table.q[i]
}

/// Uniform over feasible actions with probability `epsilon`, greedy otherwise.
pub fn epsilon_greedy<R: Rng + ?Sized>(table: &QTable, s: usize, epsilon: f64, rng: &mut R) -> Action {
    let mask = table.mask(s);
    if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
        Action::from_index(mask.nth(rng.gen_range(0..mask.count())).expect("non-empty mask"))
    } else {
        Action::from_index(table.best(s).0)
    }
}

/// Step size `α(k) = a₀ τ / (τ + k)` and exploration
/// `ε(k) = max(ε_min, ε₀ · decay^⌊k / period⌋)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearningSchedule {
    pub alpha0: f64,
    pub alpha_tau: f64,
    pub epsilon0: f64,
    pub epsilon_min: f64,
    pub epsilon_decay: f64,
    pub epsilon_period: u64,
}

impl Default for LearningSchedule {
    fn default() -> Self {
        LearningSchedule {
            alpha0: 0.5,
            alpha_tau: 1e4,
            epsilon0: 0.3,
            epsilon_min: 0.01,
            epsilon_decay: 0.9,
            epsilon_period: 10_000,
        }
    }
}

impl LearningSchedule {
    pub fn validate(&self) -> Result<()> {
        let ok = self.alpha0 > 0.0
            && self.alpha_tau > 0.0
            && self.epsilon0 > 0.0
            && self.epsilon0 <= 1.0
            && (0.0..=self.epsilon0).contains(&self.epsilon_min)
            && self.epsilon_decay > 0.0
            && self.epsilon_decay <= 1.0
            && self.epsilon_period > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("bad learning schedule {self:?}")))
        }
    }

    pub fn learning_rate(&self, k: u64) -> f64 {
        self.alpha0 * self.alpha_tau / (self.alpha_tau + k as f64)
    }

    pub fn epsilon(&self, k: u64) -> f64 {
        let steps = (k / self.epsilon_period).min(i32::MAX as u64) as i32;
        (self.epsilon0 * self.epsilon_decay.powi(steps)).max(self.epsilon_min)
    }
}

#[derive(Debug, Clone)]
pub struct TabularRun {
    pub indexer: StateIndexer,
    pub table: QTable,
    /// `min_a Q(s̄, a)` after every slot.
    pub gain_trace: Vec<f64>,
    pub policy: PolicyTable,
}

/// Learns along one simulated trajectory of `total_slots` slots starting
/// from full batteries and unit ages.
pub fn train_tabular(
    model: &SystemModel,
    schedule: &LearningSchedule,
    total_slots: u64,
    seed: u64,
) -> Result<TabularRun> {
    schedule.validate()?;
    let indexer = enumerate_states(model, Objective::Age, DEFAULT_STATE_LIMIT)?;
    let mut table = QTable::for_model(model, &indexer);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = model.initial_state(&model.sample_levels(&mut rng));
    let mut s = indexer.encode(&state);
    let mut gain_trace = Vec::with_capacity(total_slots as usize);
    for k in 0..total_slots {
        let action = epsilon_greedy(&table, s, schedule.epsilon(k), &mut rng);
        let cost = model.stage_cost(&state);
        let next = model.step(&state, action, &model.sample_levels(&mut rng))?;
        let s_next = indexer.encode(&next);
        q_update(&mut table, s, action.index(), cost, s_next, schedule.learning_rate(k));
        gain_trace.push(table.gain_estimate());
        state = next;
        s = s_next;
    }
    let policy = table.greedy_policy();
    Ok(TabularRun {
        indexer,
        table,
        gain_trace,
        policy,
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::config::presets;

    fn two_action_table(n: usize) -> QTable {
        let mut both = ActionMask::harvest_only();
        both.insert(1);
        QTable::new(2, vec![both; n], 0).unwrap()
    }

    #[test]
    fn zero_step_size_changes_nothing() {
        let mut t = two_action_table(3);
        t.set(1, 1, 4.0);
        t.set(2, 0, 7.0);
        assert_eq!(q_update(&mut t, 1, 1, 9.0, 2, 0.0), 4.0);
        assert_eq!(t.visits(1, 1), 1);
    }

    #[test]
    fn worked_update() {
        let mut t = two_action_table(3);
        t.set(2, 0, 1.0);
        t.set(2, 1, 3.0);
        t.set(0, 0, 1.0);
        t.set(0, 1, 2.0);
        // 0 + 0.5 (2 + 1 - 1 - 0) = 1.
        assert_eq!(q_update(&mut t, 1, 0, 2.0, 2, 0.5), 1.0);
    }

    #[test]
    fn fixed_point_is_stationary() {
        let mut t = QTable::new(1, vec![ActionMask::harvest_only()], 0).unwrap();
        t.set(0, 0, 2.5);
        assert_eq!(q_update(&mut t, 0, 0, 2.5, 0, 0.7), 2.5);
    }

    fn depleted_state_model() -> (SystemModel, StateIndexer, QTable, usize) {
        let m = SystemModel::new(presets::two_source_policy_map()).unwrap();
        let mut c = m.config().clone();
        for s in &mut c.sources {
            s.aoi_cap = 2;
            s.link.levels_downlink = 2;
            s.link.levels_uplink = 2;
        }
        let m = SystemModel::new(c).unwrap();
        let ix = enumerate_states(&m, Objective::Age, DEFAULT_STATE_LIMIT).unwrap();
        let t = QTable::for_model(&m, &ix);
        let s = ix.encode(&SystemState {
            per_source: vec![
                SourceState {
                    battery: 0,
                    aoi: 2,
                    g_level: 1,
                    h_level: 2,
                },
                SourceState {
                    battery: 5,
                    aoi: 2,
                    g_level: 1,
                    h_level: 2,
                },
            ],
        });
        (m, ix, t, s)
    }

    #[test]
    fn full_exploration_is_uniform_over_feasible_actions() {
        let (_, _, t, s) = depleted_state_model();
        assert_eq!(t.mask(s).count(), 2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut counts = [0u32; 3];
        let draws = 1_000_000;
        for _ in 0..draws {
            counts[epsilon_greedy(&t, s, 1.0, &mut rng).index()] += 1;
        }
        assert_eq!(counts[1], 0, "depleted source never transmits");
        for a in [0, 2] {
            assert!((counts[a] as f64 / draws as f64 - 0.5).abs() < 0.01);
        }
    }

    #[test]
    fn no_exploration_is_greedy() {
        let mut t = two_action_table(1);
        t.set(0, 0, 2.0);
        t.set(0, 1, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!((0..100).all(|_| epsilon_greedy(&t, 0, 0.0, &mut rng) == Action::Transmit(0)));
        t.set(0, 1, 2.0);
        assert_eq!(epsilon_greedy(&t, 0, 0.0, &mut rng), Action::Harvest);
    }

    #[test]
    fn free_transmission_learns_unit_age() {
        let m = SystemModel::new(presets::single_source_learning())
            .unwrap()
            .with_energy_tables(vec![vec![1; 4]], vec![vec![0; 4]])
            .unwrap();
        let run = train_tabular(&m, &LearningSchedule::default(), 100_000, 3).unwrap();
        let g = *run.gain_trace.last().unwrap();
        assert!((g - 1.0).abs() < 0.05, "{g}");
        assert_eq!(run.table.total_visits(), 100_000);
    }

    #[test]
    fn training_is_deterministic() {
        let m = SystemModel::new(presets::single_source_learning()).unwrap();
        let a = train_tabular(&m, &LearningSchedule::default(), 20_000, 11).unwrap();
        let b = train_tabular(&m, &LearningSchedule::default(), 20_000, 11).unwrap();
        assert_eq!(a.gain_trace, b.gain_trace);
        assert_eq!(a.policy, b.policy);
    }

    #[test]
    fn rejects_bad_schedule() {
        let bad = LearningSchedule {
            epsilon0: 0.0,
            ..LearningSchedule::default()
        };
        assert!(bad.validate().is_err());
    }

    proptest! {
        #[test]
        fn schedule_is_monotone(k in 0u64..10_000_000, d in 1u64..1_000_000) {
            let s = LearningSchedule::default();
            prop_assert!(s.epsilon(k + d) <= s.epsilon(k));
            prop_assert!(s.epsilon(k) >= s.epsilon_min && s.epsilon(k) <= s.epsilon0);
            prop_assert!(s.learning_rate(k + d) < s.learning_rate(k));
            prop_assert!(s.learning_rate(k) > 0.0);
        }
    }
}
