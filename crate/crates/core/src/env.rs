//! Per-slot dynamics of the RF-powered multi-source system.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{build_quantizer, FadingQuantizer};
use crate::config::{RoundingMode, SystemConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SourceState {
    /// Stored energy in quanta, `0..=b_max`.
    pub battery: u32,
    /// Age of information, `1..=A_max`.
    pub aoi: u32,
    /// Downlink channel level, 1-based.
    pub g_level: u32,
    /// Uplink channel level, 1-based.
    pub h_level: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SystemState {
    pub per_source: Vec<SourceState>,
}

impl fmt::Display for SystemState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, s) in self.per_source.iter().enumerate() {
            if i > 0 {
                write!(f, "; ")?;
            }
            write!(f, "b={} A={} g={} h={}", s.battery, s.aoi, s.g_level, s.h_level)?;
        }
        write!(f, "]")
    }
}

/// Slot decision: charge every source, or let one source transmit.
///
/// Sources are 0-based in code; they are displayed 1-based (`T1`, `T2`, ...).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Harvest,
    Transmit(usize),
}

impl Action {
    /// Dense index: `Harvest` is 0, `Transmit(i)` is `i + 1`.
    pub fn index(self) -> usize {
        match self {
            Action::Harvest => 0,
            Action::Transmit(i) => i + 1,
        }
    }

    pub fn from_index(index: usize) -> Self {
        match index {
            0 => Action::Harvest,
            i => Action::Transmit(i - 1),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let t = text.trim();
        if t == "H" {
            return Ok(Action::Harvest);
        }
        t.strip_prefix('T')
            .and_then(|n| n.parse::<usize>().ok())
            .filter(|&n| n >= 1)
            .map(|n| Action::Transmit(n - 1))
            .ok_or_else(|| Error::Parse(format!("unknown action {text:?}")))
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Harvest => write!(f, "H"),
            Action::Transmit(i) => write!(f, "T{}", i + 1),
        }
    }
}

/// Bit set over action indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct ActionMask(pub u32);

impl ActionMask {
    pub fn harvest_only() -> Self {
        ActionMask(1)
    }

    pub fn contains(self, index: usize) -> bool {
        self.0 >> index & 1 == 1
    }

    pub fn insert(&mut self, index: usize) {
        self.0 |= 1 << index;
    }

    pub fn count(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn iter(self) -> impl Iterator<Item = usize> {
        let bits = self.0;
        (0..32).filter(move |&i| bits >> i & 1 == 1)
    }

    /// The `k`-th set index in ascending order.
    pub fn nth(self, k: usize) -> Option<usize> {
        self.iter().nth(k)
    }
}

/// Snaps values within 1e-12 relative distance of an integer onto it, so
/// that energy ratios that are integral in exact arithmetic round correctly.
fn snap(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() <= 1e-12 * x.abs() {
        r
    } else {
        x
    }
}

fn to_quanta(x: f64) -> u32 {
    if x >= u32::MAX as f64 || x.is_nan() {
        u32::MAX
    } else {
        x as u32
    }
}

/// Harvested energy in quanta: floor in lower-bound mode, ceil otherwise.
pub fn harvest_energy_quanta(energy_j: f64, quanta_per_joule: f64, mode: RoundingMode) -> u32 {
    let x = snap(energy_j * quanta_per_joule);
    match mode {
        RoundingMode::LowerBound => to_quanta(x.floor()),
        RoundingMode::UpperBound => to_quanta(x.ceil()),
    }
}

/// Transmit energy in quanta: ceil in lower-bound mode, floor otherwise.
pub fn transmit_energy_quanta(energy_j: f64, quanta_per_joule: f64, mode: RoundingMode) -> u32 {
    let x = snap(energy_j * quanta_per_joule);
    match mode {
        RoundingMode::LowerBound => to_quanta(x.ceil()),
        RoundingMode::UpperBound => to_quanta(x.floor()),
    }
}

/// Energy collected in one harvesting slot, `η · P · g` joules.
pub fn harvested_energy_j(config: &SystemConfig, gain: f64) -> f64 {
    config.harvest_efficiency * config.tx_power_w * gain
}

/// Energy needed to deliver one packet in one slot, `σ² / h · (2^(S/W) - 1)` joules.
pub fn transmit_energy_j(config: &SystemConfig, gain: f64) -> f64 {
    if gain <= 0.0 {
        return f64::INFINITY;
    }
    config.noise_power_w / gain * (config.spectral_load().exp2() - 1.0)
}

/// Validated configuration with per-level energy tables precomputed.
#[derive(Debug, Clone)]
pub struct SystemModel {
    config: SystemConfig,
    downlink: Vec<FadingQuantizer>,
    uplink: Vec<FadingQuantizer>,
    harvest: Vec<Vec<u32>>,
    transmit: Vec<Vec<u32>>,
}

impl SystemModel {
    pub fn new(config: SystemConfig) -> Result<Self> {
        config.validate()?;
        let mut downlink = Vec::new();
        let mut uplink = Vec::new();
        let mut harvest = Vec::new();
        let mut transmit = Vec::new();
        for (i, src) in config.sources.iter().enumerate() {
            let mean = src.link.mean_gain();
            let dq = build_quantizer(mean, src.link.levels_downlink)?;
            let uq = build_quantizer(mean, src.link.levels_uplink)?;
            let qpj = src.battery_quanta as f64 / src.battery_capacity_j;
            let e_h: Vec<u32> = dq
                .representative_gains()
                .iter()
                .map(|&g| harvest_energy_quanta(harvested_energy_j(&config, g), qpj, config.rounding_mode))
                .collect();
            let e_t: Vec<u32> = uq
                .representative_gains()
                .iter()
                .map(|&h| transmit_energy_quanta(transmit_energy_j(&config, h), qpj, config.rounding_mode))
                .collect();
            if e_t.iter().all(|&e| e > src.battery_quanta) {
                log::warn!(
                    "source {} can never transmit: cheapest packet needs {} quanta, battery holds {}",
                    i + 1,
                    e_t.iter().min().copied().unwrap_or(u32::MAX),
                    src.battery_quanta
                );
            }
            downlink.push(dq);
            uplink.push(uq);
            harvest.push(e_h);
            transmit.push(e_t);
        }
        Ok(SystemModel {
            config,
            downlink,
            uplink,
            harvest,
            transmit,
        })
    }

    /// Overrides the energy tables; used to build hand-specified instances.
    pub fn with_energy_tables(mut self, harvest: Vec<Vec<u32>>, transmit: Vec<Vec<u32>>) -> Result<Self> {
        let n = self.num_sources();
        if harvest.len() != n || transmit.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: harvest.len().min(transmit.len()),
            });
        }
        for i in 0..n {
            if harvest[i].len() != self.levels_downlink(i) as usize {
                return Err(Error::DimensionMismatch {
                    expected: self.levels_downlink(i) as usize,
                    found: harvest[i].len(),
                });
            }
            if transmit[i].len() != self.levels_uplink(i) as usize {
                return Err(Error::DimensionMismatch {
                    expected: self.levels_uplink(i) as usize,
                    found: transmit[i].len(),
                });
            }
        }
        self.harvest = harvest;
        self.transmit = transmit;
        Ok(self)
    }

    pub fn config(&self) -> &SystemConfig {
        &self.config
    }

    pub fn num_sources(&self) -> usize {
        self.config.sources.len()
    }

    pub fn num_actions(&self) -> usize {
        self.num_sources() + 1
    }

    pub fn battery_quanta(&self, i: usize) -> u32 {
        self.config.sources[i].battery_quanta
    }

    pub fn aoi_cap(&self, i: usize) -> u32 {
        self.config.sources[i].aoi_cap
    }

    pub fn levels_downlink(&self, i: usize) -> u32 {
        self.downlink[i].num_levels()
    }

    pub fn levels_uplink(&self, i: usize) -> u32 {
        self.uplink[i].num_levels()
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.config.sources[i].weight
    }

    pub fn downlink_quantizer(&self, i: usize) -> &FadingQuantizer {
        &self.downlink[i]
    }

    pub fn uplink_quantizer(&self, i: usize) -> &FadingQuantizer {
        &self.uplink[i]
    }

    /// `e^H` for source `i` at 1-based downlink level `g_level`.
    pub fn harvested_quanta(&self, i: usize, g_level: u32) -> u32 {
        self.harvest[i][(g_level - 1) as usize]
    }

    /// `e^T` for source `i` at 1-based uplink level `h_level`.
    pub fn transmit_quanta(&self, i: usize, h_level: u32) -> u32 {
        self.transmit[i][(h_level - 1) as usize]
    }

    pub fn is_valid(&self, state: &SystemState) -> bool {
        state.per_source.len() == self.num_sources()
            && state.per_source.iter().enumerate().all(|(i, s)| {
                s.battery <= self.battery_quanta(i)
                    && (1..=self.aoi_cap(i)).contains(&s.aoi)
                    && (1..=self.levels_downlink(i)).contains(&s.g_level)
                    && (1..=self.levels_uplink(i)).contains(&s.h_level)
            })
    }

    pub fn is_feasible(&self, state: &SystemState, action: Action) -> bool {
        match action {
            Action::Harvest => true,
            Action::Transmit(i) => state
                .per_source
                .get(i)
                .is_some_and(|s| s.battery >= self.transmit_quanta(i, s.h_level)),
        }
    }

    pub fn feasible_mask(&self, state: &SystemState) -> ActionMask {
        let mut mask = ActionMask::harvest_only();
        for (i, s) in state.per_source.iter().enumerate() {
            if s.battery >= self.transmit_quanta(i, s.h_level) {
                mask.insert(i + 1);
            }
        }
        mask
    }

    pub fn feasible_actions(&self, state: &SystemState) -> Vec<Action> {
        self.feasible_mask(state).iter().map(Action::from_index).collect()
    }

    /// Weighted sum of ages, `Σ θ_i A_i`.
    pub fn stage_cost(&self, state: &SystemState) -> f64 {
        state
            .per_source
            .iter()
            .enumerate()
            .map(|(i, s)| self.weight(i) * s.aoi as f64)
            .sum()
    }

    /// Battery of source `i` after `action`, before channel renewal.
    pub fn next_battery(&self, i: usize, s: &SourceState, action: Action) -> u32 {
        match action {
            Action::Transmit(j) if j == i => s.battery - self.transmit_quanta(i, s.h_level),
            Action::Harvest => self
                .battery_quanta(i)
                .min(s.battery.saturating_add(self.harvested_quanta(i, s.g_level))),
            Action::Transmit(_) => s.battery,
        }
    }

    pub fn next_aoi(&self, i: usize, s: &SourceState, action: Action) -> u32 {
        match action {
            Action::Transmit(j) if j == i => 1,
            _ => self.aoi_cap(i).min(s.aoi + 1),
        }
    }

    /// Applies one slot of battery and AoI dynamics, then installs the given
    /// `(g, h)` levels for the next slot.
    pub fn step(&self, state: &SystemState, action: Action, next_levels: &[(u32, u32)]) -> Result<SystemState> {
        if !self.is_feasible(state, action) {
            return Err(Error::InfeasibleAction {
                action: action.to_string(),
                state: state.to_string(),
            });
        }
        if next_levels.len() != self.num_sources() {
            return Err(Error::DimensionMismatch {
                expected: self.num_sources(),
                found: next_levels.len(),
            });
        }
        let per_source = state
            .per_source
            .iter()
            .zip(next_levels)
            .enumerate()
            .map(|(i, (s, &(g, h)))| SourceState {
                battery: self.next_battery(i, s, action),
                aoi: self.next_aoi(i, s, action),
                g_level: g,
                h_level: h,
            })
            .collect();
        Ok(SystemState { per_source })
    }

    /// Draws fresh `(g, h)` levels for every source.
    pub fn sample_levels<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<(u32, u32)> {
        (0..self.num_sources())
            .map(|i| {
                let g = self.downlink[i].sample_level(rng);
                let h = if self.config.correlated_links {
                    g
                } else {
                    self.uplink[i].sample_level(rng)
                };
                (g, h)
            })
            .collect()
    }

    /// Full batteries and fresh information, with the given channel levels.
    pub fn initial_state(&self, levels: &[(u32, u32)]) -> SystemState {
        SystemState {
            per_source: levels
                .iter()
                .enumerate()
                .map(|(i, &(g, h))| SourceState {
                    battery: self.battery_quanta(i),
                    aoi: 1,
                    g_level: g,
                    h_level: h,
                })
                .collect(),
        }
    }
}

/// Anything that picks an action for a state.
pub trait Policy {
    fn act(&self, state: &SystemState) -> Action;
}

impl<F: Fn(&SystemState) -> Action> Policy for F {
    fn act(&self, state: &SystemState) -> Action {
        self(state)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceStep {
    pub slot: u64,
    pub state: SystemState,
    pub action: Action,
    pub cost: f64,
}

#[derive(Debug, Clone)]
pub struct SimulationReport {
    pub avg_weighted_aoi: f64,
    /// Only reported for single-source systems.
    pub avg_throughput_bits: Option<f64>,
    pub trace: Option<Vec<TraceStep>>,
}

/// Runs `policy` over slots `0..=horizon` from full batteries and unit ages,
/// averaging with `1/(horizon + 1)`.
pub fn simulate_policy<P: Policy + ?Sized>(
    model: &SystemModel,
    policy: &P,
    horizon: u64,
    seed: u64,
    keep_trace: bool,
) -> Result<SimulationReport> {
    if horizon == 0 {
        return Err(Error::InvalidConfig("simulation horizon must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = model.initial_state(&model.sample_levels(&mut rng));
    let mut trace = keep_trace.then(Vec::new);
    let (mut cost_sum, mut transmissions) = (0.0, 0u64);
    for slot in 0..=horizon {
        let action = policy.act(&state);
        let cost = model.stage_cost(&state);
        cost_sum += cost;
        if action == Action::Transmit(0) {
            transmissions += 1;
        }
        let next_levels = model.sample_levels(&mut rng);
        let next = model.step(&state, action, &next_levels)?;
        if let Some(t) = trace.as_mut() {
            t.push(TraceStep {
                slot,
                state: state.clone(),
                action,
                cost,
            });
        }
        state = next;
    }
    let slots = (horizon + 1) as f64;
    Ok(SimulationReport {
        avg_weighted_aoi: cost_sum / slots,
        avg_throughput_bits: (model.num_sources() == 1)
            .then(|| transmissions as f64 * model.config().packet_bits / slots),
        trace,
    })
}
