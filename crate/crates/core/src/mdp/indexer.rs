use crate::env::{SourceState, SystemModel, SystemState};
use crate::error::{Error, Result};
use crate::mdp::Objective;

/// Default cap on enumerated states.
pub const DEFAULT_STATE_LIMIT: usize = 20_000_000;

/// Cardinalities of one source's state variables.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SourceDims {
    /// `b_max + 1`.
    pub battery_levels: u32,
    /// `A_max`; ignored when the indexer tracks no ages.
    pub aoi_levels: u32,
    pub g_levels: u32,
    pub h_levels: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VarKind {
    Battery,
    Aoi,
    Downlink,
    Uplink,
}

impl VarKind {
    pub fn label(self) -> &'static str {
        match self {
            VarKind::Battery => "b",
            VarKind::Aoi => "A",
            VarKind::Downlink => "g",
            VarKind::Uplink => "h",
        }
    }
}

/// Mixed-radix bijection between states and dense indices.
///
/// Variables are ordered source by source as `(b, A, g, h)` (or `(b, g, h)`
/// without ages); the last variable varies fastest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateIndexer {
    dims: Vec<SourceDims>,
    include_aoi: bool,
    vars: Vec<(usize, VarKind)>,
    radices: Vec<usize>,
    strides: Vec<usize>,
    total: usize,
}

impl StateIndexer {
    pub fn new(dims: Vec<SourceDims>, include_aoi: bool, limit: usize) -> Result<Self> {
        let mut vars = Vec::new();
        let mut radices = Vec::new();
        for (i, d) in dims.iter().enumerate() {
            let mut push = |kind, r: u32| {
                vars.push((i, kind));
                radices.push(r as usize);
            };
            push(VarKind::Battery, d.battery_levels);
            if include_aoi {
                push(VarKind::Aoi, d.aoi_levels);
            }
            push(VarKind::Downlink, d.g_levels);
            push(VarKind::Uplink, d.h_levels);
        }
        if radices.contains(&0) {
            return Err(Error::InvalidConfig(
                "every state variable needs at least one value".into(),
            ));
        }
        let exact: u128 = radices
            .iter()
            .try_fold(1u128, |acc, &r| acc.checked_mul(r as u128))
            .unwrap_or(u128::MAX);
        if exact > limit as u128 {
            return Err(Error::StateSpaceTooLarge {
                states: exact,
                limit: limit as u128,
            });
        }
        let mut strides = vec![1usize; radices.len()];
        for k in (0..radices.len().saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * radices[k + 1];
        }
        Ok(StateIndexer {
            dims,
            include_aoi,
            vars,
            radices,
            strides,
            total: exact as usize,
        })
    }

    pub fn num_states(&self) -> usize {
        self.total
    }

    pub fn num_sources(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[SourceDims] {
        &self.dims
    }

    pub fn includes_aoi(&self) -> bool {
        self.include_aoi
    }

    /// `(source, kind)` for every variable position.
    pub fn vars(&self) -> &[(usize, VarKind)] {
        &self.vars
    }

    pub fn var_position(&self, source: usize, kind: VarKind) -> Option<usize> {
        self.vars.iter().position(|&v| v == (source, kind))
    }

    pub fn stride(&self, var: usize) -> usize {
        self.strides[var]
    }

    pub fn radix(&self, var: usize) -> usize {
        self.radices[var]
    }

    /// 0-based coordinate of `var` in the state with dense index `index`.
    pub fn coordinate(&self, index: usize, var: usize) -> usize {
        index / self.strides[var] % self.radices[var]
    }

    /// Index of the state with `var` moved by one step up, if in range.
    pub fn step_up(&self, index: usize, var: usize) -> Option<usize> {
        (self.coordinate(index, var) + 1 < self.radices[var]).then(|| index + self.strides[var])
    }

    pub fn encode(&self, state: &SystemState) -> usize {
        let mut idx = 0;
        let mut k = 0;
        for s in &state.per_source {
            idx += s.battery as usize * self.strides[k];
            k += 1;
            if self.include_aoi {
                idx += (s.aoi - 1) as usize * self.strides[k];
                k += 1;
            }
            idx += (s.g_level - 1) as usize * self.strides[k];
            idx += (s.h_level - 1) as usize * self.strides[k + 1];
            k += 2;
        }
        idx
    }

    /// States without tracked ages decode with `aoi = 1`.
    pub fn decode(&self, index: usize) -> SystemState {
        let mut k = 0;
        let per_source = (0..self.dims.len())
            .map(|_| {
                let battery = self.coordinate(index, k) as u32;
                k += 1;
                let aoi = if self.include_aoi {
                    k += 1;
                    self.coordinate(index, k - 1) as u32 + 1
                } else {
                    1
                };
                let g_level = self.coordinate(index, k) as u32 + 1;
                let h_level = self.coordinate(index, k + 1) as u32 + 1;
                k += 2;
                SourceState {
                    battery,
                    aoi,
                    g_level,
                    h_level,
                }
            })
            .collect();
        SystemState { per_source }
    }
}

/// Enumerates the state space of `model` for the given objective.
///
/// The age MDP has `Π_i A_max,i · G_i · H_i · (b_max,i + 1)` states; the
/// throughput MDP drops the age and exists only for a single source.
pub fn enumerate_states(model: &SystemModel, objective: Objective, limit: usize) -> Result<StateIndexer> {
    if objective == Objective::Throughput && model.num_sources() != 1 {
        return Err(Error::Scope("the throughput MDP is defined for one source only".into()));
    }
    let dims = (0..model.num_sources())
        .map(|i| SourceDims {
            battery_levels: model.battery_quanta(i) + 1,
            aoi_levels: model.aoi_cap(i),
            g_levels: model.levels_downlink(i),
            h_levels: model.levels_uplink(i),
        })
        .collect();
    StateIndexer::new(dims, objective == Objective::Age, limit)
}
