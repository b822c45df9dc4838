//! Exact treatment of the discretized MDPs: state enumeration, transition
//! kernels, relative value iteration, exact policy evaluation and a
//! brute-force oracle for tiny instances.

mod evaluate;
mod indexer;
mod kernel;
mod oracle;
mod rvia;

pub use evaluate::{evaluate_policy, evaluate_randomized, EvalOptions};
pub use indexer::{enumerate_states, SourceDims, StateIndexer, VarKind, DEFAULT_STATE_LIMIT};
pub use kernel::{build_kernel, ExplicitRow, TransitionKernel};
pub use oracle::{brute_force_oracle, ORACLE_MAX_ACTIONS, ORACLE_MAX_STATES};
pub use rvia::{greedy_policy, solve_rvia, solve_rvia_from, RviaOptions, RviaSolution};

use serde::{Deserialize, Serialize};

use crate::env::Action;

/// Which long-run average is optimized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    /// Minimize the weighted sum of ages.
    Age,
    /// Maximize delivered bits (single source only).
    Throughput,
}

impl Objective {
    pub fn minimizes(self) -> bool {
        matches!(self, Objective::Age)
    }

    /// True when `a` is strictly better than `b` under this objective.
    pub fn better(self, a: f64, b: f64) -> bool {
        match self {
            Objective::Age => a < b,
            Objective::Throughput => a > b,
        }
    }
}

impl std::str::FromStr for Objective {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "age" => Ok(Objective::Age),
            "throughput" => Ok(Objective::Throughput),
            other => Err(crate::Error::Parse(format!("unknown objective {other:?}"))),
        }
    }
}

/// Deterministic stationary policy over dense state indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolicyTable {
    pub actions: Vec<Action>,
}

impl PolicyTable {
    pub fn constant(num_states: usize, action: Action) -> Self {
        PolicyTable {
            actions: vec![action; num_states],
        }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn action(&self, state: usize) -> Action {
        self.actions[state]
    }
}

/// Relative values per state together with the long-run average (the gain).
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTable {
    pub values: Vec<f64>,
    pub gain: f64,
}
