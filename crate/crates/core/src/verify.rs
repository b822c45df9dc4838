//! Mechanical checks of the structure of optimal values and policies.
//!
//! Every check compares states that differ by one step in a single variable.
//! For the properties checked here that is equivalent to comparing all
//! ordered pairs: monotonicity is transitive along chains of unit steps, and
//! the single-source threshold region is an up-set, so every chain between
//! two of its members stays inside it.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use crate::env::{Action, SystemModel, SystemState};
use crate::error::{Error, Result};
use crate::mdp::{Objective, PolicyTable, StateIndexer, VarKind};

/// Default slack on value comparisons, absorbing solver stopping error.
pub const VALUE_TOLERANCE: f64 = 1e-7;

/// Value differences at or below this are treated as exact ties.
const NOISE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Severity {
    Failure,
    /// Out of order by less than the tolerance.
    Warning,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub check: &'static str,
    pub severity: Severity,
    pub state: String,
    pub compared_state: String,
    pub expected: String,
    pub found: String,
}

pub fn failures(violations: &[Violation]) -> usize {
    violations.iter().filter(|v| v.severity == Severity::Failure).count()
}

fn need_len(indexer: &StateIndexer, len: usize) -> Result<()> {
    if len == indexer.num_states() {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            expected: indexer.num_states(),
            found: len,
        })
    }
}

/// Values of the age MDP must not increase with battery or channel levels
/// and must not decrease with any age.
pub fn check_value_monotone_age(indexer: &StateIndexer, values: &[f64], tolerance: f64) -> Result<Vec<Violation>> {
    if !indexer.includes_aoi() {
        return Err(Error::Scope("value monotonicity is checked on age MDP values".into()));
    }
    need_len(indexer, values.len())?;
    let mut out = Vec::new();
    for s in 0..indexer.num_states() {
        for (var, &(source, kind)) in indexer.vars().iter().enumerate() {
            let Some(t) = indexer.step_up(s, var) else { continue };
            // Amount by which the step moved the value the wrong way.
            let excess = match kind {
                VarKind::Aoi => values[s] - values[t],
                _ => values[t] - values[s],
            };
            if excess <= NOISE_FLOOR {
                continue;
            }
            let direction = if kind == VarKind::Aoi {
                "non-decreasing"
            } else {
                "non-increasing"
            };
            out.push(Violation {
                check: "value-monotone",
                severity: if excess > tolerance {
                    Severity::Failure
                } else {
                    Severity::Warning
                },
                state: indexer.decode(s).to_string(),
                compared_state: indexer.decode(t).to_string(),
                expected: format!("V {direction} in {}{}", kind.label(), source + 1),
                found: format!("V={:.12e} then {:.12e}", values[s], values[t]),
            });
        }
    }
    Ok(out)
}

/// Wherever source `j` is scheduled, it stays scheduled when only its age grows.
pub fn check_threshold_aoi(indexer: &StateIndexer, policy: &PolicyTable) -> Result<Vec<Violation>> {
    if !indexer.includes_aoi() {
        return Err(Error::Scope("the age threshold applies to age MDP policies".into()));
    }
    need_len(indexer, policy.len())?;
    let mut out = Vec::new();
    for s in 0..indexer.num_states() {
        let Action::Transmit(j) = policy.action(s) else {
            continue;
        };
        let var = indexer.var_position(j, VarKind::Aoi).expect("ages are indexed");
        let Some(t) = indexer.step_up(s, var) else { continue };
        if policy.action(t) != Action::Transmit(j) {
            out.push(Violation {
                check: "threshold-aoi",
                severity: Severity::Failure,
                state: indexer.decode(s).to_string(),
                compared_state: indexer.decode(t).to_string(),
                expected: Action::Transmit(j).to_string(),
                found: policy.action(t).to_string(),
            });
        }
    }
    Ok(out)
}

/// Battery levels from which the single source may transmit now and still
/// lose nothing to clipping by harvesting instead:
/// `b ≥ max(b_max - e^H(g), e^T(h))`.
pub fn in_threshold_region(model: &SystemModel, state: &SystemState) -> bool {
    let s = &state.per_source[0];
    let top = model.battery_quanta(0);
    s.battery
        >= top
            .saturating_sub(model.harvested_quanta(0, s.g_level))
            .max(model.transmit_quanta(0, s.h_level))
}

/// Single-source threshold structure on the threshold region: transmitting at
/// a state implies transmitting at every larger state of the region, and
/// harvesting implies harvesting at every smaller one. Both directions fail
/// on exactly the same adjacent pairs, which are reported once.
pub fn check_threshold_single_source(
    indexer: &StateIndexer,
    policy: &PolicyTable,
    model: &SystemModel,
    objective: Objective,
) -> Result<Vec<Violation>> {
    if model.num_sources() != 1 || indexer.num_sources() != 1 {
        return Err(Error::Scope(
            "the single-source threshold check needs one source".into(),
        ));
    }
    if indexer.includes_aoi() != (objective == Objective::Age) {
        return Err(Error::Scope(format!("indexer does not match the {objective:?} MDP")));
    }
    need_len(indexer, policy.len())?;
    let mut out = Vec::new();
    for s in 0..indexer.num_states() {
        let low = indexer.decode(s);
        if policy.action(s) != Action::Transmit(0) || !in_threshold_region(model, &low) {
            continue;
        }
        for var in 0..indexer.vars().len() {
            let Some(t) = indexer.step_up(s, var) else { continue };
            let high = indexer.decode(t);
            if in_threshold_region(model, &high) && policy.action(t) != Action::Transmit(0) {
                out.push(Violation {
                    check: "threshold-single-source",
                    severity: Severity::Failure,
                    state: low.to_string(),
                    compared_state: high.to_string(),
                    expected: "T1 at the larger state (H at the smaller)".into(),
                    found: format!("T1 then {}", policy.action(t)),
                });
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DisagreementExample {
    pub state: String,
    pub age_action: String,
    pub throughput_action: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicyDiff {
    /// `(A, disagreeing (b, g, h) points, points compared)` for each age.
    pub per_aoi: Vec<(u32, usize, usize)>,
    pub total: usize,
    /// A few disagreeing states per age.
    pub examples: Vec<DisagreementExample>,
}

impl PolicyDiff {
    pub fn at_aoi(&self, aoi: u32) -> usize {
        self.per_aoi.iter().find(|r| r.0 == aoi).map_or(0, |r| r.1)
    }
}

const EXAMPLES_PER_AOI: usize = 3;

/// Compares an age-optimal and a throughput-optimal single-source policy at
/// every age over the shared `(b, g, h)` grid.
pub fn diff_policies(
    age_indexer: &StateIndexer,
    age_policy: &PolicyTable,
    throughput_indexer: &StateIndexer,
    throughput_policy: &PolicyTable,
) -> Result<PolicyDiff> {
    if age_indexer.num_sources() != 1 || !age_indexer.includes_aoi() || throughput_indexer.includes_aoi() {
        return Err(Error::Scope(
            "policy diff compares single-source age and throughput policies".into(),
        ));
    }
    let (a, t) = (age_indexer.dims()[0], throughput_indexer.dims()[0]);
    if (a.battery_levels, a.g_levels, a.h_levels) != (t.battery_levels, t.g_levels, t.h_levels) {
        return Err(Error::InvalidConfig("age and throughput grids differ".into()));
    }
    need_len(age_indexer, age_policy.len())?;
    need_len(throughput_indexer, throughput_policy.len())?;
    let mut per_aoi: BTreeMap<u32, (usize, usize)> = BTreeMap::new();
    let mut examples = Vec::new();
    for s in 0..age_indexer.num_states() {
        let state = age_indexer.decode(s);
        let mut grid = state.clone();
        grid.per_source[0].aoi = 1;
        let u = throughput_indexer.encode(&grid);
        let aoi = state.per_source[0].aoi;
        let entry = per_aoi.entry(aoi).or_default();
        entry.1 += 1;
        if age_policy.action(s) != throughput_policy.action(u) {
            entry.0 += 1;
            if entry.0 <= EXAMPLES_PER_AOI {
                examples.push(DisagreementExample {
                    state: state.to_string(),
                    age_action: age_policy.action(s).to_string(),
                    throughput_action: throughput_policy.action(u).to_string(),
                });
            }
        }
    }
    let per_aoi: Vec<(u32, usize, usize)> = per_aoi.into_iter().map(|(k, (d, n))| (k, d, n)).collect();
    Ok(PolicyDiff {
        total: per_aoi.iter().map(|r| r.1).sum(),
        per_aoi,
        examples,
    })
}

pub fn write_violations_csv(path: impl AsRef<Path>, violations: &[Violation]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["check", "severity", "state", "compared_state", "expected", "found"])?;
    for v in violations {
        w.serialize(v)?;
    }
    w.flush()?;
    Ok(())
}
