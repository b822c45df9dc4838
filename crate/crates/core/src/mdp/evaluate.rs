use crate::error::{Error, Result};
use crate::mdp::{PolicyTable, TransitionKernel};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    /// Stop when successive state distributions differ by less than this in L1.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            tolerance: 1e-12,
            max_iterations: 2_000_000,
        }
    }
}

/// Long-run average cost (or reward) of a deterministic policy, started from
/// the kernel's start distribution.
pub fn evaluate_policy(kernel: &TransitionKernel, policy: &PolicyTable) -> Result<f64> {
    if policy.len() != kernel.num_states() {
        return Err(Error::DimensionMismatch {
            expected: kernel.num_states(),
            found: policy.len(),
        });
    }
    for (s, a) in policy.actions.iter().enumerate() {
        if !kernel.is_feasible(s, a.index()) {
            return Err(Error::InfeasibleAction {
                action: a.to_string(),
                state: format!("#{s}"),
            });
        }
    }
    evaluate_randomized(
        kernel,
        |s, out| out.push((policy.actions[s].index(), 1.0)),
        &EvalOptions::default(),
    )
}

/// Long-run average of a stationary randomized policy. `action_probs(s, out)`
/// appends `(action index, probability)` pairs for state `s`.
///
/// The state distribution is pushed through the lazy chain `(I + P) / 2`,
/// which has the same limiting (Cesàro) distribution as `P` from the same
/// start but converges even when `P` is periodic. On reducible chains the
/// result is the average reached from the start distribution.
pub fn evaluate_randomized<F>(kernel: &TransitionKernel, mut action_probs: F, options: &EvalOptions) -> Result<f64>
where
    F: FnMut(usize, &mut Vec<(usize, f64)>),
{
    let n = kernel.num_states();
    let mut choices: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
    let mut rate = Vec::with_capacity(n);
    let mut buf = Vec::new();
    for s in 0..n {
        buf.clear();
        action_probs(s, &mut buf);
        let total: f64 = buf.iter().map(|&(_, p)| p).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "action probabilities at state {s} sum to {total}"
            )));
        }
        let mut row = Vec::with_capacity(buf.len());
        let mut r = 0.0;
        for &(a, p) in &buf {
            let Some(post) = kernel.post(s, a) else {
                return Err(Error::InfeasibleAction {
                    action: format!("#{a}"),
                    state: format!("#{s}"),
                });
            };
            if p > 0.0 {
                row.push((post, p));
                r += p * kernel.reward(s, a);
            }
        }
        choices.push(row);
        rate.push(r);
    }

    let mut mu = vec![0.0; n];
    for &(s, p) in kernel.start() {
        mu[s] += p;
    }
    let mut post_mass = vec![0.0; kernel.num_posts()];
    let mut next = vec![0.0; n];
    let mut residual = f64::INFINITY;
    for _ in 0..options.max_iterations {
        post_mass.iter_mut().for_each(|m| *m = 0.0);
        for (s, row) in choices.iter().enumerate() {
            let m = mu[s];
            if m != 0.0 {
                for &(post, p) in row {
                    post_mass[post] += m * p;
                }
            }
        }
        next.iter_mut().for_each(|v| *v = 0.0);
        for (post, &m) in post_mass.iter().enumerate() {
            if m != 0.0 {
                for (t, p) in kernel.post_successors(post) {
                    next[t] += m * p;
                }
            }
        }
        residual = 0.0;
        for (v, pushed) in mu.iter_mut().zip(&next) {
            let lazy = 0.5 * (*v + pushed);
            residual += (lazy - *v).abs();
            *v = lazy;
        }
        if residual < options.tolerance {
            return Ok(mu.iter().zip(&rate).map(|(m, r)| m * r).sum());
        }
    }
    Err(Error::EvaluationNotConverged {
        iterations: options.max_iterations,
        residual,
    })
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::config::presets;
    use crate::env::{Action, SystemModel};
    use crate::mdp::{build_kernel, enumerate_states, solve_rvia, Objective, RviaOptions, DEFAULT_STATE_LIMIT};

    fn kernel(config: crate::config::SystemConfig) -> TransitionKernel {
        let m = SystemModel::new(config).unwrap();
        let ix = enumerate_states(&m, Objective::Age, DEFAULT_STATE_LIMIT).unwrap();
        build_kernel(&m, &ix, Objective::Age).unwrap()
    }

    #[test]
    fn always_harvest_saturates() {
        let mut c = presets::two_source_policy_map();
        for s in &mut c.sources {
            s.aoi_cap = 3;
            s.battery_quanta = 2;
            s.link.levels_downlink = 2;
            s.link.levels_uplink = 2;
        }
        let k = kernel(c);
        let g = evaluate_policy(&k, &PolicyTable::constant(k.num_states(), Action::Harvest)).unwrap();
        assert!((g - 3.0).abs() < 1e-9, "{g}");
    }

    #[test]
    fn rvia_policy_matches_its_gain() {
        for config in [presets::single_source_learning(), presets::single_source_policy_map()] {
            let k = kernel(config);
            let sol = solve_rvia(&k, &RviaOptions::default()).unwrap();
            let g = evaluate_policy(&k, &sol.policy).unwrap();
            assert!((g - sol.values.gain).abs() < 1e-9, "{g} vs {}", sol.values.gain);
        }
    }

    #[test]
    fn random_policies_are_no_better_than_optimal() {
        let k = kernel(presets::single_source_learning());
        let sol = solve_rvia(&k, &RviaOptions::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let actions = (0..k.num_states())
                .map(|s| {
                    let mask = k.feasible_mask(s);
                    Action::from_index(mask.nth(rng.gen_range(0..mask.count())).unwrap())
                })
                .collect();
            let g = evaluate_policy(&k, &PolicyTable { actions }).unwrap();
            assert!(g >= sol.values.gain - 1e-9);
        }
    }

    #[test]
    fn infeasible_policy_is_rejected() {
        let k = kernel(presets::single_source_learning());
        let err = evaluate_policy(&k, &PolicyTable::constant(k.num_states(), Action::Transmit(0))).unwrap_err();
        assert!(matches!(err, Error::InfeasibleAction { .. }));
    }
}
