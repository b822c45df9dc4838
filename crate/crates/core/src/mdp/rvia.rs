use rayon::prelude::*;

use crate::env::Action;
use crate::error::{Error, Result};
use crate::mdp::{PolicyTable, TransitionKernel, ValueTable};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RviaOptions {
    /// Stop once `span(T h - h)` falls below `epsilon · max(1, max |reward|)`.
    pub epsilon: f64,
    pub max_sweeps: usize,
    /// Weight `τ` of the Bellman update in `h ← (1-τ) h + τ T h`. Values
    /// below 1 make every policy's chain aperiodic without changing the gain,
    /// the relative values or the optimal actions.
    pub damping: f64,
    /// State whose value is pinned to zero after every sweep.
    pub reference_state: usize,
}

impl Default for RviaOptions {
    fn default() -> Self {
        RviaOptions {
            epsilon: 1e-9,
            max_sweeps: 200_000,
            damping: 0.5,
            reference_state: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RviaSolution {
    pub values: ValueTable,
    pub policy: PolicyTable,
    pub sweeps: usize,
    pub span: f64,
}

fn reward_scale(kernel: &TransitionKernel) -> f64 {
    let mut scale = 1.0f64;
    for s in 0..kernel.num_states() {
        for a in 0..kernel.num_actions() {
            if kernel.is_feasible(s, a) {
                scale = scale.max(kernel.reward(s, a).abs());
            }
        }
    }
    scale
}

/// One Bellman sweep: the optimal one-step lookahead value of every state.
fn bellman(kernel: &TransitionKernel, values: &[f64]) -> Vec<f64> {
    let w = kernel.expected_post_values(values);
    let minimize = kernel.objective().minimizes();
    let na = kernel.num_actions();
    let row = |s: usize| {
        let mut best = if minimize { f64::INFINITY } else { f64::NEG_INFINITY };
        for a in 0..na {
            if let Some(p) = kernel.post(s, a) {
                let q = kernel.reward(s, a) + w[p];
                if (minimize && q < best) || (!minimize && q > best) {
                    best = q;
                }
            }
        }
        best
    };
    if kernel.num_states() > 1 << 14 {
        (0..kernel.num_states()).into_par_iter().map(row).collect()
    } else {
        (0..kernel.num_states()).map(row).collect()
    }
}

/// Greedy policy for the given relative values.
///
/// Actions whose Q-value is within `tie_tolerance` of the best are treated as
/// ties and resolved to the lowest action index (`H < T1 < T2 < ...`).
pub fn greedy_policy(kernel: &TransitionKernel, values: &[f64], tie_tolerance: f64) -> PolicyTable {
    let w = kernel.expected_post_values(values);
    let objective = kernel.objective();
    let actions = (0..kernel.num_states())
        .map(|s| {
            let q: Vec<(usize, f64)> = (0..kernel.num_actions())
                .filter_map(|a| kernel.post(s, a).map(|p| (a, kernel.reward(s, a) + w[p])))
                .collect();
            let best = q
                .iter()
                .map(|&(_, v)| v)
                .fold(None, |acc: Option<f64>, v| match acc {
                    Some(b) if !objective.better(v, b) => Some(b),
                    _ => Some(v),
                })
                .expect("every state has a feasible action");
            let chosen = q
                .iter()
                .find(|&&(_, v)| (v - best).abs() <= tie_tolerance)
                .map(|&(a, _)| a)
                .unwrap_or(0);
            Action::from_index(chosen)
        })
        .collect();
    PolicyTable { actions }
}

/// Relative value iteration from all-zero initial values.
pub fn solve_rvia(kernel: &TransitionKernel, options: &RviaOptions) -> Result<RviaSolution> {
    solve_rvia_from(kernel, options, &vec![0.0; kernel.num_states()])
}

/// Relative value iteration from the given initial values.
pub fn solve_rvia_from(kernel: &TransitionKernel, options: &RviaOptions, initial: &[f64]) -> Result<RviaSolution> {
    let n = kernel.num_states();
    if initial.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: initial.len(),
        });
    }
    if options.reference_state >= n {
        return Err(Error::InvalidConfig("reference state out of range".into()));
    }
    if !(options.damping > 0.0 && options.damping <= 1.0) {
        return Err(Error::InvalidConfig("damping must lie in (0, 1]".into()));
    }
    let tolerance = options.epsilon * reward_scale(kernel);
    let tau = options.damping;
    let r = options.reference_state;
    let mut h: Vec<f64> = initial.iter().map(|&v| v - initial[r]).collect();
    let mut span = f64::INFINITY;
    for sweep in 1..=options.max_sweeps {
        let th = bellman(kernel, &h);
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for (t, v) in th.iter().zip(&h) {
            let d = t - v;
            lo = lo.min(d);
            hi = hi.max(d);
        }
        span = hi - lo;
        if span < tolerance {
            let policy = greedy_policy(kernel, &h, tolerance);
            return Ok(RviaSolution {
                values: ValueTable {
                    values: h,
                    gain: 0.5 * (lo + hi),
                },
                policy,
                sweeps: sweep,
                span,
            });
        }
        let pin = (1.0 - tau) * h[r] + tau * th[r];
        for (v, t) in h.iter_mut().zip(&th) {
            *v = (1.0 - tau) * *v + tau * t - pin;
        }
        if sweep % 1000 == 0 {
            log::debug!("rvia sweep {sweep}: span {span:e}");
        }
    }
    Err(Error::NotConverged {
        sweeps: options.max_sweeps,
        span,
    })
}
