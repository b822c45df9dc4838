use rayon::prelude::*;

use crate::env::{Action, ActionMask, SystemModel, SystemState};
use crate::error::{Error, Result};
use crate::mdp::{Objective, StateIndexer, VarKind};

const NO_POST: u32 = u32::MAX;

/// Transition law and one-step cost (or reward) of a finite MDP.
///
/// Each feasible `(state, action)` pair maps to a post-decision index whose
/// successor row is shared by every pair that lands on it. For the scheduling
/// system the post-decision part is the deterministic `(b', A')` update and
/// the row is the product of the next-slot channel pmfs, so rows are stored
/// once per post-decision state instead of once per pair.
#[derive(Debug, Clone)]
pub struct TransitionKernel {
    objective: Objective,
    num_states: usize,
    num_actions: usize,
    post: Vec<u32>,
    reward: Vec<f64>,
    rows: Rows,
    start: Vec<(usize, f64)>,
}

#[derive(Debug, Clone)]
enum Rows {
    /// Successor of post `p` through channel draw `c` is `offset[p] + channel[c].0`.
    Factored {
        offset: Vec<usize>,
        channel: Vec<(usize, f64)>,
    },
    Explicit(Vec<Vec<(usize, f64)>>),
}

/// Reward (or cost) and successor distribution of one feasible pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ExplicitRow {
    pub reward: f64,
    pub successors: Vec<(usize, f64)>,
}

pub enum PostSuccessors<'a> {
    Factored {
        base: usize,
        iter: std::slice::Iter<'a, (usize, f64)>,
    },
    Explicit(std::slice::Iter<'a, (usize, f64)>),
}

impl Iterator for PostSuccessors<'_> {
    type Item = (usize, f64);

    fn next(&mut self) -> Option<(usize, f64)> {
        match self {
            PostSuccessors::Factored { base, iter } => iter.next().map(|&(c, p)| (*base + c, p)),
            PostSuccessors::Explicit(iter) => iter.next().copied(),
        }
    }
}

impl TransitionKernel {
    /// Builds a kernel from hand-written rows: `rows[s][a]` is `None` when
    /// action `a` is infeasible in state `s`. The start distribution is state 0.
    pub fn explicit(objective: Objective, num_actions: usize, rows: Vec<Vec<Option<ExplicitRow>>>) -> Result<Self> {
        let num_states = rows.len();
        let mut post = vec![NO_POST; num_states * num_actions];
        let mut reward = vec![0.0; num_states * num_actions];
        let mut out_rows = Vec::new();
        for (s, actions) in rows.into_iter().enumerate() {
            if actions.len() != num_actions {
                return Err(Error::DimensionMismatch {
                    expected: num_actions,
                    found: actions.len(),
                });
            }
            if actions.iter().all(Option::is_none) {
                return Err(Error::InvalidConfig(format!("state {s} has no feasible action")));
            }
            for (a, row) in actions.into_iter().enumerate() {
                let Some(row) = row else { continue };
                let total: f64 = row.successors.iter().map(|&(_, p)| p).sum();
                if (total - 1.0).abs() > 1e-12 || row.successors.iter().any(|&(t, p)| t >= num_states || p < 0.0) {
                    return Err(Error::InvalidConfig(format!(
                        "row ({s}, {a}) is not a distribution over states"
                    )));
                }
                post[s * num_actions + a] = out_rows.len() as u32;
                reward[s * num_actions + a] = row.reward;
                out_rows.push(row.successors);
            }
        }
        Ok(TransitionKernel {
            objective,
            num_states,
            num_actions,
            post,
            reward,
            rows: Rows::Explicit(out_rows),
            start: vec![(0, 1.0)],
        })
    }

    pub fn with_start(mut self, start: Vec<(usize, f64)>) -> Self {
        self.start = start;
        self
    }

    pub fn objective(&self) -> Objective {
        self.objective
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn num_posts(&self) -> usize {
        match &self.rows {
            Rows::Factored { offset, .. } => offset.len(),
            Rows::Explicit(rows) => rows.len(),
        }
    }

    /// Distribution the chain starts from when averages depend on it.
    pub fn start(&self) -> &[(usize, f64)] {
        &self.start
    }

    pub fn is_feasible(&self, s: usize, a: usize) -> bool {
        a < self.num_actions && self.post[s * self.num_actions + a] != NO_POST
    }

    pub fn feasible_mask(&self, s: usize) -> ActionMask {
        let mut m = ActionMask::default();
        for a in 0..self.num_actions {
            if self.is_feasible(s, a) {
                m.insert(a);
            }
        }
        m
    }

    /// Cost (age objective) or reward (throughput objective) of a pair.
    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.num_actions + a]
    }

    pub fn post(&self, s: usize, a: usize) -> Option<usize> {
        let p = self.post[s * self.num_actions + a];
        (p != NO_POST).then_some(p as usize)
    }

    pub fn post_successors(&self, p: usize) -> PostSuccessors<'_> {
        match &self.rows {
            Rows::Factored { offset, channel } => PostSuccessors::Factored {
                base: offset[p],
                iter: channel.iter(),
            },
            Rows::Explicit(rows) => PostSuccessors::Explicit(rows[p].iter()),
        }
    }

    /// `(next state, probability)` pairs of a feasible pair; empty when infeasible.
    pub fn successors(&self, s: usize, a: usize) -> Vec<(usize, f64)> {
        match self.post(s, a) {
            Some(p) => self.post_successors(p).collect(),
            None => Vec::new(),
        }
    }

    /// `W[p] = Σ_{s'} P(s' | p) · values[s']` for every post-decision state.
    pub fn expected_post_values(&self, values: &[f64]) -> Vec<f64> {
        let compute = |p: usize| self.post_successors(p).map(|(t, prob)| prob * values[t]).sum::<f64>();
        let n = self.num_posts();
        if n * self.row_len_hint() > 1 << 16 {
            (0..n).into_par_iter().map(compute).collect()
        } else {
            (0..n).map(compute).collect()
        }
    }

    fn row_len_hint(&self) -> usize {
        match &self.rows {
            Rows::Factored { channel, .. } => channel.len(),
            Rows::Explicit(_) => 4,
        }
    }
}

/// Builds the transition kernel of the scheduling MDP.
///
/// Battery and age move deterministically given the action; next-slot channel
/// levels are independent of everything and distributed by their pmfs.
pub fn build_kernel(model: &SystemModel, indexer: &StateIndexer, objective: Objective) -> Result<TransitionKernel> {
    let n = model.num_sources();
    if indexer.num_sources() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: indexer.num_sources(),
        });
    }
    if objective == Objective::Throughput && (n != 1 || indexer.includes_aoi()) {
        return Err(Error::Scope(
            "the throughput MDP needs a single-source indexer without ages".into(),
        ));
    }
    if objective == Objective::Age && !indexer.includes_aoi() {
        return Err(Error::Scope("the age MDP needs an indexer that tracks ages".into()));
    }
    let pos = |i: usize, k: VarKind| indexer.var_position(i, k);
    let stride = |i: usize, k: VarKind| pos(i, k).map_or(0, |v| indexer.stride(v));

    // Channel draws: every combination of (g, h) over sources.
    let mut channel: Vec<(usize, f64)> = vec![(0, 1.0)];
    for i in 0..n {
        let (dq, uq) = (model.downlink_quantizer(i), model.uplink_quantizer(i));
        let mut pairs = Vec::new();
        for g in 1..=dq.num_levels() {
            if model.config().correlated_links {
                pairs.push(((g, g), dq.probability(g)));
            } else {
                for h in 1..=uq.num_levels() {
                    pairs.push(((g, h), dq.probability(g) * uq.probability(h)));
                }
            }
        }
        let (sg, sh) = (stride(i, VarKind::Downlink), stride(i, VarKind::Uplink));
        channel = channel
            .iter()
            .flat_map(|&(off, p)| {
                pairs
                    .iter()
                    .map(move |&((g, h), q)| (off + (g - 1) as usize * sg + (h - 1) as usize * sh, p * q))
            })
            .collect();
    }

    // Post-decision states: mixed radix over (b_i, A_i), last source fastest.
    let post_radix: Vec<(usize, usize)> = (0..n)
        .map(|i| {
            let a = if objective == Objective::Age {
                model.aoi_cap(i)
            } else {
                1
            };
            ((model.battery_quanta(i) + 1) as usize, a as usize)
        })
        .collect();
    let num_posts: usize = post_radix.iter().map(|&(b, a)| b * a).product();
    let mut offset = vec![0usize; num_posts];
    for (p, off) in offset.iter_mut().enumerate() {
        let mut rest = p;
        for i in (0..n).rev() {
            let (rb, ra) = post_radix[i];
            let a = rest % ra;
            rest /= ra;
            let b = rest % rb;
            rest /= rb;
            *off += b * stride(i, VarKind::Battery) + a * stride(i, VarKind::Aoi);
        }
    }
    let post_index = |state: &SystemState, action: Action| -> usize {
        let mut p = 0;
        for (i, s) in state.per_source.iter().enumerate() {
            let (rb, ra) = post_radix[i];
            let b = model.next_battery(i, s, action) as usize;
            let a = if objective == Objective::Age {
                (model.next_aoi(i, s, action) - 1) as usize
            } else {
                0
            };
            p = (p * rb + b) * ra + a;
        }
        p
    };

    let num_actions = model.num_actions();
    let num_states = indexer.num_states();
    let packet_bits = model.config().packet_bits;
    let per_state: Vec<(Vec<u32>, Vec<f64>)> = (0..num_states)
        .into_par_iter()
        .map(|s| {
            let state = indexer.decode(s);
            let cost = model.stage_cost(&state);
            let mut posts = vec![NO_POST; num_actions];
            let mut rewards = vec![0.0; num_actions];
            for a in 0..num_actions {
                let action = Action::from_index(a);
                if model.is_feasible(&state, action) {
                    posts[a] = post_index(&state, action) as u32;
                    rewards[a] = match objective {
                        Objective::Age => cost,
                        Objective::Throughput => {
                            if action == Action::Transmit(0) {
                                packet_bits
                            } else {
                                0.0
                            }
                        }
                    };
                }
            }
            (posts, rewards)
        })
        .collect();
    let mut post = Vec::with_capacity(num_states * num_actions);
    let mut reward = Vec::with_capacity(num_states * num_actions);
    for (p, r) in per_state {
        post.extend(p);
        reward.extend(r);
    }

    // Full batteries, unit ages, channel levels drawn from their pmfs.
    let full_post = post_radix.iter().fold(0, |p, &(rb, ra)| (p * rb + rb - 1) * ra);
    let start = channel.iter().map(|&(c, p)| (offset[full_post] + c, p)).collect();

    Ok(TransitionKernel {
        objective,
        num_states,
        num_actions,
        post,
        reward,
        rows: Rows::Factored { offset, channel },
        start,
    })
}
