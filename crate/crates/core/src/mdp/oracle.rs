use crate::env::Action;
use crate::error::{Error, Result};
use crate::mdp::{PolicyTable, TransitionKernel};

pub const ORACLE_MAX_STATES: usize = 12;
pub const ORACLE_MAX_ACTIONS: usize = 3;
/// Cap on the number of deterministic policies enumerated.
const ORACLE_MAX_POLICIES: usize = 1 << 20;

/// Solves `a x = b` in place by Gaussian elimination with partial pivoting.
#[allow(clippy::needless_range_loop)]
fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-14 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f != 0.0 {
                for k in col..n {
                    a[row][k] -= f * a[col][k];
                }
                b[row] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let tail: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - tail) / a[row][row];
    }
    Some(x)
}

/// Long-run average from the start distribution of the chain `p` with
/// per-state reward `r`, allowing several recurrent classes.
#[allow(clippy::needless_range_loop)]
fn chain_gain(p: &[Vec<f64>], r: &[f64], start: &[(usize, f64)]) -> f64 {
    let n = p.len();
    let mut reach: Vec<Vec<bool>> = (0..n)
        .map(|i| (0..n).map(|j| i == j || p[i][j] > 0.0).collect())
        .collect();
    for k in 0..n {
        for i in 0..n {
            if reach[i][k] {
                for j in 0..n {
                    if reach[k][j] {
                        reach[i][j] = true;
                    }
                }
            }
        }
    }
    let recurrent: Vec<bool> = (0..n).map(|i| (0..n).all(|j| !reach[i][j] || reach[j][i])).collect();

    let mut value = vec![0.0; n];
    let mut done = vec![false; n];
    for i in 0..n {
        if !recurrent[i] || done[i] {
            continue;
        }
        let class: Vec<usize> = (0..n).filter(|&j| reach[i][j]).collect();
        // π (P - I) = 0 with one balance equation replaced by Σ π = 1.
        let m = class.len();
        let mut a = vec![vec![0.0; m]; m];
        for (row, &to) in class.iter().enumerate() {
            for (col, &from) in class.iter().enumerate() {
                a[row][col] = p[from][to] - if from == to { 1.0 } else { 0.0 };
            }
        }
        let mut b = vec![0.0; m];
        a[m - 1] = vec![1.0; m];
        b[m - 1] = 1.0;
        let pi = solve_linear(a, b).expect("a closed class has a unique stationary law");
        let gain: f64 = class.iter().zip(&pi).map(|(&s, q)| q * r[s]).sum();
        for &s in &class {
            value[s] = gain;
            done[s] = true;
        }
    }

    let transient: Vec<usize> = (0..n).filter(|&i| !recurrent[i]).collect();
    if !transient.is_empty() {
        // v_T = Q v_T + P_TR v_R.
        let a = transient
            .iter()
            .map(|&i| {
                transient
                    .iter()
                    .map(|&j| if i == j { 1.0 } else { 0.0 } - p[i][j])
                    .collect()
            })
            .collect();
        let b = transient
            .iter()
            .map(|&i| (0..n).filter(|&j| recurrent[j]).map(|j| p[i][j] * value[j]).sum())
            .collect();
        let v = solve_linear(a, b).expect("transient states leave eventually");
        for (&i, x) in transient.iter().zip(v) {
            value[i] = x;
        }
    }
    start.iter().map(|&(s, q)| q * value[s]).sum()
}

/// Exhaustive search over deterministic stationary policies.
///
/// Each policy's average is computed from its stationary laws and absorption
/// probabilities, starting from the kernel's start distribution. Returns the
/// best gain and the first policy attaining it.
pub fn brute_force_oracle(kernel: &TransitionKernel) -> Result<(f64, PolicyTable)> {
    let (n, na) = (kernel.num_states(), kernel.num_actions());
    let too_large = || Error::OracleTooLarge { states: n, actions: na };
    if n > ORACLE_MAX_STATES || na > ORACLE_MAX_ACTIONS {
        return Err(too_large());
    }
    let options: Vec<Vec<usize>> = (0..n).map(|s| kernel.feasible_mask(s).iter().collect()).collect();
    let count = options
        .iter()
        .try_fold(1usize, |acc, o| acc.checked_mul(o.len()))
        .filter(|&c| c <= ORACLE_MAX_POLICIES)
        .ok_or_else(too_large)?;

    let objective = kernel.objective();
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut choice = vec![0usize; n];
    for _ in 0..count {
        let actions: Vec<usize> = (0..n).map(|s| options[s][choice[s]]).collect();
        let mut p = vec![vec![0.0; n]; n];
        for (s, &a) in actions.iter().enumerate() {
            for (t, q) in kernel.successors(s, a) {
                p[s][t] += q;
            }
        }
        let r: Vec<f64> = actions.iter().enumerate().map(|(s, &a)| kernel.reward(s, a)).collect();
        let gain = chain_gain(&p, &r, kernel.start());
        if best.as_ref().is_none_or(|(g, _)| objective.better(gain, *g)) {
            best = Some((gain, actions));
        }
        for s in 0..n {
            choice[s] += 1;
            if choice[s] < options[s].len() {
                break;
            }
            choice[s] = 0;
        }
    }
    let (gain, actions) = best.expect("at least one policy");
    Ok((
        gain,
        PolicyTable {
            actions: actions.into_iter().map(Action::from_index).collect(),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::presets;
    use crate::env::SystemModel;
    use crate::mdp::{build_kernel, enumerate_states, solve_rvia, ExplicitRow, Objective, RviaOptions};

    fn row(reward: f64, successors: Vec<(usize, f64)>) -> Option<ExplicitRow> {
        Some(ExplicitRow { reward, successors })
    }

    #[test]
    fn single_state_takes_cheaper_action() {
        let k = TransitionKernel::explicit(
            Objective::Age,
            2,
            vec![vec![row(3.0, vec![(0, 1.0)]), row(5.0, vec![(0, 1.0)])]],
        )
        .unwrap();
        let (g, policy) = brute_force_oracle(&k).unwrap();
        assert_eq!(g, 3.0);
        assert_eq!(policy.actions, vec![Action::Harvest]);
    }

    #[test]
    fn stationary_law_of_two_state_chain() {
        // Stationary law (2/3, 1/3) with costs 1 and 4 gives 2.
        let k = TransitionKernel::explicit(
            Objective::Age,
            1,
            vec![vec![row(1.0, vec![(0, 0.5), (1, 0.5)])], vec![row(4.0, vec![(0, 1.0)])]],
        )
        .unwrap();
        assert!((brute_force_oracle(&k).unwrap().0 - 2.0).abs() < 1e-12);
    }

    #[test]
    fn start_distribution_selects_recurrent_class() {
        // State 0 splits evenly between absorbing states with costs 2 and 6.
        let k = TransitionKernel::explicit(
            Objective::Age,
            1,
            vec![
                vec![row(0.0, vec![(1, 0.5), (2, 0.5)])],
                vec![row(2.0, vec![(1, 1.0)])],
                vec![row(6.0, vec![(2, 1.0)])],
            ],
        )
        .unwrap();
        assert!((brute_force_oracle(&k).unwrap().0 - 4.0).abs() < 1e-12);
        let k = k.with_start(vec![(2, 1.0)]);
        assert!((brute_force_oracle(&k).unwrap().0 - 6.0).abs() < 1e-12);
    }

    #[test]
    fn matches_rvia_on_a_tiny_scheduling_instance() {
        let mut c = presets::single_source_learning();
        c.sources[0].aoi_cap = 2;
        c.sources[0].battery_quanta = 2;
        c.sources[0].link.levels_downlink = 2;
        c.sources[0].link.levels_uplink = 1;
        let m = SystemModel::new(c).unwrap();
        for objective in [Objective::Age, Objective::Throughput] {
            let ix = enumerate_states(&m, objective, 100).unwrap();
            let k = build_kernel(&m, &ix, objective).unwrap();
            assert!(k.num_states() <= ORACLE_MAX_STATES);
            let (g, _) = brute_force_oracle(&k).unwrap();
            let sol = solve_rvia(&k, &RviaOptions::default()).unwrap();
            assert!(
                (g - sol.values.gain).abs() <= 1e-6 * g.abs().max(1.0),
                "{g} vs {}",
                sol.values.gain
            );
        }
    }

    #[test]
    fn free_transmission_delivers_every_slot() {
        let mut c = presets::single_source_learning();
        c.sources[0].battery_quanta = 1;
        c.sources[0].link.levels_downlink = 2;
        c.sources[0].link.levels_uplink = 2;
        let m = SystemModel::new(c)
            .unwrap()
            .with_energy_tables(vec![vec![1; 2]], vec![vec![0; 2]])
            .unwrap();
        let ix = enumerate_states(&m, Objective::Throughput, 100).unwrap();
        let k = build_kernel(&m, &ix, Objective::Throughput).unwrap();
        let (g, policy) = brute_force_oracle(&k).unwrap();
        assert!((g - 12e6).abs() < 1e-6);
        for &(s, _) in k.start() {
            assert_eq!(policy.action(s), Action::Transmit(0));
        }
    }

    #[test]
    fn rejects_large_instances() {
        let m = SystemModel::new(presets::single_source_learning()).unwrap();
        let ix = enumerate_states(&m, Objective::Age, 1000).unwrap();
        let k = build_kernel(&m, &ix, Objective::Age).unwrap();
        assert!(matches!(
            brute_force_oracle(&k),
            Err(Error::OracleTooLarge { states: 256, .. })
        ));
    }
}
