//! CSV files for policies, value tables and learning traces.

use std::path::Path;

use crate::dqn::DqnTracePoint;
use crate::env::Action;
use crate::error::{Error, Result};
use crate::mdp::{PolicyTable, StateIndexer, VarKind};

/// Column names of a policy table: `b_i`, then `A_i` (age MDP only), then
/// `g_i`, then `h_i` for every source, then `action` and `value`.
pub fn policy_header(indexer: &StateIndexer) -> Vec<String> {
    let n = indexer.num_sources();
    let mut kinds = vec![VarKind::Battery];
    if indexer.includes_aoi() {
        kinds.push(VarKind::Aoi);
    }
    kinds.extend([VarKind::Downlink, VarKind::Uplink]);
    let mut header: Vec<String> = kinds
        .iter()
        .flat_map(|k| (1..=n).map(move |i| format!("{}_{i}", k.label())))
        .collect();
    header.push("action".into());
    header.push("value".into());
    header
}

fn state_fields(indexer: &StateIndexer, s: usize) -> Vec<u32> {
    let st = indexer.decode(s);
    let src = &st.per_source;
    let mut out: Vec<u32> = src.iter().map(|x| x.battery).collect();
    if indexer.includes_aoi() {
        out.extend(src.iter().map(|x| x.aoi));
    }
    out.extend(src.iter().map(|x| x.g_level));
    out.extend(src.iter().map(|x| x.h_level));
    out
}

/// Writes one row per state. `values` may be omitted (empty `value` column).
pub fn write_policy_csv(
    path: impl AsRef<Path>,
    indexer: &StateIndexer,
    policy: &PolicyTable,
    values: Option<&[f64]>,
) -> Result<()> {
    if policy.len() != indexer.num_states() || values.is_some_and(|v| v.len() != indexer.num_states()) {
        return Err(Error::DimensionMismatch {
            expected: indexer.num_states(),
            found: policy.len(),
        });
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(policy_header(indexer))?;
    let mut record = Vec::new();
    for s in 0..indexer.num_states() {
        record.clear();
        record.extend(state_fields(indexer, s).iter().map(u32::to_string));
        record.push(policy.action(s).to_string());
        record.push(values.map_or(String::new(), |v| format!("{:.15e}", v[s])));
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a table written by [`write_policy_csv`] for the same state space.
/// Every state must appear exactly once; values are returned when present
/// on every row.
pub fn read_policy_csv(path: impl AsRef<Path>, indexer: &StateIndexer) -> Result<(PolicyTable, Option<Vec<f64>>)> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let expected = policy_header(indexer);
    if header != expected {
        return Err(Error::Parse(format!(
            "policy columns {header:?} do not match the configured state space {expected:?}"
        )));
    }
    let n = indexer.num_sources();
    let width = expected.len() - 2;
    let mut actions: Vec<Option<Action>> = vec![None; indexer.num_states()];
    let mut values = vec![f64::NAN; indexer.num_states()];
    let mut all_values = true;
    for (line, row) in r.records().enumerate() {
        let row = row?;
        let nums: Vec<u32> = (0..width)
            .map(|k| {
                row[k]
                    .parse()
                    .map_err(|_| Error::Parse(format!("row {}: bad {} {:?}", line + 1, expected[k], &row[k])))
            })
            .collect::<Result<_>>()?;
        let mut st = indexer.decode(0);
        let groups: Vec<&[u32]> = nums.chunks(n).collect();
        let ones = vec![1; n];
        let (b, a, g, h) = if indexer.includes_aoi() {
            (groups[0], groups[1], groups[2], groups[3])
        } else {
            (groups[0], &ones[..], groups[1], groups[2])
        };
        for (i, src) in st.per_source.iter_mut().enumerate() {
            let d = indexer.dims()[i];
            let in_range = b[i] < d.battery_levels
                && (1..=d.aoi_levels).contains(&a[i])
                && (1..=d.g_levels).contains(&g[i])
                && (1..=d.h_levels).contains(&h[i]);
            if !in_range {
                return Err(Error::Parse(format!("row {}: state out of range", line + 1)));
            }
            (src.battery, src.aoi, src.g_level, src.h_level) = (b[i], a[i], g[i], h[i]);
        }
        let s = indexer.encode(&st);
        if actions[s].is_some() {
            return Err(Error::Parse(format!("row {}: duplicate state {st}", line + 1)));
        }
        actions[s] = Some(Action::parse(&row[width])?);
        match row[width + 1].trim() {
            "" => all_values = false,
            v => {
                values[s] = v
                    .parse()
                    .map_err(|_| Error::Parse(format!("row {}: bad value {v:?}", line + 1)))?
            }
        }
    }
    let actions = actions
        .into_iter()
        .enumerate()
        .map(|(s, a)| a.ok_or_else(|| Error::Parse(format!("state {} missing", indexer.decode(s)))))
        .collect::<Result<_>>()?;
    Ok((PolicyTable { actions }, all_values.then_some(values)))
}

fn keep(k: usize, len: usize, every: usize) -> bool {
    k.is_multiple_of(every.max(1)) || k + 1 == len
}

/// `slot,gain_estimate`, keeping every `every`-th slot and the last one.
pub fn write_gain_trace_csv(path: impl AsRef<Path>, trace: &[f64], every: usize) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["slot", "gain_estimate"])?;
    for (k, g) in trace.iter().enumerate().filter(|(k, _)| keep(*k, trace.len(), every)) {
        w.write_record([k.to_string(), g.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// `slot,gain_estimate,epsilon,loss`, thinned like [`write_gain_trace_csv`].
/// The loss is empty before training starts.
pub fn write_dqn_trace_csv(path: impl AsRef<Path>, trace: &[DqnTracePoint], every: usize) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["slot", "gain_estimate", "epsilon", "loss"])?;
    for (_, p) in trace.iter().enumerate().filter(|(k, _)| keep(*k, trace.len(), every)) {
        w.write_record([
            p.slot.to_string(),
            p.gain_estimate.to_string(),
            p.epsilon.to_string(),
            p.loss.map_or(String::new(), |l| l.to_string()),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::presets;
    use crate::env::SystemModel;
    use crate::mdp::{enumerate_states, Objective, DEFAULT_STATE_LIMIT};

    #[test]
    fn headers() {
        let m = SystemModel::new(presets::two_source_policy_map()).unwrap();
        let mut c = m.config().clone();
        for s in &mut c.sources {
            s.aoi_cap = 2;
        }
        let m = SystemModel::new(c).unwrap();
        let ix = enumerate_states(&m, Objective::Age, DEFAULT_STATE_LIMIT).unwrap();
        assert_eq!(
            policy_header(&ix).join(","),
            "b_1,b_2,A_1,A_2,g_1,g_2,h_1,h_2,action,value"
        );
        let m = SystemModel::new(presets::single_source_learning()).unwrap();
        let ix = enumerate_states(&m, Objective::Throughput, DEFAULT_STATE_LIMIT).unwrap();
        assert_eq!(policy_header(&ix).join(","), "b_1,g_1,h_1,action,value");
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = SystemModel::new(presets::single_source_learning()).unwrap();
        for obj in [Objective::Age, Objective::Throughput] {
            let ix = enumerate_states(&m, obj, DEFAULT_STATE_LIMIT).unwrap();
            let policy = PolicyTable {
                actions: (0..ix.num_states())
                    .map(|s| {
                        if m.is_feasible(&ix.decode(s), Action::Transmit(0)) && s % 3 == 0 {
                            Action::Transmit(0)
                        } else {
                            Action::Harvest
                        }
                    })
                    .collect(),
            };
            let values: Vec<f64> = (0..ix.num_states()).map(|s| (s as f64).sqrt() - 3.0).collect();
            let path = dir.path().join("p.csv");
            write_policy_csv(&path, &ix, &policy, Some(&values)).unwrap();
            let (p, v) = read_policy_csv(&path, &ix).unwrap();
            assert_eq!(p, policy);
            let v = v.unwrap();
            assert!(v
                .iter()
                .zip(&values)
                .all(|(a, b)| (a - b).abs() <= 1e-14 * b.abs().max(1.0)));

            write_policy_csv(&path, &ix, &policy, None).unwrap();
            assert_eq!(read_policy_csv(&path, &ix).unwrap(), (policy.clone(), None));
        }
    }

    #[test]
    fn traces_are_thinned_but_keep_the_last_slot() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let trace: Vec<f64> = (0..25).map(f64::from).collect();
        write_gain_trace_csv(&path, &trace, 10).unwrap();
        let slots: Vec<String> = std::fs::read_to_string(&path)
            .unwrap()
            .lines()
            .skip(1)
            .map(|l| l.split(',').next().unwrap().to_string())
            .collect();
        assert_eq!(slots, ["0", "10", "20", "24"]);
    }

    #[test]
    fn mismatched_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let m = SystemModel::new(presets::single_source_learning()).unwrap();
        let age = enumerate_states(&m, Objective::Age, DEFAULT_STATE_LIMIT).unwrap();
        let thr = enumerate_states(&m, Objective::Throughput, DEFAULT_STATE_LIMIT).unwrap();
        let path = dir.path().join("p.csv");
        write_policy_csv(&path, &thr, &PolicyTable::constant(64, Action::Harvest), None).unwrap();
        assert!(matches!(read_policy_csv(&path, &age), Err(Error::Parse(_))));

        let text = std::fs::read_to_string(&path).unwrap();
        let truncated: String = text.lines().take(10).map(|l| format!("{l}\n")).collect();
        std::fs::write(&path, truncated).unwrap();
        assert!(matches!(read_policy_csv(&path, &thr), Err(Error::Parse(_))));
    }
}
