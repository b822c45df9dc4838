//! Structure of exact solutions on the single-source configs, and the
//! direction of exact parameter sweeps.

use proptest::prelude::*;

use aoi_core::config::presets::{self, SourceKnobs};
use aoi_core::env::SystemModel;
use aoi_core::experiment::{solve_exact, SweepParam};
use aoi_core::mdp::{Objective, RviaOptions};
use aoi_core::verify::{
    check_threshold_aoi, check_threshold_single_source, check_value_monotone_age, failures, VALUE_TOLERANCE,
};

fn gain(config: aoi_core::config::SystemConfig) -> f64 {
    let m = SystemModel::new(config).unwrap();
    solve_exact(&m, Objective::Age, &RviaOptions::default())
        .unwrap()
        .solution
        .values
        .gain
}

#[test]
fn single_source_solutions_have_the_expected_structure() {
    for config in [presets::single_source_learning(), presets::single_source_policy_map()] {
        let m = SystemModel::new(config).unwrap();
        let age = solve_exact(&m, Objective::Age, &RviaOptions::default()).unwrap();
        let v = check_value_monotone_age(&age.indexer, &age.solution.values.values, VALUE_TOLERANCE).unwrap();
        assert_eq!(failures(&v), 0, "{v:?}");
        assert!(check_threshold_aoi(&age.indexer, &age.solution.policy)
            .unwrap()
            .is_empty());
        let v = check_threshold_single_source(&age.indexer, &age.solution.policy, &m, Objective::Age).unwrap();
        assert!(v.is_empty(), "{v:?}");

        let thr = solve_exact(&m, Objective::Throughput, &RviaOptions::default()).unwrap();
        let v = check_threshold_single_source(&thr.indexer, &thr.solution.policy, &m, Objective::Throughput).unwrap();
        assert!(v.is_empty(), "{v:?}");
    }
}

fn small(distance_m: f64, packet_mbits: f64) -> aoi_core::config::SystemConfig {
    presets::build(
        &[SourceKnobs {
            distance_m,
            battery_capacity_mj: 0.3,
            battery_quanta: 3,
            aoi_cap: 4,
            levels: 3,
        }],
        packet_mbits,
    )
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn larger_batteries_never_hurt(d in 15.0f64..45.0, s in 4.0f64..20.0, lo in 1u32..6, extra in 1u32..4) {
        let c = small(d, s);
        let a = gain(SweepParam::BatteryCapacity.apply(&c, 0.1 * lo as f64).unwrap());
        let b = gain(SweepParam::BatteryCapacity.apply(&c, 0.1 * (lo + extra) as f64).unwrap());
        prop_assert!(b <= a + 1e-7, "{a} -> {b}");
    }

    #[test]
    fn larger_packets_never_help(d in 15.0f64..45.0, s in 4.0f64..20.0, extra in 0.5f64..8.0) {
        let c = small(d, s);
        let a = gain(c.clone());
        let b = gain(SweepParam::PacketBits.apply(&c, s + extra).unwrap());
        prop_assert!(b >= a - 1e-7, "{a} -> {b}");
    }
}
