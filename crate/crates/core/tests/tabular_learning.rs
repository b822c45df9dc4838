use aoi_core::config::presets;
use aoi_core::env::SystemModel;
use aoi_core::mdp::{
    build_kernel, enumerate_states, evaluate_policy, solve_rvia, Objective, RviaOptions, DEFAULT_STATE_LIMIT,
};
use aoi_core::tabular::{train_tabular, LearningSchedule};

#[test]
fn greedy_policy_after_a_million_slots_is_near_optimal() {
    let model = SystemModel::new(presets::single_source_learning()).unwrap();
    let ix = enumerate_states(&model, Objective::Age, DEFAULT_STATE_LIMIT).unwrap();
    let kernel = build_kernel(&model, &ix, Objective::Age).unwrap();
    let optimal = solve_rvia(&kernel, &RviaOptions::default()).unwrap().values.gain;
    for seed in [1, 2, 3] {
        let run = train_tabular(&model, &LearningSchedule::default(), 1_000_000, seed).unwrap();
        let learned = evaluate_policy(&kernel, &run.policy).unwrap();
        let estimate = *run.gain_trace.last().unwrap();
        eprintln!("seed {seed}: optimal {optimal:.5} learned {learned:.5} estimate {estimate:.5}");
        assert!(learned <= 1.05 * optimal);
        // The running estimate stays within the range of possible averages.
        let cap = model.aoi_cap(0) as f64;
        assert!(run.gain_trace[100_000..]
            .iter()
            .all(|&g| (1.0 - 0.5..=cap + 0.5).contains(&g)));
    }
}
