use mcdemod::model::{build_model, catalog, GridSpec, InitialState, VoxelCount, VoxelRef};
use mcdemod::ssa::{extract_binding_history, simulate, SimOptions, Simulator};
use proptest::prelude::*;

#[test]
fn free_walk_on_three_voxels_spreads_uniformly() {
    let mut spec = catalog::line_3x1x1(&[0.0, 0.0], 1);
    spec.receiver = None;
    spec.initial = vec![InitialState {
        signal: vec![VoxelCount { voxel: VoxelRef::Index(1), count: 100 }],
        ..Default::default()
    }];
    let model = build_model(&spec, 0).unwrap();
    let mut sim = Simulator::new(&model, 11, SimOptions::default());
    sim.run_until(50.0, |_, _, _| {}).unwrap();
    // Time-weighted occupancy over [50, 100].
    let mut acc = [0.0f64; 3];
    let mut last_t = 50.0;
    let mut last = sim.state().voxel_counts().to_vec();
    sim.run_until(100.0, |t, _, s| {
        for v in 0..3 {
            acc[v] += last[v] as f64 * (t - last_t);
        }
        last_t = t;
        last = s.voxel_counts().to_vec();
    })
    .unwrap();
    for v in 0..3 {
        acc[v] += last[v] as f64 * (100.0 - last_t);
        let mean = acc[v] / 50.0;
        assert!((mean - 100.0 / 3.0).abs() < 1.0, "voxel {v}: {mean}");
    }
}

#[test]
fn clamped_single_receptor_is_bound_a_fraction_lambda_c_over_lambda_c_plus_mu() {
    let c = 5u32;
    let mut spec = catalog::line_3x1x1(&[0.0, 0.0], 1);
    spec.grid = GridSpec::new(1, 1, 1, catalog::VOXEL_WIDTH, catalog::DIFFUSION_COEFFICIENT);
    spec.transmitter.voxel = VoxelRef::Index(1);
    spec.receiver.as_mut().unwrap().voxel = VoxelRef::Index(1);
    spec.initial = vec![InitialState {
        signal: vec![VoxelCount { voxel: VoxelRef::Index(1), count: c }],
        ..Default::default()
    }];
    let model = build_model(&spec, 0).unwrap();
    let lambda = catalog::BINDING_RATE_CONSTANT / catalog::VOXEL_WIDTH.powi(3);
    let expected = lambda * c as f64 / (lambda * c as f64 + catalog::UNBINDING_RATE);

    let horizon = 4000.0;
    let opts = SimOptions { clamp_receiver: true, ..Default::default() };
    let mut sim = Simulator::new(&model, 3, opts);
    let (mut bound_time, mut last_t, mut last_b) = (0.0, 0.0, 0u32);
    sim.run_until(horizon, |t, _, s| {
        bound_time += last_b as f64 * (t - last_t);
        last_t = t;
        last_b = s.bound();
    })
    .unwrap();
    bound_time += last_b as f64 * (horizon - last_t);
    let frac = bound_time / horizon;
    // Roughly 1600 on/off cycles; the standard error is near 0.012.
    assert!((frac - expected).abs() < 0.04, "{frac} vs {expected}");
}

#[test]
fn identical_seeds_give_identical_histories() {
    let model = build_model(&catalog::box_6x6x3(&[40.0, 80.0], 50), 1).unwrap();
    let a = simulate(&model, 1.0, 99).unwrap();
    let b = simulate(&model, 1.0, 99).unwrap();
    assert_eq!(extract_binding_history(&a), extract_binding_history(&b));
    assert_eq!(a.final_state, b.final_state);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn history_replay_ends_at_the_final_bound_count(
        seed in any::<u64>(),
        receptors in 1u32..6,
        symbol in 0usize..2,
    ) {
        let model = build_model(&catalog::line_3x1x1(&[10.0, 50.0], receptors), symbol).unwrap();
        let traj = simulate(&model, 1.5, seed).unwrap();
        let h = extract_binding_history(&traj);
        prop_assert!(h.validate().is_ok());
        prop_assert_eq!(h.bound_at(1.5), traj.final_state.bound());
        prop_assert_eq!(traj.replay(&model).unwrap(), traj.final_state.clone());
    }
}
