mod common;

use common::{tiny_birth_death, total_variation, JointChain};
use mcdemod::demod::{run_filter, FilterOptions, ReceiverParams};
use mcdemod::exact_filter::{
    optimal_demodulate, pilot_caps, ExactFilter, FilterConfig, Hypothesis, Route, StateSpace,
};
use mcdemod::model::{build_model, catalog};
use mcdemod::seeds::SeedStream;
use mcdemod::ssa::{extract_binding_history, simulate, BindKind, BindingHistory};

const W3: f64 = 1.0 / 27.0;

#[test]
fn capped_filter_matches_joint_chain_forward_algorithm() {
    let spec = tiny_birth_death(10.0, 3.0, 1, 0.05);
    let model = build_model(&spec, 0).unwrap();
    let space = StateSpace::new(&model, &[5]).unwrap();
    let chain = JointChain {
        birth: 10.0,
        death: 3.0,
        lambda: 0.05 / W3,
        mu: 1.0,
        receptors: 1,
        cap: 5,
    };
    let events = [(0.0312, BindKind::Bind), (0.0877, BindKind::Unbind), (0.1503, BindKind::Bind)];
    let oracle = chain.forward(&events, 0.2, 1e-4);
    let mut f = ExactFilter::new(&model, &space, FilterConfig::default()).unwrap();
    for (point, ev) in oracle.iter().zip(events.iter().map(Some).chain([None])) {
        f.propagate(point.t - f.time()).unwrap();
        match ev.map(|e| e.1) {
            Some(BindKind::Bind) => f.apply_bind().unwrap(),
            Some(BindKind::Unbind) => f.apply_unbind().unwrap(),
            None => {}
        }
        assert!(total_variation(f.posterior(), &point.posterior) < 1e-9);
        assert!((f.log_likelihood() - point.log_likelihood).abs() < 1e-9);
    }
}

#[test]
fn likelihoods_of_short_event_sequences_sum_below_one() {
    // Horizon 0.1 s, M = 1: sum the densities of "no event", "one binding
    // at t" and "binding at t1, unbinding at t2" over a quadrature grid.
    let spec = tiny_birth_death(10.0, 3.0, 1, 0.05);
    let model = build_model(&spec, 0).unwrap();
    let space = StateSpace::new(&model, &[3]).unwrap();
    let horizon = 0.1;
    let lik = |events: Vec<(f64, BindKind)>| {
        let h = BindingHistory {
            events,
            receptors: 1,
            horizon,
            initial_bound: 0,
        };
        let run = ExactFilter::new(&model, &space, FilterConfig::default())
            .unwrap()
            .run(&h, &[horizon])
            .unwrap();
        run.log_likelihood_at(horizon).unwrap().exp()
    };
    let n = 40;
    let dt = horizon / n as f64;
    let p0 = lik(vec![]);
    let mut p1 = 0.0;
    let mut p2 = 0.0;
    for i in 0..n {
        let t1 = (i as f64 + 0.5) * dt;
        p1 += lik(vec![(t1, BindKind::Bind)]) * dt;
        for j in (i + 1)..n {
            let t2 = (j as f64 + 0.5) * dt;
            p2 += lik(vec![(t1, BindKind::Bind), (t2, BindKind::Unbind)]) * dt * dt;
        }
    }
    assert!(p0 < 1.0);
    assert!(p0 + p1 > p0 && p0 + p1 + p2 > p0 + p1);
    assert!(p0 + p1 + p2 <= 1.0 + 1e-4, "{}", p0 + p1 + p2);
    // The remaining mass is sequences with at least two bindings, which
    // need an unbinding in between; it is tiny over 0.1 s.
    assert!(p0 + p1 + p2 > 0.999, "{}", p0 + p1 + p2);
}

fn line_setup(horizon: f64) -> (mcdemod::model::Model, mcdemod::model::Model, Vec<u32>) {
    let spec = catalog::line_3x1x1(&[10.0, 50.0], 10);
    let m0 = build_model(&spec, 0).unwrap();
    let m1 = build_model(&spec, 1).unwrap();
    let caps = pilot_caps(&[&m0, &m1], horizon, 100, SeedStream::new(7, 3)).unwrap();
    (m0, m1, caps)
}

#[test]
fn both_exact_routes_agree_on_the_three_voxel_line() {
    let horizon = 0.5;
    let (m0, m1, caps) = line_setup(horizon);
    let s0 = StateSpace::new(&m0, &caps).unwrap();
    let s1 = StateSpace::new(&m1, &caps).unwrap();
    let hyps = [
        Hypothesis { model: &m0, space: Some(&s0) },
        Hypothesis { model: &m1, space: Some(&s1) },
    ];
    let times = [0.1, 0.25, 0.5];
    for seed in 0..2 {
        let tr = simulate(&m1, horizon, 40 + seed).unwrap();
        let h = extract_binding_history(&tr);
        let indep = FilterConfig { route: Route::IndependentMolecules, ..FilterConfig::default() };
        let capped = FilterConfig { route: Route::CappedSpace, ..FilterConfig::default() };
        let a = optimal_demodulate(&h, &hyps, &[0.5, 0.5], &times, indep).unwrap();
        let b = optimal_demodulate(&h, &hyps, &[0.5, 0.5], &times, capped).unwrap();
        assert!(!a.unreliable && !b.unreliable);
        for k in 0..2 {
            for (x, y) in a.runs[k].points.iter().zip(&b.runs[k].points) {
                assert_eq!(x.0, y.0);
                assert!((x.1 - y.1).abs() < 1e-8, "L at {}: {} vs {}", x.0, x.1, y.1);
            }
            for (x, y) in a.runs[k].receiver_mean.iter().zip(&b.runs[k].receiver_mean) {
                assert!((x.1 - y.1).abs() < 1e-8, "E at {}: {} vs {}", x.0, x.1, y.1);
            }
        }
    }
}

#[test]
fn substituting_the_exact_mean_into_the_simple_filter_reproduces_the_optimal_differences() {
    let horizon = 1.8;
    let spec = catalog::line_3x1x1(&[10.0, 50.0], 10);
    let models = [build_model(&spec, 0).unwrap(), build_model(&spec, 1).unwrap()];
    let rx = ReceiverParams {
        binding_constant: models[0].binding_constant(),
        receptors: 10,
    };
    let cfg = FilterConfig { trace_step: Some(0.001), ..FilterConfig::default() };
    let times = [1.0, 1.4, 1.8];
    for seed in 0..4 {
        let tr = simulate(&models[(seed % 2) as usize], horizon, 500 + seed).unwrap();
        let h = extract_binding_history(&tr);
        let hyps: Vec<_> = models.iter().map(|m| Hypothesis { model: m, space: None }).collect();
        let opt = optimal_demodulate(&h, &hyps, &[0.5, 0.5], &times, cfg).unwrap();
        let z: Vec<_> = opt
            .runs
            .iter()
            .map(|r| {
                let trace = r.trace.as_ref().unwrap();
                run_filter(&h, trace, rx, 0.5, &times, FilterOptions::default()).unwrap()
            })
            .collect();
        for &t in &times {
            let sub = z[1].at(t).unwrap() - z[0].at(t).unwrap();
            let exact = opt.differences_at(t)[1];
            assert!((sub - exact).abs() < 1e-6, "t = {t}: {sub} vs {exact}");
        }
    }
}

#[test]
fn identical_hypotheses_tie() {
    let spec = catalog::line_3x1x1(&[10.0, 10.0], 10);
    let m0 = build_model(&spec, 0).unwrap();
    let m1 = build_model(&spec, 1).unwrap();
    let tr = simulate(&m0, 1.0, 3).unwrap();
    let h = extract_binding_history(&tr);
    let hyps = [Hypothesis { model: &m0, space: None }, Hypothesis { model: &m1, space: None }];
    let out = optimal_demodulate(&h, &hyps, &[0.5, 0.5], &[1.0], FilterConfig::default()).unwrap();
    assert_eq!(out.differences_at(1.0)[1], 0.0);
    assert!(out.decisions[0].tie);
}

#[test]
fn unbinding_keeps_the_capped_posterior_normalized() {
    let (m0, _, caps) = line_setup(1.0);
    let space = StateSpace::new(&m0, &caps).unwrap();
    let tr = simulate(&m0, 1.0, 11).unwrap();
    let h = extract_binding_history(&tr);
    let mut f = ExactFilter::new(&m0, &space, FilterConfig::default()).unwrap();
    for &(t, kind) in &h.events {
        f.propagate(t - f.time()).unwrap();
        match kind {
            BindKind::Bind => f.apply_bind().unwrap(),
            BindKind::Unbind => {
                let before: f64 = f.posterior().iter().sum();
                f.apply_unbind().unwrap();
                let after: f64 = f.posterior().iter().sum();
                assert_eq!(before, after);
            }
        }
        assert!((f.posterior().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(f.posterior().iter().all(|&p| p >= 0.0));
    }
}
