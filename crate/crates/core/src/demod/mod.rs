//! The sub-optimal MAP demodulator: one log-posterior accumulator Z_s per
//! symbol, driven by the binding history and an internal model of the mean
//! receiver-voxel count.
//!
//! Z_s(t) = log prior(s) + Σ_{binds t_k ≤ t} log σ_s(t_k) − λ ∫₀ᵗ (M − b) σ_s dτ
//!
//! The symbol-independent part of the true log-posterior is not computed,
//! so Z values are log-posteriors up to a constant shared by all symbols.
//! Only differences and the argmax are meaningful.

mod isi;

use thiserror::Error;

use crate::internal_model::InternalModel;
use crate::ssa::{BindKind, BindingHistory};

pub use isi::{
    isi_decode, sequence_schedule, IsiConfig, IsiMode, IsiModels, IsiResult, SequenceModel,
    Shifted, Superposed,
};

/// Floor applied to σ inside the logarithm at binding events.
pub const DEFAULT_SIGMA_MIN: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DemodError {
    #[error("time {time} is outside the internal model's range [0, {span}]")]
    Coverage { time: f64, span: f64 },
    #[error("configuration error: {0}")]
    Config(String),
}

/// A mean receiver-count function usable as an internal model.
pub trait RateModel {
    /// Value at `t`. At a discontinuity this is the left limit.
    fn value(&self, t: f64) -> f64;
    /// ∫ₐᵇ of the function.
    fn integral(&self, a: f64, b: f64) -> f64;
    /// Largest time the function is defined for.
    fn span(&self) -> f64;
}

impl RateModel for InternalModel {
    fn value(&self, t: f64) -> f64 {
        InternalModel::value(self, t)
    }
    fn integral(&self, a: f64, b: f64) -> f64 {
        InternalModel::integral(self, a, b)
    }
    fn span(&self) -> f64 {
        self.horizon()
    }
}

impl<T: RateModel + ?Sized> RateModel for &T {
    fn value(&self, t: f64) -> f64 {
        (**self).value(t)
    }
    fn integral(&self, a: f64, b: f64) -> f64 {
        (**self).integral(a, b)
    }
    fn span(&self) -> f64 {
        (**self).span()
    }
}

/// Receiver parameters the filter needs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReceiverParams {
    /// λ = λ̃ / W³.
    pub binding_constant: f64,
    pub receptors: u32,
}

#[derive(Clone, Copy)]
pub struct FilterOptions<'a> {
    pub sigma_min: f64,
    /// Integral over `[a, b]` of an extra drift subtracted from Z. Used to
    /// check that terms common to all symbols cannot change decisions.
    pub common_drift: Option<&'a dyn Fn(f64, f64) -> f64>,
}

impl Default for FilterOptions<'_> {
    fn default() -> Self {
        FilterOptions {
            sigma_min: DEFAULT_SIGMA_MIN,
            common_drift: None,
        }
    }
}

/// Z for one symbol at the recorded times.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterTrace {
    /// `(t, Z(t))` at every event and every requested time, in time order.
    /// At an event time the value includes that event's jump.
    pub points: Vec<(f64, f64)>,
    /// Number of binding jumps applied.
    pub jumps: usize,
}

impl FilterTrace {
    /// Z at the recorded time `t` (exact match), if present.
    pub fn at(&self, t: f64) -> Option<f64> {
        self.points.iter().rev().find(|p| p.0 == t).map(|p| p.1)
    }
}

/// Runs the filter for one symbol and records Z at all events and at
/// `record_times` (which need not be sorted).
pub fn run_filter(
    history: &BindingHistory,
    sigma: &dyn RateModel,
    rx: ReceiverParams,
    prior: f64,
    record_times: &[f64],
    options: FilterOptions<'_>,
) -> Result<FilterTrace, DemodError> {
    if history.receptors != rx.receptors {
        return Err(DemodError::Config(format!(
            "history has {} receptors, receiver has {}",
            history.receptors, rx.receptors
        )));
    }
    let span = sigma.span();
    let tol = 1e-9 * (1.0 + span);
    let mut times: Vec<f64> = record_times.to_vec();
    times.sort_by(f64::total_cmp);
    for &t in times.iter().chain(history.events.iter().map(|(t, _)| t)) {
        if t > span + tol || t < 0.0 {
            return Err(DemodError::Coverage { time: t, span });
        }
    }

    let m = rx.receptors as f64;
    let mut z = prior.ln();
    let mut b = history.initial_bound as f64;
    let mut now = 0.0;
    let mut jumps = 0;
    let mut points = Vec::with_capacity(history.events.len() + times.len());
    let drift = |z: &mut f64, a: f64, c: f64, b: f64| {
        if c > a {
            *z -= rx.binding_constant * (m - b) * sigma.integral(a, c);
            if let Some(extra) = options.common_drift {
                *z -= extra(a, c);
            }
        }
    };

    let mut ti = 0;
    for &(te, kind) in &history.events {
        while ti < times.len() && times[ti] < te {
            drift(&mut z, now, times[ti], b);
            now = times[ti];
            points.push((now, z));
            ti += 1;
        }
        drift(&mut z, now, te, b);
        now = te;
        match kind {
            BindKind::Bind => {
                z += sigma.value(te).max(options.sigma_min).ln();
                jumps += 1;
                b += 1.0;
            }
            BindKind::Unbind => b -= 1.0,
        }
        points.push((now, z));
        // Requested times equal to this event time see the jump.
        while ti < times.len() && times[ti] == te {
            points.push((te, z));
            ti += 1;
        }
    }
    while ti < times.len() {
        drift(&mut z, now, times[ti], b);
        now = times[ti];
        points.push((now, z));
        ti += 1;
    }
    Ok(FilterTrace { points, jumps })
}

/// Normalized priors; errors on negative entries or a zero sum.
pub fn normalize_priors(priors: &[f64]) -> Result<Vec<f64>, DemodError> {
    let sum: f64 = priors.iter().sum();
    if priors.is_empty() || priors.iter().any(|&p| !(p >= 0.0)) || !(sum > 0.0) || !sum.is_finite() {
        return Err(DemodError::Config(format!("invalid priors {priors:?}")));
    }
    Ok(priors.iter().map(|p| p / sum).collect())
}

pub fn uniform_priors(k: usize) -> Vec<f64> {
    vec![1.0 / k as f64; k]
}

/// Index of the largest value, lowest index on ties, and whether a tie
/// occurred at the maximum.
pub fn argmax_with_tie(values: &[f64]) -> (usize, bool) {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    let tie = values
        .iter()
        .enumerate()
        .any(|(i, &v)| i != best && v == values[best]);
    (best, tie)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub time: f64,
    pub symbol: usize,
    pub tie: bool,
}

/// All K accumulators over one history.
#[derive(Debug, Clone, PartialEq)]
pub struct DemodOutput {
    pub priors: Vec<f64>,
    /// Event and decision times, in order.
    pub times: Vec<f64>,
    /// `z[s][i]` is Z_s at `times[i]`.
    pub z: Vec<Vec<f64>>,
    pub decisions: Vec<Decision>,
}

impl DemodOutput {
    /// CSV rows `t,Z_0,…,Z_{K−1}`.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        let header: Vec<String> = (0..self.z.len()).map(|s| format!("Z_{s}")).collect();
        writeln!(w, "t,{}", header.join(","))?;
        for (i, t) in self.times.iter().enumerate() {
            let row: Vec<String> = self.z.iter().map(|z| z[i].to_string()).collect();
            writeln!(w, "{t},{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Runs the K filters and decides at each of `decision_times`.
pub fn demodulate_trace(
    history: &BindingHistory,
    models: &[&dyn RateModel],
    rx: ReceiverParams,
    priors: &[f64],
    decision_times: &[f64],
    options: FilterOptions<'_>,
) -> Result<DemodOutput, DemodError> {
    if models.len() != priors.len() || models.len() < 2 {
        return Err(DemodError::Config(format!(
            "{} models for {} priors",
            models.len(),
            priors.len()
        )));
    }
    let priors = normalize_priors(priors)?;
    let traces = models
        .iter()
        .zip(&priors)
        .map(|(m, &p)| run_filter(history, *m, rx, p, decision_times, options))
        .collect::<Result<Vec<_>, _>>()?;
    let times: Vec<f64> = traces[0].points.iter().map(|p| p.0).collect();
    let z: Vec<Vec<f64>> = traces
        .iter()
        .map(|t| t.points.iter().map(|p| p.1).collect())
        .collect();
    let mut sorted = decision_times.to_vec();
    sorted.sort_by(f64::total_cmp);
    let decisions = sorted
        .iter()
        .map(|&t| {
            let zs: Vec<f64> = traces.iter().map(|tr| tr.at(t).unwrap()).collect();
            let (symbol, tie) = argmax_with_tie(&zs);
            Decision { time: t, symbol, tie }
        })
        .collect();
    Ok(DemodOutput {
        priors,
        times,
        z,
        decisions,
    })
}

/// MAP decision at one time.
pub fn demodulate(
    history: &BindingHistory,
    models: &[&dyn RateModel],
    rx: ReceiverParams,
    priors: &[f64],
    decision_time: f64,
) -> Result<Decision, DemodError> {
    let out = demodulate_trace(
        history,
        models,
        rx,
        priors,
        &[decision_time],
        FilterOptions::default(),
    )?;
    Ok(out.decisions[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const RX: ReceiverParams = ReceiverParams {
        binding_constant: 0.135,
        receptors: 10,
    };

    fn history(events: Vec<(f64, BindKind)>) -> BindingHistory {
        BindingHistory {
            events,
            receptors: 10,
            horizon: 2.0,
            initial_bound: 0,
        }
    }

    #[test]
    fn empty_history_is_pure_drift() {
        let c = 2.5;
        let sigma = InternalModel::constant(0, c, 2.0, 0.005);
        let tr = run_filter(&history(vec![]), &sigma, RX, 0.5, &[1.3], FilterOptions::default()).unwrap();
        let expected = 0.5f64.ln() - 0.135 * 10.0 * c * 1.3;
        assert!((tr.at(1.3).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn single_bind_closed_form() {
        let c = 2.5;
        let t1 = 0.4;
        let sigma = InternalModel::constant(0, c, 2.0, 0.005);
        let h = history(vec![(t1, BindKind::Bind)]);
        let tr = run_filter(&h, &sigma, RX, 0.5, &[1.7], FilterOptions::default()).unwrap();
        let expected = 0.5f64.ln() + c.ln() - 0.135 * (10.0 * t1 + 9.0 * (1.7 - t1)) * c;
        assert!((tr.at(1.7).unwrap() - expected).abs() < 1e-12);
        assert_eq!(tr.jumps, 1);
        // Value at the event time includes the jump.
        let at_event = 0.5f64.ln() + c.ln() - 0.135 * 10.0 * t1 * c;
        assert!((tr.at(t1).unwrap() - at_event).abs() < 1e-12);
    }

    #[test]
    fn unbind_changes_only_the_drift() {
        let sigma = InternalModel::constant(0, 1.0, 2.0, 0.005);
        let h = history(vec![(0.2, BindKind::Bind), (0.5, BindKind::Unbind)]);
        let tr = run_filter(&h, &sigma, RX, 1.0, &[1.0], FilterOptions::default()).unwrap();
        let expected = -0.135 * (10.0 * 0.2 + 9.0 * 0.3 + 10.0 * 0.5);
        assert!((tr.at(1.0).unwrap() - expected).abs() < 1e-12);
        // No jump at the unbind.
        let before = tr.points.iter().find(|p| p.0 == 0.5).unwrap().1;
        assert!((before - (-0.135 * (2.0 + 2.7))).abs() < 1e-12);
    }

    #[test]
    fn coverage_error_outside_model() {
        let sigma = InternalModel::constant(0, 1.0, 1.0, 0.005);
        let h = history(vec![(1.5, BindKind::Bind)]);
        assert!(matches!(
            run_filter(&h, &sigma, RX, 1.0, &[], FilterOptions::default()),
            Err(DemodError::Coverage { .. })
        ));
    }

    #[test]
    fn identical_models_tie_to_symbol_zero() {
        let sigma = InternalModel::constant(0, 1.0, 2.0, 0.005);
        let h = history(vec![(0.3, BindKind::Bind), (0.9, BindKind::Bind)]);
        let d = demodulate(&h, &[&sigma, &sigma], RX, &[0.5, 0.5], 1.5).unwrap();
        assert_eq!(d.symbol, 0);
        assert!(d.tie);
    }

    #[test]
    fn prior_decides_on_empty_history() {
        let s0 = InternalModel::constant(0, 1.0, 2.0, 0.005);
        let s1 = InternalModel::constant(1, 1.0, 2.0, 0.005);
        let h = history(vec![]);
        let d = demodulate(&h, &[&s0, &s1], RX, &[0.1, 0.9], 1.0).unwrap();
        assert_eq!((d.symbol, d.tie), (1, false));
        let d = demodulate(&h, &[&s0, &s1], RX, &[0.9, 0.1], 1.0).unwrap();
        assert_eq!((d.symbol, d.tie), (0, false));
    }

    fn arb_history() -> impl Strategy<Value = BindingHistory> {
        proptest::collection::vec((0.001f64..1.999, any::<bool>()), 0..40).prop_map(|raw| {
            let mut times: Vec<f64> = raw.iter().map(|r| r.0).collect();
            times.sort_by(f64::total_cmp);
            times.dedup();
            let mut b = 0u32;
            let mut events = Vec::new();
            for (t, (_, want_bind)) in times.into_iter().zip(raw) {
                let kind = if (want_bind && b < 10) || b == 0 {
                    b += 1;
                    BindKind::Bind
                } else {
                    b -= 1;
                    BindKind::Unbind
                };
                events.push((t, kind));
            }
            history(events)
        })
    }

    fn ramp(symbol: usize, slope: f64) -> InternalModel {
        let sigma: Vec<f64> = (0..=400).map(|k| 0.1 + slope * k as f64 * 0.005).collect();
        InternalModel::from_grid(symbol, 0.005, sigma, vec![0.0; 401])
    }

    proptest! {
        #[test]
        fn jump_count_equals_bind_count(h in arb_history()) {
            let sigma = ramp(0, 3.0);
            let tr = run_filter(&h, &sigma, RX, 0.5, &[2.0], FilterOptions::default()).unwrap();
            prop_assert_eq!(tr.jumps, h.binds_until(2.0));
        }

        #[test]
        fn common_drift_leaves_differences(h in arb_history(), a in 0.0f64..5.0, w in 0.5f64..20.0) {
            let s0 = ramp(0, 2.0);
            let s1 = ramp(1, 4.0);
            let extra = move |x: f64, y: f64| a * (y - x) + ((w * y).sin() - (w * x).sin());
            let times = [0.5, 1.0, 1.5, 2.0];
            let plain = demodulate_trace(&h, &[&s0, &s1], RX, &[0.5, 0.5], &times, FilterOptions::default()).unwrap();
            let opts = FilterOptions { common_drift: Some(&extra), ..Default::default() };
            let shifted = demodulate_trace(&h, &[&s0, &s1], RX, &[0.5, 0.5], &times, opts).unwrap();
            for i in 0..plain.times.len() {
                let d0 = plain.z[1][i] - plain.z[0][i];
                let d1 = shifted.z[1][i] - shifted.z[0][i];
                prop_assert!((d0 - d1).abs() < 1e-9 * (1.0 + d0.abs()));
            }
            prop_assert_eq!(plain.decisions.iter().map(|d| d.symbol).collect::<Vec<_>>(),
                            shifted.decisions.iter().map(|d| d.symbol).collect::<Vec<_>>());
        }

        #[test]
        fn larger_model_gains_at_binds_and_loses_between(h in arb_history()) {
            let s0 = ramp(0, 2.0);
            let s1 = ramp(1, 4.0);
            let out = demodulate_trace(&h, &[&s0, &s1], RX, &[0.5, 0.5], &[], FilterOptions::default()).unwrap();
            let diff: Vec<f64> = (0..out.times.len()).map(|i| out.z[1][i] - out.z[0][i]).collect();
            let mut prev_t = 0.0;
            let mut prev_d = 0.0;
            let mut b = 0i32;
            for (i, &(t, kind)) in h.events.iter().enumerate() {
                let drift = -RX.binding_constant * (10 - b) as f64 * (s1.integral(prev_t, t) - s0.integral(prev_t, t));
                let jump = if kind == BindKind::Bind { (s1.value(t) / s0.value(t)).ln() } else { 0.0 };
                prop_assert!(drift <= 0.0 && jump >= 0.0);
                prop_assert!((diff[i] - (prev_d + drift + jump)).abs() < 1e-9);
                b += if kind == BindKind::Bind { 1 } else { -1 };
                prev_t = t;
                prev_d = diff[i];
            }
        }

        #[test]
        fn prior_scaling_does_not_change_decisions(h in arb_history(), scale in 0.01f64..100.0, p in 0.05f64..0.95) {
            let s0 = ramp(0, 2.0);
            let s1 = ramp(1, 4.0);
            let times = [0.5, 1.0, 2.0];
            let a = demodulate_trace(&h, &[&s0, &s1], RX, &[p, 1.0 - p], &times, FilterOptions::default()).unwrap();
            let b = demodulate_trace(&h, &[&s0, &s1], RX, &[p * scale, (1.0 - p) * scale], &times, FilterOptions::default()).unwrap();
            prop_assert_eq!(a.decisions, b.decisions);
        }
    }
}
