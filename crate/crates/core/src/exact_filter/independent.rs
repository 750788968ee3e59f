//! Exact filtering for networks whose signalling molecules move
//! independently: diffusion, escape, zero-order sources and receptor
//! binding, with no intermediate species.
//!
//! Molecules born from the sources form a Poisson field whose intensity μ
//! solves a linear ODE, and conditioning on silence (killing at rate
//! κ = λ(M − b) in the receiver voxel) keeps it Poisson. A binding removes a
//! size-biased molecule, which leaves a Poisson field unchanged. Molecules
//! released by unbindings, and the ones present at t = 0, are tracked one by
//! one: each has its own position law, and since a binding may have consumed
//! any of them, the filter keeps a distribution over which tracked molecules
//! are still free. The result equals the capped-space filter with infinite
//! caps.

use std::collections::BTreeMap;

use nalgebra::DMatrix;

use super::{Diagnostics, FilterError, FilterRun, HermiteTrace, Knot};
use crate::model::{ChannelKind, Kinetics, Model};
use crate::ssa::{BindKind, BindingHistory};

/// Subsets with relative weight below this are dropped (the dropped mass
/// is reported).
const PRUNE_WEIGHT: f64 = 1e-20;

/// Why a model cannot use the independent-molecule route.
pub fn independent_support(model: &Model) -> Result<(), String> {
    if model.n_intermediates() > 0 {
        return Err("model has intermediate species".into());
    }
    if model.initial_states().len() != 1 {
        return Err("initial state is random".into());
    }
    if model.receiver_voxel().is_none() {
        return Err("model has no receiver".into());
    }
    let n = model.n_voxels();
    for ch in model.channels() {
        if matches!(ch.kind, ChannelKind::Binding | ChannelKind::Unbinding) {
            continue;
        }
        match (ch.kinetics, ch.delta.as_slice()) {
            (Kinetics::Constant { .. }, [(v, 1)]) if *v < n => {}
            (Kinetics::Linear { rate, .. }, _) if rate == 0.0 => {}
            (Kinetics::Linear { slot, .. }, d) if ch.symbol.is_none() && single_move(slot, d, n) => {}
            (Kinetics::Constant { rate }, _) if rate == 0.0 => {}
            _ => return Err(format!("channel {} is not a single-molecule move or source", ch.kind)),
        }
    }
    Ok(())
}

/// The destination of a first-order channel moving one molecule out of
/// `slot`: `Some(None)` for removal, `Some(Some(j))` for a hop to voxel `j`.
fn destination(slot: usize, delta: &[(usize, i32)], n: usize) -> Option<Option<usize>> {
    match delta {
        [(i, -1)] if *i == slot => Some(None),
        [(i, -1), (j, 1)] | [(j, 1), (i, -1)] if *i == slot && *j < n => Some(Some(*j)),
        _ => None,
    }
}

fn single_move(slot: usize, delta: &[(usize, i32)], n: usize) -> bool {
    slot < n && destination(slot, delta, n).is_some()
}

fn vecmat(x: &[f64], m: &DMatrix<f64>) -> Vec<f64> {
    let k = x.len();
    let mut out = vec![0.0; m.ncols()];
    for (i, &xi) in x.iter().enumerate().take(k) {
        if xi == 0.0 {
            continue;
        }
        for (j, o) in out.iter_mut().enumerate() {
            *o += xi * m[(i, j)];
        }
    }
    out
}

/// Posterior for one symbol hypothesis.
pub struct IndependentFilter<'a> {
    model: &'a Model,
    n: usize,
    receiver: usize,
    /// Single-molecule generator over the voxels plus an "outside" state.
    generator: DMatrix<f64>,
    /// `(symbol gate, voxel, rate)` of every zero-order source.
    sources: Vec<(Option<usize>, usize, f64)>,
    mu: Vec<f64>,
    /// Normalized position laws (voxels then outside).
    tracked: Vec<Vec<f64>>,
    /// Normalized weights of the sets of tracked molecules still free.
    subsets: Vec<(u64, f64)>,
    bound: u32,
    time: f64,
    log_likelihood: f64,
    diagnostics: Diagnostics,
    trace_step: Option<f64>,
    trace: Option<HermiteTrace>,
    next_trace_time: f64,
}

/// Everything at time τ into a constant segment, unnormalized.
struct SegmentPoint {
    mu: Vec<f64>,
    /// ∫ μ_R over the segment so far.
    exposure: f64,
    tracked: Vec<Vec<f64>>,
}

impl<'a> IndependentFilter<'a> {
    pub fn new(model: &'a Model, trace_step: Option<f64>) -> Result<Self, FilterError> {
        independent_support(model).map_err(FilterError::Config)?;
        let n = model.n_voxels();
        let receiver = model.receiver_voxel().unwrap().offset();
        let mut generator = DMatrix::zeros(n + 1, n + 1);
        let mut sources = Vec::new();
        for ch in model.channels() {
            match (ch.kind, ch.kinetics) {
                (ChannelKind::Binding | ChannelKind::Unbinding, _) => {}
                (_, Kinetics::Constant { rate }) if rate > 0.0 => {
                    sources.push((ch.symbol, ch.delta[0].0, rate));
                }
                (_, Kinetics::Linear { rate, slot }) if rate > 0.0 => {
                    let to = destination(slot, &ch.delta, n).unwrap().unwrap_or(n);
                    generator[(slot, to)] += rate;
                    generator[(slot, slot)] -= rate;
                }
                _ => {}
            }
        }
        let (_, initial) = &model.initial_states()[0];
        let mut tracked = Vec::new();
        for v in 0..n {
            for _ in 0..initial.counts()[v] {
                let mut q = vec![0.0; n + 1];
                q[v] = 1.0;
                tracked.push(q);
            }
        }
        if tracked.len() > 64 {
            return Err(FilterError::TooLarge(format!(
                "{} initial molecules; at most 64 can be tracked",
                tracked.len()
            )));
        }
        let all = if tracked.len() == 64 { u64::MAX } else { (1u64 << tracked.len()) - 1 };
        Ok(IndependentFilter {
            model,
            n,
            receiver,
            generator,
            sources,
            mu: vec![0.0; n],
            tracked,
            subsets: vec![(all, 1.0)],
            bound: initial.bound(),
            time: 0.0,
            log_likelihood: 0.0,
            diagnostics: Diagnostics::default(),
            trace_step,
            trace: trace_step.map(|_| HermiteTrace::new()),
            next_trace_time: 0.0,
        })
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn bound(&self) -> u32 {
        self.bound
    }

    pub fn log_likelihood(&self) -> f64 {
        self.log_likelihood
    }

    pub fn diagnostics(&self) -> Diagnostics {
        self.diagnostics
    }

    /// Intensity of the Poisson part.
    pub fn poisson_intensity(&self) -> &[f64] {
        &self.mu
    }

    /// Number of sets of free tracked molecules with nonzero weight.
    pub fn n_subsets(&self) -> usize {
        self.subsets.len()
    }

    fn kill(&self) -> f64 {
        self.model.binding_constant() * (self.model.receptors() - self.bound) as f64
    }

    /// E[n_R] and its time derivative for an unnormalized segment point.
    fn receiver_moments(&self, p: &SegmentPoint, kill: f64, symbol: Option<usize>) -> (f64, f64, f64) {
        let r = self.receiver;
        let killed = self.killed_generator(kill);
        // dμ_R/dt from the Poisson intensity ODE.
        let mut dmu = vecmat(&p.mu, &killed.view((0, 0), (self.n, self.n)).into_owned())[r];
        for &(gate, v, rate) in &self.sources {
            if v == r && (gate.is_none() || gate == symbol) {
                dmu += rate;
            }
        }
        let masses: Vec<f64> = p.tracked.iter().map(|q| q.iter().sum()).collect();
        let at_r: Vec<f64> = p.tracked.iter().zip(&masses).map(|(q, m)| q[r] / m).collect();
        let slope_r: Vec<f64> = p
            .tracked
            .iter()
            .zip(&masses)
            .map(|(q, m)| vecmat(q, &killed)[r] / m)
            .collect();
        let (mut u, mut nn, mut dn) = (0.0, 0.0, 0.0);
        for &(mask, w) in &self.subsets {
            let mut weight = w;
            let (mut sr, mut sr2, mut sa) = (0.0, 0.0, 0.0);
            for j in bits(mask) {
                weight *= masses[j];
                sr += at_r[j];
                sr2 += at_r[j] * at_r[j];
                sa += slope_r[j];
            }
            u += weight;
            nn += weight * sr;
            dn += weight * (sa - kill * (sr * sr - sr2));
        }
        let e = p.mu[r] + nn / u;
        let de = dmu + dn / u + kill * (nn / u) * (nn / u);
        (e, de, u)
    }

    fn killed_generator(&self, kill: f64) -> DMatrix<f64> {
        let mut g = self.generator.clone();
        g[(self.receiver, self.receiver)] -= kill;
        g
    }

    /// Augmented generator for (μ, ∫μ_R, 1).
    fn intensity_generator(&self, kill: f64, symbol: Option<usize>) -> DMatrix<f64> {
        let n = self.n;
        let mut b = DMatrix::zeros(n + 2, n + 2);
        let killed = self.killed_generator(kill);
        b.view_mut((0, 0), (n, n)).copy_from(&killed.view((0, 0), (n, n)));
        b[(self.receiver, n)] = 1.0;
        for &(gate, v, rate) in &self.sources {
            if gate.is_none() || gate == symbol {
                b[(n + 1, v)] += rate;
            }
        }
        b
    }

    fn step(&self, p: &SegmentPoint, intensity: &DMatrix<f64>, single: &DMatrix<f64>) -> SegmentPoint {
        let mut x = p.mu.clone();
        x.push(p.exposure);
        x.push(1.0);
        let y = vecmat(&x, intensity);
        SegmentPoint {
            mu: y[..self.n].to_vec(),
            exposure: y[self.n],
            tracked: p.tracked.iter().map(|q| vecmat(q, single)).collect(),
        }
    }

    /// Propagates over `dt` seconds with no receiver event.
    pub fn propagate(&mut self, dt: f64) -> Result<(), FilterError> {
        if !(dt >= 0.0) {
            return Err(FilterError::Numerical {
                time: self.time,
                reason: format!("negative propagation interval {dt}"),
            });
        }
        let end = self.time + dt;
        self.log_likelihood -= self.model.unbinding_rate() * self.bound as f64 * dt;
        while self.time < end {
            let schedule = self.model.schedule();
            let symbol = schedule.active_at(self.time);
            let seg_end = match schedule.next_switch(self.time) {
                Some(s) if s < end => s,
                _ => end,
            };
            self.segment(seg_end, symbol)?;
        }
        Ok(())
    }

    fn segment(&mut self, end: f64, symbol: Option<usize>) -> Result<(), FilterError> {
        let kill = self.kill();
        let h = end - self.time;
        // Knot times inside the segment, then the end.
        let mut taus = Vec::new();
        if let Some(step) = self.trace_step {
            while self.next_trace_time <= self.time {
                self.next_trace_time += step;
            }
            let mut t = self.next_trace_time;
            while t < end {
                taus.push(t - self.time);
                t += step;
            }
            self.next_trace_time = t;
        }
        taus.push(h);

        let start = SegmentPoint {
            mu: self.mu.clone(),
            exposure: 0.0,
            tracked: self.tracked.clone(),
        };
        if self.trace.is_some() {
            let (e, de, _) = self.receiver_moments(&start, kill, symbol);
            self.trace.as_mut().unwrap().push(Knot { t: self.time, value: e, slope: de });
        }
        let base_intensity = self.intensity_generator(kill, symbol);
        let base_single = self.killed_generator(kill);
        let mut cache: Option<(f64, DMatrix<f64>, DMatrix<f64>)> = None;
        let mut point = start;
        let mut prev = 0.0;
        for (k, &tau) in taus.iter().enumerate() {
            let gap = tau - prev;
            let reuse = matches!(&cache, Some((g, _, _)) if (g - gap).abs() <= 1e-12 * gap.max(1.0));
            if !reuse {
                cache = Some((gap, (&base_intensity * gap).exp(), (&base_single * gap).exp()));
            }
            let (_, ei, es) = cache.as_ref().unwrap();
            point = self.step(&point, ei, es);
            prev = tau;
            if self.trace.is_some() {
                let (e, de, _) = self.receiver_moments(&point, kill, symbol);
                let t = if k + 1 == taus.len() { end } else { self.time + tau };
                self.trace.as_mut().unwrap().push(Knot { t, value: e, slope: de });
            }
        }

        // Fold the surviving mass into the log-likelihood and renormalize.
        let masses: Vec<f64> = point.tracked.iter().map(|q| q.iter().sum()).collect();
        let mut total = 0.0;
        for (mask, w) in self.subsets.iter_mut() {
            for j in bits(*mask) {
                *w *= masses[j];
            }
            total += *w;
        }
        if !(total > 0.0) || !total.is_finite() || !point.exposure.is_finite() {
            return Err(FilterError::Numerical {
                time: end,
                reason: format!("surviving mass {total}, exposure {}", point.exposure),
            });
        }
        for (_, w) in self.subsets.iter_mut() {
            *w /= total;
        }
        self.log_likelihood += total.ln() - kill * point.exposure;
        self.mu = point.mu;
        self.tracked = point
            .tracked
            .into_iter()
            .zip(&masses)
            .map(|(q, &m)| {
                if m > 0.0 {
                    q.into_iter().map(|x| x / m).collect()
                } else {
                    q
                }
            })
            .collect();
        self.time = end;
        Ok(())
    }

    pub fn expected_receiver(&self) -> f64 {
        let r = self.receiver;
        let tracked: f64 = self
            .subsets
            .iter()
            .map(|&(mask, w)| w * bits(mask).map(|j| self.tracked[j][r]).sum::<f64>())
            .sum();
        self.mu[r] + tracked
    }

    pub fn apply_bind(&mut self) -> Result<(), FilterError> {
        let m = self.model.receptors();
        if self.bound >= m {
            return Err(FilterError::Inconsistent(format!(
                "binding at t = {} with all {m} receptors bound",
                self.time
            )));
        }
        let e = self.expected_receiver();
        if !(e > 0.0) {
            return Err(FilterError::Inconsistent(format!(
                "binding at t = {} with no molecule in the receiver voxel",
                self.time
            )));
        }
        self.log_likelihood += (self.kill() * e).ln();
        let r = self.receiver;
        let mut next: BTreeMap<u64, f64> = BTreeMap::new();
        for &(mask, w) in &self.subsets {
            // A molecule of the Poisson field binds.
            *next.entry(mask).or_default() += w * self.mu[r] / e;
            // Or one of the tracked molecules.
            for j in bits(mask) {
                let p = w * self.tracked[j][r] / e;
                if p > 0.0 {
                    *next.entry(mask & !(1u64 << j)).or_default() += p;
                }
            }
        }
        self.set_subsets(next);
        self.bound += 1;
        Ok(())
    }

    pub fn apply_unbind(&mut self) -> Result<(), FilterError> {
        if self.bound == 0 {
            return Err(FilterError::Inconsistent(format!(
                "unbinding at t = {} with no receptor bound",
                self.time
            )));
        }
        self.log_likelihood += (self.model.unbinding_rate() * self.bound as f64).ln();
        let used = self.subsets.iter().fold(0u64, |a, &(m, _)| a | m);
        let slot = (0..64).find(|&j| used & (1u64 << j) == 0).ok_or_else(|| {
            FilterError::TooLarge(format!("more than 64 released molecules at t = {}", self.time))
        })?;
        let mut q = vec![0.0; self.n + 1];
        q[self.receiver] = 1.0;
        if slot < self.tracked.len() {
            self.tracked[slot] = q;
        } else {
            self.tracked.push(q);
        }
        for (mask, _) in self.subsets.iter_mut() {
            *mask |= 1u64 << slot;
        }
        self.bound -= 1;
        Ok(())
    }

    fn set_subsets(&mut self, next: BTreeMap<u64, f64>) {
        let max = next.values().cloned().fold(0.0, f64::max);
        let mut kept = Vec::with_capacity(next.len());
        let mut dropped = 0.0;
        for (mask, w) in next {
            if w > PRUNE_WEIGHT * max {
                kept.push((mask, w));
            } else {
                dropped += w;
            }
        }
        let total: f64 = kept.iter().map(|p| p.1).sum();
        for p in kept.iter_mut() {
            p.1 /= total;
        }
        self.diagnostics.leak += dropped;
        self.subsets = kept;
    }

    /// Processes a whole history like `ExactFilter::run`.
    pub fn run(mut self, history: &BindingHistory, record_times: &[f64]) -> Result<FilterRun, FilterError> {
        if history.receptors != self.model.receptors() {
            return Err(FilterError::Config(format!(
                "history has {} receptors, model has {}",
                history.receptors,
                self.model.receptors()
            )));
        }
        if history.initial_bound != self.bound {
            return Err(FilterError::Config("history and model disagree on initial b".into()));
        }
        let mut times: Vec<f64> = record_times.to_vec();
        times.sort_by(f64::total_cmp);
        let mut points = Vec::new();
        let mut receiver_mean = Vec::new();
        let mut ti = 0;
        for &(te, kind) in &history.events {
            while ti < times.len() && times[ti] < te {
                self.propagate(times[ti] - self.time)?;
                points.push((times[ti], self.log_likelihood));
                receiver_mean.push((times[ti], self.expected_receiver()));
                ti += 1;
            }
            self.propagate(te - self.time)?;
            match kind {
                BindKind::Bind => self.apply_bind()?,
                BindKind::Unbind => self.apply_unbind()?,
            }
            points.push((te, self.log_likelihood));
            while ti < times.len() && times[ti] == te {
                points.push((te, self.log_likelihood));
                receiver_mean.push((te, self.expected_receiver()));
                ti += 1;
            }
        }
        while ti < times.len() {
            self.propagate(times[ti] - self.time)?;
            points.push((times[ti], self.log_likelihood));
            receiver_mean.push((times[ti], self.expected_receiver()));
            ti += 1;
        }
        Ok(FilterRun {
            points,
            receiver_mean,
            trace: self.trace.take(),
            diagnostics: self.diagnostics,
        })
    }
}

fn bits(mask: u64) -> impl Iterator<Item = usize> {
    let mut m = mask;
    std::iter::from_fn(move || {
        if m == 0 {
            None
        } else {
            let j = m.trailing_zeros() as usize;
            m &= m - 1;
            Some(j)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, catalog, ReceiverSpec, VoxelRef};

    #[test]
    fn silence_likelihood_matches_closed_form() {
        let (r, m) = (10.0, 5);
        let mut spec = catalog::single_voxel_birth(r);
        spec.receiver = Some(ReceiverSpec {
            voxel: VoxelRef::Index(1),
            receptors: m,
            binding_rate_constant: 0.005,
            unbinding_rate: 1.0,
        });
        let model = build_model(&spec, 0).unwrap();
        let mut f = IndependentFilter::new(&model, None).unwrap();
        let kappa = 0.135 * m as f64;
        f.propagate(2.0).unwrap();
        let expect = -r * (2.0 - (1.0 - (-kappa * 2.0f64).exp()) / kappa);
        assert!((f.log_likelihood() - expect).abs() < 1e-10);
        let mean = r * (1.0 - (-kappa * 2.0f64).exp()) / kappa;
        assert!((f.expected_receiver() - mean).abs() < 1e-10);
        f.apply_bind().unwrap();
        assert!((f.expected_receiver() - mean).abs() < 1e-10);
        f.apply_unbind().unwrap();
        assert!((f.expected_receiver() - mean - 1.0).abs() < 1e-10);
        assert_eq!(f.n_subsets(), 1);
    }

    #[test]
    fn models_with_intermediates_are_refused() {
        let model = build_model(&catalog::three_voxel_example([1.0, 2.0, 3.0, 4.0], 5), 0).unwrap();
        assert!(independent_support(&model).is_err());
        let line = build_model(&catalog::line_3x1x1(&[10.0, 50.0], 10), 0).unwrap();
        assert!(independent_support(&line).is_ok());
    }

    #[test]
    fn bits_iterates_set_positions() {
        assert_eq!(bits(0b1011_0000_0001).collect::<Vec<_>>(), vec![0, 8, 9, 11]);
        assert_eq!(bits(0).count(), 0);
    }
}
