//! The optimal demodulator: exact Bayesian filtering of the hidden counts
//! from the binding history, one filter per symbol.
//!
//! Between receiver events the conditional law π evolves under the hidden
//! (b-preserving) generator with every state additionally killed at rate
//! λ (M − b) η_R; the lost mass is the probability of seeing no binding and
//! its log accrues to the event-sequence log-likelihood. A binding reweights
//! π by η_R and moves one molecule out of the receiver voxel; an unbinding
//! moves one molecule in. Unbinding has a state-independent rate, so it
//! does not reweight.
//!
//! Propagation uses uniformization on the active part of a capped state
//! space. Transitions that would leave the caps are suppressed and their
//! rate is accumulated in a diagnostic.

mod independent;
mod pilot;
mod space;
mod trace;

use thiserror::Error;

use crate::demod::{argmax_with_tie, normalize_priors, Decision};
use crate::model::Model;
use crate::ssa::{BindKind, BindingHistory};

pub use independent::{independent_support, IndependentFilter};
pub use pilot::{default_cap, pilot_caps, pilot_maxima};
pub use space::{StateSpace, MAX_STATES};
pub use trace::{HermiteTrace, Knot};

use space::{row_term, Region, RowTerm};

/// Diagnostics above this mark a run unreliable.
pub const RELIABILITY_THRESHOLD: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FilterError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("state space too large: {0}")]
    TooLarge(String),
    #[error("observation has zero probability under the model: {0}")]
    Inconsistent(String),
    #[error("numerical fault at t = {time}: {reason}")]
    Numerical { time: f64, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterConfig {
    /// Poisson tail mass dropped in each uniformization series.
    pub series_tolerance: f64,
    /// Largest Λh per uniformization chunk.
    pub max_chunk_steps: f64,
    /// States with probability at or below this are left out of the active
    /// region (their mass is kept but not propagated).
    pub support_threshold: f64,
    /// Largest mass allowed to leave the active region during a chunk
    /// before the chunk is redone with a wider margin.
    pub leak_tolerance: f64,
    /// Spacing of the recorded E[n_R] trace; `None` records no trace.
    pub trace_step: Option<f64>,
    pub route: Route,
}

/// Which exact algorithm runs a hypothesis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    /// Independent molecules when the model allows it, else the capped space.
    #[default]
    Auto,
    /// Uniformization on the capped state space.
    CappedSpace,
    /// Poisson field plus tracked released molecules; no caps.
    IndependentMolecules,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            series_tolerance: 1e-14,
            max_chunk_steps: 40.0,
            support_threshold: 1e-16,
            leak_tolerance: 1e-13,
            trace_step: None,
            route: Route::Auto,
        }
    }
}

/// Probability mass that the truncated computation could not represent.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Diagnostics {
    /// ∫ Σ π_j (suppressed rate at j) dt: mass that would have crossed a cap.
    pub suppressed: f64,
    /// Mass held at the receiver cap by unbindings.
    pub cap_overflow: f64,
    /// Mass that left the active region during propagation, or that was
    /// pruned from a mixture.
    pub leak: f64,
}

impl Diagnostics {
    pub fn total(&self) -> f64 {
        self.suppressed + self.cap_overflow + self.leak
    }

    pub fn reliable(&self) -> bool {
        self.total() <= RELIABILITY_THRESHOLD
    }
}

/// Poisson(x) probabilities for n = 0..=N with the tail beyond N below `tol`.
fn poisson_weights(x: f64, tol: f64) -> Vec<f64> {
    let mut w = vec![(-x).exp()];
    let mut n = 0usize;
    loop {
        let next = w[n] * x / (n + 1) as f64;
        // Beyond the mode the tail is bounded by a geometric series.
        if (n + 1) as f64 > x {
            let ratio = x / (n + 2) as f64;
            if next / (1.0 - ratio) < tol {
                break;
            }
        }
        w.push(next);
        n += 1;
    }
    w
}

/// Filter state for one symbol hypothesis.
pub struct ExactFilter<'a> {
    model: &'a Model,
    space: &'a StateSpace,
    config: FilterConfig,
    pi: Vec<f64>,
    cur: Vec<f64>,
    nxt: Vec<f64>,
    acc: Vec<f64>,
    stay: Vec<f64>,
    suppressed_rate: Vec<f64>,
    bound: u32,
    time: f64,
    log_likelihood: f64,
    diagnostics: Diagnostics,
    margin: u32,
    binding_constant: f64,
    unbinding_rate: f64,
    receptors: u32,
    trace: Option<HermiteTrace>,
    next_trace_time: f64,
}

/// Scalar summaries of the uniformization iterates of one chunk.
struct ChunkSeries {
    lambda: f64,
    weights: Vec<f64>,
    mass: Vec<f64>,
    receiver: Vec<f64>,
    /// Mass outside the active region (not propagated).
    outside: f64,
}

impl ChunkSeries {
    /// (total mass, E[n_R], dE/dt) at time τ into the chunk.
    fn at(&self, tau: f64, tol: f64) -> (f64, f64, f64) {
        let n_max = self.weights.len() - 1;
        let w = if tau <= 0.0 {
            vec![1.0]
        } else {
            poisson_weights(self.lambda * tau, tol)
        };
        let mut m = 0.0;
        let mut r = 0.0;
        let mut dm = 0.0;
        let mut dr = 0.0;
        for (n, &wn) in w.iter().enumerate().take(n_max + 1) {
            let n1 = (n + 1).min(n_max);
            m += wn * self.mass[n];
            r += wn * self.receiver[n];
            dm += wn * (self.mass[n1] - self.mass[n]);
            dr += wn * (self.receiver[n1] - self.receiver[n]);
        }
        dm *= self.lambda;
        dr *= self.lambda;
        let e = r / m;
        (m + self.outside, e, (dr - e * dm) / m)
    }
}

impl<'a> ExactFilter<'a> {
    pub fn new(model: &'a Model, space: &'a StateSpace, config: FilterConfig) -> Result<Self, FilterError> {
        let n = space.len();
        let mut pi = vec![0.0; n];
        let dims = space.dims();
        let mut bound = None;
        for (w, state) in model.initial_states() {
            let eta = &state.counts()[..dims];
            let idx = space.index(eta).ok_or_else(|| {
                FilterError::Config(format!("initial state {eta:?} exceeds caps {:?}", space.caps()))
            })?;
            pi[idx] += w;
            match bound {
                None => bound = Some(state.bound()),
                Some(b) if b != state.bound() => {
                    return Err(FilterError::Config("initial bound count must be deterministic".into()))
                }
                _ => {}
            }
        }
        let trace = config.trace_step.map(|_| HermiteTrace::new());
        Ok(ExactFilter {
            model,
            space,
            config,
            pi,
            cur: vec![0.0; n],
            nxt: vec![0.0; n],
            acc: vec![0.0; n],
            stay: vec![0.0; n],
            suppressed_rate: vec![0.0; n],
            bound: bound.unwrap_or(0),
            time: 0.0,
            log_likelihood: 0.0,
            diagnostics: Diagnostics::default(),
            margin: 2,
            binding_constant: model.binding_constant(),
            unbinding_rate: model.unbinding_rate(),
            receptors: model.receptors(),
            trace,
            next_trace_time: 0.0,
        })
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn bound(&self) -> u32 {
        self.bound
    }

    /// Accumulated log-likelihood of the observed event sequence.
    pub fn log_likelihood(&self) -> f64 {
        self.log_likelihood
    }

    pub fn diagnostics(&self) -> Diagnostics {
        self.diagnostics
    }

    pub fn space(&self) -> &StateSpace {
        self.space
    }

    /// The conditional law of the hidden counts, indexed like the space.
    pub fn posterior(&self) -> &[f64] {
        &self.pi
    }

    pub fn take_trace(&mut self) -> Option<HermiteTrace> {
        self.trace.take()
    }

    fn receiver_count(&self, index: usize) -> u32 {
        let r = self.space.receiver_coord();
        ((index / self.space.strides()[r]) % (self.space.caps()[r] as usize + 1)) as u32
    }

    /// E[n_R] under the current law.
    pub fn expected_receiver(&self) -> f64 {
        let r = self.space.receiver_coord();
        let stride = self.space.strides()[r];
        let cap = self.space.caps()[r] as usize;
        let mut e = 0.0;
        for (j, &p) in self.pi.iter().enumerate() {
            if p != 0.0 {
                e += ((j / stride) % (cap + 1)) as f64 * p;
            }
        }
        e
    }

    fn fault(&self, reason: impl Into<String>) -> FilterError {
        FilterError::Numerical {
            time: self.time,
            reason: reason.into(),
        }
    }

    /// Bounding box of the states with probability above the threshold.
    fn support(&self) -> Region {
        let space = self.space;
        let full = Region {
            lo: vec![0; space.dims()],
            hi: space.caps().to_vec(),
        };
        let thr = self.config.support_threshold;
        let mut found: Option<Region> = None;
        let row_len = space.caps()[0] as usize + 1;
        full.for_each_row(space, |start, outer| {
            let row = &self.pi[start..start + row_len];
            let first = row.iter().position(|&p| p > thr);
            if let Some(first) = first {
                let last = row.iter().rposition(|&p| p > thr).unwrap();
                let mut eta = outer.to_vec();
                eta[0] = first as u32;
                match found.as_mut() {
                    None => found = Some(Region::point(&eta)),
                    Some(r) => r.include(&eta),
                }
                eta[0] = last as u32;
                found.as_mut().unwrap().include(&eta);
            }
        });
        found.unwrap_or_else(|| Region::point(&vec![0; space.dims()]))
    }

    /// Propagates over `dt` seconds with no receiver event.
    pub fn propagate(&mut self, dt: f64) -> Result<(), FilterError> {
        if !(dt >= 0.0) {
            return Err(self.fault(format!("negative propagation interval {dt}")));
        }
        let end = self.time + dt;
        // Unbinding survival is the same in every state; keeping it makes the
        // likelihood a proper density over event sequences.
        self.log_likelihood -= self.unbinding_rate * self.bound as f64 * dt;
        while self.time < end {
            let schedule = self.model.schedule();
            let symbol = schedule.active_at(self.time);
            let seg_end = match schedule.next_switch(self.time) {
                Some(s) if s < end => s,
                _ => end,
            };
            self.chunk(seg_end, symbol)?;
        }
        Ok(())
    }

    /// One uniformization chunk starting at the current time and ending at
    /// most at `limit`.
    fn chunk(&mut self, limit: f64, symbol: Option<usize>) -> Result<(), FilterError> {
        let space = self.space;
        let kill = self.binding_constant * (self.receptors - self.bound) as f64;
        let support = self.support();
        loop {
            let margin = vec![self.margin; space.dims()];
            let active = support.expand(&margin, space.caps());
            let region = active.expand(&space.reach, space.caps());
            let lambda = space.rate_bound(&active.hi, symbol, kill);
            let remaining = limit - self.time;
            if lambda <= 0.0 {
                // Nothing moves and nothing is killed.
                self.record_flat(limit);
                self.time = limit;
                return Ok(());
            }
            let h = remaining.min(self.config.max_chunk_steps / lambda);
            let (series, leak) = self.uniformize(&active, &region, lambda, h, kill, symbol)?;
            let full_box = active.lo.iter().all(|&l| l == 0) && active.hi == space.caps();
            if leak > self.config.leak_tolerance && !full_box {
                self.margin = (self.margin * 2).max(2);
                continue;
            }
            self.diagnostics.leak += leak.max(0.0);
            // Accept: π ← acc on the region.
            let mut region_mass_after = 0.0;
            let row_len = (region.hi[0] - region.lo[0] + 1) as usize;
            let (pi, acc) = (&mut self.pi, &self.acc);
            region.for_each_row(space, |start, _| {
                pi[start..start + row_len].copy_from_slice(&acc[start..start + row_len]);
                region_mass_after += acc[start..start + row_len].iter().sum::<f64>();
            });
            let mass = region_mass_after + series.outside_total;
            if !(mass > 0.0) || !mass.is_finite() {
                return Err(self.fault(format!("probability mass {mass} after propagation")));
            }
            self.record_trace(&series.inner, h);
            self.log_likelihood += mass.ln();
            let inv = 1.0 / mass;
            for p in self.pi.iter_mut() {
                *p *= inv;
            }
            self.diagnostics.suppressed += series.suppressed / mass;
            self.time = if h == remaining { limit } else { self.time + h };
            if leak < self.config.leak_tolerance * 1e-3 && self.margin > 2 {
                self.margin -= 1;
            }
            return Ok(());
        }
    }

    fn record_flat(&mut self, until: f64) {
        let Some(step) = self.config.trace_step else { return };
        let e = self.expected_receiver();
        let start = self.time;
        let trace = self.trace.as_mut().unwrap();
        trace.push(Knot { t: start, value: e, slope: 0.0 });
        while self.next_trace_time <= start {
            self.next_trace_time += step;
        }
        while self.next_trace_time < until {
            trace.push(Knot { t: self.next_trace_time, value: e, slope: 0.0 });
            self.next_trace_time += step;
        }
        trace.push(Knot { t: until, value: e, slope: 0.0 });
    }

    fn record_trace(&mut self, series: &ChunkSeries, h: f64) {
        let Some(step) = self.config.trace_step else { return };
        let tol = self.config.series_tolerance;
        let t0 = self.time;
        let trace = self.trace.as_mut().unwrap();
        let (_, e, de) = series.at(0.0, tol);
        trace.push(Knot { t: t0, value: e, slope: de });
        while self.next_trace_time <= t0 {
            self.next_trace_time += step;
        }
        while self.next_trace_time < t0 + h {
            let (_, e, de) = series.at(self.next_trace_time - t0, tol);
            trace.push(Knot { t: self.next_trace_time, value: e, slope: de });
            self.next_trace_time += step;
        }
        let (_, e, de) = series.at(h, tol);
        trace.push(Knot { t: t0 + h, value: e, slope: de });
    }

    /// Runs the uniformization series for `h` seconds on `active`, leaving
    /// the result in `acc` over `region`. Returns the chunk summaries and
    /// the mass that moved from the active region into the frozen ring.
    fn uniformize(
        &mut self,
        active: &Region,
        region: &Region,
        lambda: f64,
        h: f64,
        kill: f64,
        symbol: Option<usize>,
    ) -> Result<(UniformizeOut, f64), FilterError> {
        let space = self.space;
        let caps = space.caps();
        let rcoord = space.receiver_coord();
        let tol = self.config.series_tolerance;
        let weights = poisson_weights(lambda * h, tol);
        let n_max = weights.len() - 1;

        // Row terms are fixed for the chunk.
        let channels: Vec<_> = space.active_channels(symbol).collect();
        let mut rows: Vec<(usize, Vec<RowTerm>, f64)> = Vec::new();
        let lo0 = active.lo[0];
        let hi0 = active.hi[0];
        let row_len = (hi0 - lo0 + 1) as usize;
        {
            let stay = &mut self.stay;
            let supp = &mut self.suppressed_rate;
            active.for_each_row(space, |start, outer| {
                let terms: Vec<RowTerm> = channels.iter().map(|c| row_term(c, outer, caps)).collect();
                let r_const = if rcoord == 0 { 0.0 } else { outer[rcoord] as f64 };
                for k in 0..row_len {
                    let x = (lo0 as usize + k) as u32;
                    let xf = x as f64;
                    let eta_r = if rcoord == 0 { xf } else { r_const };
                    let mut exit = kill * eta_r;
                    let mut lost = 0.0;
                    for t in &terms {
                        let p = t.at(xf);
                        match t.x_hi {
                            Some(xh) if x >= t.x_lo && x <= xh => exit += p,
                            Some(xh) if x > xh => lost += p,
                            None if t.capped_row => lost += p,
                            _ => {}
                        }
                    }
                    stay[start + k] = 1.0 - exit / lambda;
                    supp[start + k] = lost;
                }
                rows.push((start, terms, r_const));
            });
        }

        // Mass and E-numerator of the starting vector outside the active
        // region stay frozen for the chunk.
        let region_len = (region.hi[0] - region.lo[0] + 1) as usize;
        let mut region_mass_before = 0.0;
        let mut ring_before = 0.0;
        {
            let (pi, cur, acc) = (&self.pi, &mut self.cur, &mut self.acc);
            let w0 = weights[0];
            region.for_each_row(space, |start, outer| {
                for k in 0..region_len {
                    let j = start + k;
                    let p = pi[j];
                    cur[j] = p;
                    acc[j] = w0 * p;
                    region_mass_before += p;
                    let mut eta = outer.to_vec();
                    eta[0] = region.lo[0] + k as u32;
                    if !active.contains(&eta) {
                        ring_before += p;
                    }
                }
            });
        }
        let outside_total = 1.0 - region_mass_before;

        let mut mass = Vec::with_capacity(n_max + 1);
        let mut receiver = Vec::with_capacity(n_max + 1);
        let mut suppressed_terms = Vec::with_capacity(n_max + 1);
        let inv_lambda = 1.0 / lambda;
        for n in 0..=n_max {
            // nxt = P cur on the region; ring states are carried unchanged.
            let (cur, nxt) = (&self.cur, &mut self.nxt);
            region.for_each_row(space, |start, _| {
                nxt[start..start + region_len].copy_from_slice(&cur[start..start + region_len]);
            });
            let mut s = 0.0;
            let mut r = 0.0;
            let mut q = 0.0;
            for (start, terms, r_const) in &rows {
                let start = *start;
                let cur_row = &cur[start..start + row_len];
                let stay_row = &self.stay[start..start + row_len];
                let supp_row = &self.suppressed_rate[start..start + row_len];
                {
                    let nxt_row = &mut nxt[start..start + row_len];
                    for k in 0..row_len {
                        let v = cur_row[k];
                        s += v;
                        q += supp_row[k] * v;
                        nxt_row[k] += v * (stay_row[k] - 1.0);
                    }
                }
                if rcoord == 0 {
                    for (k, &v) in cur_row.iter().enumerate() {
                        r += (lo0 as usize + k) as f64 * v;
                    }
                } else {
                    r += r_const * cur_row.iter().sum::<f64>();
                }
                for t in terms {
                    let Some(xh) = t.x_hi else { continue };
                    let a = t.x_lo.max(lo0);
                    let b = xh.min(hi0);
                    if a > b {
                        continue;
                    }
                    let target0 = start as isize + t.offset;
                    for x in a..=b {
                        let k = (x - lo0) as usize;
                        let v = cur_row[k];
                        nxt[(target0 + k as isize) as usize] += v * t.at(x as f64) * inv_lambda;
                    }
                }
            }
            mass.push(s);
            receiver.push(r);
            suppressed_terms.push(q);
            if n == n_max {
                break;
            }
            let wn = weights[n + 1];
            {
                let (nxt, acc) = (&self.nxt, &mut self.acc);
                region.for_each_row(space, |start, _| {
                    for j in start..start + region_len {
                        acc[j] += wn * nxt[j];
                    }
                });
            }
            std::mem::swap(&mut self.cur, &mut self.nxt);
        }

        // Ring mass after the chunk.
        let mut ring_after = 0.0;
        {
            let acc = &self.acc;
            region.for_each_row(space, |start, outer| {
                for k in 0..region_len {
                    let mut eta = outer.to_vec();
                    eta[0] = region.lo[0] + k as u32;
                    if !active.contains(&eta) {
                        ring_after += acc[start + k];
                    }
                }
            });
        }
        if !ring_after.is_finite() {
            return Err(self.fault("non-finite probability"));
        }

        // ∫₀ʰ Σ π(τ)·suppressed dτ = (1/Λ) Σ_n P(Pois(Λh) > n) q_n.
        let mut cum = 0.0;
        let mut suppressed = 0.0;
        for (n, &q) in suppressed_terms.iter().enumerate() {
            cum += weights[n];
            suppressed += (1.0 - cum).max(0.0) * q;
        }
        suppressed *= inv_lambda;

        let inner = ChunkSeries {
            lambda,
            weights,
            mass,
            receiver,
            outside: outside_total + ring_before,
        };
        Ok((
            UniformizeOut {
                inner,
                outside_total,
                suppressed,
            },
            ring_after - ring_before,
        ))
    }

    /// A binding at the current time.
    pub fn apply_bind(&mut self) -> Result<(), FilterError> {
        if self.bound >= self.receptors {
            return Err(FilterError::Inconsistent(format!(
                "binding at t = {} with all {} receptors bound",
                self.time, self.receptors
            )));
        }
        let e = self.expected_receiver();
        if !(e > 0.0) {
            return Err(FilterError::Inconsistent(format!(
                "binding at t = {} with no molecule in the receiver voxel",
                self.time
            )));
        }
        self.log_likelihood += (self.binding_constant * (self.receptors - self.bound) as f64 * e).ln();
        let r = self.space.receiver_coord();
        let stride = self.space.strides()[r];
        let cap = self.space.caps()[r];
        let inv = 1.0 / e;
        for j in 0..self.pi.len() {
            let x = self.receiver_count(j);
            let p = self.pi[j];
            if x > 0 {
                self.pi[j - stride] = x as f64 * p * inv;
            }
            if x == cap {
                self.pi[j] = 0.0;
            }
        }
        self.bound += 1;
        Ok(())
    }

    /// An unbinding at the current time.
    pub fn apply_unbind(&mut self) -> Result<(), FilterError> {
        if self.bound == 0 {
            return Err(FilterError::Inconsistent(format!(
                "unbinding at t = {} with no receptor bound",
                self.time
            )));
        }
        self.log_likelihood += (self.unbinding_rate * self.bound as f64).ln();
        let r = self.space.receiver_coord();
        let stride = self.space.strides()[r];
        let cap = self.space.caps()[r];
        for j in (0..self.pi.len()).rev() {
            let x = self.receiver_count(j);
            let p = self.pi[j];
            if x == cap {
                self.diagnostics.cap_overflow += p;
            } else if x + 1 == cap {
                self.pi[j + stride] += p;
            } else {
                self.pi[j + stride] = p;
            }
            if x == 0 {
                self.pi[j] = 0.0;
            }
        }
        self.bound -= 1;
        Ok(())
    }

    /// Processes a whole history, recording the log-likelihood at every
    /// event and every requested time.
    pub fn run(mut self, history: &BindingHistory, record_times: &[f64]) -> Result<FilterRun, FilterError> {
        if history.receptors != self.receptors {
            return Err(FilterError::Config(format!(
                "history has {} receptors, model has {}",
                history.receptors, self.receptors
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
        let diagnostics = self.diagnostics;
        Ok(FilterRun {
            points,
            receiver_mean,
            trace: self.trace.take(),
            diagnostics,
        })
    }
}

struct UniformizeOut {
    inner: ChunkSeries,
    outside_total: f64,
    suppressed: f64,
}

/// Output of one exact filter over a history.
#[derive(Debug, Clone)]
pub struct FilterRun {
    /// `(t, log-likelihood)` at events and requested times; at an event the
    /// value includes the event's factor.
    pub points: Vec<(f64, f64)>,
    /// `(t, E[n_R | s, ℬ(t)])` at the requested times.
    pub receiver_mean: Vec<(f64, f64)>,
    pub trace: Option<HermiteTrace>,
    pub diagnostics: Diagnostics,
}

impl FilterRun {
    pub fn log_likelihood_at(&self, t: f64) -> Option<f64> {
        self.points.iter().rev().find(|p| p.0 == t).map(|p| p.1)
    }

    pub fn unreliable(&self) -> bool {
        !self.diagnostics.reliable()
    }
}

/// A symbol hypothesis for the optimal demodulator. The state space is
/// needed only on the capped-space route.
#[derive(Clone, Copy)]
pub struct Hypothesis<'a> {
    pub model: &'a Model,
    pub space: Option<&'a StateSpace>,
}

impl Hypothesis<'_> {
    /// The route `config` resolves to for this hypothesis.
    pub fn route(&self, config: &FilterConfig) -> Route {
        match config.route {
            Route::Auto if independent_support(self.model).is_ok() => Route::IndependentMolecules,
            Route::Auto => Route::CappedSpace,
            r => r,
        }
    }

    pub fn run(&self, history: &BindingHistory, record_times: &[f64], config: FilterConfig) -> Result<FilterRun, FilterError> {
        match self.route(&config) {
            Route::IndependentMolecules => {
                IndependentFilter::new(self.model, config.trace_step)?.run(history, record_times)
            }
            _ => {
                let space = self
                    .space
                    .ok_or_else(|| FilterError::Config("capped-space route needs a state space".into()))?;
                ExactFilter::new(self.model, space, config)?.run(history, record_times)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimalOutput {
    pub priors: Vec<f64>,
    pub runs: Vec<FilterRun>,
    pub decisions: Vec<Decision>,
    pub unreliable: bool,
}

impl OptimalOutput {
    /// L_s(t) − L_0(t) at a decision time.
    pub fn differences_at(&self, t: f64) -> Vec<f64> {
        let l: Vec<f64> = self
            .runs
            .iter()
            .zip(&self.priors)
            .map(|(r, p)| p.ln() + r.log_likelihood_at(t).unwrap())
            .collect();
        l.iter().map(|x| x - l[0]).collect()
    }
}

/// Runs one exact filter per hypothesis and decides at each decision time.
pub fn optimal_demodulate(
    history: &BindingHistory,
    hypotheses: &[Hypothesis<'_>],
    priors: &[f64],
    decision_times: &[f64],
    config: FilterConfig,
) -> Result<OptimalOutput, FilterError> {
    if hypotheses.len() != priors.len() || hypotheses.len() < 2 {
        return Err(FilterError::Config("need one prior per hypothesis, at least two".into()));
    }
    let priors = normalize_priors(priors).map_err(|e| FilterError::Config(e.to_string()))?;
    let runs = hypotheses
        .iter()
        .map(|h| h.run(history, decision_times, config))
        .collect::<Result<Vec<_>, _>>()?;
    let mut sorted = decision_times.to_vec();
    sorted.sort_by(f64::total_cmp);
    let decisions = sorted
        .iter()
        .map(|&t| {
            let l: Vec<f64> = runs
                .iter()
                .zip(&priors)
                .map(|(r, p)| p.ln() + r.log_likelihood_at(t).unwrap())
                .collect();
            let (symbol, tie) = argmax_with_tie(&l);
            Decision { time: t, symbol, tie }
        })
        .collect();
    let unreliable = runs.iter().any(|r| r.unreliable());
    Ok(OptimalOutput {
        priors,
        runs,
        decisions,
        unreliable,
    })
}
