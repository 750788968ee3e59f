//! Exact event-driven simulation (Gillespie direct method).
//!
//! [`simulate`] produces a [`Trajectory`]; [`extract_binding_history`]
//! projects it onto the receiver observable. For bulk use (internal model
//! estimation, experiments) [`Simulator`] can be advanced in steps without
//! perturbing the random stream: the draw for the next event is kept
//! pending across a stop, so sampling at extra times never changes a path.

mod history;
mod io;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ChannelKind, Model, SystemState};

pub use history::{extract_binding_history, BindKind, BindingHistory};
pub use io::FormatError;

/// Name of the random generator recorded in trajectory headers.
pub const RNG_NAME: &str = "chacha8/seed_from_u64";

/// Channel counts above this use the tree selector.
pub const LINEAR_SELECTION_LIMIT: usize = 32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SsaError {
    #[error("simulation fault at t = {time}: {reason}; state = {state:?}")]
    Fault {
        time: f64,
        reason: String,
        state: Vec<u32>,
    },
    #[error("invalid simulation request: {0}")]
    Invalid(String),
}

/// How the firing channel is located among the propensities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Cumulative scan, O(channels) per event.
    Linear,
    /// Binary sum tree, O(log channels) per event.
    Tree,
}

impl Selection {
    pub fn for_channels(n: usize) -> Self {
        if n <= LINEAR_SELECTION_LIMIT {
            Selection::Linear
        } else {
            Selection::Tree
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum Recording {
    /// Every event.
    #[default]
    Full,
    /// Receiver events only, plus state snapshots every `snapshot_interval`.
    ReceiverOnly { snapshot_interval: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    pub recording: Recording,
    /// `None` picks by channel count.
    pub selection: Option<Selection>,
    /// Test mode: binding and unbinding change only b, leaving the receiver
    /// voxel count fixed.
    pub clamp_receiver: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            recording: Recording::Full,
            selection: None,
            clamp_receiver: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub time: f64,
    pub channel: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub time: f64,
    pub state: SystemState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryHeader {
    pub rng: String,
    pub seed: u64,
    pub selection: Selection,
    pub horizon: f64,
    pub recording: Recording,
    pub receptors: u32,
    /// Channel ids of binding and unbinding, if the model has a receiver.
    pub receiver_channels: Option<(u32, u32)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub header: TrajectoryHeader,
    pub initial: SystemState,
    pub events: Vec<Event>,
    pub snapshots: Vec<Snapshot>,
    pub final_state: SystemState,
}

impl Trajectory {
    /// Re-applies every event to the initial state. Only meaningful for
    /// full recordings.
    pub fn replay(&self, model: &Model) -> Result<SystemState, SsaError> {
        if self.header.recording != Recording::Full {
            return Err(SsaError::Invalid(
                "replay needs a full-event trajectory".into(),
            ));
        }
        let mut state = self.initial.clone();
        for e in &self.events {
            let ch = model
                .channels()
                .get(e.channel as usize)
                .ok_or_else(|| SsaError::Invalid(format!("unknown channel {}", e.channel)))?;
            state.apply(ch);
        }
        Ok(state)
    }

    /// State delta of event `e` as `(slot, change)` pairs.
    pub fn delta<'m>(&self, model: &'m Model, e: &Event) -> &'m [(usize, i32)] {
        &model.channels()[e.channel as usize].delta
    }
}

/// Exact simulation of `model` on `[0, horizon]`.
pub fn simulate(model: &Model, horizon: f64, seed: u64) -> Result<Trajectory, SsaError> {
    simulate_with(model, horizon, seed, SimOptions::default())
}

pub fn simulate_with(
    model: &Model,
    horizon: f64,
    seed: u64,
    options: SimOptions,
) -> Result<Trajectory, SsaError> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(SsaError::Invalid(format!("horizon must be positive, got {horizon}")));
    }
    let mut sim = Simulator::new(model, seed, options);
    let initial = sim.state().clone();
    let mut events = Vec::new();
    let mut snapshots = Vec::new();
    match options.recording {
        Recording::Full => {
            sim.run_until(horizon, |t, c, _| events.push(Event { time: t, channel: c as u32 }))?;
        }
        Recording::ReceiverOnly { snapshot_interval } => {
            if !(snapshot_interval > 0.0) {
                return Err(SsaError::Invalid("snapshot interval must be positive".into()));
            }
            let receiver = receiver_channels(model);
            let is_receiver = |c: usize| {
                receiver.is_some_and(|(b, u)| c == b as usize || c == u as usize)
            };
            let mut k = 0u64;
            loop {
                let t_snap = k as f64 * snapshot_interval;
                if t_snap > horizon {
                    break;
                }
                sim.run_until(t_snap, |t, c, _| {
                    if is_receiver(c) {
                        events.push(Event { time: t, channel: c as u32 });
                    }
                })?;
                snapshots.push(Snapshot {
                    time: t_snap,
                    state: sim.state().clone(),
                });
                k += 1;
            }
            sim.run_until(horizon, |t, c, _| {
                if is_receiver(c) {
                    events.push(Event { time: t, channel: c as u32 });
                }
            })?;
        }
    }
    Ok(Trajectory {
        header: TrajectoryHeader {
            rng: RNG_NAME.into(),
            seed,
            selection: sim.selection(),
            horizon,
            recording: options.recording,
            receptors: model.receptors(),
            receiver_channels: receiver_channels(model),
        },
        initial,
        events,
        snapshots,
        final_state: sim.state().clone(),
    })
}

fn receiver_channels(model: &Model) -> Option<(u32, u32)> {
    let find = |kind: ChannelKind| {
        model
            .channels()
            .iter()
            .position(|c| c.kind == kind)
            .map(|i| i as u32)
    };
    Some((find(ChannelKind::Binding)?, find(ChannelKind::Unbinding)?))
}

/// Propensity store with channel selection.
#[derive(Debug, Clone)]
enum Selector {
    Linear(Vec<f64>),
    /// Complete binary tree stored heap-style; leaves start at `leaf0`.
    Tree { nodes: Vec<f64>, leaf0: usize, n: usize },
}

impl Selector {
    fn new(selection: Selection, n: usize) -> Self {
        match selection {
            Selection::Linear => Selector::Linear(vec![0.0; n]),
            Selection::Tree => {
                let leaf0 = n.next_power_of_two().max(1);
                Selector::Tree {
                    nodes: vec![0.0; 2 * leaf0],
                    leaf0,
                    n,
                }
            }
        }
    }

    fn set(&mut self, c: usize, a: f64) {
        match self {
            Selector::Linear(p) => p[c] = a,
            Selector::Tree { nodes, leaf0, .. } => {
                let mut i = *leaf0 + c;
                nodes[i] = a;
                while i > 1 {
                    i /= 2;
                    // Recomputed from the children so the sums never drift.
                    nodes[i] = nodes[2 * i] + nodes[2 * i + 1];
                }
            }
        }
    }

    fn get(&self, c: usize) -> f64 {
        match self {
            Selector::Linear(p) => p[c],
            Selector::Tree { nodes, leaf0, .. } => nodes[*leaf0 + c],
        }
    }

    fn total(&self) -> f64 {
        match self {
            Selector::Linear(p) => p.iter().sum(),
            Selector::Tree { nodes, .. } => nodes[1],
        }
    }

    /// Channel whose cumulative interval contains `u · total`, `u ∈ [0, 1)`.
    /// Never returns a channel with zero propensity.
    fn select(&self, u: f64, total: f64) -> usize {
        match self {
            Selector::Linear(p) => {
                let target = u * total;
                let mut acc = 0.0;
                let mut last = 0;
                for (c, &a) in p.iter().enumerate() {
                    if a > 0.0 {
                        acc += a;
                        last = c;
                        if target < acc {
                            return c;
                        }
                    }
                }
                last
            }
            Selector::Tree { nodes, leaf0, n } => {
                let mut r = u * total;
                let mut i = 1;
                while i < *leaf0 {
                    let left = nodes[2 * i];
                    let right = nodes[2 * i + 1];
                    if (r < left && left > 0.0) || right <= 0.0 {
                        i *= 2;
                    } else {
                        r -= left;
                        i = 2 * i + 1;
                    }
                }
                let c = i - leaf0;
                debug_assert!(c < *n);
                c
            }
        }
    }
}

/// A simulation in progress. Advance with [`Simulator::run_until`].
#[derive(Debug, Clone)]
pub struct Simulator<'m> {
    model: &'m Model,
    rng: ChaCha8Rng,
    state: SystemState,
    time: f64,
    symbol: Option<usize>,
    next_switch: Option<f64>,
    selector: Selector,
    selection: Selection,
    /// Absolute time of the next event drawn but not yet executed.
    pending: Option<f64>,
    clamp_receiver: bool,
}

impl<'m> Simulator<'m> {
    pub fn new(model: &'m Model, seed: u64, options: SimOptions) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let state = model.sample_initial(&mut rng);
        let n = model.channels().len();
        let selection = options.selection.unwrap_or(Selection::for_channels(n));
        let mut sim = Simulator {
            model,
            rng,
            state,
            time: 0.0,
            symbol: model.schedule().active_at(0.0),
            next_switch: model.schedule().next_switch(0.0),
            selector: Selector::new(selection, n),
            selection,
            pending: None,
            clamp_receiver: options.clamp_receiver,
        };
        sim.refresh_all();
        sim
    }

    /// Starts from a given state instead of sampling the initial condition.
    pub fn with_state(mut self, state: SystemState) -> Self {
        self.state = state;
        self.pending = None;
        self.refresh_all();
        self
    }

    pub fn state(&self) -> &SystemState {
        &self.state
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn selection(&self) -> Selection {
        self.selection
    }

    fn refresh_all(&mut self) {
        for c in 0..self.model.channels().len() {
            let a = self.model.propensity(c, self.state.counts(), self.symbol);
            self.selector.set(c, a);
        }
    }

    fn fault(&self, reason: String) -> SsaError {
        SsaError::Fault {
            time: self.time,
            reason,
            state: self.state.counts().to_vec(),
        }
    }

    /// Executes every event with time ≤ `until`, calling
    /// `on_event(time, channel, state_after)` for each, and leaves the clock
    /// at `until`.
    pub fn run_until<F>(&mut self, until: f64, mut on_event: F) -> Result<(), SsaError>
    where
        F: FnMut(f64, usize, &SystemState),
    {
        while self.time < until {
            // Propensities are constant until the next schedule switch.
            let segment_end = match self.next_switch {
                Some(s) if s <= until => s,
                _ => until,
            };
            let t_next = match self.pending {
                Some(t) => t,
                None => {
                    let total = self.selector.total();
                    if !total.is_finite() {
                        return Err(self.fault(format!("non-finite total propensity {total}")));
                    }
                    if total <= 0.0 {
                        f64::INFINITY
                    } else {
                        // 1 - u lies in (0, 1], so the log is finite.
                        let u: f64 = self.rng.random();
                        let t = self.time - (1.0 - u).ln() / total;
                        self.pending = Some(t);
                        t
                    }
                }
            };
            if t_next > segment_end {
                self.time = segment_end;
                if self.next_switch == Some(segment_end) {
                    // Memorylessness: the pending draw is discarded and a
                    // fresh one made under the new propensities.
                    self.pending = None;
                    self.symbol = self.model.schedule().active_at(segment_end);
                    self.next_switch = self.model.schedule().next_switch(segment_end);
                    self.refresh_all();
                }
                continue;
            }
            self.pending = None;
            let total = self.selector.total();
            let u: f64 = self.rng.random();
            let c = self.selector.select(u, total);
            self.time = t_next;
            self.fire(c)?;
            on_event(t_next, c, &self.state);
        }
        Ok(())
    }

    fn fire(&mut self, c: usize) -> Result<(), SsaError> {
        let model = self.model;
        let ch = &model.channels()[c];
        if self.selector.get(c) <= 0.0 {
            return Err(self.fault(format!("selected channel {} with zero propensity", ch.kind)));
        }
        if self.clamp_receiver && ch.kind.is_receiver() {
            let b = self.state.bound();
            let b = if ch.kind == ChannelKind::Binding { b + 1 } else { b - 1 };
            self.state.set_bound(b);
        } else {
            self.state.apply(ch);
        }
        if self.state.bound() > model.receptors() {
            return Err(self.fault(format!(
                "bound count {} exceeds receptor count {}",
                self.state.bound(),
                model.receptors()
            )));
        }
        for &d in model.dependents(c) {
            let a = model.propensity(d, self.state.counts(), self.symbol);
            if !a.is_finite() || a < 0.0 {
                return Err(self.fault(format!(
                    "channel {} has invalid propensity {a}",
                    model.channels()[d].kind
                )));
            }
            self.selector.set(d, a);
        }
        Ok(())
    }
}
