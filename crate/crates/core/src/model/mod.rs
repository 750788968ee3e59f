//! The voxelised reaction–diffusion Markov process.
//!
//! A [`Model`] is built from a [`ModelSpec`] and a transmitter [`Schedule`].
//! It holds the immutable list of transition channels (diffusion hops,
//! boundary escapes, transmitter reactions, receptor binding/unbinding) and
//! the initial-state distribution. State is tracked as flat molecule counts,
//! see [`SystemState`].

pub mod catalog;
mod grid;
mod spec;

use std::collections::BTreeSet;

use rand::Rng;
use thiserror::Error;

pub use grid::{voxel_index, Boundary, Face, FaceBoundary, GridSpec, Voxel, VoxelRef};
pub use spec::{
    InitialState, ModelSpec, Reaction, ReactionSet, ReceiverSpec, TransmitterSpec, VoxelCount,
    MODEL_FORMAT_VERSION, SIGNAL,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("range error: {0}")]
    Range(String),
    #[error("configuration error: {0}")]
    Config(String),
}

/// Molecule counts of the full Markov state (N(t), b(t)).
///
/// Counts are stored flat as `[n_1 .. n_Nv, n_Q1 .. n_QH, b]`; the absorbed
/// count n_A is kept separately since no propensity depends on it.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SystemState {
    counts: Vec<u32>,
    n_voxels: usize,
    pub absorbed: u64,
}

impl SystemState {
    pub fn zero(n_voxels: usize, n_intermediates: usize) -> Self {
        SystemState {
            counts: vec![0; n_voxels + n_intermediates + 1],
            n_voxels,
            absorbed: 0,
        }
    }

    /// Builds a state from flat counts `[voxels.., intermediates.., b]`.
    pub fn from_parts(n_voxels: usize, counts: Vec<u32>, absorbed: u64) -> Self {
        assert!(counts.len() > n_voxels, "counts must include the bound slot");
        SystemState {
            counts,
            n_voxels,
            absorbed,
        }
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn counts_mut(&mut self) -> &mut [u32] {
        &mut self.counts
    }

    pub fn n_voxels(&self) -> usize {
        self.n_voxels
    }

    pub fn voxel_counts(&self) -> &[u32] {
        &self.counts[..self.n_voxels]
    }

    pub fn voxel(&self, v: Voxel) -> u32 {
        self.counts[v.offset()]
    }

    pub fn intermediate_counts(&self) -> &[u32] {
        &self.counts[self.n_voxels..self.counts.len() - 1]
    }

    pub fn bound(&self) -> u32 {
        *self.counts.last().unwrap()
    }

    pub fn set_voxel(&mut self, v: Voxel, count: u32) {
        self.counts[v.offset()] = count;
    }

    pub fn set_bound(&mut self, b: u32) {
        *self.counts.last_mut().unwrap() = b;
    }

    pub fn signal_total(&self) -> u64 {
        self.voxel_counts().iter().map(|&c| c as u64).sum()
    }

    /// Applies a channel's state change. Panics if a count would go negative,
    /// which cannot happen for a channel with positive propensity.
    pub fn apply(&mut self, channel: &Channel) {
        for &(slot, change) in &channel.delta {
            let c = &mut self.counts[slot];
            *c = c
                .checked_add_signed(change)
                .expect("channel fired with insufficient reactants");
        }
        self.absorbed += channel.absorbed as u64;
    }
}

/// Which transition a channel represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelKind {
    Diffusion { from: Voxel, to: Voxel },
    Escape { voxel: Voxel, face: Face },
    TxReaction { symbol: usize, reaction: usize },
    Binding,
    Unbinding,
}

impl ChannelKind {
    pub fn is_receiver(&self) -> bool {
        matches!(self, ChannelKind::Binding | ChannelKind::Unbinding)
    }
}

impl std::fmt::Display for ChannelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ChannelKind::Diffusion { from, to } => write!(f, "diffuse:{from}->{to}"),
            ChannelKind::Escape { voxel, face } => write!(f, "escape:{voxel}:{face:?}"),
            ChannelKind::TxReaction { symbol, reaction } => write!(f, "tx:{symbol}:{reaction}"),
            ChannelKind::Binding => write!(f, "bind"),
            ChannelKind::Unbinding => write!(f, "unbind"),
        }
    }
}

/// Mass-action propensity forms over count slots.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kinetics {
    Constant { rate: f64 },
    Linear { rate: f64, slot: usize },
    /// Two distinct reactants.
    Bilinear { rate: f64, a: usize, b: usize },
    /// Two molecules of the same species: rate · n (n − 1).
    Pair { rate: f64, slot: usize },
    /// λ · n_R · (M − b).
    Binding {
        rate: f64,
        ligand: usize,
        bound: usize,
        receptors: u32,
    },
}

impl Kinetics {
    #[inline]
    pub fn propensity(&self, counts: &[u32]) -> f64 {
        match *self {
            Kinetics::Constant { rate } => rate,
            Kinetics::Linear { rate, slot } => rate * counts[slot] as f64,
            Kinetics::Bilinear { rate, a, b } => rate * counts[a] as f64 * counts[b] as f64,
            Kinetics::Pair { rate, slot } => {
                let n = counts[slot] as f64;
                rate * n * (n - 1.0).max(0.0)
            }
            Kinetics::Binding {
                rate,
                ligand,
                bound,
                receptors,
            } => {
                let free = receptors.saturating_sub(counts[bound]);
                rate * counts[ligand] as f64 * free as f64
            }
        }
    }

    /// Count slots the propensity reads.
    pub fn slots(&self) -> Vec<usize> {
        match *self {
            Kinetics::Constant { .. } => vec![],
            Kinetics::Linear { slot, .. } | Kinetics::Pair { slot, .. } => vec![slot],
            Kinetics::Bilinear { a, b, .. } => vec![a, b],
            Kinetics::Binding { ligand, bound, .. } => vec![ligand, bound],
        }
    }
}

/// One transition channel of the Markov process.
#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    pub kind: ChannelKind,
    pub kinetics: Kinetics,
    /// Sparse state change as `(slot, change)`.
    pub delta: Vec<(usize, i32)>,
    /// Molecules leaving the system when this channel fires.
    pub absorbed: u32,
    /// Transmitter channels are active only while their symbol is scheduled.
    pub symbol: Option<usize>,
}

impl Channel {
    pub fn propensity(&self, state: &SystemState) -> f64 {
        self.kinetics.propensity(state.counts())
    }
}

/// Which symbol's reaction set drives the transmitter over time.
#[derive(Debug, Clone, PartialEq)]
pub enum Schedule {
    Single(usize),
    /// Slot `k` is active on `[k·slot_duration, (k+1)·slot_duration)`; a
    /// `None` slot and all time after the last slot are silent.
    Sequence {
        slots: Vec<Option<usize>>,
        slot_duration: f64,
    },
}

impl Schedule {
    pub fn active_at(&self, t: f64) -> Option<usize> {
        match self {
            Schedule::Single(s) => Some(*s),
            Schedule::Sequence {
                slots,
                slot_duration,
            } => {
                if t < 0.0 {
                    return None;
                }
                let k = (t / slot_duration).floor() as usize;
                slots.get(k).copied().flatten()
            }
        }
    }

    /// First slot boundary strictly after `t`, if the schedule still changes.
    pub fn next_switch(&self, t: f64) -> Option<f64> {
        match self {
            Schedule::Single(_) => None,
            Schedule::Sequence {
                slots,
                slot_duration,
            } => {
                let k = (t / slot_duration).floor() as usize + 1;
                if k > slots.len() {
                    None
                } else {
                    Some(k as f64 * slot_duration)
                }
            }
        }
    }

    pub fn symbols(&self) -> BTreeSet<usize> {
        match self {
            Schedule::Single(s) => [*s].into(),
            Schedule::Sequence { slots, .. } => slots.iter().flatten().copied().collect(),
        }
    }
}

/// An immutable, fully resolved model ready for simulation and filtering.
#[derive(Debug, Clone)]
pub struct Model {
    spec: ModelSpec,
    schedule: Schedule,
    n_voxels: usize,
    n_intermediates: usize,
    transmitter: Voxel,
    receiver: Option<Voxel>,
    receptors: u32,
    binding_constant: f64,
    unbinding_rate: f64,
    channels: Vec<Channel>,
    dependents: Vec<Vec<usize>>,
    initial: Vec<(f64, SystemState)>,
    warnings: Vec<String>,
}

/// Builds the model in which the transmitter uses `symbol` for all time.
pub fn build_model(spec: &ModelSpec, symbol: usize) -> Result<Model, ModelError> {
    Model::build(spec, Schedule::Single(symbol))
}

impl Model {
    pub fn build(spec: &ModelSpec, schedule: Schedule) -> Result<Model, ModelError> {
        let grid = &spec.grid;
        let mut warnings = grid.validate()?;
        let n_voxels = grid.n_voxels();
        let tx = &spec.transmitter;
        let k = tx.symbols.len();
        if k < 2 {
            return Err(ModelError::Config(format!(
                "transmitter needs at least 2 symbols, got {k}"
            )));
        }
        for s in schedule.symbols() {
            if s >= k {
                return Err(ModelError::Config(format!(
                    "symbol {s} out of range for {k} symbols"
                )));
            }
        }
        if let Schedule::Sequence { slot_duration, .. } = &schedule {
            if !(*slot_duration > 0.0) {
                return Err(ModelError::Config("slot duration must be positive".into()));
            }
        }
        let transmitter = tx.voxel.resolve(grid)?;
        let n_intermediates = tx.species.len();
        let mut names = BTreeSet::new();
        for name in &tx.species {
            if name == SIGNAL || !names.insert(name.as_str()) {
                return Err(ModelError::Config(format!(
                    "intermediate species name {name:?} is reserved or duplicated"
                )));
            }
        }
        let bound_slot = n_voxels + n_intermediates;

        let (receiver, receptors, binding_constant, unbinding_rate) = match &spec.receiver {
            Some(rx) => {
                let v = rx.voxel.resolve(grid)?;
                if v == transmitter && n_voxels > 1 {
                    return Err(ModelError::Config(format!(
                        "receiver voxel {v} coincides with transmitter voxel"
                    )));
                }
                for (what, x) in [
                    ("binding rate constant", rx.binding_rate_constant),
                    ("unbinding rate", rx.unbinding_rate),
                ] {
                    if !(x >= 0.0) || !x.is_finite() {
                        return Err(ModelError::Config(format!(
                            "{what} must be nonnegative and finite, got {x}"
                        )));
                    }
                }
                (
                    Some(v),
                    rx.receptors,
                    rx.binding_propensity_constant(grid),
                    rx.unbinding_rate,
                )
            }
            None => (None, 0, 0.0, 0.0),
        };

        let slot_of = |name: &str| -> Result<usize, ModelError> {
            if name == SIGNAL {
                return Ok(transmitter.offset());
            }
            tx.species
                .iter()
                .position(|s| s == name)
                .map(|i| n_voxels + i)
                .ok_or_else(|| ModelError::Config(format!("undeclared species {name:?}")))
        };

        let mut channels = Vec::new();
        let d = grid.hop_rate();
        for v in grid.voxels() {
            for face in Face::ALL {
                if let Some(u) = grid.neighbour(v, face) {
                    channels.push(Channel {
                        kind: ChannelKind::Diffusion { from: v, to: u },
                        kinetics: Kinetics::Linear {
                            rate: d,
                            slot: v.offset(),
                        },
                        delta: vec![(v.offset(), -1), (u.offset(), 1)],
                        absorbed: 0,
                        symbol: None,
                    });
                }
            }
        }
        for v in grid.voxels() {
            for (face, rate) in grid.escape_faces(v) {
                channels.push(Channel {
                    kind: ChannelKind::Escape { voxel: v, face },
                    kinetics: Kinetics::Linear {
                        rate,
                        slot: v.offset(),
                    },
                    delta: vec![(v.offset(), -1)],
                    absorbed: 1,
                    symbol: None,
                });
            }
        }
        // Validate every symbol, not just the scheduled ones.
        for (s, set) in tx.symbols.iter().enumerate() {
            for (r, reaction) in set.reactions.iter().enumerate() {
                let channel = reaction_channel(reaction, s, r, &slot_of)?;
                if schedule.symbols().contains(&s) {
                    channels.push(channel);
                }
            }
        }
        if let Some(rx) = receiver {
            channels.push(Channel {
                kind: ChannelKind::Binding,
                kinetics: Kinetics::Binding {
                    rate: binding_constant,
                    ligand: rx.offset(),
                    bound: bound_slot,
                    receptors,
                },
                delta: vec![(rx.offset(), -1), (bound_slot, 1)],
                absorbed: 0,
                symbol: None,
            });
            channels.push(Channel {
                kind: ChannelKind::Unbinding,
                kinetics: Kinetics::Linear {
                    rate: unbinding_rate,
                    slot: bound_slot,
                },
                delta: vec![(rx.offset(), 1), (bound_slot, -1)],
                absorbed: 0,
                symbol: None,
            });
        }

        let n_slots = bound_slot + 1;
        let mut readers: Vec<Vec<usize>> = vec![Vec::new(); n_slots];
        for (c, ch) in channels.iter().enumerate() {
            for slot in ch.kinetics.slots() {
                readers[slot].push(c);
            }
        }
        let dependents = channels
            .iter()
            .map(|ch| {
                let mut deps: Vec<usize> = ch
                    .delta
                    .iter()
                    .flat_map(|&(slot, _)| readers[slot].iter().copied())
                    .collect();
                deps.sort_unstable();
                deps.dedup();
                deps
            })
            .collect();

        let initial = resolve_initial(spec, n_voxels, n_intermediates, receptors)?;
        for w in &warnings {
            log::warn!("{w}");
        }
        if let Some(rx) = &spec.receiver {
            if rx.receptors == 0 {
                warnings.push("receiver has no receptors".into());
            }
        }

        Ok(Model {
            spec: spec.clone(),
            schedule,
            n_voxels,
            n_intermediates,
            transmitter,
            receiver,
            receptors,
            binding_constant,
            unbinding_rate,
            channels,
            dependents,
            initial,
            warnings,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn grid(&self) -> &GridSpec {
        &self.spec.grid
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    pub fn channels(&self) -> &[Channel] {
        &self.channels
    }

    /// Channels whose propensity may change when channel `c` fires.
    pub fn dependents(&self, c: usize) -> &[usize] {
        &self.dependents[c]
    }

    pub fn n_voxels(&self) -> usize {
        self.n_voxels
    }

    pub fn n_intermediates(&self) -> usize {
        self.n_intermediates
    }

    pub fn transmitter_voxel(&self) -> Voxel {
        self.transmitter
    }

    pub fn receiver_voxel(&self) -> Option<Voxel> {
        self.receiver
    }

    /// Voxel whose signalling-molecule count the internal models track: the
    /// receiver voxel, or the transmitter voxel when there is no receiver.
    pub fn measured_voxel(&self) -> Voxel {
        self.receiver.unwrap_or(self.transmitter)
    }

    pub fn receptors(&self) -> u32 {
        self.receptors
    }

    /// λ = λ̃ / W³.
    pub fn binding_constant(&self) -> f64 {
        self.binding_constant
    }

    pub fn unbinding_rate(&self) -> f64 {
        self.unbinding_rate
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Slot index of the bound-receptor count in [`SystemState::counts`].
    pub fn bound_slot(&self) -> usize {
        self.n_voxels + self.n_intermediates
    }

    /// Weighted initial-state alternatives; weights sum to one.
    pub fn initial_states(&self) -> &[(f64, SystemState)] {
        &self.initial
    }

    pub fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> SystemState {
        if self.initial.len() == 1 {
            return self.initial[0].1.clone();
        }
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (w, s) in &self.initial {
            acc += w;
            if u < acc {
                return s.clone();
            }
        }
        self.initial.last().unwrap().1.clone()
    }

    pub fn is_active(&self, channel: &Channel, symbol: Option<usize>) -> bool {
        match channel.symbol {
            None => true,
            Some(s) => symbol == Some(s),
        }
    }

    /// Propensity of channel `c` when `symbol` drives the transmitter.
    #[inline]
    pub fn propensity(&self, c: usize, counts: &[u32], symbol: Option<usize>) -> f64 {
        let ch = &self.channels[c];
        if self.is_active(ch, symbol) {
            ch.kinetics.propensity(counts)
        } else {
            0.0
        }
    }

    /// Sum of all channel propensities at `state` at time `t`.
    pub fn total_propensity_at(&self, state: &SystemState, t: f64) -> f64 {
        let symbol = self.schedule.active_at(t);
        (0..self.channels.len())
            .map(|c| self.propensity(c, state.counts(), symbol))
            .sum()
    }

    /// Sum of all channel propensities at `state` (schedule evaluated at t = 0).
    pub fn total_propensity(&self, state: &SystemState) -> f64 {
        self.total_propensity_at(state, 0.0)
    }

    pub fn check_state(&self, state: &SystemState) -> Result<(), ModelError> {
        if state.counts.len() != self.n_voxels + self.n_intermediates + 1 {
            return Err(ModelError::Config("state has wrong dimension".into()));
        }
        if state.bound() > self.receptors {
            return Err(ModelError::Range(format!(
                "bound count {} exceeds receptor count {}",
                state.bound(),
                self.receptors
            )));
        }
        Ok(())
    }
}

fn reaction_channel(
    reaction: &Reaction,
    symbol: usize,
    index: usize,
    slot_of: &dyn Fn(&str) -> Result<usize, ModelError>,
) -> Result<Channel, ModelError> {
    if !(reaction.rate >= 0.0) || !reaction.rate.is_finite() {
        return Err(ModelError::Config(format!(
            "reaction {index} of symbol {symbol}: rate must be nonnegative and finite"
        )));
    }
    let reactants = reaction
        .reactants
        .iter()
        .map(|n| slot_of(n))
        .collect::<Result<Vec<_>, _>>()?;
    let products = reaction
        .products
        .iter()
        .map(|n| slot_of(n))
        .collect::<Result<Vec<_>, _>>()?;
    let rate = reaction.rate;
    let kinetics = match reactants.as_slice() {
        [] => Kinetics::Constant { rate },
        [a] => Kinetics::Linear { rate, slot: *a },
        [a, b] if a == b => Kinetics::Pair { rate, slot: *a },
        [a, b] => Kinetics::Bilinear {
            rate,
            a: *a,
            b: *b,
        },
        _ => {
            return Err(ModelError::Config(format!(
                "reaction {index} of symbol {symbol} has order {} (at most 2 supported)",
                reactants.len()
            )))
        }
    };
    let mut delta: Vec<(usize, i32)> = Vec::new();
    for (slots, sign) in [(&reactants, -1), (&products, 1)] {
        for &slot in slots.iter() {
            match delta.iter_mut().find(|(s, _)| *s == slot) {
                Some((_, c)) => *c += sign,
                None => delta.push((slot, sign)),
            }
        }
    }
    delta.retain(|&(_, c)| c != 0);
    delta.sort_unstable();
    let absorbed = reactants.len().saturating_sub(products.len()) as u32;
    Ok(Channel {
        kind: ChannelKind::TxReaction {
            symbol,
            reaction: index,
        },
        kinetics,
        delta,
        absorbed,
        symbol: Some(symbol),
    })
}

fn resolve_initial(
    spec: &ModelSpec,
    n_voxels: usize,
    n_intermediates: usize,
    receptors: u32,
) -> Result<Vec<(f64, SystemState)>, ModelError> {
    let alternatives: Vec<InitialState> = if spec.initial.is_empty() {
        vec![InitialState::default()]
    } else {
        spec.initial.clone()
    };
    let total: f64 = alternatives.iter().map(|a| a.weight).sum();
    if !(total > 0.0) || alternatives.iter().any(|a| !(a.weight >= 0.0)) {
        return Err(ModelError::Config(
            "initial-state weights must be nonnegative with a positive sum".into(),
        ));
    }
    let _ = receptors;
    alternatives
        .iter()
        .map(|alt| {
            let mut state = SystemState::zero(n_voxels, n_intermediates);
            for (name, &count) in &alt.species {
                let i = spec
                    .transmitter
                    .species
                    .iter()
                    .position(|s| s == name)
                    .ok_or_else(|| {
                        ModelError::Config(format!("initial count for undeclared species {name:?}"))
                    })?;
                state.counts[n_voxels + i] = count;
            }
            for vc in &alt.signal {
                let v = vc.voxel.resolve(&spec.grid)?;
                state.counts[v.offset()] += vc.count;
            }
            Ok((alt.weight / total, state))
        })
        .collect()
}
