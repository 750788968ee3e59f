//! Truncated hidden state space and the row kernel used by uniformization.
//!
//! Hidden states η are voxel counts followed by intermediate-species counts,
//! each coordinate capped. States are laid out in mixed radix with
//! coordinate 0 varying fastest, so one "row" is a run of states that differ
//! only in coordinate 0. Every propensity is at most quadratic along a row,
//! which lets the kernel work row by row on contiguous memory.

use crate::model::{ChannelKind, Kinetics, Model};

use super::FilterError;

/// Largest state space the filter agrees to allocate.
pub const MAX_STATES: usize = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum HiddenKinetics {
    Constant,
    Linear(usize),
    Bilinear(usize, usize),
    Pair(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct HiddenChannel {
    pub rate: f64,
    pub kinetics: HiddenKinetics,
    pub delta: Vec<(usize, i32)>,
    pub offset: isize,
    pub symbol: Option<usize>,
}

/// Hidden coordinates, caps and the b-preserving channels.
#[derive(Debug, Clone)]
pub struct StateSpace {
    caps: Vec<u32>,
    strides: Vec<usize>,
    len: usize,
    receiver: usize,
    pub(crate) channels: Vec<HiddenChannel>,
    /// Largest |change| per coordinate over all channels.
    pub(crate) reach: Vec<u32>,
}

impl StateSpace {
    /// Builds the space for `model` with the given per-coordinate caps
    /// (voxels first, then intermediates).
    pub fn new(model: &Model, caps: &[u32]) -> Result<Self, FilterError> {
        let dims = model.n_voxels() + model.n_intermediates();
        if caps.len() != dims {
            return Err(FilterError::Config(format!(
                "{} caps for {dims} hidden coordinates",
                caps.len()
            )));
        }
        let receiver = model
            .receiver_voxel()
            .ok_or_else(|| FilterError::Config("model has no receiver".into()))?
            .offset();
        let mut strides = Vec::with_capacity(dims);
        let mut len: usize = 1;
        for &c in caps {
            strides.push(len);
            len = len
                .checked_mul(c as usize + 1)
                .filter(|&l| l <= MAX_STATES)
                .ok_or_else(|| {
                    FilterError::TooLarge(format!(
                        "caps {caps:?} give more than {MAX_STATES} states"
                    ))
                })?;
        }
        let mut channels = Vec::new();
        for ch in model.channels() {
            if matches!(ch.kind, ChannelKind::Binding | ChannelKind::Unbinding) {
                continue;
            }
            let (rate, kinetics) = match ch.kinetics {
                Kinetics::Constant { rate } => (rate, HiddenKinetics::Constant),
                Kinetics::Linear { rate, slot } => (rate, HiddenKinetics::Linear(slot)),
                Kinetics::Bilinear { rate, a, b } => (rate, HiddenKinetics::Bilinear(a, b)),
                Kinetics::Pair { rate, slot } => (rate, HiddenKinetics::Pair(slot)),
                Kinetics::Binding { .. } => unreachable!("binding is observed, not hidden"),
            };
            if rate == 0.0 {
                continue;
            }
            let offset = ch
                .delta
                .iter()
                .map(|&(slot, d)| d as isize * strides[slot] as isize)
                .sum();
            channels.push(HiddenChannel {
                rate,
                kinetics,
                delta: ch.delta.clone(),
                offset,
                symbol: ch.symbol,
            });
        }
        let mut reach = vec![0u32; dims];
        for ch in &channels {
            for &(slot, d) in &ch.delta {
                reach[slot] = reach[slot].max(d.unsigned_abs());
            }
        }
        Ok(StateSpace {
            caps: caps.to_vec(),
            strides,
            len,
            receiver,
            channels,
            reach,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn dims(&self) -> usize {
        self.caps.len()
    }

    pub fn caps(&self) -> &[u32] {
        &self.caps
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    /// Hidden coordinate of the receiver voxel count.
    pub fn receiver_coord(&self) -> usize {
        self.receiver
    }

    pub fn index(&self, eta: &[u32]) -> Option<usize> {
        let mut idx = 0;
        for (i, &x) in eta.iter().enumerate() {
            if x > self.caps[i] {
                return None;
            }
            idx += x as usize * self.strides[i];
        }
        Some(idx)
    }

    pub fn coords(&self, mut index: usize) -> Vec<u32> {
        self.caps
            .iter()
            .map(|&c| {
                let r = c as usize + 1;
                let x = index % r;
                index /= r;
                x as u32
            })
            .collect()
    }

    /// Upper bound on the total hidden exit rate plus `kill_rate · η_R`
    /// over the box, evaluated at its upper corner (all propensities are
    /// nondecreasing in every count).
    pub(crate) fn rate_bound(&self, upper: &[u32], symbol: Option<usize>, kill_rate: f64) -> f64 {
        let mut total = kill_rate * upper[self.receiver] as f64;
        for ch in self.active_channels(symbol) {
            let x = |i: usize| upper[i] as f64;
            total += ch.rate
                * match ch.kinetics {
                    HiddenKinetics::Constant => 1.0,
                    HiddenKinetics::Linear(i) => x(i),
                    HiddenKinetics::Bilinear(i, j) => x(i) * x(j),
                    HiddenKinetics::Pair(i) => x(i) * (x(i) - 1.0).max(0.0),
                };
        }
        total
    }

    pub(crate) fn active_channels(
        &self,
        symbol: Option<usize>,
    ) -> impl Iterator<Item = &HiddenChannel> + '_ {
        self.channels
            .iter()
            .filter(move |c| c.symbol.is_none() || c.symbol == symbol)
    }
}

/// An axis-aligned sub-box `[lo_i, hi_i]` of the state space.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Region {
    pub lo: Vec<u32>,
    pub hi: Vec<u32>,
}

impl Region {
    pub fn point(eta: &[u32]) -> Self {
        Region {
            lo: eta.to_vec(),
            hi: eta.to_vec(),
        }
    }

    pub fn include(&mut self, eta: &[u32]) {
        for (i, &x) in eta.iter().enumerate() {
            self.lo[i] = self.lo[i].min(x);
            self.hi[i] = self.hi[i].max(x);
        }
    }

    pub fn expand(&self, by: &[u32], caps: &[u32]) -> Region {
        Region {
            lo: self.lo.iter().zip(by).map(|(&l, &m)| l.saturating_sub(m)).collect(),
            hi: self
                .hi
                .iter()
                .zip(by)
                .zip(caps)
                .map(|((&h, &m), &c)| (h + m).min(c))
                .collect(),
        }
    }

    pub fn contains(&self, eta: &[u32]) -> bool {
        eta.iter()
            .enumerate()
            .all(|(i, &x)| x >= self.lo[i] && x <= self.hi[i])
    }

    #[cfg(test)]
    pub fn size(&self) -> usize {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(&l, &h)| (h - l + 1) as usize)
            .product()
    }

    /// Calls `f(start_index, outer_coords)` for every row of the region;
    /// the row covers coordinate 0 from `lo[0]` to `hi[0]`, and
    /// `start_index` is the flat index of its first state.
    pub fn for_each_row(&self, space: &StateSpace, mut f: impl FnMut(usize, &[u32])) {
        let dims = self.lo.len();
        let mut outer: Vec<u32> = self.lo.clone();
        loop {
            let start: usize = outer
                .iter()
                .zip(space.strides())
                .map(|(&x, &s)| x as usize * s)
                .sum();
            f(start, &outer);
            // Advance the outer multi-index (coordinates 1..dims).
            let mut i = 1;
            loop {
                if i >= dims {
                    return;
                }
                if outer[i] < self.hi[i] {
                    outer[i] += 1;
                    break;
                }
                outer[i] = self.lo[i];
                i += 1;
            }
        }
    }
}

/// Along-row description of one channel: propensity `α + β x + γ x²` for
/// coordinate-0 value `x`, feasible for `x` in `[x_lo, x_hi]`; `x` above
/// `x_hi` is suppressed by the cap (its rate is reported, not applied).
#[derive(Debug, Clone, Copy)]
pub(crate) struct RowTerm {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub x_lo: u32,
    /// Inclusive; `None` means the whole row is infeasible.
    pub x_hi: Option<u32>,
    /// True when the row is infeasible because another coordinate would
    /// exceed its cap (the rate then counts as suppressed).
    pub capped_row: bool,
    pub offset: isize,
}

impl RowTerm {
    #[inline]
    pub fn at(&self, x: f64) -> f64 {
        self.alpha + x * (self.beta + self.gamma * x)
    }
}

pub(crate) fn row_term(ch: &HiddenChannel, outer: &[u32], caps: &[u32]) -> RowTerm {
    let rate = ch.rate;
    let y = |i: usize| outer[i] as f64;
    let (alpha, beta, gamma) = match ch.kinetics {
        HiddenKinetics::Constant => (rate, 0.0, 0.0),
        HiddenKinetics::Linear(0) => (0.0, rate, 0.0),
        HiddenKinetics::Linear(i) => (rate * y(i), 0.0, 0.0),
        HiddenKinetics::Bilinear(0, j) | HiddenKinetics::Bilinear(j, 0) => (0.0, rate * y(j), 0.0),
        HiddenKinetics::Bilinear(i, j) => (rate * y(i) * y(j), 0.0, 0.0),
        HiddenKinetics::Pair(0) => (0.0, -rate, rate),
        HiddenKinetics::Pair(i) => (rate * y(i) * (y(i) - 1.0).max(0.0), 0.0, 0.0),
    };
    let mut x_lo = 0u32;
    let mut x_hi = Some(caps[0]);
    let mut capped_row = false;
    for &(slot, d) in &ch.delta {
        if slot == 0 {
            if d < 0 {
                x_lo = x_lo.max(d.unsigned_abs());
            } else {
                x_hi = x_hi.and_then(|h| caps[0].checked_sub(d as u32).map(|m| h.min(m)));
            }
        } else {
            let v = outer[slot] as i64 + d as i64;
            if v < 0 {
                x_hi = None;
            } else if v > caps[slot] as i64 {
                x_hi = None;
                capped_row = true;
            }
        }
    }
    RowTerm {
        alpha,
        beta,
        gamma,
        x_lo,
        x_hi,
        capped_row,
        offset: ch.offset,
    }
}
