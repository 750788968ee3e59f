use serde::{Deserialize, Serialize};

use super::Trajectory;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BindKind {
    Bind,
    Unbind,
}

/// The receiver observable: binding and unbinding times on `[0, horizon]`.
/// b(t) is the running count of binds minus unbinds, starting from
/// `initial_bound`.
#[derive(Debug, Clone, PartialEq)]
pub struct BindingHistory {
    pub events: Vec<(f64, BindKind)>,
    pub receptors: u32,
    pub horizon: f64,
    pub initial_bound: u32,
}

impl BindingHistory {
    pub fn new(receptors: u32, horizon: f64) -> Self {
        BindingHistory {
            events: Vec::new(),
            receptors,
            horizon,
            initial_bound: 0,
        }
    }

    /// Checks ordering, the horizon and that b stays within `[0, M]`.
    pub fn validate(&self) -> Result<(), String> {
        let mut b = self.initial_bound as i64;
        let mut last = 0.0;
        for (i, &(t, kind)) in self.events.iter().enumerate() {
            if !(t > last || (i == 0 && t > 0.0)) || t > self.horizon {
                return Err(format!("event {i} at t = {t} out of order or outside (0, T]"));
            }
            last = t;
            b += if kind == BindKind::Bind { 1 } else { -1 };
            if b < 0 || b > self.receptors as i64 {
                return Err(format!("b = {b} leaves [0, {}] at t = {t}", self.receptors));
            }
        }
        Ok(())
    }

    /// b(t), right-continuous.
    pub fn bound_at(&self, t: f64) -> u32 {
        let mut b = self.initial_bound as i64;
        for &(te, kind) in &self.events {
            if te > t {
                break;
            }
            b += if kind == BindKind::Bind { 1 } else { -1 };
        }
        b as u32
    }

    /// U(t): number of binds in `[0, t]`.
    pub fn binds_until(&self, t: f64) -> usize {
        self.events
            .iter()
            .take_while(|(te, _)| *te <= t)
            .filter(|(_, k)| *k == BindKind::Bind)
            .count()
    }

    pub fn bind_times(&self) -> impl Iterator<Item = f64> + '_ {
        self.events
            .iter()
            .filter(|(_, k)| *k == BindKind::Bind)
            .map(|(t, _)| *t)
    }

    /// Piecewise-constant b path as `(start time, b)` segments.
    pub fn bound_path(&self) -> Vec<(f64, u32)> {
        let mut out = vec![(0.0, self.initial_bound)];
        let mut b = self.initial_bound as i64;
        for &(t, kind) in &self.events {
            b += if kind == BindKind::Bind { 1 } else { -1 };
            out.push((t, b as u32));
        }
        out
    }

    /// The events restricted to `(start, end]`, shifted to start at zero.
    pub fn window(&self, start: f64, end: f64) -> BindingHistory {
        BindingHistory {
            events: self
                .events
                .iter()
                .filter(|(t, _)| *t > start && *t <= end)
                .map(|&(t, k)| (t - start, k))
                .collect(),
            receptors: self.receptors,
            horizon: end - start,
            initial_bound: self.bound_at(start),
        }
    }
}

/// The binding and unbinding events of a trajectory, in order.
pub fn extract_binding_history(traj: &Trajectory) -> BindingHistory {
    let mut history = BindingHistory::new(traj.header.receptors, traj.header.horizon);
    history.initial_bound = traj.initial.bound();
    if let Some((bind, unbind)) = traj.header.receiver_channels {
        history.events = traj
            .events
            .iter()
            .filter_map(|e| {
                if e.channel == bind {
                    Some((e.time, BindKind::Bind))
                } else if e.channel == unbind {
                    Some((e.time, BindKind::Unbind))
                } else {
                    None
                }
            })
            .collect();
    }
    history
}
