//! Shared oracles for the integration and acceptance tests.
#![allow(dead_code)]

use mcdemod::model::{catalog, ModelSpec, Reaction, ReactionSet, ReceiverSpec, VoxelRef};
use mcdemod::ssa::BindKind;
use nalgebra::DMatrix;

/// One voxel with a source and first-order decay in the transmitter
/// voxel, which is also the receiver.
pub fn tiny_birth_death(birth: f64, death: f64, receptors: u32, lambda_tilde: f64) -> ModelSpec {
    let mut spec = catalog::single_voxel_birth(birth);
    spec.transmitter.symbols = vec![
        ReactionSet::new(
            "birth-death",
            vec![Reaction::new(&[], &["S"], birth), Reaction::new(&["S"], &[], death)],
        ),
        ReactionSet::constant_source(0.0),
    ];
    spec.receiver = Some(ReceiverSpec {
        voxel: VoxelRef::Index(1),
        receptors,
        binding_rate_constant: lambda_tilde,
        unbinding_rate: 1.0,
    });
    spec
}

/// Parameters of the joint (n, b) chain of a one-voxel birth–death model
/// with receptors, capped at `cap` molecules.
#[derive(Debug, Clone, Copy)]
pub struct JointChain {
    pub birth: f64,
    pub death: f64,
    /// λ in 1/s per molecule per free receptor.
    pub lambda: f64,
    pub mu: f64,
    pub receptors: u32,
    pub cap: u32,
}

pub struct OraclePoint {
    pub t: f64,
    pub log_likelihood: f64,
    /// Law of n given the observations so far.
    pub posterior: Vec<f64>,
}

impl JointChain {
    fn idx(&self, n: u32, b: u32) -> usize {
        (b * (self.cap + 1) + n) as usize
    }

    fn size(&self) -> usize {
        ((self.cap + 1) * (self.receptors + 1)) as usize
    }

    /// Generator restricted to transitions that leave b unchanged, with every
    /// receiver transition counted as an exit.
    fn silent_generator(&self) -> DMatrix<f64> {
        let mut g = DMatrix::zeros(self.size(), self.size());
        for b in 0..=self.receptors {
            for n in 0..=self.cap {
                let i = self.idx(n, b);
                let mut out = 0.0;
                if n < self.cap {
                    g[(i, self.idx(n + 1, b))] += self.birth;
                    out += self.birth;
                }
                if n > 0 {
                    g[(i, self.idx(n - 1, b))] += self.death * n as f64;
                    out += self.death * n as f64;
                }
                out += self.lambda * (self.receptors - b) as f64 * n as f64 + self.mu * b as f64;
                g[(i, i)] -= out;
            }
        }
        g
    }

    /// Forward algorithm on a time grid of `step` seconds. Events must sit
    /// on grid points; an unbinding at the cap keeps n at the cap.
    pub fn forward(&self, events: &[(f64, BindKind)], horizon: f64, step: f64) -> Vec<OraclePoint> {
        let prop = (self.silent_generator() * step).exp();
        self.forward_with(&prop, events, horizon, step)
    }

    /// Same recursion with the per-step silent propagator replaced by its
    /// third-order Taylor polynomial: a plain fine-time discretization of
    /// the chain, with no matrix exponential.
    pub fn forward_discretized(&self, events: &[(f64, BindKind)], horizon: f64, step: f64) -> Vec<OraclePoint> {
        let a = self.silent_generator() * step;
        let a2 = &a * &a;
        let a3 = &a2 * &a;
        let prop = DMatrix::identity(self.size(), self.size()) + &a + a2 * 0.5 + a3 * (1.0 / 6.0);
        self.forward_with(&prop, events, horizon, step)
    }

    fn forward_with(&self, prop: &DMatrix<f64>, events: &[(f64, BindKind)], horizon: f64, step: f64) -> Vec<OraclePoint> {
        let n_steps = (horizon / step).round() as usize;
        let mut alpha = vec![0.0; self.size()];
        alpha[self.idx(0, 0)] = 1.0;
        let mut log_scale = 0.0;
        let mut out = Vec::new();
        let mut ev = events.iter().peekable();
        for k in 0..=n_steps {
            let t = k as f64 * step;
            while let Some(&&(te, kind)) = ev.peek() {
                if ((te / step).round() as usize) != k {
                    break;
                }
                ev.next();
                let mut next = vec![0.0; self.size()];
                for b in 0..=self.receptors {
                    for n in 0..=self.cap {
                        let a = alpha[self.idx(n, b)];
                        match kind {
                            BindKind::Bind if n > 0 && b < self.receptors => {
                                next[self.idx(n - 1, b + 1)] +=
                                    a * self.lambda * (self.receptors - b) as f64 * n as f64
                            }
                            BindKind::Unbind if b > 0 => {
                                next[self.idx((n + 1).min(self.cap), b - 1)] += a * self.mu * b as f64
                            }
                            _ => {}
                        }
                    }
                }
                alpha = next;
                self.record(&mut alpha, &mut log_scale, te, &mut out);
            }
            if k == n_steps {
                self.record(&mut alpha, &mut log_scale, t, &mut out);
                break;
            }
            let row = nalgebra::RowDVector::from_row_slice(&alpha);
            alpha = (row * prop).iter().cloned().collect();
        }
        out
    }

    fn record(&self, alpha: &mut [f64], log_scale: &mut f64, t: f64, out: &mut Vec<OraclePoint>) {
        let total: f64 = alpha.iter().sum();
        *log_scale += total.ln();
        alpha.iter_mut().for_each(|a| *a /= total);
        let mut posterior = vec![0.0; (self.cap + 1) as usize];
        for b in 0..=self.receptors {
            for n in 0..=self.cap {
                posterior[n as usize] += alpha[self.idx(n, b)];
            }
        }
        out.push(OraclePoint {
            t,
            log_likelihood: *log_scale,
            posterior,
        });
    }
}

pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}
