//! Cap selection from pilot simulations.

use rayon::prelude::*;

use crate::model::Model;
use crate::seeds::SeedStream;
use crate::ssa::{SimOptions, Simulator, SsaError};

/// Largest count seen in each hidden coordinate over `n_runs` simulations
/// of `model` up to `horizon`.
pub fn pilot_maxima(
    model: &Model,
    horizon: f64,
    n_runs: usize,
    seeds: SeedStream,
) -> Result<Vec<u32>, SsaError> {
    let dims = model.n_voxels() + model.n_intermediates();
    let per_run: Vec<Vec<u32>> = (0..n_runs as u64)
        .into_par_iter()
        .map(|i| {
            let mut sim = Simulator::new(model, seeds.seed(i), SimOptions::default());
            let mut max = sim.state().counts()[..dims].to_vec();
            sim.run_until(horizon, |_, _, state| {
                for (m, &c) in max.iter_mut().zip(&state.counts()[..dims]) {
                    *m = (*m).max(c);
                }
            })?;
            Ok(max)
        })
        .collect::<Result<_, SsaError>>()?;
    let mut max = vec![0u32; dims];
    for run in per_run {
        for (m, c) in max.iter_mut().zip(run) {
            *m = (*m).max(c);
        }
    }
    Ok(max)
}

/// Pilot maximum plus five standard deviations of a Poisson count.
pub fn default_cap(max: u32) -> u32 {
    max + (5.0 * (max as f64).sqrt()).ceil() as u32
}

/// Caps that cover every hypothesis: the elementwise maximum over all
/// models of `default_cap(pilot max)`.
pub fn pilot_caps(
    models: &[&Model],
    horizon: f64,
    n_runs: usize,
    seeds: SeedStream,
) -> Result<Vec<u32>, SsaError> {
    let mut caps: Vec<u32> = Vec::new();
    for (k, m) in models.iter().enumerate() {
        let max = pilot_maxima(m, horizon, n_runs, seeds.child(k as u64))?;
        if caps.is_empty() {
            caps = vec![0; max.len()];
        }
        for (c, x) in caps.iter_mut().zip(max) {
            *c = (*c).max(default_cap(x).max(1));
        }
    }
    Ok(caps)
}
