//! Internal models σ_s(t) = E[n_R(t) | s], estimated by averaging SSA runs.

use std::io::{BufRead, Write};
use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::model::Model;
use crate::seeds::SeedStream;
use crate::ssa::{SimOptions, Simulator, SsaError, RNG_NAME};

pub const DEFAULT_GRID_STEP: f64 = 0.005;
pub const DEFAULT_RUNS: usize = 500;
const CSV_TAG: &str = "# mcdemod internal-model v1";

#[derive(Debug, Error)]
pub enum InternalModelError {
    #[error(transparent)]
    Simulation(#[from] SsaError),
    #[error("invalid request: {0}")]
    Invalid(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// σ on the grid `0, Δ, 2Δ, …`, linearly interpolated in between.
#[derive(Debug, Clone, PartialEq)]
pub struct InternalModel {
    pub symbol: usize,
    pub step: f64,
    pub sigma: Vec<f64>,
    pub stderr: Vec<f64>,
    pub n_runs: usize,
    pub model_hash: String,
    pub seeds: Option<SeedStream>,
    /// Running integral of σ at each grid point.
    cumulative: Vec<f64>,
}

impl InternalModel {
    pub fn from_grid(symbol: usize, step: f64, sigma: Vec<f64>, stderr: Vec<f64>) -> Self {
        assert!(step > 0.0 && !sigma.is_empty() && sigma.len() == stderr.len());
        let mut cumulative = Vec::with_capacity(sigma.len());
        let mut acc = 0.0;
        cumulative.push(0.0);
        for w in sigma.windows(2) {
            acc += 0.5 * step * (w[0] + w[1]);
            cumulative.push(acc);
        }
        InternalModel {
            symbol,
            step,
            sigma,
            stderr,
            n_runs: 0,
            model_hash: String::new(),
            seeds: None,
            cumulative,
        }
    }

    /// Constant σ ≡ `value` on `[0, horizon]`.
    pub fn constant(symbol: usize, value: f64, horizon: f64, step: f64) -> Self {
        let n = (horizon / step).ceil() as usize + 1;
        Self::from_grid(symbol, step, vec![value; n], vec![0.0; n])
    }

    /// Last time covered by the grid.
    pub fn horizon(&self) -> f64 {
        (self.sigma.len() - 1) as f64 * self.step
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.sigma.len()).map(|k| k as f64 * self.step)
    }

    /// Grid cell containing `t` and the offset into it; `t` is clamped to
    /// the grid.
    fn locate(&self, t: f64) -> (usize, f64) {
        let last = self.sigma.len() - 1;
        if t <= 0.0 || last == 0 {
            return (0, 0.0);
        }
        let k = ((t / self.step).floor() as usize).min(last - 1);
        let off = (t - k as f64 * self.step).clamp(0.0, self.step);
        (k, off)
    }

    /// σ(t) by linear interpolation; zero before t = 0.
    pub fn value(&self, t: f64) -> f64 {
        if t < 0.0 {
            return 0.0;
        }
        if self.sigma.len() == 1 {
            return self.sigma[0];
        }
        let (k, off) = self.locate(t);
        let w = off / self.step;
        self.sigma[k] * (1.0 - w) + self.sigma[k + 1] * w
    }

    fn cumulative_at(&self, t: f64) -> f64 {
        if t <= 0.0 || self.sigma.len() == 1 {
            return 0.0;
        }
        let (k, off) = self.locate(t);
        let slope = (self.sigma[k + 1] - self.sigma[k]) / self.step;
        self.cumulative[k] + off * (self.sigma[k] + 0.5 * slope * off)
    }

    /// ∫ₐᵇ σ(τ) dτ, exact for the interpolant.
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        self.cumulative_at(b) - self.cumulative_at(a)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<(), InternalModelError> {
        writeln!(w, "{CSV_TAG}")?;
        writeln!(w, "# symbol {}", self.symbol)?;
        writeln!(w, "# model_hash {}", self.model_hash)?;
        match &self.seeds {
            Some(s) => writeln!(w, "# seeds {} {} count {}", s.base, s.stream, self.n_runs)?,
            None => writeln!(w, "# seeds none")?,
        }
        writeln!(w, "# rng {RNG_NAME}")?;
        writeln!(w, "# n_runs {}", self.n_runs)?;
        writeln!(w, "# step {}", self.step)?;
        writeln!(w, "t,sigma,stderr")?;
        for (k, (s, e)) in self.sigma.iter().zip(&self.stderr).enumerate() {
            writeln!(w, "{},{s},{e}", k as f64 * self.step)?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self, InternalModelError> {
        let err = |line: usize, msg: &str| InternalModelError::Parse {
            line,
            msg: msg.into(),
        };
        let mut symbol = 0;
        let mut step = f64::NAN;
        let mut n_runs = 0;
        let mut model_hash = String::new();
        let mut seeds = None;
        let mut sigma = Vec::new();
        let mut stderr = Vec::new();
        let mut tagged = false;
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            let n = i + 1;
            if i == 0 {
                tagged = line.trim_end() == CSV_TAG;
                continue;
            }
            if let Some(rest) = line.strip_prefix("# ") {
                let mut parts = rest.split_whitespace();
                match parts.next() {
                    Some("symbol") => {
                        symbol = parts.next().and_then(|v| v.parse().ok()).ok_or_else(|| err(n, "bad symbol"))?
                    }
                    Some("step") => {
                        step = parts.next().and_then(|v| v.parse().ok()).ok_or_else(|| err(n, "bad step"))?
                    }
                    Some("n_runs") => {
                        n_runs = parts.next().and_then(|v| v.parse().ok()).ok_or_else(|| err(n, "bad n_runs"))?
                    }
                    Some("model_hash") => model_hash = parts.next().unwrap_or("").to_string(),
                    Some("seeds") => {
                        let base = parts.next().and_then(|v| v.parse().ok());
                        let stream = parts.next().and_then(|v| v.parse().ok());
                        if let (Some(base), Some(stream)) = (base, stream) {
                            seeds = Some(SeedStream { base, stream });
                        }
                    }
                    _ => {}
                }
                continue;
            }
            if line.starts_with("t,") || line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 3 {
                return Err(err(n, "expected t,sigma,stderr"));
            }
            let parse = |s: &str| s.trim().parse::<f64>().map_err(|_| err(n, "bad number"));
            let t = parse(fields[0])?;
            if step.is_finite() && (t - sigma.len() as f64 * step).abs() > 1e-9 * (1.0 + t) {
                return Err(err(n, "time column does not match the grid step"));
            }
            sigma.push(parse(fields[1])?);
            stderr.push(parse(fields[2])?);
        }
        if !tagged {
            return Err(err(1, "missing internal-model header"));
        }
        if !(step > 0.0) || sigma.is_empty() {
            return Err(err(0, "missing step or data"));
        }
        if sigma.iter().any(|&s| !(s >= 0.0)) {
            return Err(err(0, "negative or non-finite sigma"));
        }
        let mut m = InternalModel::from_grid(symbol, step, sigma, stderr);
        m.n_runs = n_runs;
        m.model_hash = model_hash;
        m.seeds = seeds;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<(), InternalModelError> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn load(path: &Path) -> Result<Self, InternalModelError> {
        let f = std::fs::File::open(path)?;
        Self::read_csv(std::io::BufReader::new(f))
    }
}

/// Per-run counts of the measured voxel at grid times `0, Δ, …, horizon`.
pub fn sample_measured_counts(
    model: &Model,
    horizon: f64,
    step: f64,
    seed: u64,
) -> Result<Vec<u32>, SsaError> {
    let n = (horizon / step).round() as usize + 1;
    let voxel = model.measured_voxel();
    let mut sim = Simulator::new(model, seed, SimOptions::default());
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        sim.run_until(k as f64 * step, |_, _, _| {})?;
        out.push(sim.state().voxel(voxel));
    }
    Ok(out)
}

/// Monte-Carlo estimate of σ for the symbol the model was built with.
pub fn estimate_internal_model(
    model: &Model,
    horizon: f64,
    step: f64,
    n_runs: usize,
    seeds: SeedStream,
) -> Result<InternalModel, InternalModelError> {
    if n_runs < 2 {
        return Err(InternalModelError::Invalid("need at least 2 runs".into()));
    }
    if !(step > 0.0) || !(horizon > 0.0) {
        return Err(InternalModelError::Invalid("step and horizon must be positive".into()));
    }
    let symbol = model.schedule().symbols().into_iter().next().unwrap_or(0);
    let runs: Vec<Vec<u32>> = (0..n_runs as u64)
        .into_par_iter()
        .map(|i| sample_measured_counts(model, horizon, step, seeds.seed(i)))
        .collect::<Result<_, _>>()?;
    let n_points = runs[0].len();
    let mut sum = vec![0.0f64; n_points];
    let mut sum_sq = vec![0.0f64; n_points];
    // Fixed summation order keeps the output bit-reproducible.
    for run in &runs {
        for (k, &c) in run.iter().enumerate() {
            let c = c as f64;
            sum[k] += c;
            sum_sq[k] += c * c;
        }
    }
    let n = n_runs as f64;
    let sigma: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let stderr = sigma
        .iter()
        .zip(&sum_sq)
        .map(|(&m, &sq)| {
            let var = ((sq - n * m * m) / (n - 1.0)).max(0.0);
            (var / n).sqrt()
        })
        .collect();
    let mut im = InternalModel::from_grid(symbol, step, sigma, stderr);
    im.n_runs = n_runs;
    im.model_hash = model.spec().content_hash();
    im.seeds = Some(seeds);
    Ok(im)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn interpolation_and_exact_integral() {
        let m = InternalModel::from_grid(0, 0.5, vec![0.0, 1.0, 3.0], vec![0.0; 3]);
        assert_eq!(m.horizon(), 1.0);
        assert!((m.value(0.25) - 0.5).abs() < 1e-15);
        assert!((m.value(0.75) - 2.0).abs() < 1e-15);
        assert_eq!(m.value(-1.0), 0.0);
        // ∫0^1 = 0.25 + 1.0
        assert!((m.integral(0.0, 1.0) - 1.25).abs() < 1e-15);
        // split at the grid point 0.5
        let expected = 0.25 * (0.5 + 1.0) / 2.0 + 0.25 * (1.0 + 2.0) / 2.0;
        assert!((m.integral(0.25, 0.75) - expected).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn integral_is_additive(vals in proptest::collection::vec(0.0f64..100.0, 2..40),
                                a in 0.0f64..1.0, b in 0.0f64..1.0, c in 0.0f64..1.0) {
            let step = 1.0 / (vals.len() - 1) as f64;
            let m = InternalModel::from_grid(0, step, vals.clone(), vec![0.0; vals.len()]);
            let lhs = m.integral(a, c);
            let rhs = m.integral(a, b) + m.integral(b, c);
            prop_assert!((lhs - rhs).abs() < 1e-9);
            // Against a fine midpoint sum.
            let (lo, hi) = if a < c { (a, c) } else { (c, a) };
            let n = 4000;
            let h = (hi - lo) / n as f64;
            let riemann: f64 = (0..n).map(|i| m.value(lo + (i as f64 + 0.5) * h) * h).sum();
            prop_assert!((m.integral(lo, hi) - riemann).abs() < 1e-3 * (1.0 + riemann.abs()));
        }
    }

    #[test]
    fn csv_round_trip() {
        let mut m = InternalModel::from_grid(1, 0.005, vec![0.0, 0.125, 0.3], vec![0.0, 0.01, 0.02]);
        m.n_runs = 500;
        m.model_hash = "abcdef".into();
        m.seeds = Some(SeedStream::new(7, 1));
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let back = InternalModel::read_csv(&buf[..]).unwrap();
        assert_eq!(back, m);
    }
}
