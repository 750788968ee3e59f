//! SER tables, binomial intervals and the log–log slope fit.

use std::io::{BufRead, Write};

use super::HarnessError;

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Wilson score interval for `errors` out of `n` at normal quantile `z`.
pub fn wilson_interval(errors: usize, n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n = n as f64;
    let p = errors as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// One row of an SER table.
#[derive(Debug, Clone, PartialEq)]
pub struct SerRow {
    /// Name of the demodulator that produced the row.
    pub demodulator: String,
    /// Number of receptors.
    pub receptors: u32,
    /// Decision time in seconds.
    pub time: f64,
    /// Extra sweep coordinate (memory length for ISI rows, else 0).
    pub memory: usize,
    /// Errors and trials per symbol.
    pub errors: Vec<usize>,
    pub trials: Vec<usize>,
    /// Ground-truth symbol distribution used for the average.
    pub weights: Vec<f64>,
    /// Wall-clock seconds spent on the row; not written to the SER CSV.
    pub wall_clock: f64,
}

impl SerRow {
    pub fn ser(&self, s: usize) -> f64 {
        if self.trials[s] == 0 {
            return 0.0;
        }
        self.errors[s] as f64 / self.trials[s] as f64
    }

    pub fn average_ser(&self) -> f64 {
        let w: f64 = self.weights.iter().sum();
        (0..self.errors.len()).map(|s| self.weights[s] * self.ser(s)).sum::<f64>() / w
    }

    pub fn replicates(&self) -> usize {
        self.trials.iter().sum()
    }

    /// Wilson interval on the pooled outcomes.
    pub fn interval(&self) -> (f64, f64) {
        wilson_interval(self.errors.iter().sum(), self.replicates(), Z95)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SerTable {
    pub rows: Vec<SerRow>,
}

impl SerTable {
    pub fn n_symbols(&self) -> usize {
        self.rows.first().map_or(0, |r| r.errors.len())
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let k = self.n_symbols();
        let mut header = vec!["demodulator", "receptors", "time", "memory"]
            .into_iter()
            .map(String::from)
            .collect::<Vec<_>>();
        for s in 0..k {
            header.push(format!("ser_{s}"));
        }
        for s in 0..k {
            header.push(format!("errors_{s}"));
            header.push(format!("trials_{s}"));
        }
        header.extend(["avg_ser", "replicates", "ci_low", "ci_high"].map(String::from));
        writeln!(w, "{}", header.join(","))?;
        for r in &self.rows {
            let mut f = vec![r.demodulator.clone(), r.receptors.to_string(), r.time.to_string(), r.memory.to_string()];
            f.extend((0..k).map(|s| r.ser(s).to_string()));
            for s in 0..k {
                f.push(r.errors[s].to_string());
                f.push(r.trials[s].to_string());
            }
            let (lo, hi) = r.interval();
            f.push(r.average_ser().to_string());
            f.push(r.replicates().to_string());
            f.push(lo.to_string());
            f.push(hi.to_string());
            writeln!(w, "{}", f.join(","))?;
        }
        Ok(())
    }

    /// Reads a table written by [`SerTable::write_csv`]. The symbol weights
    /// are recovered as uniform.
    pub fn read_csv<R: BufRead>(r: R) -> Result<Self, HarnessError> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| HarnessError::Config("empty SER table".into()))??;
        let cols: Vec<&str> = header.split(',').collect();
        let k = cols.iter().filter(|c| c.starts_with("ser_")).count();
        if cols.len() != 4 + 3 * k + 4 {
            return Err(HarnessError::Config("unrecognised SER table header".into()));
        }
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            let bad = || HarnessError::Config(format!("SER table line {}: malformed", i + 2));
            if f.len() != cols.len() {
                return Err(bad());
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
            let int = |s: &str| s.parse::<usize>().map_err(|_| bad());
            let mut errors = Vec::with_capacity(k);
            let mut trials = Vec::with_capacity(k);
            for s in 0..k {
                errors.push(int(f[4 + k + 2 * s])?);
                trials.push(int(f[4 + k + 2 * s + 1])?);
            }
            rows.push(SerRow {
                demodulator: f[0].to_string(),
                receptors: int(f[1])? as u32,
                time: num(f[2])?,
                memory: int(f[3])?,
                errors,
                trials,
                weights: vec![1.0; k],
                wall_clock: 0.0,
            });
        }
        Ok(SerTable { rows })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual in log SER.
    pub residual: f64,
    pub n_points: usize,
    /// Points left out because their SER is zero.
    pub excluded: Vec<f64>,
}

/// Least squares on (ln x, ln y) over `x` in `[lo, hi]`; points with y = 0
/// are excluded and reported.
pub fn fit_loglog_slope(points: &[(f64, f64)], lo: f64, hi: f64) -> Result<SlopeFit, HarnessError> {
    let mut excluded = Vec::new();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for &(x, y) in points {
        if x < lo || x > hi {
            continue;
        }
        if y <= 0.0 {
            log::warn!("SER is zero at {x}; point excluded from the log-log fit");
            excluded.push(x);
            continue;
        }
        xs.push(x.ln());
        ys.push(y.ln());
    }
    if xs.len() < 3 {
        return Err(HarnessError::Config(format!(
            "log-log fit needs at least 3 points with SER > 0 in [{lo}, {hi}], found {}",
            xs.len()
        )));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = (xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    Ok(SlopeFit {
        slope,
        intercept,
        residual,
        n_points: xs.len(),
        excluded,
    })
}

/// Average SER against receptor count for one demodulator and time.
pub fn ser_by_receptors(table: &SerTable, demodulator: &str) -> Vec<(f64, f64)> {
    table
        .rows
        .iter()
        .filter(|r| r.demodulator == demodulator)
        .map(|r| (r.receptors as f64, r.average_ser()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn exact_power_laws_give_their_exponent() {
        let one: Vec<_> = (1..=15).map(|k| (10.0 * k as f64, 3.0 / (10.0 * k as f64))).collect();
        let fit = fit_loglog_slope(&one, 50.0, 150.0).unwrap();
        assert!((fit.slope + 1.0).abs() < 1e-12);
        assert!((fit.intercept - 3f64.ln()).abs() < 1e-12);
        let two: Vec<_> = (1..=15).map(|k| (10.0 * k as f64, 1.0 / (k * k) as f64)).collect();
        assert!((fit_loglog_slope(&two, 50.0, 150.0).unwrap().slope + 2.0).abs() < 1e-12);
    }

    #[test]
    fn zero_ser_points_are_excluded() {
        let pts = vec![(50.0, 0.1), (60.0, 0.0), (70.0, 0.07), (80.0, 0.06)];
        let fit = fit_loglog_slope(&pts, 50.0, 150.0).unwrap();
        assert_eq!(fit.excluded, vec![60.0]);
        assert_eq!(fit.n_points, 3);
        assert!(fit_loglog_slope(&pts[..2], 50.0, 150.0).is_err());
    }

    #[test]
    fn wilson_interval_covers_at_nominal_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for &(p, n) in &[(0.05, 200usize), (0.3, 100), (0.5, 400)] {
            let reps = 2000;
            let mut covered = 0;
            for _ in 0..reps {
                let k = (0..n).filter(|_| rng.random::<f64>() < p).count();
                let (lo, hi) = wilson_interval(k, n, Z95);
                assert!(lo <= k as f64 / n as f64 && k as f64 / n as f64 <= hi);
                if lo <= p && p <= hi {
                    covered += 1;
                }
            }
            let rate = covered as f64 / reps as f64;
            assert!(rate > 0.93 && rate < 0.975, "p = {p}, n = {n}: coverage {rate}");
        }
    }

    #[test]
    fn table_round_trips_through_csv() {
        let table = SerTable {
            rows: vec![SerRow {
                demodulator: "sub_optimal".into(),
                receptors: 10,
                time: 1.05,
                memory: 0,
                errors: vec![3, 7],
                trials: vec![400, 400],
                weights: vec![1.0, 1.0],
                wall_clock: 0.0,
            }],
        };
        let mut buf = Vec::new();
        table.write_csv(&mut buf).unwrap();
        let back = SerTable::read_csv(&buf[..]).unwrap();
        assert_eq!(back, table);
        assert!((back.rows[0].average_ser() - 0.0125).abs() < 1e-15);
    }
}
