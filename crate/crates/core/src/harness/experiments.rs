//! The experiment kinds. Every sweep point estimates its internal models on
//! the estimation stream and draws histories from the evaluation stream;
//! results are collected in replicate order so outputs do not depend on the
//! thread count.

use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::config::{ExperimentConfig, ExperimentKind};
use super::stats::{fit_loglog_slope, SerRow, SerTable, SlopeFit};
use super::HarnessError;
use crate::demod::{
    demodulate_trace, isi_decode, sequence_schedule, DemodOutput, FilterOptions, IsiConfig, IsiMode, IsiModels,
    RateModel, ReceiverParams, SequenceModel, DEFAULT_SIGMA_MIN,
};
use crate::exact_filter::{optimal_demodulate, pilot_caps, FilterConfig, Hypothesis, Route, StateSpace};
use crate::internal_model::{estimate_internal_model, InternalModel};
use crate::model::{build_model, Model, ModelSpec};
use crate::seeds::{SeedStream, STREAM_ESTIMATION, STREAM_EVALUATION, STREAM_PILOT};
use crate::ssa::{extract_binding_history, simulate_with, BindingHistory, Recording, SimOptions};

const SUB_OPTIMAL: &str = "sub_optimal";
const OPTIMAL: &str = "optimal";

/// How often the optimal and sub-optimal demodulators agreed.
#[derive(Debug, Clone, PartialEq)]
pub struct AgreementRow {
    pub receptors: u32,
    pub time: f64,
    pub agree: usize,
    pub trials: usize,
    /// Histories whose exact filter reported a diagnostic above threshold.
    pub unreliable: usize,
}

impl AgreementRow {
    pub fn rate(&self) -> f64 {
        self.agree as f64 / self.trials as f64
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ModelRecord {
    pub receptors: u32,
    pub symbols: Vec<usize>,
    pub model_hash: String,
}

/// Reproducibility record written as `manifest.json`. Holds nothing that
/// changes between identical runs.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub name: String,
    pub kind: ExperimentKind,
    pub config_hash: String,
    pub code_version: String,
    pub rng: String,
    pub base_seed: u64,
    pub streams: [(String, u64); 3],
    pub estimation_seeds: usize,
    pub evaluation_seeds: usize,
    pub pilot_seeds: usize,
    pub seed_hygiene: String,
    pub models: Vec<ModelRecord>,
    pub outputs: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub table: SerTable,
    pub agreement: Vec<AgreementRow>,
    /// One fit per demodulator, when a fit range is configured.
    pub fits: Vec<(String, SlopeFit)>,
    pub manifest: Manifest,
    pub wall_clock: f64,
}

#[derive(Default)]
struct SeedLedger {
    estimation: Vec<u64>,
    evaluation: Vec<u64>,
    pilot: Vec<u64>,
}

impl SeedLedger {
    fn record(list: &mut Vec<u64>, stream: SeedStream, n: usize) {
        list.extend((0..n as u64).map(|i| stream.seed(i)));
    }

    /// Estimation, evaluation and pilot seeds must be pairwise disjoint.
    fn check(&self) -> Result<(), HarnessError> {
        let est: HashSet<u64> = self.estimation.iter().copied().collect();
        let eval: HashSet<u64> = self.evaluation.iter().copied().collect();
        let overlap = self.evaluation.iter().any(|s| est.contains(s))
            || self.pilot.iter().any(|s| est.contains(s) || eval.contains(s));
        if overlap {
            return Err(HarnessError::Numerical(
                "seed hygiene violated: a seed is shared between estimation, evaluation and pilot runs".into(),
            ));
        }
        Ok(())
    }
}

struct Runner<'c> {
    cfg: &'c ExperimentConfig,
    out: PathBuf,
    priors: Vec<f64>,
    k: usize,
    estimation: SeedStream,
    evaluation: SeedStream,
    pilot: SeedStream,
    seeds: SeedLedger,
    models: Vec<ModelRecord>,
    outputs: Vec<String>,
    rows: Vec<SerRow>,
    agreement: Vec<AgreementRow>,
}

fn receiver_of(model: &Model) -> ReceiverParams {
    ReceiverParams {
        binding_constant: model.binding_constant(),
        receptors: model.receptors(),
    }
}

fn simulate_history(model: &Model, horizon: f64, seed: u64) -> Result<BindingHistory, HarnessError> {
    let options = SimOptions {
        recording: Recording::ReceiverOnly {
            snapshot_interval: horizon,
        },
        ..SimOptions::default()
    };
    let traj = simulate_with(model, horizon, seed, options)?;
    Ok(extract_binding_history(&traj))
}

/// Position of the last point recorded exactly at `t`.
fn index_at(times: &[f64], t: f64) -> usize {
    times.iter().rposition(|&x| x == t).expect("decision time recorded")
}

struct Replicate {
    sub: Vec<usize>,
    opt: Option<Vec<usize>>,
    unreliable: bool,
    /// Z_s' at the decision times, `[time][symbol]`.
    z: Vec<Vec<f64>>,
    trace: Option<DemodOutput>,
    exact_mean: Option<Vec<Vec<f64>>>,
}

impl<'c> Runner<'c> {
    fn write_file(&mut self, rel: &str, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<(), HarnessError> {
        let path = self.out.join(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let mut w = BufWriter::new(File::create(&path)?);
        f(&mut w)?;
        w.flush()?;
        self.outputs.push(rel.to_string());
        Ok(())
    }

    fn spec(&self, receptors: u32) -> Result<ModelSpec, HarnessError> {
        self.cfg.model.spec(receptors)
    }

    fn estimate(&mut self, model: &Model, horizon: f64, stream: SeedStream) -> Result<InternalModel, HarnessError> {
        SeedLedger::record(&mut self.seeds.estimation, stream, self.cfg.estimation_runs);
        Ok(estimate_internal_model(model, horizon, self.cfg.grid_step, self.cfg.estimation_runs, stream)?)
    }

    /// One internal model per symbol. With `slot` set the symbol is sent
    /// for that long and the transmitter is silent afterwards.
    fn single_models(
        &mut self,
        spec: &ModelSpec,
        receptors: u32,
        horizon: f64,
        slot: Option<f64>,
    ) -> Result<Vec<InternalModel>, HarnessError> {
        let mut out = Vec::with_capacity(self.k);
        for s in 0..self.k {
            let model = match slot {
                Some(tx) => Model::build(spec, sequence_schedule(&[s], tx))?,
                None => build_model(spec, s)?,
            };
            let stream = self.estimation.child(receptors as u64).child(s as u64);
            let im = self.estimate(&model, horizon, stream)?;
            self.models.push(ModelRecord {
                receptors,
                symbols: vec![s],
                model_hash: im.model_hash.clone(),
            });
            let rel = format!("models/sigma_M{receptors}_s{s}.csv");
            self.write_file(&rel, |w| im.write_csv(w).map_err(std::io::Error::other))?;
            out.push(im);
        }
        Ok(out)
    }

    fn filter_config(&self) -> FilterConfig {
        FilterConfig {
            route: self.cfg.filter.route,
            ..FilterConfig::default()
        }
    }

    /// Shared capped space when any hypothesis needs one.
    fn state_space(&mut self, models: &[Model], receptors: u32) -> Result<Option<StateSpace>, HarnessError> {
        let config = self.filter_config();
        let needs_caps = models.iter().any(|m| {
            Hypothesis { model: m, space: None }.route(&config) == Route::CappedSpace
        });
        if !needs_caps {
            return Ok(None);
        }
        let stream = self.pilot.child(receptors as u64);
        for k in 0..models.len() {
            SeedLedger::record(&mut self.seeds.pilot, stream.child(k as u64), self.cfg.filter.pilot_runs);
        }
        let refs: Vec<&Model> = models.iter().collect();
        let caps = pilot_caps(&refs, self.cfg.horizon, self.cfg.filter.pilot_runs, stream)?;
        log::info!("M = {receptors}: capped state space with caps {caps:?}");
        Ok(Some(StateSpace::new(&models[0], &caps)?))
    }

    fn run_symbol_experiment(&mut self) -> Result<(), HarnessError> {
        let cfg = self.cfg;
        let optimal = cfg.kind == ExperimentKind::FilterCompare;
        let keep_z = matches!(cfg.kind, ExperimentKind::DemodTrace | ExperimentKind::Indistinguishable);
        let keep_traces = keep_z || optimal;
        let mut times = cfg.decision_times.clone();
        times.sort_by(f64::total_cmp);
        times.dedup();
        for &m in &cfg.receptors {
            let started = Instant::now();
            let spec = self.spec(m)?;
            let internal = self.single_models(&spec, m, cfg.horizon, None)?;
            let true_models: Vec<Model> = (0..self.k).map(|s| build_model(&spec, s)).collect::<Result<_, _>>()?;
            let space = if optimal { self.state_space(&true_models, m)? } else { None };
            let hypotheses: Vec<Hypothesis> = true_models
                .iter()
                .map(|model| Hypothesis {
                    model,
                    space: space.as_ref(),
                })
                .collect();
            let rx = receiver_of(&true_models[0]);
            let filter_config = self.filter_config();
            let n_t = times.len();
            let mut sub_errors = vec![vec![0usize; self.k]; n_t];
            let mut opt_errors = vec![vec![0usize; self.k]; n_t];
            let mut agree = vec![0usize; n_t];
            let mut unreliable = 0usize;
            let mut z_sum = vec![vec![vec![0.0f64; self.k]; n_t]; self.k];
            for s in 0..self.k {
                let stream = self.evaluation.child(m as u64).child(s as u64);
                SeedLedger::record(&mut self.seeds.evaluation, stream, cfg.replicates);
                let model = &true_models[s];
                let priors = &self.priors;
                let reps: Vec<Replicate> = (0..cfg.replicates)
                    .into_par_iter()
                    .map(|i| -> Result<Replicate, HarnessError> {
                        let history = simulate_history(model, cfg.horizon, stream.seed(i as u64))?;
                        let traced = keep_traces && i < cfg.trace_trajectories;
                        let rate_models: Vec<&dyn RateModel> = internal.iter().map(|im| im as &dyn RateModel).collect();
                        let out = demodulate_trace(&history, &rate_models, rx, priors, &times, FilterOptions::default())?;
                        let z = times
                            .iter()
                            .map(|&t| {
                                let j = index_at(&out.times, t);
                                out.z.iter().map(|zs| zs[j]).collect()
                            })
                            .collect();
                        let sub = out.decisions.iter().map(|d| d.symbol).collect();
                        let (opt, bad, exact_mean) = if optimal {
                            let config = FilterConfig {
                                trace_step: traced.then_some(cfg.grid_step),
                                ..filter_config
                            };
                            let res = optimal_demodulate(&history, &hypotheses, priors, &times, config)?;
                            let mean = traced.then(|| {
                                let grid = (cfg.horizon / cfg.grid_step).round() as usize;
                                (0..=grid)
                                    .map(|g| {
                                        let t = g as f64 * cfg.grid_step;
                                        let mut row = vec![t];
                                        for r in &res.runs {
                                            row.push(r.trace.as_ref().map_or(f64::NAN, |tr| tr.value(t)));
                                        }
                                        row
                                    })
                                    .collect()
                            });
                            (Some(res.decisions.iter().map(|d| d.symbol).collect()), res.unreliable, mean)
                        } else {
                            (None, false, None)
                        };
                        Ok(Replicate {
                            sub,
                            opt,
                            unreliable: bad,
                            z,
                            trace: traced.then_some(out),
                            exact_mean,
                        })
                    })
                    .collect::<Result<_, _>>()?;
                for (i, rep) in reps.into_iter().enumerate() {
                    for j in 0..n_t {
                        sub_errors[j][s] += (rep.sub[j] != s) as usize;
                        if let Some(opt) = &rep.opt {
                            opt_errors[j][s] += (opt[j] != s) as usize;
                            agree[j] += (opt[j] == rep.sub[j]) as usize;
                        }
                        for (acc, z) in z_sum[s][j].iter_mut().zip(&rep.z[j]) {
                            *acc += z;
                        }
                    }
                    unreliable += rep.unreliable as usize;
                    if let Some(trace) = rep.trace {
                        self.write_file(&format!("traces/z_M{m}_s{s}_{i}.csv"), |w| trace.write_csv(w))?;
                    }
                    if let Some(mean) = rep.exact_mean {
                        let k = self.k;
                        self.write_file(&format!("traces/exact_mean_M{m}_s{s}_{i}.csv"), |w| {
                            let cols: Vec<String> = (0..k).map(|h| format!("E_{h}")).collect();
                            writeln!(w, "t,{}", cols.join(","))?;
                            for row in &mean {
                                let cells: Vec<String> = row.iter().map(|x| x.to_string()).collect();
                                writeln!(w, "{}", cells.join(","))?;
                            }
                            Ok(())
                        })?;
                    }
                }
            }
            if unreliable > 0 {
                log::warn!("M = {m}: {unreliable} histories had an exact-filter diagnostic above threshold");
            }
            let wall = started.elapsed().as_secs_f64();
            let trials = vec![cfg.replicates; self.k];
            let mut demods = vec![(SUB_OPTIMAL, &sub_errors)];
            if optimal {
                demods.push((OPTIMAL, &opt_errors));
            }
            for (name, errors) in demods {
                for (j, &t) in times.iter().enumerate() {
                    self.rows.push(SerRow {
                        demodulator: name.to_string(),
                        receptors: m,
                        time: t,
                        memory: 0,
                        errors: errors[j].clone(),
                        trials: trials.clone(),
                        weights: self.priors.clone(),
                        wall_clock: wall,
                    });
                }
            }
            if optimal {
                for (j, &t) in times.iter().enumerate() {
                    self.agreement.push(AgreementRow {
                        receptors: m,
                        time: t,
                        agree: agree[j],
                        trials: cfg.replicates * self.k,
                        unreliable,
                    });
                }
            }
            if keep_z {
                let k = self.k;
                let n = cfg.replicates as f64;
                self.write_file(&format!("z_mean_M{m}.csv"), |w| {
                    let cols: Vec<String> = (0..k).map(|h| format!("Z_{h}")).collect();
                    writeln!(w, "true_symbol,t,{}", cols.join(","))?;
                    for (s, per_time) in z_sum.iter().enumerate() {
                        for (j, sums) in per_time.iter().enumerate() {
                            let cells: Vec<String> = sums.iter().map(|x| (x / n).to_string()).collect();
                            writeln!(w, "{s},{},{}", times[j], cells.join(","))?;
                        }
                    }
                    Ok(())
                })?;
            }
            log::info!("{}: M = {m} done in {wall:.1} s", cfg.name);
        }
        Ok(())
    }

    fn sequence_models(
        &mut self,
        spec: &ModelSpec,
        receptors: u32,
        memory: usize,
        tx: f64,
    ) -> Result<Vec<SequenceModel>, HarnessError> {
        let mut out = Vec::new();
        for len in 1..=memory {
            let count = self.k.pow(len as u32);
            for code in 0..count {
                let mut symbols = Vec::with_capacity(len);
                let mut c = code;
                for _ in 0..len {
                    symbols.push(c % self.k);
                    c /= self.k;
                }
                symbols.reverse();
                let model = Model::build(spec, sequence_schedule(&symbols, tx))?;
                let stream = self
                    .estimation
                    .child(receptors as u64)
                    .child(1000 + len as u64)
                    .child(code as u64);
                let im = self.estimate(&model, len as f64 * tx, stream)?;
                self.models.push(ModelRecord {
                    receptors,
                    symbols: symbols.clone(),
                    model_hash: im.model_hash.clone(),
                });
                out.push(SequenceModel { symbols, model: im });
            }
        }
        Ok(out)
    }

    fn run_isi(&mut self) -> Result<(), HarnessError> {
        let cfg = self.cfg;
        let isi = cfg.isi.as_ref().expect("validated");
        let tx = isi.symbol_duration;
        let n_symbols = isi.frame_symbols;
        let frame_horizon = tx * n_symbols as f64;
        let max_memory = *isi.memory.iter().max().unwrap();
        let dist = WeightedIndex::new(&self.priors).map_err(|e| HarnessError::Config(e.to_string()))?;
        let name = match isi.mode {
            IsiMode::Superposition => "isi_superposition",
            IsiMode::FullSequenceModels => "isi_full_sequence",
        };
        for &m in &cfg.receptors {
            let started = Instant::now();
            let spec = self.spec(m)?;
            let single = match isi.mode {
                IsiMode::Superposition => self.single_models(&spec, m, max_memory as f64 * tx, Some(tx))?,
                IsiMode::FullSequenceModels => Vec::new(),
            };
            let sequences = match isi.mode {
                IsiMode::Superposition => Vec::new(),
                IsiMode::FullSequenceModels => self.sequence_models(&spec, m, max_memory, tx)?,
            };
            let rx = receiver_of(&build_model(&spec, 0)?);
            let symbol_stream = self.evaluation.child(m as u64).child(0);
            let sim_stream = self.evaluation.child(m as u64).child(1);
            SeedLedger::record(&mut self.seeds.evaluation, symbol_stream, cfg.replicates);
            SeedLedger::record(&mut self.seeds.evaluation, sim_stream, cfg.replicates);
            let priors = &self.priors;
            let k = self.k;
            // Per frame: errors and trials per true symbol, for each memory.
            let frames: Vec<Vec<(Vec<usize>, Vec<usize>)>> = (0..cfg.replicates as u64)
                .into_par_iter()
                .map(|i| -> Result<_, HarnessError> {
                    let mut rng = ChaCha8Rng::seed_from_u64(symbol_stream.seed(i));
                    let truth: Vec<usize> = (0..n_symbols).map(|_| dist.sample(&mut rng)).collect();
                    let model = Model::build(&spec, sequence_schedule(&truth, tx))?;
                    let history = simulate_history(&model, frame_horizon, sim_stream.seed(i))?;
                    let mut per_memory = Vec::with_capacity(isi.memory.len());
                    for &memory in &isi.memory {
                        let config = IsiConfig {
                            symbol_duration: tx,
                            memory,
                            mode: isi.mode,
                        };
                        let models = match isi.mode {
                            IsiMode::Superposition => IsiModels::Single(&single),
                            IsiMode::FullSequenceModels => IsiModels::Sequences(&sequences),
                        };
                        let res = isi_decode(&history, n_symbols, &config, &models, rx, priors, Some(&truth), DEFAULT_SIGMA_MIN)?;
                        let correct = res.correct.expect("truth given");
                        let mut errors = vec![0usize; k];
                        let mut trials = vec![0usize; k];
                        for (&s, ok) in truth.iter().zip(correct) {
                            trials[s] += 1;
                            errors[s] += (!ok) as usize;
                        }
                        per_memory.push((errors, trials));
                    }
                    Ok(per_memory)
                })
                .collect::<Result<_, _>>()?;
            let wall = started.elapsed().as_secs_f64();
            for (j, &memory) in isi.memory.iter().enumerate() {
                let mut errors = vec![0usize; k];
                let mut trials = vec![0usize; k];
                for frame in &frames {
                    for s in 0..k {
                        errors[s] += frame[j].0[s];
                        trials[s] += frame[j].1[s];
                    }
                }
                self.rows.push(SerRow {
                    demodulator: name.to_string(),
                    receptors: m,
                    time: tx,
                    memory,
                    errors,
                    trials,
                    weights: self.priors.clone(),
                    wall_clock: wall,
                });
            }
            log::info!("{}: M = {m} done in {wall:.1} s", cfg.name);
        }
        Ok(())
    }

    fn fits(&self) -> Result<Vec<(String, SlopeFit)>, HarnessError> {
        let Some([lo, hi]) = self.cfg.fit_range else {
            return Ok(Vec::new());
        };
        let time = self.rows.first().map_or(0.0, |r| r.time);
        let mut names: Vec<&str> = self.rows.iter().map(|r| r.demodulator.as_str()).collect();
        names.dedup();
        names
            .into_iter()
            .map(|name| {
                let points: Vec<(f64, f64)> = self
                    .rows
                    .iter()
                    .filter(|r| r.demodulator == name && r.time == time)
                    .map(|r| (r.receptors as f64, r.average_ser()))
                    .collect();
                Ok((name.to_string(), fit_loglog_slope(&points, lo, hi)?))
            })
            .collect()
    }
}

/// Wall-clock estimate from a handful of timed simulations (and filter runs
/// for the optimal comparison).
fn estimate_runtime(cfg: &ExperimentConfig, k: usize) -> Result<f64, HarnessError> {
    let m = *cfg.receptors.iter().max().unwrap();
    let spec = cfg.model.spec(m)?;
    let model = build_model(&spec, k - 1)?;
    let horizon = cfg.simulated_horizon();
    let probe = SeedStream::new(cfg.base_seed, STREAM_PILOT).child(u64::MAX);
    let probes = 3;
    let started = Instant::now();
    let mut histories = Vec::new();
    for i in 0..probes {
        histories.push(simulate_history(&model, horizon, probe.seed(i))?);
    }
    let per_sim = started.elapsed().as_secs_f64() / probes as f64;
    let mut per_filter = 0.0;
    if cfg.kind == ExperimentKind::FilterCompare {
        let models: Vec<Model> = (0..k).map(|s| build_model(&spec, s)).collect::<Result<_, _>>()?;
        let config = FilterConfig {
            route: cfg.filter.route,
            ..FilterConfig::default()
        };
        let auto = models
            .iter()
            .all(|m| Hypothesis { model: m, space: None }.route(&config) == Route::IndependentMolecules);
        if auto {
            let hyps: Vec<Hypothesis> = models.iter().map(|model| Hypothesis { model, space: None }).collect();
            let priors = vec![1.0; k];
            let started = Instant::now();
            optimal_demodulate(&histories[0], &hyps, &priors, &[cfg.horizon], config)?;
            per_filter = started.elapsed().as_secs_f64();
        }
    }
    let points = cfg.receptors.len() as f64;
    let (n_est, n_eval) = match (&cfg.kind, &cfg.isi) {
        (ExperimentKind::Isi, Some(isi)) => {
            let n_models = match isi.mode {
                crate::demod::IsiMode::Superposition => k,
                crate::demod::IsiMode::FullSequenceModels => {
                    (1..=*isi.memory.iter().max().unwrap()).map(|l| k.pow(l as u32)).sum()
                }
            };
            // Estimation runs are shorter than a frame.
            let ratio = *isi.memory.iter().max().unwrap() as f64 / isi.frame_symbols as f64;
            (n_models as f64 * cfg.estimation_runs as f64 * ratio, cfg.replicates as f64)
        }
        _ => (
            k as f64 * cfg.estimation_runs as f64,
            k as f64 * cfg.replicates as f64,
        ),
    };
    let threads = rayon::current_num_threads() as f64;
    Ok(points * ((n_est + n_eval) * per_sim + n_eval * per_filter) / threads)
}

/// Runs `cfg` and writes its outputs under `out_dir`:
/// `ser.csv`, `agreement.csv` (filter comparison), `fit.csv` (with a fit
/// range), internal models, traces, `manifest.json` and `timing.json`.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<ExperimentOutput, HarnessError> {
    cfg.validate()?;
    let started = Instant::now();
    let k = cfg.n_symbols()?;
    if let Some(budget) = cfg.budget_seconds {
        let estimate = estimate_runtime(cfg, k)?;
        log::info!("{}: estimated runtime {estimate:.0} s (budget {budget:.0} s)", cfg.name);
        if estimate > budget {
            let scale = budget / estimate;
            return Err(HarnessError::Budget(format!(
                "estimated {estimate:.0} s exceeds the {budget:.0} s budget; try about {} replicates and {} estimation runs",
                ((cfg.replicates as f64 * scale) as usize).max(super::MIN_REPLICATES),
                ((cfg.estimation_runs as f64 * scale) as usize).max(2)
            )));
        }
    }
    fs::create_dir_all(out_dir)?;
    let mut runner = Runner {
        cfg,
        out: out_dir.to_path_buf(),
        priors: cfg.distribution()?,
        k,
        estimation: SeedStream::new(cfg.base_seed, STREAM_ESTIMATION),
        evaluation: SeedStream::new(cfg.base_seed, STREAM_EVALUATION),
        pilot: SeedStream::new(cfg.base_seed, STREAM_PILOT),
        seeds: SeedLedger::default(),
        models: Vec::new(),
        outputs: Vec::new(),
        rows: Vec::new(),
        agreement: Vec::new(),
    };
    runner.write_file("config.toml", |w| w.write_all(cfg.to_toml().as_bytes()))?;
    match cfg.kind {
        ExperimentKind::Isi => runner.run_isi()?,
        _ => runner.run_symbol_experiment()?,
    }
    runner.seeds.check()?;

    let table = SerTable {
        rows: std::mem::take(&mut runner.rows),
    };
    runner.write_file("ser.csv", |w| table.write_csv(w))?;
    let agreement = std::mem::take(&mut runner.agreement);
    if !agreement.is_empty() {
        runner.write_file("agreement.csv", |w| {
            writeln!(w, "receptors,time,agree,trials,agreement,unreliable")?;
            for a in &agreement {
                writeln!(w, "{},{},{},{},{},{}", a.receptors, a.time, a.agree, a.trials, a.rate(), a.unreliable)?;
            }
            Ok(())
        })?;
    }
    runner.rows = table.rows.clone();
    let fits = runner.fits()?;
    if !fits.is_empty() {
        let range = cfg.fit_range.unwrap();
        runner.write_file("fit.csv", |w| {
            writeln!(w, "demodulator,lo,hi,slope,intercept,residual,n_points,excluded")?;
            for (name, f) in &fits {
                let excluded: Vec<String> = f.excluded.iter().map(|x| x.to_string()).collect();
                writeln!(
                    w,
                    "{name},{},{},{},{},{},{},{}",
                    range[0],
                    range[1],
                    f.slope,
                    f.intercept,
                    f.residual,
                    f.n_points,
                    excluded.join(";")
                )?;
            }
            Ok(())
        })?;
    }

    let mut outputs = runner.outputs.clone();
    outputs.push("manifest.json".into());
    outputs.push("timing.json".into());
    outputs.sort();
    let manifest = Manifest {
        name: cfg.name.clone(),
        kind: cfg.kind,
        config_hash: cfg.content_hash(),
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        rng: "ChaCha8Rng".into(),
        base_seed: cfg.base_seed,
        streams: [
            ("estimation".into(), STREAM_ESTIMATION),
            ("evaluation".into(), STREAM_EVALUATION),
            ("pilot".into(), STREAM_PILOT),
        ],
        estimation_seeds: runner.seeds.estimation.len(),
        evaluation_seeds: runner.seeds.evaluation.len(),
        pilot_seeds: runner.seeds.pilot.len(),
        seed_hygiene: "disjoint".into(),
        models: std::mem::take(&mut runner.models),
        outputs,
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(std::io::Error::other)?;
    fs::write(out_dir.join("manifest.json"), json + "\n")?;

    let wall_clock = started.elapsed().as_secs_f64();
    let timing = serde_json::json!({
        "total_seconds": wall_clock,
        "threads": rayon::current_num_threads(),
        "rows": table.rows.iter().map(|r| serde_json::json!({
            "demodulator": r.demodulator,
            "receptors": r.receptors,
            "time": r.time,
            "memory": r.memory,
            "seconds": r.wall_clock,
        })).collect::<Vec<_>>(),
    });
    fs::write(
        out_dir.join("timing.json"),
        serde_json::to_string_pretty(&timing).map_err(std::io::Error::other)? + "\n",
    )?;
    Ok(ExperimentOutput {
        table,
        agreement,
        fits,
        manifest,
        wall_clock,
    })
}
