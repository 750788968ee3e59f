use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use mcdemod::demod::{demodulate_trace, FilterOptions, RateModel, ReceiverParams};
use mcdemod::exact_filter::{optimal_demodulate, pilot_caps, FilterConfig, Hypothesis, Route, StateSpace};
use mcdemod::harness::{
    fit_loglog_slope, preset, presets, run_experiment, ExperimentConfig, HarnessError, ModelSource,
    SerTable,
};
use mcdemod::internal_model::{estimate_internal_model, InternalModel, DEFAULT_GRID_STEP, DEFAULT_RUNS};
use mcdemod::model::{build_model, Model, ModelSpec};
use mcdemod::seeds::{SeedStream, STREAM_ESTIMATION, STREAM_PILOT};
use mcdemod::ssa::{extract_binding_history, simulate_with, BindingHistory, Recording, SimOptions};

#[derive(Parser)]
#[command(name = "mcdemod", version, about = "Demodulation of ligand-receptor signals in voxel reaction-diffusion models")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the mean receiver count σ_s(t) by simulation.
    EstimateModel {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        symbol: usize,
        #[arg(long)]
        horizon: f64,
        #[arg(long, default_value_t = DEFAULT_GRID_STEP)]
        step: f64,
        #[arg(long, default_value_t = DEFAULT_RUNS)]
        runs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate one trajectory and optionally extract its binding history.
    Simulate {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        symbol: usize,
        #[arg(long)]
        horizon: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Trajectory output; `.bin` selects the binary format.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Binding-history output; `.bin` selects the binary format.
        #[arg(long)]
        history: Option<PathBuf>,
        /// Record receiver events only, with snapshots at this interval.
        #[arg(long)]
        receiver_only: Option<f64>,
    },
    /// Run the sub-optimal demodulator on a binding history.
    Demodulate {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        history: PathBuf,
        /// One internal-model CSV per symbol, in symbol order.
        #[arg(long = "sigma", required = true, num_args = 1..)]
        sigma: Vec<PathBuf>,
        #[arg(long, value_delimiter = ',', required = true)]
        times: Vec<f64>,
        /// Symbol priors (default uniform).
        #[arg(long, value_delimiter = ',')]
        priors: Vec<f64>,
        /// Write the Z trace CSV here.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Compare optimal and sub-optimal decisions on one binding history.
    FilterCompare {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        history: PathBuf,
        #[arg(long = "sigma", required = true, num_args = 1..)]
        sigma: Vec<PathBuf>,
        #[arg(long, value_delimiter = ',', required = true)]
        times: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        priors: Vec<f64>,
        #[arg(long, value_enum, default_value_t = RouteArg::Auto)]
        route: RouteArg,
        #[arg(long, default_value_t = 100)]
        pilot_runs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run an experiment from a config file or a built-in preset.
    Experiment {
        #[arg(long, conflicts_with = "preset")]
        config: Option<PathBuf>,
        #[arg(long)]
        preset: Option<String>,
        /// List the built-in presets and exit.
        #[arg(long)]
        list: bool,
        /// Print the selected config as TOML and exit.
        #[arg(long)]
        print_config: bool,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        replicates: Option<usize>,
        #[arg(long)]
        budget: Option<f64>,
    },
    /// Fit log SER against log M from an SER table.
    FitSlope {
        #[arg(long)]
        ser: PathBuf,
        #[arg(long, default_value = "sub_optimal")]
        demodulator: String,
        #[arg(long, default_value_t = 50.0)]
        lo: f64,
        #[arg(long, default_value_t = 150.0)]
        hi: f64,
    },
}

#[derive(Args)]
struct ModelArgs {
    /// Model file (TOML).
    #[arg(long, conflicts_with = "grid")]
    model: Option<PathBuf>,
    /// Built-in grid, used with --rates.
    #[arg(long, value_enum)]
    grid: Option<GridArg>,
    /// Source rates of the built-in grid, one per symbol.
    #[arg(long, value_delimiter = ',')]
    rates: Vec<f64>,
    /// Override the receptor count.
    #[arg(long)]
    receptors: Option<u32>,
}

#[derive(Clone, Copy, ValueEnum)]
enum GridArg {
    #[value(name = "line_3x1x1")]
    Line,
    #[value(name = "box_6x6x3")]
    Box,
}

#[derive(Clone, Copy, ValueEnum)]
enum RouteArg {
    Auto,
    CappedSpace,
    IndependentMolecules,
}

impl ModelArgs {
    fn spec(&self) -> Result<ModelSpec, HarnessError> {
        let source = match (&self.model, self.grid) {
            (Some(path), _) => {
                let spec = ModelSpec::load(path)?;
                return Ok(match self.receptors {
                    Some(m) => spec.with_receptors(m),
                    None => spec,
                });
            }
            (None, Some(GridArg::Line)) => ModelSource::Line3x1x1 { rates: self.rates.clone() },
            (None, Some(GridArg::Box)) => ModelSource::Box6x6x3 { rates: self.rates.clone() },
            (None, None) => return Err(HarnessError::Config("give --model or --grid with --rates".into())),
        };
        if self.rates.len() < 2 {
            return Err(HarnessError::Config("--rates needs one rate per symbol, at least two".into()));
        }
        source.spec(self.receptors.unwrap_or(1))
    }
}

fn receiver_of(model: &Model) -> ReceiverParams {
    ReceiverParams {
        binding_constant: model.binding_constant(),
        receptors: model.receptors(),
    }
}

fn is_binary(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "bin")
}

fn read_history(path: &Path) -> Result<BindingHistory, HarnessError> {
    let f = BufReader::new(File::open(path)?);
    Ok(if is_binary(path) {
        BindingHistory::read_binary(f)?
    } else {
        BindingHistory::read_text(f)?
    })
}

fn read_sigmas(paths: &[PathBuf]) -> Result<Vec<InternalModel>, HarnessError> {
    paths.iter().map(|p| Ok(InternalModel::load(p)?)).collect()
}

fn priors_or_uniform(priors: &[f64], k: usize) -> Vec<f64> {
    if priors.is_empty() {
        vec![1.0 / k as f64; k]
    } else {
        priors.to_vec()
    }
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::EstimateModel {
            model,
            symbol,
            horizon,
            step,
            runs,
            seed,
            out,
        } => {
            let m = build_model(&model.spec()?, symbol)?;
            let seeds = SeedStream::new(seed, STREAM_ESTIMATION).child(symbol as u64);
            let im = estimate_internal_model(&m, horizon, step, runs, seeds)?;
            im.save(&out)?;
            println!("wrote {} ({} points, max stderr {:.4})", out.display(), im.sigma.len(), im.stderr.iter().cloned().fold(0.0, f64::max));
        }
        Command::Simulate {
            model,
            symbol,
            horizon,
            seed,
            out,
            history,
            receiver_only,
        } => {
            let m = build_model(&model.spec()?, symbol)?;
            let options = SimOptions {
                recording: match receiver_only {
                    Some(snapshot_interval) => Recording::ReceiverOnly { snapshot_interval },
                    None => Recording::Full,
                },
                ..SimOptions::default()
            };
            let traj = simulate_with(&m, horizon, seed, options)?;
            if let Some(path) = out {
                let w = BufWriter::new(File::create(&path)?);
                if is_binary(&path) {
                    traj.write_binary(w)?;
                } else {
                    traj.write_text(w)?;
                }
            }
            let h = extract_binding_history(&traj);
            if let Some(path) = history {
                let w = BufWriter::new(File::create(&path)?);
                if is_binary(&path) {
                    h.write_binary(w)?;
                } else {
                    h.write_text(w)?;
                }
            }
            println!(
                "{} events, {} receiver events, final bound {}",
                traj.events.len(),
                h.events.len(),
                h.bound_at(horizon)
            );
        }
        Command::Demodulate {
            model,
            history,
            sigma,
            times,
            priors,
            trace,
        } => {
            let m = build_model(&model.spec()?, 0)?;
            let h = read_history(&history)?;
            let sigmas = read_sigmas(&sigma)?;
            let refs: Vec<&dyn RateModel> = sigmas.iter().map(|s| s as &dyn RateModel).collect();
            let priors = priors_or_uniform(&priors, sigmas.len());
            let out = demodulate_trace(&h, &refs, receiver_of(&m), &priors, &times, FilterOptions::default())?;
            for d in &out.decisions {
                println!("t={} symbol={}{}", d.time, d.symbol, if d.tie { " (tie)" } else { "" });
            }
            if let Some(path) = trace {
                let mut w = BufWriter::new(File::create(path)?);
                out.write_csv(&mut w)?;
                w.flush()?;
            }
        }
        Command::FilterCompare {
            model,
            history,
            sigma,
            times,
            priors,
            route,
            pilot_runs,
            seed,
        } => {
            let spec = model.spec()?;
            let h = read_history(&history)?;
            let sigmas = read_sigmas(&sigma)?;
            let k = spec.n_symbols();
            if sigmas.len() != k {
                return Err(HarnessError::Config(format!("{} internal models for {k} symbols", sigmas.len())));
            }
            let models: Vec<Model> = (0..k).map(|s| build_model(&spec, s)).collect::<Result<_, _>>()?;
            let config = FilterConfig {
                route: match route {
                    RouteArg::Auto => Route::Auto,
                    RouteArg::CappedSpace => Route::CappedSpace,
                    RouteArg::IndependentMolecules => Route::IndependentMolecules,
                },
                ..FilterConfig::default()
            };
            let needs_caps = models
                .iter()
                .any(|m| Hypothesis { model: m, space: None }.route(&config) == Route::CappedSpace);
            let space = if needs_caps {
                let refs: Vec<&Model> = models.iter().collect();
                let caps = pilot_caps(&refs, h.horizon, pilot_runs, SeedStream::new(seed, STREAM_PILOT))?;
                Some(StateSpace::new(&models[0], &caps)?)
            } else {
                None
            };
            let hyps: Vec<Hypothesis> = models
                .iter()
                .map(|model| Hypothesis {
                    model,
                    space: space.as_ref(),
                })
                .collect();
            let priors = priors_or_uniform(&priors, k);
            let opt = optimal_demodulate(&h, &hyps, &priors, &times, config)?;
            let refs: Vec<&dyn RateModel> = sigmas.iter().map(|s| s as &dyn RateModel).collect();
            let sub = demodulate_trace(&h, &refs, receiver_of(&models[0]), &priors, &times, FilterOptions::default())?;
            println!("time,optimal,sub_optimal");
            for (o, s) in opt.decisions.iter().zip(&sub.decisions) {
                println!("{},{},{}", o.time, o.symbol, s.symbol);
            }
            if opt.unreliable {
                log::warn!("exact filter diagnostics above threshold; optimal decisions are not reliable");
            }
        }
        Command::Experiment {
            config,
            preset: name,
            list,
            print_config,
            seed,
            out,
            replicates,
            budget,
        } => {
            if list {
                for p in presets() {
                    println!("{:<28} {:?}", p.name, p.kind);
                }
                return Ok(());
            }
            let mut cfg = match (config, name) {
                (Some(path), _) => ExperimentConfig::load(&path)?,
                (None, Some(name)) => {
                    preset(&name).ok_or_else(|| HarnessError::Config(format!("unknown preset {name:?}")))?
                }
                (None, None) => return Err(HarnessError::Config("give --config or --preset".into())),
            };
            if let Some(s) = seed {
                cfg.base_seed = s;
            }
            if let Some(r) = replicates {
                cfg.replicates = r;
            }
            if budget.is_some() {
                cfg.budget_seconds = budget;
            }
            if print_config {
                cfg.validate()?;
                print!("{}", cfg.to_toml());
                return Ok(());
            }
            let dir = out.unwrap_or_else(|| cfg.output_dir());
            let res = run_experiment(&cfg, &dir)?;
            for r in &res.table.rows {
                let (lo, hi) = r.interval();
                println!(
                    "{:<18} M={:<4} t={:<5} mem={} SER={:.4} [{:.4}, {:.4}]",
                    r.demodulator,
                    r.receptors,
                    r.time,
                    r.memory,
                    r.average_ser(),
                    lo,
                    hi
                );
            }
            for (name, f) in &res.fits {
                println!("{name}: slope {:.3} over {} points", f.slope, f.n_points);
            }
            println!("outputs in {} ({:.1} s)", dir.display(), res.wall_clock);
        }
        Command::FitSlope {
            ser,
            demodulator,
            lo,
            hi,
        } => {
            let table = SerTable::read_csv(BufReader::new(File::open(&ser)?))?;
            let points: Vec<(f64, f64)> = table
                .rows
                .iter()
                .filter(|r| r.demodulator == demodulator)
                .map(|r| (r.receptors as f64, r.average_ser()))
                .collect();
            let fit = fit_loglog_slope(&points, lo, hi)?;
            println!(
                "slope {:.4} intercept {:.4} rms residual {:.4} points {}",
                fit.slope, fit.intercept, fit.residual, fit.n_points
            );
            if !fit.excluded.is_empty() {
                println!("excluded (zero SER): {:?}", fit.excluded);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
