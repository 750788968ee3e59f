//! Experiment configuration files and the built-in presets.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::HarnessError;
use crate::demod::IsiMode;
use crate::exact_filter::Route;
use crate::internal_model::{DEFAULT_GRID_STEP, DEFAULT_RUNS};
use crate::model::{catalog, ModelSpec};

/// Current experiment file schema version.
pub const CONFIG_VERSION: u32 = 1;

/// Smallest replicate count accepted for a reported SER.
pub const MIN_REPLICATES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    /// Optimal against sub-optimal demodulator on the same histories.
    FilterCompare,
    /// Z traces of single histories and their mean, plus SER against time.
    DemodTrace,
    SerVsTime,
    SerVsReceptors,
    /// Constant source against an ON/OFF gene of equal mean rate.
    Indistinguishable,
    /// Symbol sequences with inter-symbol interference.
    Isi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseGrid {
    Line3x1x1,
    Box6x6x3,
}

/// Where the model comes from. Receptor counts are set per sweep point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSource {
    /// Reflecting 3×1×1 line, one constant source per symbol.
    #[serde(rename = "line_3x1x1")]
    Line3x1x1 { rates: Vec<f64> },
    /// Absorbing 6×6×3 box, one constant source per symbol.
    #[serde(rename = "box_6x6x3")]
    Box6x6x3 { rates: Vec<f64> },
    /// Symbol 0 a constant source at `kappa`, symbol 1 an ON/OFF gene.
    OnOff {
        grid: BaseGrid,
        kappa: f64,
        #[serde(default = "default_switching")]
        switching: f64,
    },
    /// A model file; relative paths are resolved against the config file.
    File { path: PathBuf },
}

fn default_switching() -> f64 {
    1.0
}

impl ModelSource {
    pub fn spec(&self, receptors: u32) -> Result<ModelSpec, HarnessError> {
        let spec = match self {
            ModelSource::Line3x1x1 { rates } => catalog::line_3x1x1(rates, receptors),
            ModelSource::Box6x6x3 { rates } => catalog::box_6x6x3(rates, receptors),
            ModelSource::OnOff { grid, kappa, switching } => {
                let base = match grid {
                    BaseGrid::Line3x1x1 => catalog::line_3x1x1(&[*kappa, *kappa], receptors),
                    BaseGrid::Box6x6x3 => catalog::box_6x6x3(&[*kappa, *kappa], receptors),
                };
                catalog::on_off_pair(&base, *kappa, *switching)
            }
            ModelSource::File { path } => ModelSpec::load(path)?.with_receptors(receptors),
        };
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSettings {
    #[serde(default)]
    pub route: Route,
    /// Pilot simulations used to size the state-space caps.
    #[serde(default = "default_pilot_runs")]
    pub pilot_runs: usize,
}

fn default_pilot_runs() -> usize {
    100
}

impl Default for FilterSettings {
    fn default() -> Self {
        FilterSettings {
            route: Route::Auto,
            pilot_runs: default_pilot_runs(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IsiSettings {
    /// Symbol duration T_x in seconds.
    pub symbol_duration: f64,
    /// Memory lengths to sweep.
    pub memory: Vec<usize>,
    /// Symbols per frame.
    #[serde(default = "default_frame")]
    pub frame_symbols: usize,
    #[serde(default = "default_isi_mode")]
    pub mode: IsiMode,
}

fn default_frame() -> usize {
    20
}

fn default_isi_mode() -> IsiMode {
    IsiMode::Superposition
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub name: String,
    pub kind: ExperimentKind,
    pub model: ModelSource,
    /// Ground-truth symbol probabilities, also used as demodulator priors.
    /// Empty means uniform.
    #[serde(default)]
    pub symbol_distribution: Vec<f64>,
    /// Simulation horizon in seconds (ignored for ISI, which uses frames).
    pub horizon: f64,
    pub decision_times: Vec<f64>,
    /// Receptor counts M to sweep.
    pub receptors: Vec<u32>,
    /// Histories per symbol and sweep point (frames for ISI).
    pub replicates: usize,
    #[serde(default = "default_runs")]
    pub estimation_runs: usize,
    #[serde(default = "default_step")]
    pub grid_step: f64,
    pub base_seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Refuse to start when the runtime estimate exceeds this.
    #[serde(default)]
    pub budget_seconds: Option<f64>,
    /// Histories per symbol whose full traces are written.
    #[serde(default = "default_traces")]
    pub trace_trajectories: usize,
    /// Receptor range of the log–log SER fit.
    #[serde(default)]
    pub fit_range: Option<[f64; 2]>,
    #[serde(default)]
    pub filter: FilterSettings,
    #[serde(default)]
    pub isi: Option<IsiSettings>,
}

fn default_runs() -> usize {
    DEFAULT_RUNS
}

fn default_step() -> f64 {
    DEFAULT_GRID_STEP
}

fn default_traces() -> usize {
    1
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| HarnessError::Config(format!("experiment config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("experiment config serializes")
    }

    /// Loads a config file, resolving a relative model path against it.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        if let ModelSource::File { path: model } = &mut cfg.model {
            if model.is_relative() {
                if let Some(dir) = path.parent() {
                    *model = dir.join(&*model);
                }
            }
        }
        Ok(cfg)
    }

    pub fn content_hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        hex::encode(digest)
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from("out").join(&self.name))
    }

    pub fn n_symbols(&self) -> Result<usize, HarnessError> {
        Ok(self.model.spec(1)?.n_symbols())
    }

    pub fn distribution(&self) -> Result<Vec<f64>, HarnessError> {
        let k = self.n_symbols()?;
        if self.symbol_distribution.is_empty() {
            return Ok(vec![1.0 / k as f64; k]);
        }
        let sum: f64 = self.symbol_distribution.iter().sum();
        Ok(self.symbol_distribution.iter().map(|p| p / sum).collect())
    }

    /// Longest time any simulation of this experiment covers.
    pub fn simulated_horizon(&self) -> f64 {
        match (&self.kind, &self.isi) {
            (ExperimentKind::Isi, Some(isi)) => isi.symbol_duration * isi.frame_symbols as f64,
            _ => self.horizon,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let fail = |m: String| Err(HarnessError::Config(m));
        if self.version != CONFIG_VERSION {
            return fail(format!("unsupported config version {} (expected {CONFIG_VERSION})", self.version));
        }
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return fail(format!("invalid experiment name {:?}", self.name));
        }
        if self.replicates < MIN_REPLICATES {
            return fail(format!(
                "{} replicates; at least {MIN_REPLICATES} are needed for a reported SER",
                self.replicates
            ));
        }
        if self.receptors.is_empty() {
            return fail("receptor sweep is empty".into());
        }
        if !(self.grid_step > 0.0) || self.estimation_runs < 2 {
            return fail("grid step must be positive and estimation runs at least 2".into());
        }
        let k = self.n_symbols()?;
        if k < 2 {
            return fail(format!("{k} symbols; at least 2 are needed"));
        }
        if !self.symbol_distribution.is_empty()
            && (self.symbol_distribution.len() != k
                || self.symbol_distribution.iter().any(|&p| !(p >= 0.0))
                || !(self.symbol_distribution.iter().sum::<f64>() > 0.0))
        {
            return fail(format!("symbol distribution must have {k} nonnegative entries with positive sum"));
        }
        if self.kind == ExperimentKind::Isi {
            let Some(isi) = &self.isi else {
                return fail("ISI experiment needs an [isi] table".into());
            };
            if !(isi.symbol_duration > 0.0) || isi.memory.is_empty() || isi.memory.contains(&0) || isi.frame_symbols == 0 {
                return fail("ISI needs positive symbol duration, frame length and memory lengths".into());
            }
        } else {
            if !(self.horizon > 0.0) {
                return fail("horizon must be positive".into());
            }
            if self.decision_times.is_empty() {
                return fail("no decision times".into());
            }
            if let Some(t) = self.decision_times.iter().find(|&&t| !(t > 0.0 && t <= self.horizon)) {
                return fail(format!("decision time {t} outside (0, {}]", self.horizon));
            }
        }
        if self.kind == ExperimentKind::Indistinguishable && !matches!(self.model, ModelSource::OnOff { .. }) {
            return fail("indistinguishability experiment needs an on_off model".into());
        }
        if let Some([lo, hi]) = self.fit_range {
            if !(lo > 0.0 && hi > lo) {
                return fail(format!("invalid fit range [{lo}, {hi}]"));
            }
            let inside = self.receptors.iter().filter(|&&m| m as f64 >= lo && m as f64 <= hi).count();
            if inside < 3 {
                return fail(format!("fit range [{lo}, {hi}] holds {inside} receptor counts, need 3"));
            }
        }
        Ok(())
    }
}

fn times(start: f64, step: f64, end: f64) -> Vec<f64> {
    let n = ((end - start) / step).round() as usize;
    (0..=n).map(|k| ((start + k as f64 * step) * 1e9).round() / 1e9).collect()
}

fn base(name: &str, kind: ExperimentKind, model: ModelSource) -> ExperimentConfig {
    ExperimentConfig {
        version: CONFIG_VERSION,
        name: name.into(),
        kind,
        model,
        symbol_distribution: vec![],
        horizon: 3.0,
        decision_times: vec![],
        receptors: vec![50],
        replicates: 200,
        estimation_runs: DEFAULT_RUNS,
        grid_step: DEFAULT_GRID_STEP,
        base_seed: 20140101,
        output_dir: None,
        budget_seconds: None,
        trace_trajectories: 1,
        fit_range: None,
        filter: FilterSettings::default(),
        isi: None,
    }
}

/// Built-in experiments with the published parameters.
pub fn presets() -> Vec<ExperimentConfig> {
    use ExperimentKind::*;
    let line = ModelSource::Line3x1x1 { rates: vec![10.0, 50.0] };
    let boxed = ModelSource::Box6x6x3 { rates: vec![40.0, 80.0] };
    let boxed3 = ModelSource::Box6x6x3 { rates: vec![40.0, 80.0, 120.0] };
    let sweep: Vec<u32> = std::iter::once(1).chain((1..=15).map(|k| 10 * k)).collect();
    vec![
        ExperimentConfig {
            horizon: 1.8,
            decision_times: times(1.0, 0.05, 1.8),
            receptors: vec![5, 10],
            replicates: 400,
            ..base("filter-compare", FilterCompare, line)
        },
        ExperimentConfig {
            decision_times: times(0.1, 0.1, 3.0),
            trace_trajectories: 2,
            ..base("demod-trace", DemodTrace, boxed.clone())
        },
        ExperimentConfig {
            decision_times: times(0.1, 0.1, 3.0),
            ..base("ser-vs-time", SerVsTime, boxed.clone())
        },
        ExperimentConfig {
            decision_times: vec![2.5],
            receptors: (1..=20).collect(),
            replicates: 500,
            ..base("ser-vs-receptors-k2", SerVsReceptors, boxed.clone())
        },
        ExperimentConfig {
            decision_times: vec![2.5],
            receptors: sweep,
            replicates: 500,
            fit_range: Some([50.0, 150.0]),
            ..base("ser-vs-receptors", SerVsReceptors, boxed3.clone())
        },
        ExperimentConfig {
            decision_times: vec![2.5],
            receptors: vec![1, 10, 20, 30, 40, 50, 60],
            replicates: 200,
            ..base("ser-vs-receptors-reduced", SerVsReceptors, boxed3)
        },
        ExperimentConfig {
            decision_times: times(0.5, 0.5, 3.0),
            ..base(
                "indistinguishable",
                Indistinguishable,
                ModelSource::OnOff {
                    grid: BaseGrid::Box6x6x3,
                    kappa: 40.0,
                    switching: 1.0,
                },
            )
        },
        ExperimentConfig {
            horizon: 20.0,
            decision_times: vec![],
            receptors: vec![25, 50, 100, 150],
            replicates: 100,
            isi: Some(IsiSettings {
                symbol_duration: 5.0,
                memory: vec![4, 5],
                frame_symbols: 20,
                mode: IsiMode::Superposition,
            }),
            ..base("isi", Isi, boxed)
        },
    ]
}

pub fn preset(name: &str) -> Option<ExperimentConfig> {
    presets().into_iter().find(|p| p.name == name)
}
