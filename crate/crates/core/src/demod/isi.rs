//! Decision-feedback decoding of symbol sequences with inter-symbol
//! interference.
//!
//! Interval k covers `[k T_x, (k+1) T_x)`. Its K filters start from the log
//! prior at the interval start and use an effective internal model that
//! accounts for the molecules still around from the previous decisions.

use serde::{Deserialize, Serialize};

use super::{
    argmax_with_tie, normalize_priors, run_filter, DemodError, FilterOptions, RateModel,
    ReceiverParams,
};
use crate::internal_model::InternalModel;
use crate::model::Schedule;
use crate::ssa::BindingHistory;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IsiMode {
    /// Effective model is the sum of shifted single-symbol models.
    Superposition,
    /// Effective model is estimated for every symbol sequence.
    FullSequenceModels,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IsiConfig {
    /// Symbol duration T_x in seconds.
    pub symbol_duration: f64,
    /// Memory length ℓ: the current symbol plus ℓ − 1 previous ones.
    pub memory: usize,
    pub mode: IsiMode,
}

/// σ for a whole symbol sequence; the last symbol occupies the final slot.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceModel {
    pub symbols: Vec<usize>,
    pub model: InternalModel,
}

pub enum IsiModels<'a> {
    /// Single-shot models σ_s: symbol s in the first slot, silence after.
    Single(&'a [InternalModel]),
    /// Sequence models for every sequence of length `min(k + 1, ℓ)`.
    Sequences(&'a [SequenceModel]),
}

/// Transmitter schedule sending `symbols` back to back.
pub fn sequence_schedule(symbols: &[usize], symbol_duration: f64) -> Schedule {
    Schedule::Sequence {
        slots: symbols.iter().map(|&s| Some(s)).collect(),
        slot_duration: symbol_duration,
    }
}

/// `inner(t + shift)`.
pub struct Shifted<M> {
    pub inner: M,
    pub shift: f64,
}

impl<M: RateModel> RateModel for Shifted<M> {
    fn value(&self, t: f64) -> f64 {
        self.inner.value(t + self.shift)
    }
    fn integral(&self, a: f64, b: f64) -> f64 {
        self.inner.integral(a + self.shift, b + self.shift)
    }
    fn span(&self) -> f64 {
        self.inner.span() - self.shift
    }
}

/// Pointwise sum of models.
pub struct Superposed<M> {
    pub parts: Vec<M>,
}

impl<M: RateModel> RateModel for Superposed<M> {
    fn value(&self, t: f64) -> f64 {
        self.parts.iter().map(|p| p.value(t)).sum()
    }
    fn integral(&self, a: f64, b: f64) -> f64 {
        self.parts.iter().map(|p| p.integral(a, b)).sum()
    }
    fn span(&self) -> f64 {
        self.parts
            .iter()
            .map(|p| p.span())
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IsiResult {
    pub decisions: Vec<usize>,
    pub ties: Vec<bool>,
    /// Per-symbol correctness when the transmitted sequence is known.
    pub correct: Option<Vec<bool>>,
}

impl IsiResult {
    pub fn errors(&self) -> usize {
        self.correct
            .as_ref()
            .map_or(0, |c| c.iter().filter(|&&ok| !ok).count())
    }
}

pub fn isi_decode(
    history: &BindingHistory,
    n_symbols: usize,
    config: &IsiConfig,
    models: &IsiModels<'_>,
    rx: ReceiverParams,
    priors: &[f64],
    truth: Option<&[usize]>,
    sigma_min: f64,
) -> Result<IsiResult, DemodError> {
    let k_symbols = priors.len();
    let priors = normalize_priors(priors)?;
    let tx = config.symbol_duration;
    if !(tx > 0.0) || config.memory == 0 {
        return Err(DemodError::Config("symbol duration and memory must be positive".into()));
    }
    match models {
        IsiModels::Single(m) if m.len() != k_symbols => {
            return Err(DemodError::Config(format!(
                "{} single-shot models for {k_symbols} symbols",
                m.len()
            )))
        }
        IsiModels::Single(_) if config.mode != IsiMode::Superposition => {
            return Err(DemodError::Config("single-shot models need superposition mode".into()))
        }
        IsiModels::Sequences(_) if config.mode != IsiMode::FullSequenceModels => {
            return Err(DemodError::Config("sequence models need full-sequence mode".into()))
        }
        _ => {}
    }
    if let Some(t) = truth {
        if t.len() != n_symbols {
            return Err(DemodError::Config("ground truth length differs from frame".into()));
        }
    }
    let options = FilterOptions {
        sigma_min,
        common_drift: None,
    };
    let mut decisions: Vec<usize> = Vec::with_capacity(n_symbols);
    let mut ties = Vec::with_capacity(n_symbols);
    for k in 0..n_symbols {
        let start = k as f64 * tx;
        let window = history.window(start, start + tx);
        let mut z = Vec::with_capacity(k_symbols);
        for s in 0..k_symbols {
            let trace = match models {
                IsiModels::Single(single) => {
                    let mut parts = vec![Shifted {
                        inner: &single[s],
                        shift: 0.0,
                    }];
                    for j in 1..config.memory.min(k + 1) {
                        parts.push(Shifted {
                            inner: &single[decisions[k - j]],
                            shift: j as f64 * tx,
                        });
                    }
                    let effective = Superposed { parts };
                    run_filter(&window, &effective, rx, priors[s], &[tx], options)?
                }
                IsiModels::Sequences(seqs) => {
                    let len = config.memory.min(k + 1);
                    let mut key: Vec<usize> = decisions[k + 1 - len..].to_vec();
                    key.push(s);
                    let seq = seqs.iter().find(|m| m.symbols == key).ok_or_else(|| {
                        DemodError::Config(format!("missing sequence model for {key:?}"))
                    })?;
                    let effective = Shifted {
                        inner: &seq.model,
                        shift: (len - 1) as f64 * tx,
                    };
                    run_filter(&window, &effective, rx, priors[s], &[tx], options)?
                }
            };
            z.push(trace.at(tx).unwrap());
        }
        let (s_hat, tie) = argmax_with_tie(&z);
        decisions.push(s_hat);
        ties.push(tie);
    }
    let correct = truth.map(|t| t.iter().zip(&decisions).map(|(a, b)| a == b).collect());
    Ok(IsiResult {
        decisions,
        ties,
        correct,
    })
}

#[cfg(test)]
mod tests {
    use super::super::{demodulate, BindKind};
    use super::*;

    const RX: ReceiverParams = ReceiverParams {
        binding_constant: 0.135,
        receptors: 10,
    };

    fn ramp(symbol: usize, slope: f64, horizon: f64) -> InternalModel {
        let n = (horizon / 0.005).round() as usize;
        let sigma: Vec<f64> = (0..=n).map(|k| 0.1 + slope * k as f64 * 0.005).collect();
        InternalModel::from_grid(symbol, 0.005, sigma, vec![0.0; n + 1])
    }

    #[test]
    fn memory_one_single_symbol_matches_demodulate() {
        let models = [ramp(0, 1.0, 2.0), ramp(1, 5.0, 2.0)];
        let h = BindingHistory {
            events: vec![(0.3, BindKind::Bind), (0.6, BindKind::Bind), (0.8, BindKind::Unbind)],
            receptors: 10,
            horizon: 1.0,
            initial_bound: 0,
        };
        let cfg = IsiConfig {
            symbol_duration: 1.0,
            memory: 1,
            mode: IsiMode::Superposition,
        };
        let r = isi_decode(&h, 1, &cfg, &IsiModels::Single(&models), RX, &[0.5, 0.5], Some(&[1]), 1e-6).unwrap();
        let d = demodulate(&h, &[&models[0], &models[1]], RX, &[0.5, 0.5], 1.0).unwrap();
        assert_eq!(r.decisions, vec![d.symbol]);
        assert_eq!(r.correct, Some(vec![d.symbol == 1]));
    }

    #[test]
    fn superposition_sums_shifted_models() {
        let a = ramp(0, 1.0, 3.0);
        let b = ramp(1, 2.0, 3.0);
        let sup = Superposed {
            parts: vec![
                Shifted { inner: &a, shift: 0.0 },
                Shifted { inner: &b, shift: 1.0 },
            ],
        };
        assert!((sup.value(0.5) - (a.value(0.5) + b.value(1.5))).abs() < 1e-12);
        assert!((sup.integral(0.2, 0.9) - (a.integral(0.2, 0.9) + b.integral(1.2, 1.9))).abs() < 1e-12);
        assert!((sup.span() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn missing_sequence_model_is_a_config_error() {
        let seqs = vec![SequenceModel {
            symbols: vec![0],
            model: ramp(0, 1.0, 1.0),
        }];
        let h = BindingHistory::new(10, 2.0);
        let cfg = IsiConfig {
            symbol_duration: 1.0,
            memory: 2,
            mode: IsiMode::FullSequenceModels,
        };
        let err = isi_decode(&h, 2, &cfg, &IsiModels::Sequences(&seqs), RX, &[0.5, 0.5], None, 1e-6);
        assert!(matches!(err, Err(DemodError::Config(_))));
    }
}
