//! Greedy backward elimination of signals ranked by feature-gradient importance,
//! removal studies over several seeds and a brute-force oracle for small signal sets.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attribution::{build_sim, build_siv, min_max_signals, AttributionConfig};
use crate::data::{Role, WindowedDataset};
use crate::error::{Error, Result};
use crate::model::{CnnModel, Hyperparams};
use crate::seed::{derive_seed, stream};
use crate::trainer::{train, TrainConfig};

/// Largest signal set brute-force search accepts (2^12 - 1 trainings).
pub const BRUTE_FORCE_LIMIT: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    /// Architecture template. `window_len`, `n_signals` and `n_classes` are taken
    /// from the data.
    pub architecture: Hyperparams,
    pub train: TrainConfig,
    /// Master seed; every model and shuffle seed is derived from it.
    pub seed: u64,
    pub attribution: AttributionConfig,
    /// Optional class weights for the importance vector (must sum to 1).
    pub siv_weights: Option<Vec<f64>>,
}

impl SelectionConfig {
    pub fn new(architecture: Hyperparams, train: TrainConfig, seed: u64) -> Self {
        Self {
            architecture,
            train,
            seed,
            attribution: AttributionConfig::default(),
            siv_weights: None,
        }
    }

    fn hyperparams_for(&self, ds: &WindowedDataset, n_signals: usize) -> Hyperparams {
        Hyperparams {
            window_len: ds.window_len(),
            n_signals,
            n_classes: ds.n_classes(),
            ..self.architecture.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RemovalDirection {
    /// Remove the least important signal.
    #[default]
    Min,
    /// Remove the most important signal.
    Max,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub t: usize,
    /// Column indices (into the input datasets) used in this iteration.
    pub signals: Vec<usize>,
    pub signal_names: Vec<String>,
    pub valid_accuracy: f64,
    pub best_epoch: usize,
    /// Importance of each signal in `signals`, same order.
    pub siv: Vec<f64>,
    pub removed: usize,
    pub removed_name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionTrace {
    pub direction: RemovalDirection,
    pub seed: u64,
    pub gamma: usize,
    pub iterations: Vec<IterationRecord>,
    /// Chosen subset; `None` for a partial trace.
    pub s_use: Option<Vec<usize>>,
    pub s_use_names: Option<Vec<String>>,
    pub best_accuracy: Option<f64>,
    pub models_trained: usize,
}

impl SelectionTrace {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// One row per iteration: `t,size,accuracy,removed`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["t", "size", "accuracy", "removed"])?;
        for r in &self.iterations {
            w.write_record([
                r.t.to_string(),
                r.signals.len().to_string(),
                r.valid_accuracy.to_string(),
                r.removed_name.clone(),
            ])?;
        }
        String::from_utf8(w.into_inner().map_err(|e| Error::Format(e.to_string()))?)
            .map_err(|e| Error::Format(e.to_string()))
    }

    /// Iteration whose subset would be chosen under size limit `gamma`: highest
    /// validation accuracy, ties to the smaller subset.
    pub fn best_within(&self, gamma: usize) -> Option<usize> {
        choose(&self.iterations, gamma)
    }

    /// Iteration at which each of the given columns was removed.
    pub fn removal_timing(&self, columns: &[usize]) -> Vec<Option<usize>> {
        columns
            .iter()
            .map(|c| self.iterations.iter().find(|r| r.removed == *c).map(|r| r.t))
            .collect()
    }

    /// Checks the structural invariants of a completed or partial trace.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Format(format!("inconsistent selection trace: {m}")));
        for (i, r) in self.iterations.iter().enumerate() {
            if r.t != i {
                return bad(format!("iteration {i} is numbered {}", r.t));
            }
            if r.siv.len() != r.signals.len() || !r.signals.contains(&r.removed) {
                return bad(format!("iteration {i} removes a signal it does not hold"));
            }
            let (lo, hi) = min_max_signals(&r.siv)?;
            let expected = match self.direction {
                RemovalDirection::Min => lo,
                RemovalDirection::Max => hi,
            };
            if r.signals[expected] != r.removed {
                return bad(format!("iteration {i} did not remove the ranked signal"));
            }
            if let Some(next) = self.iterations.get(i + 1) {
                let mut expect: Vec<usize> = r.signals.iter().copied().filter(|s| *s != r.removed).collect();
                expect.sort_unstable();
                let mut got = next.signals.clone();
                got.sort_unstable();
                if expect != got {
                    return bad(format!("iteration {} does not follow from {i}", i + 1));
                }
            }
        }
        if let Some(s_use) = &self.s_use {
            if s_use.len() > self.gamma {
                return bad("chosen subset exceeds gamma".into());
            }
            if !self.iterations.iter().any(|r| &r.signals == s_use) {
                return bad("chosen subset was never evaluated".into());
            }
        }
        Ok(())
    }
}

pub fn fg_ssa_model_count(n_signals: usize) -> usize {
    n_signals
}

/// `Σ_{m=1}^{n} C(n, m) = 2^n - 1`.
pub fn brute_force_model_count(n_signals: usize) -> u64 {
    (1u64 << n_signals) - 1
}

fn validate_signals(train_set: &WindowedDataset, valid_set: &WindowedDataset, signals: &[usize]) -> Result<()> {
    if train_set.signal_names() != valid_set.signal_names() {
        return Err(Error::InvalidArgument(
            "training and validation sets have different signals".into(),
        ));
    }
    if train_set.role() == Role::Test || valid_set.role() == Role::Test {
        return Err(Error::InvalidArgument(
            "the test split cannot be used for signal selection".into(),
        ));
    }
    if signals.is_empty() {
        return Err(Error::InvalidArgument("signal set is empty".into()));
    }
    for (i, s) in signals.iter().enumerate() {
        if *s >= train_set.n_signals() {
            return Err(Error::InvalidArgument(format!(
                "signal index {s} out of range for {} signals",
                train_set.n_signals()
            )));
        }
        if signals[..i].contains(s) {
            return Err(Error::InvalidArgument(format!("signal index {s} listed twice")));
        }
    }
    Ok(())
}

/// Trains a fresh model on `signals` with seeds derived from `key`.
fn fit_subset(
    train_set: &WindowedDataset,
    valid_set: &WindowedDataset,
    signals: &[usize],
    cfg: &SelectionConfig,
    key: u64,
) -> Result<(CnnModel, WindowedDataset, f64, usize)> {
    let tr = train_set.select_signals(signals)?;
    let va = valid_set.select_signals(signals)?;
    let hp = cfg.hyperparams_for(train_set, signals.len());
    let model = CnnModel::build(hp, derive_seed(key, stream::MODEL_INIT))?;
    let tcfg = TrainConfig {
        seed: derive_seed(key, stream::SHUFFLE),
        ..cfg.train.clone()
    };
    let report = train(model, &tr, &va, &tcfg)?;
    Ok((report.model, va, report.best_accuracy, report.best_epoch))
}

/// Retrains the model of iteration `t` (or subset index `t` of a brute-force search)
/// on `signals`, reproducing the model that run trained. Returns the best-epoch model
/// and its validation accuracy.
pub fn retrain_iteration(
    train_set: &WindowedDataset,
    valid_set: &WindowedDataset,
    signals: &[usize],
    cfg: &SelectionConfig,
    t: usize,
) -> Result<(CnnModel, f64)> {
    validate_signals(train_set, valid_set, signals)?;
    let key = derive_seed(cfg.seed, stream::ITERATION_BASE + t as u64);
    fit_subset(train_set, valid_set, signals, cfg, key).map(|(m, _, acc, _)| (m, acc))
}

/// Index of the best record with at most `gamma` signals: highest accuracy, ties to
/// the smaller subset and then the later iteration.
fn choose(iterations: &[IterationRecord], gamma: usize) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, r) in iterations.iter().enumerate() {
        if r.signals.len() > gamma {
            continue;
        }
        best = match best {
            None => Some(i),
            Some(b) => {
                let rb = &iterations[b];
                let better = r.valid_accuracy > rb.valid_accuracy
                    || (r.valid_accuracy == rb.valid_accuracy && r.signals.len() <= rb.signals.len());
                Some(if better { i } else { b })
            }
        };
    }
    best
}

/// Runs the removal loop to exhaustion: `|S|` iterations, each training a fresh model
/// on the current subset, scoring it on the validation set and removing the lowest
/// (or highest) ranked signal by the validation-set importance vector.
pub fn removal_loop(
    train_set: &WindowedDataset,
    valid_set: &WindowedDataset,
    signals: &[usize],
    direction: RemovalDirection,
    cfg: &SelectionConfig,
) -> Result<SelectionTrace> {
    removal_loop_with_models(train_set, valid_set, signals, direction, cfg).map(|o| o.trace)
}

/// A trace together with the best-epoch model of every iteration.
#[derive(Debug, Clone)]
pub struct SelectionOutcome {
    pub trace: SelectionTrace,
    /// `models[t]` was trained on `trace.iterations[t].signals`.
    pub models: Vec<CnnModel>,
}

impl SelectionOutcome {
    /// Model trained on the chosen subset.
    pub fn selected_model(&self) -> Option<&CnnModel> {
        let s_use = self.trace.s_use.as_ref()?;
        let t = self.trace.iterations.iter().position(|r| &r.signals == s_use)?;
        self.models.get(t)
    }
}

pub fn removal_loop_with_models(
    train_set: &WindowedDataset,
    valid_set: &WindowedDataset,
    signals: &[usize],
    direction: RemovalDirection,
    cfg: &SelectionConfig,
) -> Result<SelectionOutcome> {
    validate_signals(train_set, valid_set, signals)?;
    cfg.train.validate()?;
    let mut trace = SelectionTrace {
        direction,
        seed: cfg.seed,
        gamma: signals.len(),
        iterations: Vec::with_capacity(signals.len()),
        s_use: None,
        s_use_names: None,
        best_accuracy: None,
        models_trained: 0,
    };
    let mut models = Vec::with_capacity(signals.len());
    let mut current = signals.to_vec();
    for t in 0..signals.len() {
        let key = derive_seed(cfg.seed, stream::ITERATION_BASE + t as u64);
        let step = fit_subset(train_set, valid_set, &current, cfg, key).and_then(|(model, va, acc, epoch)| {
            let sim = build_sim(&model, &va, &cfg.attribution)?;
            let siv = build_siv(&sim, cfg.siv_weights.as_deref())?;
            Ok((model, acc, epoch, siv.values))
        });
        let (model, acc, epoch, siv) = match step {
            Ok(v) => v,
            Err(e) => {
                return Err(Error::SelectionAborted {
                    iteration: t,
                    source: Box::new(e),
                    partial: Box::new(trace),
                })
            }
        };
        trace.models_trained += 1;
        models.push(model);
        let (lo, hi) = min_max_signals(&siv)?;
        let pos = match direction {
            RemovalDirection::Min => lo,
            RemovalDirection::Max => hi,
        };
        let removed = current[pos];
        trace.iterations.push(IterationRecord {
            t,
            signal_names: current.iter().map(|&s| train_set.signal_names()[s].clone()).collect(),
            signals: current.clone(),
            valid_accuracy: acc,
            best_epoch: epoch,
            siv,
            removed,
            removed_name: train_set.signal_names()[removed].clone(),
        });
        current.remove(pos);
    }
    Ok(SelectionOutcome { trace, models })
}

/// Selects the subset with the highest validation accuracy among at most `gamma`
/// signals, visiting subsets by removing the least important signal each iteration.
pub fn fg_ssa(
    train_set: &WindowedDataset,
    valid_set: &WindowedDataset,
    signals: &[usize],
    gamma: usize,
    cfg: &SelectionConfig,
) -> Result<SelectionTrace> {
    fg_ssa_with_models(train_set, valid_set, signals, gamma, cfg).map(|o| o.trace)
}

/// [`fg_ssa`] that also returns every iteration's model.
pub fn fg_ssa_with_models(
    train_set: &WindowedDataset,
    valid_set: &WindowedDataset,
    signals: &[usize],
    gamma: usize,
    cfg: &SelectionConfig,
) -> Result<SelectionOutcome> {
    if gamma == 0 || gamma > signals.len() {
        return Err(Error::InvalidArgument(format!(
            "gamma must be in 1..={}, got {gamma}",
            signals.len()
        )));
    }
    let mut out = removal_loop_with_models(train_set, valid_set, signals, RemovalDirection::Min, cfg)?;
    let trace = &mut out.trace;
    trace.gamma = gamma;
    let best = choose(&trace.iterations, gamma).expect("the last iteration has one signal");
    let r = &trace.iterations[best];
    trace.s_use = Some(r.signals.clone());
    trace.s_use_names = Some(r.signal_names.clone());
    trace.best_accuracy = Some(r.valid_accuracy);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemovalExperiment {
    pub direction: RemovalDirection,
    pub signals: Vec<usize>,
    pub signal_names: Vec<String>,
    pub n_seeds: usize,
    /// Validation accuracy by number of deleted signals (index 0 = all signals).
    pub mean_accuracy: Vec<f64>,
    pub std_accuracy: Vec<f64>,
    /// Iteration at which each signal was removed, aligned with `signals`.
    pub mean_timing: Vec<f64>,
    pub std_timing: Vec<f64>,
    pub traces: Vec<SelectionTrace>,
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Master seed of run `r` of a multi-seed experiment.
pub fn run_seed(master: u64, run: usize) -> u64 {
    derive_seed(master, stream::RUN_BASE + run as u64)
}

/// Runs the removal loop once per seed and aggregates accuracy curves and removal
/// timings (population standard deviations). Seeds run in parallel; results are
/// merged in seed order.
pub fn removal_experiment(
    direction: RemovalDirection,
    train_set: &WindowedDataset,
    valid_set: &WindowedDataset,
    signals: &[usize],
    n_seeds: usize,
    cfg: &SelectionConfig,
) -> Result<RemovalExperiment> {
    if n_seeds == 0 {
        return Err(Error::InvalidArgument("n_seeds must be at least 1".into()));
    }
    validate_signals(train_set, valid_set, signals)?;
    let traces = (0..n_seeds)
        .into_par_iter()
        .map(|r| {
            let run_cfg = SelectionConfig {
                seed: run_seed(cfg.seed, r),
                ..cfg.clone()
            };
            removal_loop(train_set, valid_set, signals, direction, &run_cfg)
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let n = signals.len();
    let (mean_accuracy, std_accuracy) = (0..n)
        .map(|k| {
            mean_std(
                &traces
                    .iter()
                    .map(|t| t.iterations[k].valid_accuracy)
                    .collect::<Vec<_>>(),
            )
        })
        .unzip();
    let timings: Vec<Vec<usize>> = traces
        .iter()
        .map(|t| {
            t.removal_timing(signals)
                .into_iter()
                .map(|v| v.expect("every signal is removed"))
                .collect()
        })
        .collect();
    let (mean_timing, std_timing) = (0..n)
        .map(|s| mean_std(&timings.iter().map(|t| t[s] as f64).collect::<Vec<_>>()))
        .unzip();
    Ok(RemovalExperiment {
        direction,
        signals: signals.to_vec(),
        signal_names: signals.iter().map(|&s| train_set.signal_names()[s].clone()).collect(),
        n_seeds,
        mean_accuracy,
        std_accuracy,
        mean_timing,
        std_timing,
        traces,
    })
}

impl RemovalExperiment {
    /// `deleted,mean_accuracy,std_accuracy`.
    pub fn curve_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["deleted", "mean_accuracy", "std_accuracy"])?;
        for (k, (m, s)) in self.mean_accuracy.iter().zip(&self.std_accuracy).enumerate() {
            w.write_record([k.to_string(), m.to_string(), s.to_string()])?;
        }
        String::from_utf8(w.into_inner().map_err(|e| Error::Format(e.to_string()))?)
            .map_err(|e| Error::Format(e.to_string()))
    }

    /// `signal,mean_timing,std_timing`.
    pub fn timing_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["signal", "mean_timing", "std_timing"])?;
        for (i, name) in self.signal_names.iter().enumerate() {
            w.write_record([
                name.clone(),
                self.mean_timing[i].to_string(),
                self.std_timing[i].to_string(),
            ])?;
        }
        String::from_utf8(w.into_inner().map_err(|e| Error::Format(e.to_string()))?)
            .map_err(|e| Error::Format(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetResult {
    pub signals: Vec<usize>,
    pub valid_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BruteForceResult {
    pub best: Vec<usize>,
    pub best_names: Vec<String>,
    pub best_accuracy: f64,
    /// Every non-empty subset, ordered by size and then lexicographically.
    pub table: Vec<SubsetResult>,
    pub models_trained: usize,
}

impl BruteForceResult {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Non-empty subsets of `signals`, by size and then lexicographic position order.
pub fn all_subsets(signals: &[usize]) -> Vec<Vec<usize>> {
    let n = signals.len();
    let mut masks: Vec<Vec<usize>> = (1u32..(1 << n))
        .map(|m| (0..n).filter(|i| m >> i & 1 == 1).collect())
        .collect();
    masks.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    masks
        .into_iter()
        .map(|pos| pos.into_iter().map(|i| signals[i]).collect())
        .collect()
}

/// Trains one model per non-empty subset of `signals` and returns the subset with the
/// highest validation accuracy (ties to the smaller subset, then lexicographic order).
pub fn brute_force_select(
    train_set: &WindowedDataset,
    valid_set: &WindowedDataset,
    signals: &[usize],
    cfg: &SelectionConfig,
) -> Result<BruteForceResult> {
    if signals.len() > BRUTE_FORCE_LIMIT {
        return Err(Error::InvalidArgument(format!(
            "brute-force search over {} signals would train {} models; the limit is {BRUTE_FORCE_LIMIT} signals",
            signals.len(),
            brute_force_model_count(signals.len())
        )));
    }
    validate_signals(train_set, valid_set, signals)?;
    cfg.train.validate()?;
    let subsets = all_subsets(signals);
    let table = subsets
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let key = derive_seed(cfg.seed, stream::ITERATION_BASE + i as u64);
            fit_subset(train_set, valid_set, s, cfg, key).map(|(_, _, acc, _)| SubsetResult {
                signals: s.clone(),
                valid_accuracy: acc,
            })
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let mut best = 0;
    for (i, r) in table.iter().enumerate() {
        if r.valid_accuracy > table[best].valid_accuracy {
            best = i;
        }
    }
    let best_subset = table[best].signals.clone();
    Ok(BruteForceResult {
        best_names: best_subset
            .iter()
            .map(|&s| train_set.signal_names()[s].clone())
            .collect(),
        best: best_subset,
        best_accuracy: table[best].valid_accuracy,
        models_trained: table.len(),
        table,
    })
}
