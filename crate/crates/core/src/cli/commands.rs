use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use super::config::RunConfig;
use super::CliError;
use crate::attribution::{build_sim, build_siv, compute_gradcam, gradcam_json, importance_csv, importance_json};
use crate::data::{filter_and_split, load_csv, window, Role, Split, SplitConfig, Standardizer, WindowedDataset};
use crate::error::Error;
use crate::model::{CnnModel, Hyperparams};
use crate::seed::{derive_seed, stream};
use crate::selection::{
    brute_force_select, fg_ssa_with_models, removal_experiment, run_seed, SelectionConfig, BRUTE_FORCE_LIMIT,
};
use crate::synthetic::{generate_synthetic, SyntheticSpec};
use crate::trainer::{evaluate, train as train_model, EvalReport};

type CmdResult = Result<(), CliError>;

fn config_err(m: impl Into<String>) -> CliError {
    CliError::Config(m.into())
}

/// Files are collected in memory and written only once a command has succeeded.
struct Outputs {
    dir: PathBuf,
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    fn new(dir: &Path) -> Self {
        Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        }
    }

    fn add(&mut self, name: impl Into<String>, body: impl Into<Vec<u8>>) {
        self.files.push((name.into(), body.into()));
    }

    fn write(self) -> CmdResult {
        fs::create_dir_all(&self.dir).map_err(Error::from)?;
        for (name, body) in self.files {
            fs::write(self.dir.join(&name), body).map_err(Error::from)?;
        }
        Ok(())
    }
}

fn pretty<T: Serialize>(v: &T) -> Result<String, CliError> {
    Ok(serde_json::to_string_pretty(v).map_err(Error::from)?)
}

fn check_train_section(cfg: &RunConfig) -> CmdResult {
    if cfg.train.epochs == 0 {
        return Err(config_err("train.epochs must be at least 1"));
    }
    cfg.train
        .train_config(0)
        .validate()
        .map_err(|e| config_err(e.to_string()))
}

fn check_architecture(cfg: &RunConfig, ds: &WindowedDataset) -> CmdResult {
    cfg.model
        .hyperparams(ds.window_len(), ds.n_signals(), ds.n_classes())
        .validate()
        .map_err(|e| config_err(e.to_string()))
}

/// Loads the configured dataset, windows it and splits it. Missing inputs and
/// invalid settings are configuration errors; unreadable content is a runtime error.
struct Prepared {
    full: WindowedDataset,
    split: Split,
    summary: serde_json::Value,
}

fn prepare(cfg: &RunConfig) -> Result<Prepared, CliError> {
    let d = &cfg.data;
    if d.window_len == 0 || cfg.slide() == 0 {
        return Err(config_err("data.window_len and data.slide must be at least 1"));
    }
    for (name, r) in [("test_ratio", d.test_ratio), ("valid_ratio", d.valid_ratio)] {
        if !(r > 0.0 && r < 1.0) {
            return Err(config_err(format!("data.{name} must lie in (0, 1)")));
        }
    }
    let (full, dropped_rows, dropped_ties) = match (&d.csv, &d.snapshot) {
        (Some(_), Some(_)) => return Err(config_err("set only one of data.csv and data.snapshot")),
        (None, None) => return Err(config_err("no input data: set data.csv, data.snapshot or --data")),
        (Some(p), None) => {
            if !p.is_file() {
                return Err(config_err(format!("data file not found: {}", p.display())));
            }
            let table = load_csv(p, &d.schema())?;
            let (ds, stats) = window(&table, d.window_len, cfg.slide())?;
            (ds, table.dropped_rows, stats.dropped_ties)
        }
        (None, Some(p)) => {
            if !p.is_file() {
                return Err(config_err(format!("snapshot not found: {}", p.display())));
            }
            (WindowedDataset::load_snapshot(p)?.with_role(Role::All), 0, 0)
        }
    };
    let split_cfg = SplitConfig {
        min_class_count: d.min_class_count,
        test_ratio: d.test_ratio,
        valid_ratio: d.valid_ratio,
        seed: derive_seed(cfg.seed, stream::SPLIT),
    };
    let mut split = filter_and_split(&full, &split_cfg)?;
    let mut full = full;
    let mut standardizer = None;
    if d.standardize {
        let st = Standardizer::fit(&split.train);
        split.train = st.apply(&split.train)?;
        split.valid = st.apply(&split.valid)?;
        split.test = st.apply(&split.test)?;
        full = st.apply(&full)?;
        standardizer = Some(st);
    }
    let summary = json!({
        "signals": full.signal_names(),
        "classes": split.train.class_names(),
        "windows": full.len(),
        "dropped_rows": dropped_rows,
        "dropped_tie_windows": dropped_ties,
        "train": split.train.len(),
        "valid": split.valid.len(),
        "test": split.test.len(),
        "removed_classes": split.removed_classes,
        "warnings": split.warnings,
        "standardizer": standardizer,
    });
    Ok(Prepared { full, split, summary })
}

fn eval_json(r: &EvalReport) -> serde_json::Value {
    json!({ "accuracy": r.accuracy, "macro_f1": r.macro_f1 })
}

pub fn train(cfg: &RunConfig, out: &Path) -> CmdResult {
    check_train_section(cfg)?;
    let p = prepare(cfg)?;
    let (tr, va) = (&p.split.train, &p.split.valid);
    let combos: Vec<(usize, usize, f64)> = match &cfg.grid {
        None => vec![(cfg.model.conv_size, cfg.model.n_filters, cfg.train.learning_rate)],
        Some(g) => {
            if g.conv_size.is_empty() || g.n_filters.is_empty() || g.learning_rate.is_empty() {
                return Err(config_err("grid lists must be non-empty"));
            }
            let mut v = Vec::new();
            for &sc in &g.conv_size {
                for &nf in &g.n_filters {
                    for &r in &g.learning_rate {
                        v.push((sc, nf, r));
                    }
                }
            }
            v
        }
    };
    let mut hps: Vec<Hyperparams> = Vec::with_capacity(combos.len());
    for &(sc, nf, r) in &combos {
        let mut c = cfg.clone();
        c.model.conv_size = sc;
        c.model.n_filters = nf;
        c.train.learning_rate = r;
        check_architecture(&c, tr)?;
        check_train_section(&c)?;
        hps.push(c.model.hyperparams(tr.window_len(), tr.n_signals(), tr.n_classes()));
    }

    let runs = hps
        .par_iter()
        .zip(combos.par_iter())
        .enumerate()
        .map(|(g, (hp, &(_, _, r)))| {
            let key = derive_seed(cfg.seed, stream::ITERATION_BASE + g as u64);
            let model = CnnModel::build(hp.clone(), derive_seed(key, stream::MODEL_INIT))?;
            let mut tcfg = cfg.train.train_config(derive_seed(key, stream::SHUFFLE));
            tcfg.learning_rate = r;
            train_model(model, tr, va, &tcfg)
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect::<crate::Result<Vec<_>>>()?;
    let mut best = 0;
    for (i, r) in runs.iter().enumerate() {
        if r.best_accuracy > runs[best].best_accuracy {
            best = i;
        }
    }
    let report = &runs[best];
    let eval = evaluate(&report.model, &p.split.test)?;

    let mut o = Outputs::new(out);
    o.add("model.json", report.model.to_json()?);
    o.add("train_report.json", report.to_json()?);
    o.add("eval_report.json", eval.to_json()?);
    o.add("confusion.csv", eval.confusion_csv(false)?);
    o.add("confusion_normalized.csv", eval.confusion_csv(true)?);
    o.add("data_summary.json", pretty(&p.summary)?);
    if cfg.grid.is_some() {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "conv_size",
            "n_filters",
            "learning_rate",
            "best_epoch",
            "valid_accuracy",
            "best",
        ])
        .map_err(Error::from)?;
        for (i, (r, &(sc, nf, lr))) in runs.iter().zip(combos.iter()).enumerate() {
            w.write_record([
                sc.to_string(),
                nf.to_string(),
                lr.to_string(),
                r.best_epoch.to_string(),
                r.best_accuracy.to_string(),
                (i == best).to_string(),
            ])
            .map_err(Error::from)?;
        }
        o.add("grid.csv", w.into_inner().map_err(|e| Error::Format(e.to_string()))?);
    }
    eprintln!(
        "trained {} model(s); best validation accuracy {:.4}, test accuracy {:.4}",
        runs.len(),
        report.best_accuracy,
        eval.accuracy
    );
    o.write()
}

pub fn gradcam(cfg: &RunConfig, out: &Path) -> CmdResult {
    let path = cfg
        .gradcam
        .model
        .as_ref()
        .ok_or_else(|| config_err("no model: set gradcam.model or --model"))?;
    if !path.is_file() {
        return Err(config_err(format!("model file not found: {}", path.display())));
    }
    let model = CnnModel::load(path)?;
    let p = prepare(cfg)?;
    let ds = match cfg.gradcam.split.unwrap_or(Role::All) {
        Role::All => p.full,
        Role::Train => p.split.train,
        Role::Valid => p.split.valid,
        Role::Test => p.split.test,
    };
    let hp = model.hyperparams();
    if (hp.window_len, hp.n_signals, hp.n_classes) != (ds.window_len(), ds.n_signals(), ds.n_classes()) {
        return Err(config_err(format!(
            "model expects windows of {} x {} signals with {} classes; data has {} x {} with {}",
            hp.window_len,
            hp.n_signals,
            hp.n_classes,
            ds.window_len(),
            ds.n_signals(),
            ds.n_classes()
        )));
    }
    if let Some(&i) = cfg.gradcam.windows.iter().find(|&&i| i >= ds.len()) {
        return Err(config_err(format!(
            "window index {i} out of range ({} windows)",
            ds.len()
        )));
    }
    let target = cfg.attribution.target;
    let (subset, cams) = if cfg.gradcam.windows.is_empty() {
        (ds, Vec::new())
    } else {
        let cams = cfg
            .gradcam
            .windows
            .iter()
            .map(|&i| {
                Ok((
                    i,
                    compute_gradcam(&model.feature_gradients_with(&ds.window(i), target)?),
                ))
            })
            .collect::<crate::Result<Vec<_>>>()?;
        (ds.subset(&cfg.gradcam.windows, ds.role()), cams)
    };
    let sim = build_sim(&model, &subset, &cfg.attribution.config())?;
    let siv = build_siv(&sim, cfg.attribution.siv_weights.as_deref()).map_err(|e| config_err(e.to_string()))?;

    let mut o = Outputs::new(out);
    o.add(
        "gradcam.json",
        gradcam_json(&cams, subset.signal_names(), subset.class_names())?,
    );
    o.add("sim.csv", importance_csv(&sim, &siv, false)?);
    o.add("sim_display.csv", importance_csv(&sim, &siv, true)?);
    o.add("sim.json", importance_json(&sim, &siv)?);
    o.write()
}

fn selection_config(cfg: &RunConfig, ds: &WindowedDataset) -> Result<SelectionConfig, CliError> {
    check_train_section(cfg)?;
    check_architecture(cfg, ds)?;
    if let Some(w) = &cfg.attribution.siv_weights {
        let total: f64 = w.iter().sum();
        if w.len() != ds.n_classes() || (total - 1.0).abs() > 1e-9 || w.iter().any(|v| *v < 0.0) {
            return Err(config_err(format!(
                "attribution.siv_weights needs {} non-negative entries summing to 1",
                ds.n_classes()
            )));
        }
    }
    Ok(SelectionConfig {
        architecture: cfg.model.hyperparams(ds.window_len(), ds.n_signals(), ds.n_classes()),
        train: cfg.train.train_config(0),
        seed: cfg.seed,
        attribution: cfg.attribution.config(),
        siv_weights: cfg.attribution.siv_weights.clone(),
    })
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

pub fn select(cfg: &RunConfig, out: &Path) -> CmdResult {
    let p = prepare(cfg)?;
    let (tr, va, te) = (&p.split.train, &p.split.valid, &p.split.test);
    let scfg = selection_config(cfg, tr)?;
    let ns = tr.n_signals();
    let gamma = cfg.select.gamma.unwrap_or(ns);
    if gamma == 0 || gamma > ns {
        return Err(config_err(format!("gamma must be in 1..={ns}, got {gamma}")));
    }
    let seeds = cfg.select.seeds;
    if seeds == 0 {
        return Err(config_err("seeds must be at least 1"));
    }
    if cfg.select.brute_force && ns > BRUTE_FORCE_LIMIT {
        return Err(config_err(format!(
            "brute-force search is limited to {BRUTE_FORCE_LIMIT} signals, data has {ns}"
        )));
    }
    let signals: Vec<usize> = (0..ns).collect();

    let runs = (0..seeds)
        .into_par_iter()
        .map(|r| {
            let run_cfg = SelectionConfig {
                seed: run_seed(cfg.seed, r),
                ..scfg.clone()
            };
            let outcome = fg_ssa_with_models(tr, va, &signals, gamma, &run_cfg)?;
            let all = evaluate(&outcome.models[0], te)?;
            let s_use = outcome.trace.s_use.clone().expect("complete trace");
            let model = outcome.selected_model().expect("complete trace");
            let selected = evaluate(model, &te.select_signals(&s_use)?)?;
            eprintln!("selection run {r} done: {} signal(s) kept", s_use.len());
            Ok((outcome.trace, all, selected))
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect::<crate::Result<Vec<_>>>()?;

    let mut o = Outputs::new(out);
    let mut per_run = Vec::new();
    for (r, (trace, all, selected)) in runs.iter().enumerate() {
        o.add(format!("trace_{r}.json"), trace.to_json()?);
        o.add(format!("trace_{r}.csv"), trace.to_csv()?);
        let s_use = trace.s_use.as_ref().expect("complete trace");
        per_run.push(json!({
            "run": r,
            "seed": trace.seed,
            "s_use": trace.s_use_names,
            "removed": ns - s_use.len(),
            "valid_accuracy": trace.best_accuracy,
            "test_all_signals": eval_json(all),
            "test_selected": eval_json(selected),
        }));
    }
    let mut summary = json!({
        "gamma": gamma,
        "seeds": seeds,
        "n_signals": ns,
        "models_trained_per_run": ns,
        "mean_removed": mean(runs.iter().map(|(t, _, _)| (ns - t.s_use.as_ref().map_or(0, Vec::len)) as f64)),
        "mean_test_accuracy_all_signals": mean(runs.iter().map(|(_, a, _)| a.accuracy)),
        "mean_test_macro_f1_all_signals": mean(runs.iter().map(|(_, a, _)| a.macro_f1)),
        "mean_test_accuracy_selected": mean(runs.iter().map(|(_, _, s)| s.accuracy)),
        "mean_test_macro_f1_selected": mean(runs.iter().map(|(_, _, s)| s.macro_f1)),
        "runs": per_run,
        "data": p.summary,
    });
    if cfg.select.brute_force {
        let bf = brute_force_select(tr, va, &signals, &scfg)?;
        o.add("brute_force.json", bf.to_json()?);
        summary["brute_force"] = json!({
            "best": bf.best_names,
            "best_accuracy": bf.best_accuracy,
            "models_trained": bf.models_trained,
        });
    }
    o.add("summary.json", pretty(&summary)?);
    o.write()
}

pub fn experiment(cfg: &RunConfig, out: &Path) -> CmdResult {
    let p = prepare(cfg)?;
    let (tr, va) = (&p.split.train, &p.split.valid);
    let scfg = selection_config(cfg, tr)?;
    if cfg.experiment.seeds == 0 {
        return Err(config_err("seeds must be at least 1"));
    }
    let signals: Vec<usize> = (0..tr.n_signals()).collect();
    let exp = removal_experiment(cfg.experiment.direction, tr, va, &signals, cfg.experiment.seeds, &scfg)?;
    let mut o = Outputs::new(out);
    o.add("removal_curve.csv", exp.curve_csv()?);
    o.add("removal_timing.csv", exp.timing_csv()?);
    o.add("experiment.json", pretty(&exp)?);
    o.write()
}

pub fn synth(cfg: &RunConfig, out: &Path) -> CmdResult {
    let s = &cfg.synth;
    if s.informative == 0 || s.informative > 10 {
        return Err(config_err("synth.informative must be in 1..=10"));
    }
    if s.samples_per_class == 0 || s.segment_len == 0 {
        return Err(config_err(
            "synth.samples_per_class and synth.segment_len must be at least 1",
        ));
    }
    let spec = SyntheticSpec::bit_coded(
        s.informative,
        s.noise,
        s.samples_per_class,
        s.segment_len,
        derive_seed(cfg.seed, stream::SYNTHETIC),
    );
    let data = generate_synthetic(&spec)?;
    let (ds, _) = window(&data.table, s.segment_len, s.segment_len)?;
    let mut snapshot = Vec::new();
    ds.write_snapshot(&mut snapshot)?;
    let mut o = Outputs::new(out);
    o.add("data.csv", data.table.to_csv("label")?);
    o.add("metadata.json", pretty(&data.metadata)?);
    o.add("dataset.fgds", snapshot);
    o.write()
}
