//! Mini-batch training with weighted cross-entropy, best-epoch selection and
//! classification metrics.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{Role, WindowedDataset};
use crate::error::{shape_err, Error, Result};
use crate::model::CnnModel;
use crate::seed::rng_from_seed;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub const fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    /// Seeds the per-epoch shuffling.
    pub seed: u64,
    /// Weight the loss by inverse class frequency of the training labels.
    pub class_weighting: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            batch_size: 32,
            learning_rate: 1e-4,
            optimizer: Optimizer::adam(),
            seed: 0,
            class_weighting: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(
                "learning_rate must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub weights: Vec<f64>,
    /// Classes with no samples; their weight is 0.
    pub missing: Vec<usize>,
}

/// Inverse class counts normalized so that `Σ_c w_c = n_classes`:
/// `w_c = (1/count_c) · n_classes / Σ_c' (1/count_c')`. Absent classes get 0.
pub fn class_weights(labels: &[usize], n_classes: usize) -> ClassWeights {
    let mut counts = vec![0usize; n_classes];
    for &l in labels {
        if l < n_classes {
            counts[l] += 1;
        }
    }
    let inv: Vec<f64> = counts
        .iter()
        .map(|&k| if k == 0 { 0.0 } else { 1.0 / k as f64 })
        .collect();
    let total: f64 = inv.iter().sum();
    let weights = if total > 0.0 {
        inv.iter().map(|v| v * n_classes as f64 / total).collect()
    } else {
        vec![0.0; n_classes]
    };
    ClassWeights {
        weights,
        missing: (0..n_classes).filter(|&c| counts[c] == 0).collect(),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainReport {
    /// Validation accuracy after each epoch (index 0 is epoch 1).
    pub valid_accuracy: Vec<f64>,
    /// Mean training loss per epoch.
    pub train_loss: Vec<f64>,
    /// 1-based epoch of the first maximum of `valid_accuracy`.
    pub best_epoch: usize,
    pub best_accuracy: f64,
    pub class_weights: Vec<f64>,
    /// Parameters as they were after `best_epoch`.
    #[serde(skip)]
    pub model: CnnModel,
}

impl TrainReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

enum OptState {
    Sgd,
    Adam {
        beta1: f64,
        beta2: f64,
        eps: f64,
        step: i32,
        m: Vec<Vec<f64>>,
        v: Vec<Vec<f64>>,
    },
}

impl OptState {
    fn new(opt: Optimizer, model: &CnnModel) -> Self {
        match opt {
            Optimizer::Sgd => OptState::Sgd,
            Optimizer::Adam { beta1, beta2, eps } => {
                let zeros: Vec<Vec<f64>> = model.parameters().iter().map(|p| vec![0.0; p.len()]).collect();
                OptState::Adam {
                    beta1,
                    beta2,
                    eps,
                    step: 0,
                    m: zeros.clone(),
                    v: zeros,
                }
            }
        }
    }

    fn apply(&mut self, model: &mut CnnModel, grads: &[Tensor], lr: f64) {
        match self {
            OptState::Sgd => {
                for (p, g) in model.parameters_mut().into_iter().zip(grads) {
                    for (pv, gv) in p.data_mut().iter_mut().zip(g.data()) {
                        *pv -= lr * gv;
                    }
                }
            }
            OptState::Adam {
                beta1,
                beta2,
                eps,
                step,
                m,
                v,
            } => {
                *step += 1;
                let c1 = 1.0 - beta1.powi(*step);
                let c2 = 1.0 - beta2.powi(*step);
                for (((p, g), m), v) in model.parameters_mut().into_iter().zip(grads).zip(m).zip(v) {
                    for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                        *mv = *beta1 * *mv + (1.0 - *beta1) * gv;
                        *vv = *beta2 * *vv + (1.0 - *beta2) * gv * gv;
                        *pv -= lr * (*mv / c1) / ((*vv / c2).sqrt() + *eps);
                    }
                }
            }
        }
    }
}

fn check_compatible(model: &CnnModel, ds: &WindowedDataset, what: &'static str) -> Result<()> {
    let hp = model.hyperparams();
    if ds.window_len() != hp.window_len {
        return Err(shape_err(what, "window length", hp.window_len, ds.window_len()));
    }
    if ds.n_signals() != hp.n_signals {
        return Err(shape_err(what, "signal count", hp.n_signals, ds.n_signals()));
    }
    if ds.n_classes() != hp.n_classes {
        return Err(shape_err(what, "class count", hp.n_classes, ds.n_classes()));
    }
    Ok(())
}

pub fn predict_all(model: &CnnModel, ds: &WindowedDataset) -> Result<Vec<usize>> {
    check_compatible(model, ds, "predict")?;
    Ok((0..ds.len()).map(|i| model.predict_slice(ds.window_slice(i))).collect())
}

pub fn accuracy(model: &CnnModel, ds: &WindowedDataset) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset("accuracy"));
    }
    let pred = predict_all(model, ds)?;
    let correct = pred.iter().zip(ds.labels()).filter(|(p, l)| p == l).count();
    Ok(correct as f64 / ds.len() as f64)
}

/// Trains `model` for `cfg.epochs` epochs of shuffled mini-batches, recording the
/// validation accuracy after each epoch, and returns the parameters from the
/// earliest epoch with the highest validation accuracy.
pub fn train(
    mut model: CnnModel,
    train_set: &WindowedDataset,
    valid_set: &WindowedDataset,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    if train_set.role() == Role::Test || valid_set.role() == Role::Test {
        return Err(Error::InvalidArgument(
            "the test split cannot be used for training or model selection".into(),
        ));
    }
    if train_set.is_empty() {
        return Err(Error::EmptyDataset("training set"));
    }
    if valid_set.is_empty() {
        return Err(Error::EmptyDataset("validation set"));
    }
    check_compatible(&model, train_set, "train")?;
    check_compatible(&model, valid_set, "train")?;

    let n_classes = model.hyperparams().n_classes;
    let weights = if cfg.class_weighting {
        class_weights(train_set.labels(), n_classes).weights
    } else {
        vec![1.0; n_classes]
    };
    let mut rng = rng_from_seed(cfg.seed);
    let mut opt = OptState::new(cfg.optimizer, &model);
    let mut grads = model.zero_gradients();
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    let mut valid_accuracy = Vec::with_capacity(cfg.epochs);
    let mut train_loss = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, CnnModel)> = None;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            for g in grads.iter_mut() {
                g.data_mut().fill(0.0);
            }
            let mut batch_loss = 0.0;
            for &i in batch {
                batch_loss += model.accumulate_gradients(
                    train_set.window_slice(i),
                    train_set.labels()[i],
                    &weights,
                    &mut grads,
                )?;
            }
            if !batch_loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    loss: batch_loss,
                });
            }
            epoch_loss += batch_loss;
            let scale = 1.0 / batch.len() as f64;
            for g in grads.iter_mut() {
                g.data_mut().iter_mut().for_each(|v| *v *= scale);
            }
            opt.apply(&mut model, &grads, cfg.learning_rate);
        }
        train_loss.push(epoch_loss / train_set.len() as f64);
        let acc = accuracy(&model, valid_set)?;
        valid_accuracy.push(acc);
        if best.as_ref().map_or(true, |(_, a, _)| acc > *a) {
            best = Some((epoch, acc, model.clone()));
        }
    }
    let (best_epoch, best_accuracy, best_model) = best.expect("at least one epoch");
    Ok(TrainReport {
        valid_accuracy,
        train_loss,
        best_epoch,
        best_accuracy,
        class_weights: weights,
        model: best_model,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    pub support: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_samples: usize,
    pub accuracy: f64,
    /// Averaged over classes with at least one true sample.
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    /// `confusion[true][predicted]`
    pub confusion: Vec<Vec<usize>>,
    pub class_names: Vec<String>,
}

impl EvalReport {
    pub fn from_predictions(truth: &[usize], predicted: &[usize], class_names: &[String]) -> Result<Self> {
        if truth.is_empty() {
            return Err(Error::EmptyDataset("evaluate"));
        }
        if truth.len() != predicted.len() {
            return Err(shape_err("evaluate", "prediction count", truth.len(), predicted.len()));
        }
        let k = class_names.len();
        let mut confusion = vec![vec![0usize; k]; k];
        for (&t, &p) in truth.iter().zip(predicted) {
            if t >= k || p >= k {
                return Err(Error::InvalidClass {
                    index: t.max(p),
                    n_classes: k,
                });
            }
            confusion[t][p] += 1;
        }
        let mut per_class = Vec::with_capacity(k);
        for c in 0..k {
            let tp = confusion[c][c] as f64;
            let support: usize = confusion[c].iter().sum();
            let predicted_pos: usize = (0..k).map(|r| confusion[r][c]).sum();
            let precision = if predicted_pos == 0 {
                0.0
            } else {
                tp / predicted_pos as f64
            };
            let recall = if support == 0 { 0.0 } else { tp / support as f64 };
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            per_class.push(ClassMetrics {
                class: class_names[c].clone(),
                support,
                precision,
                recall,
                f1,
            });
        }
        let present: Vec<&ClassMetrics> = per_class.iter().filter(|m| m.support > 0).collect();
        let mean = |f: fn(&ClassMetrics) -> f64| present.iter().map(|m| f(m)).sum::<f64>() / present.len() as f64;
        let trace: usize = (0..k).map(|c| confusion[c][c]).sum();
        Ok(Self {
            n_samples: truth.len(),
            accuracy: trace as f64 / truth.len() as f64,
            macro_precision: mean(|m| m.precision),
            macro_recall: mean(|m| m.recall),
            macro_f1: mean(|m| m.f1),
            per_class,
            confusion,
            class_names: class_names.to_vec(),
        })
    }

    /// Confusion matrix with each non-empty row scaled to sum to one.
    pub fn row_normalized(&self) -> Vec<Vec<f64>> {
        self.confusion
            .iter()
            .map(|row| {
                let n: usize = row.iter().sum();
                row.iter()
                    .map(|&v| if n == 0 { 0.0 } else { v as f64 / n as f64 })
                    .collect()
            })
            .collect()
    }

    /// CSV with a header of predicted class names; one row per true class.
    pub fn confusion_csv(&self, normalized: bool) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["true\\predicted".to_string()];
        header.extend(self.class_names.iter().cloned());
        w.write_record(&header)?;
        let norm = self.row_normalized();
        for (c, name) in self.class_names.iter().enumerate() {
            let mut rec = vec![name.clone()];
            if normalized {
                rec.extend(norm[c].iter().map(|v| v.to_string()));
            } else {
                rec.extend(self.confusion[c].iter().map(|v| v.to_string()));
            }
            w.write_record(&rec)?;
        }
        String::from_utf8(w.into_inner().map_err(|e| Error::Format(e.to_string()))?)
            .map_err(|e| Error::Format(e.to_string()))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub fn evaluate(model: &CnnModel, ds: &WindowedDataset) -> Result<EvalReport> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset("evaluate"));
    }
    let pred = predict_all(model, ds)?;
    EvalReport::from_predictions(ds.labels(), &pred, ds.class_names())
}
