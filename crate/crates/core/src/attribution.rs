//! Time-directional grad-CAM and signal importance.
//!
//! For one window with estimated class `c'`, the last convolution layer yields a
//! feature map `f^{s,k}` (length `feature_len`) per signal `s` and filter `k`:
//!
//! - `alpha[s,k]` is the time-mean of `∂y_{c'} / ∂f^{s,k}_j`;
//! - the grad-CAM of signal `s` is `ReLU(mean_k alpha[s,k] · f^{s,k})`;
//! - the window's score for signal `s` is `mean_k max(alpha[s,k], 0)`.
//!
//! Averaging window scores over the windows assigned to class `c'` gives the
//! signal-importance matrix (SIM); averaging SIM rows over classes gives the
//! signal-importance vector (SIV).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::WindowedDataset;
use crate::error::{shape_err, Error, Result};
use crate::model::{CnnModel, FeatureGradientBundle, GradientTarget};
use crate::tensor::Tensor;

/// How windows are grouped into classes when building the SIM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionKey {
    /// The model's estimated class (misclassified windows included).
    #[default]
    Estimated,
    /// The true label. Gradients are still taken on the estimated class.
    TrueLabel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AttributionConfig {
    pub target: GradientTarget,
    pub partition: PartitionKey,
}

/// `alpha[s,k]`, row-major over `(signal, filter)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaMap {
    pub n_signals: usize,
    pub n_filters: usize,
    pub values: Vec<f64>,
}

impl AlphaMap {
    pub fn new(n_signals: usize, n_filters: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_signals * n_filters {
            return Err(shape_err(
                "AlphaMap::new",
                "element count",
                n_signals * n_filters,
                values.len(),
            ));
        }
        Ok(Self {
            n_signals,
            n_filters,
            values,
        })
    }

    pub fn get(&self, signal: usize, filter: usize) -> f64 {
        self.values[signal * self.n_filters + filter]
    }

    /// `mean_k max(alpha[s,k], 0)` for every signal.
    pub fn positive_means(&self) -> Vec<f64> {
        self.values
            .chunks(self.n_filters)
            .map(|row| row.iter().map(|a| a.max(0.0)).sum::<f64>() / self.n_filters as f64)
            .collect()
    }
}

pub fn compute_alpha(bundle: &FeatureGradientBundle) -> AlphaMap {
    let (sf, ns, nf) = (bundle.feature_len(), bundle.n_signals(), bundle.n_filters());
    let g = bundle.gradients.data();
    let mut values = vec![0.0; ns * nf];
    for j in 0..sf {
        for (acc, gv) in values.iter_mut().zip(&g[j * ns * nf..(j + 1) * ns * nf]) {
            *acc += gv;
        }
    }
    for v in values.iter_mut() {
        *v /= sf as f64;
    }
    AlphaMap {
        n_signals: ns,
        n_filters: nf,
        values,
    }
}

/// Per-signal grad-CAM vectors for one window; every entry is non-negative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCam {
    pub estimated_class: usize,
    /// `maps[s]` has `feature_len` entries.
    pub maps: Vec<Vec<f64>>,
}

pub fn compute_gradcam(bundle: &FeatureGradientBundle) -> GradCam {
    gradcam_from_alpha(&bundle.features, &compute_alpha(bundle), bundle.estimated_class)
}

fn gradcam_from_alpha(features: &Tensor, alpha: &AlphaMap, estimated_class: usize) -> GradCam {
    let (sf, ns, nf) = (features.shape()[0], features.shape()[1], features.shape()[2]);
    let f = features.data();
    let maps = (0..ns)
        .map(|s| {
            (0..sf)
                .map(|j| {
                    let z: f64 = (0..nf).map(|k| alpha.get(s, k) * f[(j * ns + s) * nf + k]).sum::<f64>() / nf as f64;
                    z.max(0.0)
                })
                .collect()
        })
        .collect();
    GradCam { estimated_class, maps }
}

/// Mean over windows of the per-window signal scores; `None` for an empty set.
pub fn importance_from_alphas(alphas: &[AlphaMap]) -> Option<Vec<f64>> {
    let first = alphas.first()?;
    let mut sum = vec![0.0; first.n_signals];
    for a in alphas {
        for (acc, g) in sum.iter_mut().zip(a.positive_means()) {
            *acc += g;
        }
    }
    Some(sum.into_iter().map(|v| v / alphas.len() as f64).collect())
}

/// Importance of each signal for the class whose windows are given. Returns `None`
/// (absent) when `windows` is empty.
pub fn signal_class_importance(
    model: &CnnModel,
    windows: &[Tensor],
    target: GradientTarget,
) -> Result<Option<Vec<f64>>> {
    let alphas = windows
        .iter()
        .map(|x| Ok(compute_alpha(&model.feature_gradients_with(x, target)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(importance_from_alphas(&alphas))
}

/// Signal × class importance. Columns of classes with no windows are absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceMatrix {
    pub signal_names: Vec<String>,
    pub class_names: Vec<String>,
    /// `values[s][c]`; 0 where the class is absent.
    pub values: Vec<Vec<f64>>,
    /// Windows assigned to each class.
    pub counts: Vec<usize>,
}

impl ImportanceMatrix {
    pub fn n_signals(&self) -> usize {
        self.signal_names.len()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn is_present(&self, class: usize) -> bool {
        self.counts[class] > 0
    }

    pub fn get(&self, signal: usize, class: usize) -> Option<f64> {
        self.is_present(class).then(|| self.values[signal][class])
    }

    pub fn column(&self, class: usize) -> Option<Vec<f64>> {
        self.is_present(class)
            .then(|| self.values.iter().map(|row| row[class]).collect())
    }
}

/// Per-window alpha maps and partition keys, in dataset order.
fn window_alphas(
    model: &CnnModel,
    dataset: &WindowedDataset,
    cfg: &AttributionConfig,
) -> Result<Vec<(usize, AlphaMap)>> {
    let hp = model.hyperparams();
    if dataset.n_signals() != hp.n_signals {
        return Err(shape_err(
            "build_sim",
            "signal count",
            hp.n_signals,
            dataset.n_signals(),
        ));
    }
    if dataset.window_len() != hp.window_len {
        return Err(shape_err(
            "build_sim",
            "window length",
            hp.window_len,
            dataset.window_len(),
        ));
    }
    if dataset.n_classes() != hp.n_classes {
        return Err(shape_err("build_sim", "class count", hp.n_classes, dataset.n_classes()));
    }
    Ok((0..dataset.len())
        .into_par_iter()
        .map(|i| {
            let bundle = model.feature_gradients_slice(dataset.window_slice(i), cfg.target);
            let key = match cfg.partition {
                PartitionKey::Estimated => bundle.estimated_class,
                PartitionKey::TrueLabel => dataset.labels()[i],
            };
            (key, compute_alpha(&bundle))
        })
        .collect())
}

pub fn build_sim(model: &CnnModel, dataset: &WindowedDataset, cfg: &AttributionConfig) -> Result<ImportanceMatrix> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset("build_sim"));
    }
    let per_window = window_alphas(model, dataset, cfg)?;
    let (ns, nc) = (dataset.n_signals(), dataset.n_classes());
    let mut sums = vec![vec![0.0; nc]; ns];
    let mut counts = vec![0usize; nc];
    // Fixed (dataset) order keeps the reduction bit-reproducible.
    for (class, alpha) in &per_window {
        counts[*class] += 1;
        for (s, g) in alpha.positive_means().into_iter().enumerate() {
            sums[s][*class] += g;
        }
    }
    let values = sums
        .into_iter()
        .map(|row| {
            row.into_iter()
                .zip(&counts)
                .map(|(v, &n)| if n == 0 { 0.0 } else { v / n as f64 })
                .collect()
        })
        .collect();
    Ok(ImportanceMatrix {
        signal_names: dataset.signal_names().to_vec(),
        class_names: dataset.class_names().to_vec(),
        values,
        counts,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceVector {
    pub signal_names: Vec<String>,
    pub values: Vec<f64>,
    pub weights: Option<Vec<f64>>,
}

/// `I^s = (1/|C|) Σ_c w_c · SIM[s][c]` with `w_c = 1` when `weights` is `None`.
/// Absent classes contribute 0 while the divisor stays `|C|`. Given weights must be
/// non-negative and sum to 1 (±1e-9).
pub fn build_siv(sim: &ImportanceMatrix, weights: Option<&[f64]>) -> Result<ImportanceVector> {
    let nc = sim.n_classes();
    if let Some(w) = weights {
        if w.len() != nc {
            return Err(shape_err("build_siv", "class weight count", nc, w.len()));
        }
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidArgument("class weights must be non-negative".into()));
        }
        let total: f64 = w.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "class weights sum to {total}, expected 1"
            )));
        }
    }
    let values = sim
        .values
        .iter()
        .map(|row| {
            let s: f64 = (0..nc)
                .filter(|&c| sim.is_present(c))
                .map(|c| weights.map_or(1.0, |w| w[c]) * row[c])
                .sum();
            s / nc as f64
        })
        .collect();
    Ok(ImportanceVector {
        signal_names: sim.signal_names.clone(),
        values,
        weights: weights.map(<[f64]>::to_vec),
    })
}

/// `(argmin, argmax)`; exact ties go to the earlier signal.
pub fn min_max_signals(siv: &[f64]) -> Result<(usize, usize)> {
    if siv.is_empty() {
        return Err(Error::InvalidArgument("empty importance vector".into()));
    }
    let (mut lo, mut hi) = (0, 0);
    for (i, &v) in siv.iter().enumerate().skip(1) {
        if v < siv[lo] {
            lo = i;
        }
        if v > siv[hi] {
            hi = i;
        }
    }
    Ok((lo, hi))
}

/// `(v - min) / (max - min)`; a constant column maps to 0.5 everywhere.
pub fn standardize_column(column: &[f64]) -> Vec<f64> {
    let lo = column.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = column.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo > 0.0 {
        column.iter().map(|v| (v - lo) / (hi - lo)).collect()
    } else {
        vec![0.5; column.len()]
    }
}

/// Column-standardized SIM, `[signal][class]`, absent columns left as `None`.
pub fn column_standardize(sim: &ImportanceMatrix) -> Vec<Vec<Option<f64>>> {
    let cols: Vec<Option<Vec<f64>>> = (0..sim.n_classes())
        .map(|c| sim.column(c).map(|col| standardize_column(&col)))
        .collect();
    (0..sim.n_signals())
        .map(|s| cols.iter().map(|col| col.as_ref().map(|v| v[s])).collect())
        .collect()
}

/// CSV with signals as rows, one column per class and a final "All classes" column
/// holding the SIV. With `display`, every column is standardized to [0, 1].
pub fn importance_csv(sim: &ImportanceMatrix, siv: &ImportanceVector, display: bool) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["signal".to_string()];
    header.extend(sim.class_names.iter().cloned());
    header.push("All classes".into());
    w.write_record(&header)?;
    let (cells, siv_col): (Vec<Vec<Option<f64>>>, Vec<f64>) = if display {
        (column_standardize(sim), standardize_column(&siv.values))
    } else {
        (
            (0..sim.n_signals())
                .map(|s| (0..sim.n_classes()).map(|c| sim.get(s, c)).collect())
                .collect(),
            siv.values.clone(),
        )
    };
    for (s, name) in sim.signal_names.iter().enumerate() {
        let mut rec = vec![name.clone()];
        rec.extend(cells[s].iter().map(|v| v.map_or(String::new(), |x| x.to_string())));
        rec.push(siv_col[s].to_string());
        w.write_record(&rec)?;
    }
    String::from_utf8(w.into_inner().map_err(|e| Error::Format(e.to_string()))?)
        .map_err(|e| Error::Format(e.to_string()))
}

#[derive(Serialize)]
struct ImportanceJson<'a> {
    signals: &'a [String],
    classes: &'a [String],
    class_counts: &'a [usize],
    sim: Vec<Vec<Option<f64>>>,
    siv: &'a [f64],
    siv_weights: Option<&'a [f64]>,
}

pub fn importance_json(sim: &ImportanceMatrix, siv: &ImportanceVector) -> Result<String> {
    let doc = ImportanceJson {
        signals: &sim.signal_names,
        classes: &sim.class_names,
        class_counts: &sim.counts,
        sim: (0..sim.n_signals())
            .map(|s| (0..sim.n_classes()).map(|c| sim.get(s, c)).collect())
            .collect(),
        siv: &siv.values,
        siv_weights: siv.weights.as_deref(),
    };
    Ok(serde_json::to_string_pretty(&doc)?)
}

/// JSON array with one object per window: its index, estimated class and a map from
/// signal name to grad-CAM vector (signal order preserved).
pub fn gradcam_json(entries: &[(usize, GradCam)], signal_names: &[String], class_names: &[String]) -> Result<String> {
    let docs: Vec<serde_json::Value> = entries
        .iter()
        .map(|(window, cam)| {
            let maps: serde_json::Map<String, serde_json::Value> = signal_names
                .iter()
                .zip(&cam.maps)
                .map(|(n, m)| (n.clone(), serde_json::json!(m)))
                .collect();
            serde_json::json!({
                "window": window,
                "estimated_class": cam.estimated_class,
                "estimated_class_name": class_names.get(cam.estimated_class),
                "gradcam": maps,
            })
        })
        .collect();
    Ok(serde_json::to_string_pretty(&docs)?)
}
