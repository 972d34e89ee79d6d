//! CSV ingestion, sliding-window segmentation, class filtering and splitting.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::seed::rng_from_seed;
use crate::tensor::Tensor;

/// Raw samples: one row per time step, one column per signal, one label per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalTable {
    pub signal_names: Vec<String>,
    /// Present when the schema named a time column.
    pub timestamps: Option<Vec<f64>>,
    /// Row-major `[n_rows, n_signals]`.
    pub values: Vec<f64>,
    pub labels: Vec<String>,
    /// Declared label vocabulary; may contain labels with no rows.
    pub label_vocab: Vec<String>,
    pub dropped_rows: usize,
}

impl SignalTable {
    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn n_signals(&self) -> usize {
        self.signal_names.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.n_signals();
        &self.values[i * n..(i + 1) * n]
    }

    /// Reorders or subsets the signal columns.
    pub fn select_columns(&self, columns: &[usize]) -> Result<SignalTable> {
        let n = self.n_signals();
        if let Some(&bad) = columns.iter().find(|&&c| c >= n) {
            return Err(Error::InvalidArgument(format!(
                "column {bad} out of range for {n} signals"
            )));
        }
        let mut values = Vec::with_capacity(self.n_rows() * columns.len());
        for r in 0..self.n_rows() {
            let row = self.row(r);
            values.extend(columns.iter().map(|&c| row[c]));
        }
        Ok(SignalTable {
            signal_names: columns.iter().map(|&c| self.signal_names[c].clone()).collect(),
            values,
            ..self.clone()
        })
    }

    pub fn to_csv(&self, label_column: &str) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header: Vec<&str> = Vec::new();
        if self.timestamps.is_some() {
            header.push("time");
        }
        header.extend(self.signal_names.iter().map(String::as_str));
        header.push(label_column);
        w.write_record(&header)?;
        for r in 0..self.n_rows() {
            let mut rec: Vec<String> = Vec::with_capacity(header.len());
            if let Some(ts) = &self.timestamps {
                rec.push(ts[r].to_string());
            }
            rec.extend(self.row(r).iter().map(|v| v.to_string()));
            rec.push(self.labels[r].clone());
            w.write_record(&rec)?;
        }
        String::from_utf8(w.into_inner().map_err(|e| Error::Format(e.to_string()))?)
            .map_err(|e| Error::Format(e.to_string()))
    }
}

/// Column selection for [`load_csv`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub label_column: String,
    /// Signals to keep, in this order. `None` keeps every column other than the
    /// label and time columns, in file order.
    pub signals: Option<Vec<String>>,
    pub time_column: Option<String>,
    /// Declared class order. `None` uses order of first appearance.
    pub classes: Option<Vec<String>>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            label_column: "label".into(),
            signals: None,
            time_column: None,
            classes: None,
        }
    }
}

pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<SignalTable> {
    let path = path.as_ref();
    let mut text = String::new();
    std::fs::File::open(path)?.read_to_string(&mut text)?;
    parse_csv(&text, schema).map_err(|e| match e {
        Error::EmptyFile(_) => Error::EmptyFile(path.display().to_string()),
        other => other,
    })
}

/// Parses CSV text. Rows with an empty selected cell (or empty label) are dropped
/// and counted; any other unparsable cell is an error naming the 1-based data row.
pub fn parse_csv(text: &str, schema: &CsvSchema) -> Result<SignalTable> {
    if text.trim().is_empty() {
        return Err(Error::EmptyFile("<input>".into()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))
    };
    let label_idx = find(&schema.label_column)?;
    let time_idx = schema.time_column.as_deref().map(find).transpose()?;
    let signal_names: Vec<String> = match &schema.signals {
        Some(names) => names.clone(),
        None => header
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != label_idx && Some(*i) != time_idx)
            .map(|(_, h)| h.clone())
            .collect(),
    };
    if signal_names.is_empty() {
        return Err(Error::InvalidArgument("no signal columns selected".into()));
    }
    let signal_idx: Vec<usize> = signal_names.iter().map(|n| find(n)).collect::<Result<_>>()?;

    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut timestamps = time_idx.map(|_| Vec::new());
    let mut dropped = 0;
    let mut row_buf = Vec::with_capacity(signal_idx.len());
    let parse = |cell: &str, row: usize, col: usize| -> Result<f64> {
        let v: f64 = cell.parse().map_err(|_| Error::ParseCell {
            row,
            column: header[col].clone(),
            value: cell.to_string(),
        })?;
        if !v.is_finite() {
            return Err(Error::ParseCell {
                row,
                column: header[col].clone(),
                value: cell.to_string(),
            });
        }
        Ok(v)
    };
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let cell = |c: usize| rec.get(c).unwrap_or("");
        let label = cell(label_idx);
        if label.is_empty() || signal_idx.iter().any(|&c| cell(c).is_empty()) {
            dropped += 1;
            continue;
        }
        row_buf.clear();
        for &c in &signal_idx {
            row_buf.push(parse(cell(c), row, c)?);
        }
        if let (Some(ts), Some(tc)) = (timestamps.as_mut(), time_idx) {
            if cell(tc).is_empty() {
                dropped += 1;
                continue;
            }
            ts.push(parse(cell(tc), row, tc)?);
        }
        values.extend_from_slice(&row_buf);
        labels.push(label.to_string());
    }
    if labels.is_empty() && dropped == 0 {
        return Err(Error::EmptyFile("<input>".into()));
    }
    let label_vocab = match &schema.classes {
        Some(declared) => {
            if let Some(l) = labels.iter().find(|l| !declared.contains(l)) {
                return Err(Error::InvalidArgument(format!("label '{l}' not in declared classes")));
            }
            declared.clone()
        }
        None => {
            let mut vocab: Vec<String> = Vec::new();
            for l in &labels {
                if !vocab.contains(l) {
                    vocab.push(l.clone());
                }
            }
            vocab
        }
    };
    Ok(SignalTable {
        signal_names,
        timestamps,
        values,
        labels,
        label_vocab,
        dropped_rows: dropped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    /// Not yet split.
    All,
    Train,
    Valid,
    Test,
}

/// Labeled fixed-length windows over an ordered signal set.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedDataset {
    /// `[n_windows, window_len, n_signals]`
    windows: Tensor,
    labels: Vec<usize>,
    class_names: Vec<String>,
    signal_names: Vec<String>,
    role: Role,
}

impl WindowedDataset {
    pub fn new(
        windows: Tensor,
        labels: Vec<usize>,
        class_names: Vec<String>,
        signal_names: Vec<String>,
        role: Role,
    ) -> Result<Self> {
        windows.expect_rank("WindowedDataset::new", 3)?;
        if windows.shape()[0] != labels.len() {
            return Err(shape_err(
                "WindowedDataset::new",
                "window count",
                labels.len(),
                windows.shape()[0],
            ));
        }
        if windows.shape()[2] != signal_names.len() {
            return Err(shape_err(
                "WindowedDataset::new",
                "signal count",
                signal_names.len(),
                windows.shape()[2],
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_names.len()) {
            return Err(Error::InvalidClass {
                index: bad,
                n_classes: class_names.len(),
            });
        }
        Ok(Self {
            windows,
            labels,
            class_names,
            signal_names,
            role,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn window_len(&self) -> usize {
        self.windows.shape()[1]
    }

    pub fn n_signals(&self) -> usize {
        self.windows.shape()[2]
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn signal_names(&self) -> &[String] {
        &self.signal_names
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn windows(&self) -> &Tensor {
        &self.windows
    }

    /// Row-major `[window_len * n_signals]` view of window `i`.
    pub fn window_slice(&self, i: usize) -> &[f64] {
        let n = self.window_len() * self.n_signals();
        &self.windows.data()[i * n..(i + 1) * n]
    }

    pub fn window(&self, i: usize) -> Tensor {
        Tensor::from_parts_unchecked(vec![self.window_len(), self.n_signals()], self.window_slice(i).to_vec())
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Keeps only the listed signal columns, in the given order.
    pub fn select_signals(&self, signals: &[usize]) -> Result<WindowedDataset> {
        let ns = self.n_signals();
        if let Some(&bad) = signals.iter().find(|&&s| s >= ns) {
            return Err(Error::InvalidArgument(format!(
                "signal {bad} out of range for {ns} signals"
            )));
        }
        let w = self.window_len();
        let mut data = Vec::with_capacity(self.len() * w * signals.len());
        for i in 0..self.len() {
            let win = self.window_slice(i);
            for t in 0..w {
                data.extend(signals.iter().map(|&s| win[t * ns + s]));
            }
        }
        Ok(WindowedDataset {
            windows: Tensor::from_parts_unchecked(vec![self.len(), w, signals.len()], data),
            labels: self.labels.clone(),
            class_names: self.class_names.clone(),
            signal_names: signals.iter().map(|&s| self.signal_names[s].clone()).collect(),
            role: self.role,
        })
    }

    /// Subset of windows by index, in the given order.
    pub fn subset(&self, indices: &[usize], role: Role) -> WindowedDataset {
        let n = self.window_len() * self.n_signals();
        let mut data = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            data.extend_from_slice(self.window_slice(i));
        }
        WindowedDataset {
            windows: Tensor::from_parts_unchecked(vec![indices.len(), self.window_len(), self.n_signals()], data),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_names: self.class_names.clone(),
            signal_names: self.signal_names.clone(),
            role,
        }
    }

    pub fn with_role(mut self, role: Role) -> Self {
        self.role = role;
        self
    }

    /// Checks this dataset has the expected role.
    pub fn expect_role(&self, role: Role, context: &str) -> Result<()> {
        if self.role != role {
            return Err(Error::InvalidArgument(format!(
                "{context}: expected a {role:?} dataset, got {:?}",
                self.role
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct WindowStats {
    pub windows: usize,
    pub dropped_ties: usize,
}

/// Cuts `table` into windows of `window_len` rows starting every `slide` rows.
/// A trailing partial window is discarded. Each window takes its rows' majority
/// label; windows whose top label count is tied are dropped and counted.
pub fn window(table: &SignalTable, window_len: usize, slide: usize) -> Result<(WindowedDataset, WindowStats)> {
    if window_len == 0 || slide == 0 {
        return Err(Error::InvalidArgument(
            "window length and slide must be positive".into(),
        ));
    }
    if table.n_rows() < window_len {
        return Err(Error::InvalidArgument(format!(
            "table has {} rows, fewer than the window length {window_len}",
            table.n_rows()
        )));
    }
    let class_index: HashMap<&str, usize> = table
        .label_vocab
        .iter()
        .enumerate()
        .map(|(i, l)| (l.as_str(), i))
        .collect();
    let ns = table.n_signals();
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut stats = WindowStats::default();
    let mut counts = vec![0usize; table.label_vocab.len()];
    let mut start = 0;
    while start + window_len <= table.n_rows() {
        counts.iter_mut().for_each(|c| *c = 0);
        for l in &table.labels[start..start + window_len] {
            let idx = *class_index
                .get(l.as_str())
                .ok_or_else(|| Error::InvalidArgument(format!("label '{l}' not in vocabulary")))?;
            counts[idx] += 1;
        }
        let top = *counts.iter().max().expect("non-empty vocab");
        let winners: Vec<usize> = (0..counts.len()).filter(|&c| counts[c] == top).collect();
        if winners.len() == 1 {
            data.extend_from_slice(&table.values[start * ns..(start + window_len) * ns]);
            labels.push(winners[0]);
        } else {
            stats.dropped_ties += 1;
        }
        start += slide;
    }
    stats.windows = labels.len();
    let n = labels.len();
    let ds = WindowedDataset::new(
        Tensor::new(vec![n, window_len, ns], data)?,
        labels,
        table.label_vocab.clone(),
        table.signal_names.clone(),
        Role::All,
    )?;
    Ok((ds, stats))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub min_class_count: usize,
    /// Fraction of all windows held out for testing.
    pub test_ratio: f64,
    /// Fraction of the remaining windows used for validation.
    pub valid_ratio: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            min_class_count: 1,
            test_ratio: 0.2,
            valid_ratio: 0.2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Split {
    pub train: WindowedDataset,
    pub valid: WindowedDataset,
    pub test: WindowedDataset,
    pub removed_classes: Vec<String>,
    pub warnings: Vec<String>,
}

/// Drops classes with fewer than `min_class_count` windows, then splits with a seeded
/// permutation: `|test| = round(test_ratio * n)`, `|valid| = round(valid_ratio * (n - |test|))`,
/// and the rest is training data.
pub fn filter_and_split(dataset: &WindowedDataset, cfg: &SplitConfig) -> Result<Split> {
    for (name, r) in [("test_ratio", cfg.test_ratio), ("valid_ratio", cfg.valid_ratio)] {
        if !(r > 0.0 && r < 1.0) {
            return Err(Error::InvalidArgument(format!("{name} must lie in (0, 1), got {r}")));
        }
    }
    let counts = dataset.class_counts();
    let keep: Vec<usize> = (0..dataset.n_classes())
        .filter(|&c| counts[c] >= cfg.min_class_count.max(1))
        .collect();
    let removed_classes: Vec<String> = (0..dataset.n_classes())
        .filter(|c| !keep.contains(c))
        .map(|c| dataset.class_names()[c].clone())
        .collect();
    let mut remap = vec![usize::MAX; dataset.n_classes()];
    for (new, &old) in keep.iter().enumerate() {
        remap[old] = new;
    }
    let kept_idx: Vec<usize> = (0..dataset.len())
        .filter(|&i| remap[dataset.labels()[i]] != usize::MAX)
        .collect();
    let mut filtered = dataset.subset(&kept_idx, Role::All);
    filtered.labels.iter_mut().for_each(|l| *l = remap[*l]);
    filtered.class_names = keep.iter().map(|&c| dataset.class_names()[c].clone()).collect();

    let n = filtered.len();
    if n == 0 {
        return Err(Error::EmptyDataset("no windows left after class filtering"));
    }
    let n_test = (cfg.test_ratio * n as f64).round() as usize;
    let n_valid = (cfg.valid_ratio * (n - n_test) as f64).round() as usize;
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng_from_seed(cfg.seed));
    let mut test_idx = perm[..n_test].to_vec();
    let mut valid_idx = perm[n_test..n_test + n_valid].to_vec();
    let mut train_idx = perm[n_test + n_valid..].to_vec();
    test_idx.sort_unstable();
    valid_idx.sort_unstable();
    train_idx.sort_unstable();
    let split = Split {
        train: filtered.subset(&train_idx, Role::Train),
        valid: filtered.subset(&valid_idx, Role::Valid),
        test: filtered.subset(&test_idx, Role::Test),
        removed_classes,
        warnings: Vec::new(),
    };
    let mut warnings = Vec::new();
    for (part, name) in [(&split.train, "train"), (&split.valid, "valid")] {
        for (c, &k) in part.class_counts().iter().enumerate() {
            if k == 0 {
                warnings.push(format!(
                    "class '{}' has no windows in the {name} split",
                    part.class_names()[c]
                ));
            }
        }
    }
    Ok(Split { warnings, ..split })
}

/// Per-signal z-score statistics fitted on one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(ds: &WindowedDataset) -> Self {
        let ns = ds.n_signals();
        let mut sum = vec![0.0; ns];
        let mut sq = vec![0.0; ns];
        let rows = ds.windows().data().chunks(ns);
        let n = (ds.len() * ds.window_len()) as f64;
        for row in rows {
            for s in 0..ns {
                sum[s] += row[s];
                sq[s] += row[s] * row[s];
            }
        }
        let mean: Vec<f64> = sum.iter().map(|v| v / n.max(1.0)).collect();
        let std = (0..ns)
            .map(|s| {
                let var = sq[s] / n.max(1.0) - mean[s] * mean[s];
                let sd = var.max(0.0).sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn apply(&self, ds: &WindowedDataset) -> Result<WindowedDataset> {
        let ns = ds.n_signals();
        if ns != self.mean.len() {
            return Err(shape_err("Standardizer::apply", "signal count", self.mean.len(), ns));
        }
        let data = ds
            .windows()
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| (v - self.mean[i % ns]) / self.std[i % ns])
            .collect();
        let mut out = ds.clone();
        out.windows = Tensor::from_parts_unchecked(ds.windows().shape().to_vec(), data);
        Ok(out)
    }
}

const SNAPSHOT_MAGIC: &[u8; 8] = b"FGSSADS\0";
const SNAPSHOT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct SnapshotHeader {
    shape: Vec<usize>,
    labels: Vec<usize>,
    class_names: Vec<String>,
    signal_names: Vec<String>,
    role: Role,
}

impl WindowedDataset {
    /// Binary snapshot: magic, `u32` version, `u64` header length, JSON header, then
    /// the window values as little-endian `f64`.
    pub fn write_snapshot(&self, mut w: impl Write) -> Result<()> {
        let header = serde_json::to_vec(&SnapshotHeader {
            shape: self.windows.shape().to_vec(),
            labels: self.labels.clone(),
            class_names: self.class_names.clone(),
            signal_names: self.signal_names.clone(),
            role: self.role,
        })?;
        w.write_all(SNAPSHOT_MAGIC)?;
        w.write_all(&SNAPSHOT_VERSION.to_le_bytes())?;
        w.write_all(&(header.len() as u64).to_le_bytes())?;
        w.write_all(&header)?;
        for v in self.windows.data() {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_snapshot(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != SNAPSHOT_MAGIC {
            return Err(Error::Format("not a dataset snapshot".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != SNAPSHOT_VERSION {
            return Err(Error::Format(format!("unsupported snapshot version {version}")));
        }
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let mut header = vec![0u8; u64::from_le_bytes(b8) as usize];
        r.read_exact(&mut header)?;
        let header: SnapshotHeader = serde_json::from_slice(&header)?;
        let n: usize = header.shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            r.read_exact(&mut b8)?;
            data.push(f64::from_le_bytes(b8));
        }
        WindowedDataset::new(
            Tensor::new(header.shape, data)?,
            header.labels,
            header.class_names,
            header.signal_names,
            header.role,
        )
    }

    pub fn save_snapshot(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_snapshot(std::io::BufWriter::new(f))
    }

    pub fn load_snapshot(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_snapshot(std::io::BufReader::new(f))
    }
}

/// The fifteen acceleration channels of five triaxial body-worn sensors.
pub const OPPORTUNITY_SIGNALS: [&str; 15] = [
    "Back X",
    "Back Y",
    "Back Z",
    "Right arm X",
    "Right arm Y",
    "Right arm Z",
    "Left arm X",
    "Left arm Y",
    "Left arm Z",
    "Right shoe X",
    "Right shoe Y",
    "Right shoe Z",
    "Left shoe X",
    "Left shoe Y",
    "Left shoe Z",
];

/// Locomotion × hand-activity labels, including the two that have no samples.
pub const OPPORTUNITY_CLASSES: [&str; 12] = [
    "Stand N", "Stand L", "Stand R", "Walk N", "Walk L", "Walk R", "Sit N", "Sit L", "Sit R", "Lie N", "Lie L", "Lie R",
];
