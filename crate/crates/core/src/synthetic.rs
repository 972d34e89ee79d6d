//! Synthetic multi-signal data with known informative and noise signals.
//!
//! The table is a sequence of labeled episodes, each `segment_len` rows long. An
//! informative signal follows `offset + amplitude * sin(2π f t / segment_len + φ)`
//! with class-specific `(f, amplitude, offset)`, a random phase `φ` per episode and
//! additive Gaussian noise. Noise signals are zero-mean Gaussian noise regardless of
//! the label.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::SignalTable;
use crate::error::{Error, Result};
use crate::seed::rng_from_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pattern {
    /// Cycles per episode.
    pub frequency: f64,
    pub amplitude: f64,
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InformativeSignal {
    pub name: String,
    /// One pattern per class.
    pub per_class: Vec<Pattern>,
    pub noise_level: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSignal {
    pub name: String,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub class_names: Vec<String>,
    pub informative: Vec<InformativeSignal>,
    pub noise: Vec<NoiseSignal>,
    /// Episodes generated per class.
    pub samples_per_class: usize,
    /// Rows per episode.
    pub segment_len: usize,
    pub seed: u64,
}

/// Ground truth written next to a generated table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticMetadata {
    pub informative: Vec<String>,
    pub noise: Vec<String>,
    pub class_names: Vec<String>,
    pub segment_len: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub table: SignalTable,
    pub metadata: SyntheticMetadata,
}

impl SyntheticSpec {
    /// Bit-coded benchmark: `2^n_informative` classes, informative signal `i` encodes
    /// bit `i` of the class index (slow wave below zero vs fast wave above zero), so every
    /// informative signal is needed to separate all classes. Signal order interleaves
    /// noise and informative columns so position carries no information.
    pub fn bit_coded(
        n_informative: usize,
        n_noise: usize,
        samples_per_class: usize,
        segment_len: usize,
        seed: u64,
    ) -> Self {
        let n_classes = 1usize << n_informative;
        let class_names = (0..n_classes).map(|c| format!("class{c}")).collect();
        let informative = (0..n_informative)
            .map(|i| InformativeSignal {
                name: format!("info{i}"),
                per_class: (0..n_classes)
                    .map(|c| {
                        if (c >> i) & 1 == 1 {
                            Pattern {
                                frequency: 3.0,
                                amplitude: 1.0,
                                offset: 0.5,
                            }
                        } else {
                            Pattern {
                                frequency: 1.0,
                                amplitude: 1.0,
                                offset: -0.5,
                            }
                        }
                    })
                    .collect(),
                noise_level: 0.5,
            })
            .collect();
        let noise = (0..n_noise)
            .map(|i| NoiseSignal {
                name: format!("noise{i}"),
                std: 1.0,
            })
            .collect();
        Self {
            class_names,
            informative,
            noise,
            samples_per_class,
            segment_len,
            seed,
        }
    }

    pub fn n_signals(&self) -> usize {
        self.informative.len() + self.noise.len()
    }

    /// Column order of the generated table: informative and noise signals alternate
    /// until one kind runs out.
    pub fn signal_order(&self) -> Vec<String> {
        let mut info = self.informative.iter().map(|s| s.name.clone());
        let mut noise = self.noise.iter().map(|s| s.name.clone());
        let mut out = Vec::with_capacity(self.n_signals());
        loop {
            let a = noise.next();
            let b = info.next();
            if a.is_none() && b.is_none() {
                break;
            }
            out.extend(a);
            out.extend(b);
        }
        out
    }

    fn validate(&self) -> Result<()> {
        if self.samples_per_class == 0 || self.segment_len == 0 || self.class_names.is_empty() {
            return Err(Error::InvalidArgument(
                "synthetic spec needs at least one class, episode and row".into(),
            ));
        }
        if self.n_signals() == 0 {
            return Err(Error::InvalidArgument("synthetic spec has no signals".into()));
        }
        for s in &self.informative {
            if s.per_class.len() != self.class_names.len() {
                return Err(Error::InvalidArgument(format!(
                    "signal {} defines {} class patterns for {} classes",
                    s.name,
                    s.per_class.len(),
                    self.class_names.len()
                )));
            }
        }
        let mut names: Vec<&str> = self
            .informative
            .iter()
            .map(|s| s.name.as_str())
            .chain(self.noise.iter().map(|s| s.name.as_str()))
            .collect();
        names.sort_unstable();
        let before = names.len();
        names.dedup();
        if names.len() != before {
            return Err(Error::InvalidArgument("signal names must be unique".into()));
        }
        Ok(())
    }
}

enum Source<'a> {
    Info(&'a InformativeSignal),
    Noise(&'a NoiseSignal),
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng = rng_from_seed(spec.seed);
    let order = spec.signal_order();
    let sources: Vec<Source> = order
        .iter()
        .map(|name| {
            spec.informative
                .iter()
                .find(|s| &s.name == name)
                .map(Source::Info)
                .or_else(|| spec.noise.iter().find(|s| &s.name == name).map(Source::Noise))
                .expect("name from spec")
        })
        .collect();

    let mut episodes: Vec<usize> = (0..spec.class_names.len())
        .flat_map(|c| std::iter::repeat(c).take(spec.samples_per_class))
        .collect();
    episodes.shuffle(&mut rng);

    let std_normal = Normal::new(0.0, 1.0).expect("valid normal");
    let ns = sources.len();
    let n_rows = episodes.len() * spec.segment_len;
    let mut values = Vec::with_capacity(n_rows * ns);
    let mut labels = Vec::with_capacity(n_rows);
    let len = spec.segment_len as f64;
    let mut phases = vec![0.0; ns];
    for &class in &episodes {
        for p in phases.iter_mut() {
            *p = rng.gen_range(0.0..2.0 * PI);
        }
        for t in 0..spec.segment_len {
            for (s, src) in sources.iter().enumerate() {
                let e: f64 = std_normal.sample(&mut rng);
                let v = match src {
                    Source::Info(sig) => {
                        let p = sig.per_class[class];
                        p.offset
                            + p.amplitude * (2.0 * PI * p.frequency * t as f64 / len + phases[s]).sin()
                            + sig.noise_level * e
                    }
                    Source::Noise(sig) => sig.std * e,
                };
                values.push(v);
            }
            labels.push(spec.class_names[class].clone());
        }
    }
    let table = SignalTable {
        signal_names: order,
        timestamps: None,
        values,
        labels,
        label_vocab: spec.class_names.clone(),
        dropped_rows: 0,
    };
    let metadata = SyntheticMetadata {
        informative: spec.informative.iter().map(|s| s.name.clone()).collect(),
        noise: spec.noise.iter().map(|s| s.name.clone()).collect(),
        class_names: spec.class_names.clone(),
        segment_len: spec.segment_len,
        seed: spec.seed,
    };
    Ok(SyntheticData { table, metadata })
}

impl SyntheticData {
    /// Indices (in table column order) of the informative signals.
    pub fn informative_indices(&self) -> Vec<usize> {
        self.table
            .signal_names
            .iter()
            .enumerate()
            .filter(|(_, n)| self.metadata.informative.contains(n))
            .map(|(i, _)| i)
            .collect()
    }
}
