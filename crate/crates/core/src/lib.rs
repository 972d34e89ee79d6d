//! Signal selection for multivariate time-series classifiers.
//!
//! A CNN whose convolutions run along time only keeps one feature map per input
//! signal. Gradients of the predicted class with respect to those maps rank the
//! signals by importance; repeatedly dropping the weakest signal and retraining
//! yields a small subset that keeps accuracy.
//!
//! Modules, bottom up: [`tensor`] and [`kernels`] (numerics), [`model`] (the CNN),
//! [`trainer`], [`attribution`] (grad-CAM and importance), [`selection`] and
//! [`data`] (CSV ingestion, windowing, splits).

pub mod attribution;
pub mod cli;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod kernels;
pub mod model;
pub mod seed;
pub mod selection;
pub mod synthetic;
pub mod tensor;
pub mod trainer;

pub use attribution::{
    build_sim, build_siv, compute_alpha, compute_gradcam, min_max_signals, AttributionConfig, GradCam,
    ImportanceMatrix, ImportanceVector, PartitionKey,
};
pub use data::{filter_and_split, load_csv, window, CsvSchema, Role, SplitConfig, WindowedDataset};
pub use error::{Error, Result};
pub use model::{CnnModel, GradientTarget, Hyperparams};
pub use selection::{
    brute_force_select, fg_ssa, removal_experiment, RemovalDirection, SelectionConfig, SelectionTrace,
};
pub use tensor::Tensor;
pub use trainer::{evaluate, train, EvalReport, Optimizer, TrainConfig, TrainReport};
