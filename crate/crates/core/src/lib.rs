//! A self-contained benchmark harness for deep-learning vibration fault
//! diagnosis: dataset loaders for seven public corpora plus a synthetic
//! generator, time/frequency/wavelet input transforms, per-sample
//! normalization and augmentation, leak-aware data splits, a model zoo
//! (MLP, auto-encoders, CNNs, BiLSTM) on a minimal reverse-mode autodiff
//! core, and a repeated-run evaluation protocol with four summary metrics.

pub mod datasets;
pub mod error;
pub mod preprocess;
pub mod rng;
pub mod tensor;
pub mod transforms;

pub use error::{Error, Result};
