//! # voxscreen
//!
//! Screening classifiers for crowd-sourced respiratory voice recordings.
//!
//! The crate covers the whole offline pipeline:
//!
//! ```text
//! WAV bytes -> audio -> dsp (MFCC / log-Mel / statistics) -+-> models (LSTM, CNN)  -+-> eval
//! manifest  -> metadata (one-hot encoding) ----------------+-> models (LogReg, SVM) -+
//!                         dataset (split, rebalance) ------^
//! ```
//!
//! Every stage is deterministic given its inputs and seed, so a persisted run
//! directory can be reproduced bit for bit.

pub mod audio;
pub mod dataset;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod metadata;
pub mod models;
pub mod pipeline;
pub mod synth;

pub use audio::AudioBuffer;
pub use dsp::{DspConfig, FeatureKind, FeatureMatrix, StatDescriptor};
pub use error::{Error, Result};
pub use eval::{ConfusionMatrix, EvalReport, RocCurve};
pub use metadata::{EncodedRecord, EncodingSchema, ParticipantRecord};
pub use models::ModelArtifact;
