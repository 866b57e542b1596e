//! Feature extraction: framing, power spectra, Mel filterbanks, log-Mel
//! spectrograms, MFCCs and whole-signal summary statistics.

mod config;
mod extract;
mod matrix;
mod mel;
mod stats;
mod stft;

pub use config::DspConfig;
pub use extract::{dct_ii_table, log_mel_spectrogram, mfcc, FeatureExtractor};
pub use matrix::{FeatureKind, FeatureMatrix};
pub use mel::{hz_to_mel, mel_to_hz, MelFilterbank, MEL_SCALE};
pub use stats::{stat_features, StatDescriptor};
pub use stft::{frame_and_window, hann_window, power_spectrum, preemphasis, Spectrum};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DspError {
    #[error("signal too short: need at least {needed} samples, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("invalid DSP configuration: {0}")]
    InvalidConfig(String),
    #[error("mel grid collapsed: {0}")]
    InvalidRange(String),
    #[error("feature file: {0}")]
    Format(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}
