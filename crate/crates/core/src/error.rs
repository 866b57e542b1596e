use thiserror::Error;

use crate::audio::AudioError;
use crate::dataset::DatasetError;
use crate::dsp::DspError;
use crate::eval::EvalError;
use crate::metadata::MetadataError;
use crate::models::ModelError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Crate-wide error, one variant per subsystem.
#[derive(Debug, Error)]
pub enum Error {
    #[error("audio: {0}")]
    Audio(#[from] AudioError),
    #[error("dsp: {0}")]
    Dsp(#[from] DspError),
    #[error("metadata: {0}")]
    Metadata(#[from] MetadataError),
    #[error("dataset: {0}")]
    Dataset(#[from] DatasetError),
    #[error("model: {0}")]
    Model(#[from] ModelError),
    #[error("eval: {0}")]
    Eval(#[from] EvalError),
    #[error("missing features: {0}")]
    MissingFeatures(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// True for failures of the numeric core (diverging loss, non-finite values)
    /// as opposed to bad input data.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::Model(ModelError::NanLoss { .. }) | Error::Model(ModelError::NonFinite(_))
        )
    }
}
