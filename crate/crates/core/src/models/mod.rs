//! The four classifiers and the numeric kernels they share.
//!
//! Logistic regression and the RBF SVM consume encoded questionnaire rows;
//! the LSTM reads MFCC sequences and the CNN log-Mel patches. All training is
//! single-threaded and fully determined by `(seed, data, config)`.

mod adam;
mod artifact;
pub mod cnn;
mod logreg;
mod loss;
pub mod lstm;
pub mod svm;
mod tensor;
mod train;

pub use adam::{AdamConfig, AdamState};
pub use artifact::{predict, InputKind, ModelArtifact, ModelInput, ModelKind, Prediction, TrainedModel};
pub use cnn::{CnnConfig, CnnModel, CnnParams};
pub use logreg::{logreg_train, LogRegConfig, LogRegModel};
pub use loss::{bce_loss, sigmoid, softmax2, softplus, PROB_FLOOR};
pub use lstm::{LstmConfig, LstmModel, LstmParams};
pub use svm::{rbf_kernel, svm_solve_dual, svm_train_smo, DualSolution, SvmConfig, SvmModel};
pub use tensor::{clip_global_norm, global_norm, Tensor};
pub use train::{evaluate, train_network, EpochLog, Network, TrainConfig};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("training data holds a single class")]
    SingleClass,
    #[error("empty training set")]
    EmptyTrainingSet,
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NanLoss { epoch: usize, batch: usize },
    #[error("non-finite values in {0}")]
    NonFinite(String),
    #[error("model expects {expected} input, got {got}")]
    FeatureKindMismatch { expected: String, got: String },
    #[error("feature configuration hash differs from the one the model was trained on")]
    ConfigMismatch,
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("model artifact: {0}")]
    Artifact(String),
}
