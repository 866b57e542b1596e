//! Glue between the stages: per-kind DSP configurations, the on-disk feature
//! store, and train/evaluate entry points shared by the CLI and tests.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::audio::{load_canonical, AudioBuffer, CANONICAL_RATE_HZ};
use crate::dsp::{DspConfig, FeatureExtractor, FeatureKind, FeatureMatrix};
use crate::eval::EvalReport;
use crate::metadata::{EncodingSchema, SCHEMA_VERSION};
use crate::models::{
    logreg_train, predict, svm_train_smo, AdamConfig, CnnConfig, CnnModel, EpochLog, InputKind, LogRegConfig,
    LstmConfig, LstmModel, ModelArtifact, ModelError, ModelInput, ModelKind, SvmConfig, TrainConfig, TrainedModel,
};
use crate::{Error, Result};

/// DSP settings for each feature kind. Log-Mel patches for the CNN use 64
/// bands; MFCCs use the 40-band default.
pub fn dsp_config_for(kind: FeatureKind) -> DspConfig {
    match kind {
        FeatureKind::Mfcc => DspConfig::default(),
        FeatureKind::LogMel => DspConfig {
            n_mels: 64,
            ..DspConfig::default()
        },
    }
}

pub fn extract(audio: &AudioBuffer, kind: FeatureKind, cfg: &DspConfig) -> Result<FeatureMatrix> {
    let fx = FeatureExtractor::new(cfg, audio.sample_rate_hz)?;
    Ok(match kind {
        FeatureKind::Mfcc => fx.mfcc(audio)?,
        FeatureKind::LogMel => fx.log_mel(audio)?,
    })
}

/// Decodes a WAV file to the canonical buffer and extracts one feature kind.
pub fn extract_file(path: &Path, sample_id: &str, kind: FeatureKind, cfg: &DspConfig) -> Result<FeatureMatrix> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let audio = load_canonical(&bytes, sample_id)?;
    debug_assert_eq!(audio.sample_rate_hz, CANONICAL_RATE_HZ);
    extract(&audio, kind, cfg)
}

/// Feature files live at `<root>/<kind>/<sample_id>.vxf`.
#[derive(Debug, Clone)]
pub struct FeatureStore {
    root: PathBuf,
}

impl FeatureStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, kind: FeatureKind, sample_id: &str) -> PathBuf {
        self.root.join(kind.as_str()).join(format!("{sample_id}.vxf"))
    }

    pub fn write(&self, sample_id: &str, m: &FeatureMatrix) -> Result<()> {
        let path = self.path(m.kind(), sample_id);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        m.write_vxf(&path).map_err(|e| Error::io(&path, e))
    }

    pub fn read(&self, kind: FeatureKind, sample_id: &str) -> Result<FeatureMatrix> {
        let path = self.path(kind, sample_id);
        if !path.exists() {
            return Err(Error::MissingFeatures(format!("{} for {sample_id}", kind.as_str())));
        }
        let m = FeatureMatrix::read_vxf(&path)?;
        if m.kind() != kind {
            return Err(Error::MissingFeatures(format!(
                "{} holds {} features, expected {}",
                path.display(),
                m.kind(),
                kind
            )));
        }
        Ok(m)
    }
}

/// Every hyperparameter of a training run. Serialized next to the artifact so
/// a run can be repeated exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelKind,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub clip_norm: Option<f64>,
    pub lstm: LstmConfig,
    pub cnn: CnnConfig,
    pub svm: SvmConfig,
    pub logreg: LogRegConfig,
}

impl RunConfig {
    pub fn new(model: ModelKind, seed: u64) -> Self {
        Self {
            model,
            seed,
            epochs: 50,
            batch_size: 32,
            lr: AdamConfig::default().lr,
            clip_norm: Some(5.0),
            lstm: LstmConfig::default(),
            cnn: CnnConfig::default(),
            svm: SvmConfig::default(),
            logreg: LogRegConfig::default(),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            adam: AdamConfig {
                lr: self.lr,
                ..AdamConfig::default()
            },
            clip_norm: self.clip_norm,
            seed: self.seed,
        }
    }
}

/// Training inputs, matching the model's input kind.
pub enum TrainingData<'a> {
    Encoded {
        rows: &'a [Vec<f64>],
        labels: &'a [u8],
        schema: &'a EncodingSchema,
    },
    Features {
        mats: &'a [FeatureMatrix],
        labels: &'a [u8],
        dsp_config: &'a DspConfig,
    },
}

/// Trains the model named in `run` and wraps it as an artifact. The returned
/// log is empty for the metadata models, which have no epochs of interest.
pub fn train(run: &RunConfig, data: TrainingData<'_>) -> Result<(ModelArtifact, Vec<EpochLog>)> {
    let kind = run.model;
    let mismatch = |got: &str| {
        Error::Model(ModelError::FeatureKindMismatch {
            expected: kind.input_kind().as_str().into(),
            got: got.into(),
        })
    };
    let (model, log, encoding, dsp_config) = match (kind, data) {
        (ModelKind::LogReg, TrainingData::Encoded { rows, labels, schema }) => {
            let m = logreg_train(rows, labels, &run.logreg)?;
            (TrainedModel::LogReg(m), Vec::new(), Some(schema.clone()), None)
        }
        (ModelKind::Svm, TrainingData::Encoded { rows, labels, schema }) => {
            let m = svm_train_smo(rows, labels, &run.svm)?;
            (TrainedModel::Svm(m), Vec::new(), Some(schema.clone()), None)
        }
        (ModelKind::Lstm, TrainingData::Features { mats, labels, dsp_config }) => {
            check_features(mats, FeatureKind::Mfcc, dsp_config)?;
            let cfg = LstmConfig {
                input_dim: dsp_config.n_mfcc,
                ..run.lstm
            };
            let (m, log) = LstmModel::train(mats, labels, cfg, &run.train_config())?;
            (TrainedModel::Lstm(m), log, None, Some(dsp_config.clone()))
        }
        (ModelKind::Cnn, TrainingData::Features { mats, labels, dsp_config }) => {
            check_features(mats, FeatureKind::LogMel, dsp_config)?;
            let (m, log) = CnnModel::train(mats, labels, run.cnn, &run.train_config())?;
            (TrainedModel::Cnn(m), log, None, Some(dsp_config.clone()))
        }
        (_, TrainingData::Encoded { .. }) => return Err(mismatch("metadata")),
        (_, TrainingData::Features { mats, .. }) => {
            return Err(mismatch(mats.first().map_or("features", |m| m.kind().as_str())))
        }
    };
    let artifact = ModelArtifact {
        model,
        seed: run.seed,
        schema_version: SCHEMA_VERSION,
        encoding,
        dsp_config,
    };
    Ok((artifact, log))
}

fn check_features(mats: &[FeatureMatrix], kind: FeatureKind, cfg: &DspConfig) -> Result<()> {
    let hash = cfg.hash();
    for m in mats {
        if m.kind() != kind {
            return Err(ModelError::FeatureKindMismatch {
                expected: kind.as_str().into(),
                got: m.kind().as_str().into(),
            }
            .into());
        }
        if m.config_hash() != &hash {
            return Err(ModelError::ConfigMismatch.into());
        }
    }
    Ok(())
}

/// Runs the artifact over `inputs` and builds a report. Thresholds at 0.5 on
/// the probability; ROC uses each model's ranking score.
pub fn evaluate(
    artifact: &ModelArtifact,
    split: &str,
    inputs: &[ModelInput<'_>],
    labels: &[u8],
) -> Result<EvalReport> {
    let mut hard = Vec::with_capacity(inputs.len());
    let mut scores = Vec::with_capacity(inputs.len());
    for input in inputs {
        let p = predict(artifact, *input)?;
        hard.push(p.label);
        scores.push(p.score);
    }
    Ok(EvalReport::from_parts(
        artifact.kind().as_str(),
        split,
        0.5,
        &hard,
        &scores,
        labels,
    )?)
}

/// Which stored feature kind (if any) a model reads.
pub fn feature_kind_for(model: ModelKind) -> Option<FeatureKind> {
    match model.input_kind() {
        InputKind::Metadata => None,
        InputKind::Mfcc => Some(FeatureKind::Mfcc),
        InputKind::LogMel => Some(FeatureKind::LogMel),
    }
}
