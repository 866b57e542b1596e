//! Self-describing model files and the uniform inference surface.
//!
//! File layout: the magic `VXM1`, a little-endian u64 header length, a JSON
//! header, then every parameter tensor as little-endian f64 values. The header
//! lists each tensor's name, shape and offset (in values) into that blob.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::cnn::{CnnConfig, CnnModel, CnnParams};
use super::logreg::LogRegModel;
use super::lstm::{LstmConfig, LstmModel, LstmParams};
use super::svm::SvmModel;
use super::train::Network;
use super::{ModelError, Tensor};
use crate::dsp::{DspConfig, FeatureKind, FeatureMatrix};
use crate::metadata::EncodingSchema;

const MAGIC: &[u8; 4] = b"VXM1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    LogReg,
    Svm,
    Lstm,
    Cnn,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::LogReg, ModelKind::Svm, ModelKind::Lstm, ModelKind::Cnn];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::LogReg => "logreg",
            ModelKind::Svm => "svm",
            ModelKind::Lstm => "lstm",
            ModelKind::Cnn => "cnn",
        }
    }

    pub fn input_kind(self) -> InputKind {
        match self {
            ModelKind::LogReg | ModelKind::Svm => InputKind::Metadata,
            ModelKind::Lstm => InputKind::Mfcc,
            ModelKind::Cnn => InputKind::LogMel,
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "logreg" | "lr" => Ok(ModelKind::LogReg),
            "svm" => Ok(ModelKind::Svm),
            "lstm" => Ok(ModelKind::Lstm),
            "cnn" => Ok(ModelKind::Cnn),
            other => Err(ModelError::InvalidConfig(format!("unknown model kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputKind {
    /// Encoded questionnaire rows.
    Metadata,
    Mfcc,
    LogMel,
}

impl InputKind {
    pub fn as_str(self) -> &'static str {
        match self {
            InputKind::Metadata => "metadata",
            InputKind::Mfcc => "mfcc",
            InputKind::LogMel => "log_mel",
        }
    }

    pub fn feature_kind(self) -> Option<FeatureKind> {
        match self {
            InputKind::Metadata => None,
            InputKind::Mfcc => Some(FeatureKind::Mfcc),
            InputKind::LogMel => Some(FeatureKind::LogMel),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrainedModel {
    LogReg(LogRegModel),
    Svm(SvmModel),
    Lstm(LstmModel),
    Cnn(CnnModel),
}

impl TrainedModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            TrainedModel::LogReg(_) => ModelKind::LogReg,
            TrainedModel::Svm(_) => ModelKind::Svm,
            TrainedModel::Lstm(_) => ModelKind::Lstm,
            TrainedModel::Cnn(_) => ModelKind::Cnn,
        }
    }
}

/// A trained classifier with everything needed to reproduce its inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelArtifact {
    pub model: TrainedModel,
    pub seed: u64,
    pub schema_version: u32,
    /// Present for metadata models.
    pub encoding: Option<EncodingSchema>,
    /// Present for audio models.
    pub dsp_config: Option<DspConfig>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    kind: ModelKind,
    input_kind: InputKind,
    schema_version: u32,
    seed: u64,
    dsp_hash: Option<String>,
    dsp_config: Option<DspConfig>,
    encoding: Option<EncodingSchema>,
    config: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

fn scalar(v: f64) -> Tensor {
    Tensor::filled(&[1], v)
}

fn named(pairs: Vec<(&str, Tensor)>) -> Vec<(String, Tensor)> {
    pairs.into_iter().map(|(n, t)| (n.to_string(), t)).collect()
}

fn artifact_err(msg: impl Into<String>) -> ModelError {
    ModelError::Artifact(msg.into())
}

/// Tensors read back from a file, consumed by name.
struct TensorBag(Vec<(String, Tensor)>);

impl TensorBag {
    fn take(&mut self, name: &str) -> Result<Tensor, ModelError> {
        let pos = self
            .0
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| artifact_err(format!("missing tensor {name}")))?;
        Ok(self.0.remove(pos).1)
    }

    fn scalar(&mut self, name: &str) -> Result<f64, ModelError> {
        let t = self.take(name)?;
        t.data()
            .first()
            .copied()
            .ok_or_else(|| artifact_err(format!("empty tensor {name}")))
    }

    fn rows(&mut self, name: &str) -> Result<Vec<Vec<f64>>, ModelError> {
        let t = self.take(name)?;
        let cols = *t.shape().get(1).ok_or_else(|| artifact_err(format!("{name} is not 2-D")))?;
        if cols == 0 {
            return Ok(vec![Vec::new(); t.shape()[0]]);
        }
        Ok(t.data().chunks(cols).map(<[f64]>::to_vec).collect())
    }
}

fn model_parts(model: &TrainedModel) -> (serde_json::Value, Vec<(String, Tensor)>) {
    match model {
        TrainedModel::LogReg(m) => (
            serde_json::json!({}),
            named(vec![
                ("weights", Tensor::new(vec![m.weights.len()], m.weights.clone()).expect("shape")),
                ("bias", scalar(m.bias)),
            ]),
        ),
        TrainedModel::Svm(m) => {
            let n = m.support_vectors.len();
            let d = m.support_vectors.first().map_or(0, Vec::len);
            let sv: Vec<f64> = m.support_vectors.concat();
            (
                serde_json::json!({ "converged": m.converged }),
                named(vec![
                    ("support_vectors", Tensor::new(vec![n, d], sv).expect("shape")),
                    ("alphas", Tensor::new(vec![n], m.alphas.clone()).expect("shape")),
                    ("sv_labels", Tensor::new(vec![n], m.sv_labels.clone()).expect("shape")),
                    ("bias", scalar(m.bias)),
                    ("gamma", scalar(m.gamma)),
                    ("c", scalar(m.c)),
                    ("dual_objective", scalar(m.dual_objective)),
                    ("link_slope", scalar(m.link_slope)),
                ]),
            )
        }
        TrainedModel::Lstm(m) => {
            let p = &m.params;
            let d = m.input_mean.len();
            (
                serde_json::to_value(p.config).expect("plain struct"),
                named(vec![
                    ("w", p.w.clone()),
                    ("u", p.u.clone()),
                    ("b", p.b.clone()),
                    ("w_out", p.w_out.clone()),
                    ("b_out", p.b_out.clone()),
                    ("input_mean", Tensor::new(vec![d], m.input_mean.clone()).expect("shape")),
                    ("input_std", Tensor::new(vec![d], m.input_std.clone()).expect("shape")),
                ]),
            )
        }
        TrainedModel::Cnn(m) => {
            let p = &m.params;
            let mut tensors: Vec<(String, Tensor)> = ["conv1_w", "conv1_b", "conv2_w", "conv2_b", "dense_w", "dense_b"]
                .iter()
                .zip(p.params())
                .map(|(n, t)| (n.to_string(), t.clone()))
                .collect();
            tensors.push(("input_mean".into(), scalar(m.input_mean)));
            tensors.push(("input_std".into(), scalar(m.input_std)));
            (serde_json::to_value(p.config).expect("plain struct"), tensors)
        }
    }
}

fn model_from_parts(kind: ModelKind, config: serde_json::Value, mut bag: TensorBag) -> Result<TrainedModel, ModelError> {
    let bad_config = |e: serde_json::Error| artifact_err(format!("model config: {e}"));
    let check = |t: &Tensor, shape: &[usize], name: &str| {
        if t.shape() == shape {
            Ok(())
        } else {
            Err(ModelError::ShapeMismatch(format!("{name}: stored {:?}, expected {shape:?}", t.shape())))
        }
    };
    Ok(match kind {
        ModelKind::LogReg => TrainedModel::LogReg(LogRegModel {
            weights: bag.take("weights")?.into_data(),
            bias: bag.scalar("bias")?,
        }),
        ModelKind::Svm => {
            let converged = config.get("converged").and_then(|v| v.as_bool()).unwrap_or(false);
            TrainedModel::Svm(SvmModel {
                support_vectors: bag.rows("support_vectors")?,
                alphas: bag.take("alphas")?.into_data(),
                sv_labels: bag.take("sv_labels")?.into_data(),
                bias: bag.scalar("bias")?,
                gamma: bag.scalar("gamma")?,
                c: bag.scalar("c")?,
                converged,
                dual_objective: bag.scalar("dual_objective")?,
                link_slope: bag.scalar("link_slope")?,
            })
        }
        ModelKind::Lstm => {
            let cfg: LstmConfig = serde_json::from_value(config).map_err(bad_config)?;
            let mut params = LstmParams::zeros(cfg);
            for (name, slot) in ["w", "u", "b", "w_out", "b_out"].iter().zip(params.params_mut()) {
                let t = bag.take(name)?;
                check(&t, slot.shape(), name)?;
                *slot = t;
            }
            TrainedModel::Lstm(LstmModel {
                params,
                input_mean: bag.take("input_mean")?.into_data(),
                input_std: bag.take("input_std")?.into_data(),
            })
        }
        ModelKind::Cnn => {
            let cfg: CnnConfig = serde_json::from_value(config).map_err(bad_config)?;
            let mut params = CnnParams::zeros(cfg)?;
            let names = ["conv1_w", "conv1_b", "conv2_w", "conv2_b", "dense_w", "dense_b"];
            for (name, slot) in names.iter().zip(params.params_mut()) {
                let t = bag.take(name)?;
                check(&t, slot.shape(), name)?;
                *slot = t;
            }
            TrainedModel::Cnn(CnnModel {
                params,
                input_mean: bag.scalar("input_mean")?,
                input_std: bag.scalar("input_std")?,
            })
        }
    })
}

impl ModelArtifact {
    pub fn kind(&self) -> ModelKind {
        self.model.kind()
    }

    pub fn input_kind(&self) -> InputKind {
        self.kind().input_kind()
    }

    pub fn dsp_hash_hex(&self) -> Option<String> {
        self.dsp_config.as_ref().map(DspConfig::hash_hex)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let (config, tensors) = model_parts(&self.model);
        let mut offset = 0;
        let entries = tensors
            .iter()
            .map(|(name, t)| {
                let e = TensorEntry {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                    offset,
                };
                offset += t.len();
                e
            })
            .collect();
        let header = Header {
            kind: self.kind(),
            input_kind: self.input_kind(),
            schema_version: self.schema_version,
            seed: self.seed,
            dsp_hash: self.dsp_hash_hex(),
            dsp_config: self.dsp_config.clone(),
            encoding: self.encoding.clone(),
            config,
            tensors: entries,
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(12 + json.len() + offset * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in &tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        if bytes.len() < 12 || &bytes[..4] != MAGIC {
            return Err(artifact_err("not a model file (bad magic)"));
        }
        let header_len = u64::from_le_bytes(bytes[4..12].try_into().expect("8 bytes")) as usize;
        let body = 12usize
            .checked_add(header_len)
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| artifact_err("truncated header"))?;
        let header: Header =
            serde_json::from_slice(&bytes[12..body]).map_err(|e| artifact_err(format!("header: {e}")))?;
        if header.input_kind != header.kind.input_kind() {
            return Err(artifact_err("input kind does not match model kind"));
        }
        let blob = &bytes[body..];
        if !blob.len().is_multiple_of(8) {
            return Err(artifact_err("parameter blob is not a whole number of f64 values"));
        }
        let values: Vec<f64> = blob
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for e in &header.tensors {
            let n: usize = e.shape.iter().product();
            let slice = e
                .offset
                .checked_add(n)
                .and_then(|end| values.get(e.offset..end))
                .ok_or_else(|| artifact_err(format!("tensor {} runs past the blob", e.name)))?;
            if slice.iter().any(|v| !v.is_finite()) {
                return Err(ModelError::NonFinite(format!("stored tensor {}", e.name)));
            }
            tensors.push((e.name.clone(), Tensor::new(e.shape.clone(), slice.to_vec())?));
        }
        if let (Some(cfg), Some(hash)) = (&header.dsp_config, &header.dsp_hash) {
            if &cfg.hash_hex() != hash {
                return Err(ModelError::ConfigMismatch);
            }
        }
        let model = model_from_parts(header.kind, header.config, TensorBag(tensors))?;
        Ok(Self {
            model,
            seed: header.seed,
            schema_version: header.schema_version,
            encoding: header.encoding,
            dsp_config: header.dsp_config,
        })
    }

    pub fn save(&self, path: &Path) -> crate::Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| crate::Error::io(path, e))
    }

    pub fn load(path: &Path) -> crate::Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| crate::Error::io(path, e))?;
        Ok(Self::from_bytes(&bytes)?)
    }
}

/// What a model is asked to classify.
#[derive(Debug, Clone, Copy)]
pub enum ModelInput<'a> {
    /// One encoded metadata row.
    Encoded(&'a [f64]),
    Features(&'a FeatureMatrix),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub probability: f64,
    /// 1 iff `probability >= 0.5`.
    pub label: u8,
    /// Ranking score for ROC analysis: the linear score for logistic
    /// regression, the decision value for the SVM, the probability otherwise.
    pub score: f64,
}

pub fn predict(artifact: &ModelArtifact, input: ModelInput<'_>) -> Result<Prediction, ModelError> {
    let expected = artifact.input_kind();
    let mismatch = |got: &str| ModelError::FeatureKindMismatch {
        expected: expected.as_str().to_string(),
        got: got.to_string(),
    };
    let (probability, score) = match (&artifact.model, input) {
        (TrainedModel::LogReg(m), ModelInput::Encoded(x)) => {
            check_width(m.weights.len(), x.len())?;
            (m.probability(x), m.score(x))
        }
        (TrainedModel::Svm(m), ModelInput::Encoded(x)) => {
            check_width(m.support_vectors.first().map_or(x.len(), Vec::len), x.len())?;
            (m.probability(x), m.decision(x))
        }
        (TrainedModel::Lstm(m), ModelInput::Features(f)) => {
            check_hash(artifact, f)?;
            let p = m.probability(f)?;
            (p, p)
        }
        (TrainedModel::Cnn(m), ModelInput::Features(f)) => {
            check_hash(artifact, f)?;
            let p = m.probability(f)?;
            (p, p)
        }
        (_, ModelInput::Encoded(_)) => return Err(mismatch("metadata")),
        (_, ModelInput::Features(f)) => return Err(mismatch(f.kind().as_str())),
    };
    if !probability.is_finite() || !score.is_finite() {
        return Err(ModelError::NonFinite("prediction".into()));
    }
    Ok(Prediction {
        probability,
        label: u8::from(probability >= 0.5),
        score,
    })
}

fn check_width(expected: usize, got: usize) -> Result<(), ModelError> {
    if expected == got {
        Ok(())
    } else {
        Err(ModelError::ShapeMismatch(format!("{got} input features, model expects {expected}")))
    }
}

fn check_hash(artifact: &ModelArtifact, f: &FeatureMatrix) -> Result<(), ModelError> {
    if let Some(cfg) = &artifact.dsp_config {
        if f.kind() != artifact.input_kind().feature_kind().expect("audio model") {
            return Err(ModelError::FeatureKindMismatch {
                expected: artifact.input_kind().as_str().to_string(),
                got: f.kind().as_str().to_string(),
            });
        }
        if &cfg.hash() != f.config_hash() {
            return Err(ModelError::ConfigMismatch);
        }
    }
    Ok(())
}
