use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{AdamConfig, AdamState};
use super::loss::PROB_FLOOR;
use super::tensor::clip_global_norm;
use super::{ModelError, Tensor};

/// A two-class softmax network trainable by minibatch Adam.
pub trait Network: Clone {
    type Input;

    /// Same-shaped container filled with zeros, used for gradients.
    fn zeros_like(&self) -> Self;

    fn params(&self) -> Vec<&Tensor>;

    fn params_mut(&mut self) -> Vec<&mut Tensor>;

    /// Class probabilities `[p_negative, p_positive]`.
    fn probs(&self, input: &Self::Input) -> Result<[f64; 2], ModelError>;

    /// One forward and backward pass. Adds `scale * d(loss)/d(param)` to
    /// `grads` and returns the sample's cross-entropy and probabilities.
    fn accumulate(
        &self,
        input: &Self::Input,
        label: u8,
        scale: f64,
        grads: &mut Self,
    ) -> Result<(f64, [f64; 2]), ModelError>;

    fn parameter_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }
}

pub(crate) fn cross_entropy(probs: [f64; 2], label: u8) -> f64 {
    -probs[label as usize].clamp(PROB_FLOOR, 1.0).ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 32,
            adam: AdamConfig::default(),
            clip_norm: Some(5.0),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// 0 is the untrained network.
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

/// Mean cross-entropy and accuracy of `net` on `data`.
pub fn evaluate<N: Network>(net: &N, data: &[(N::Input, u8)]) -> Result<(f64, f64), ModelError> {
    let mut loss = 0.0;
    let mut correct = 0usize;
    for (x, y) in data {
        let p = net.probs(x)?;
        loss += cross_entropy(p, *y);
        correct += usize::from(u8::from(p[1] >= 0.5) == *y);
    }
    let n = data.len().max(1) as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Seeded minibatch training. Every sample in a batch is processed in a fixed
/// order, so the result is bitwise reproducible.
pub fn train_network<N: Network>(
    mut net: N,
    data: &[(N::Input, u8)],
    cfg: &TrainConfig,
) -> Result<(N, Vec<EpochLog>), ModelError> {
    if data.is_empty() {
        return Err(ModelError::EmptyTrainingSet);
    }
    if cfg.batch_size == 0 {
        return Err(ModelError::InvalidConfig("batch_size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(cfg.adam, &net.params());
    let mut order: Vec<usize> = (0..data.len()).collect();

    let (loss0, acc0) = evaluate(&net, data)?;
    let mut log = vec![EpochLog {
        epoch: 0,
        loss: loss0,
        accuracy: acc0,
    }];

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut correct = 0usize;
        for (batch_id, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut grads = net.zeros_like();
            let scale = 1.0 / batch.len() as f64;
            let mut batch_loss = 0.0;
            for &i in batch {
                let (x, y) = &data[i];
                let (loss, p) = net.accumulate(x, *y, scale, &mut grads)?;
                batch_loss += loss;
                correct += usize::from(u8::from(p[1] >= 0.5) == *y);
            }
            if !batch_loss.is_finite() || grads.params().iter().any(|g| !g.is_finite()) {
                return Err(ModelError::NanLoss { epoch, batch: batch_id });
            }
            epoch_loss += batch_loss;
            let mut grad_refs = grads.params_mut();
            if let Some(max_norm) = cfg.clip_norm {
                clip_global_norm(&mut grad_refs, max_norm);
            }
            let grad_refs: Vec<&Tensor> = grad_refs.into_iter().map(|g| &*g).collect();
            adam.update(&mut net.params_mut(), &grad_refs)?;
        }
        log.push(EpochLog {
            epoch,
            loss: epoch_loss / data.len() as f64,
            accuracy: correct as f64 / data.len() as f64,
        });
        log::debug!("epoch {epoch}: loss {:.5}", epoch_loss / data.len() as f64);
    }
    Ok((net, log))
}
