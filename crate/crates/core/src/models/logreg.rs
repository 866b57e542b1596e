use serde::{Deserialize, Serialize};

use super::loss::{sigmoid, softplus};
use super::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRegConfig {
    pub epochs: usize,
    pub lr: f64,
    /// L2 penalty `l2/2 * |w|^2`; the bias is not penalized.
    pub l2: f64,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            lr: 0.1,
            l2: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRegModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LogRegModel {
    pub fn zeros(n_features: usize) -> Self {
        Self {
            weights: vec![0.0; n_features],
            bias: 0.0,
        }
    }

    pub fn score(&self, x: &[f64]) -> f64 {
        self.bias + self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
    }

    pub fn probability(&self, x: &[f64]) -> f64 {
        sigmoid(self.score(x))
    }

    /// Mean BCE plus L2 penalty, with its gradient `(d/dw, d/db)`.
    pub fn loss_and_grad(&self, xs: &[Vec<f64>], ys: &[u8], l2: f64) -> (f64, Vec<f64>, f64) {
        let n = xs.len() as f64;
        let mut loss = 0.0;
        let mut gw = vec![0.0; self.weights.len()];
        let mut gb = 0.0;
        for (x, &y) in xs.iter().zip(ys) {
            let z = self.score(x);
            let y = f64::from(y);
            loss += softplus(z) - y * z;
            let r = (sigmoid(z) - y) / n;
            gb += r;
            for (g, v) in gw.iter_mut().zip(x) {
                *g += r * v;
            }
        }
        loss /= n;
        for (g, w) in gw.iter_mut().zip(&self.weights) {
            *g += l2 * w;
        }
        loss += 0.5 * l2 * self.weights.iter().map(|w| w * w).sum::<f64>();
        (loss, gw, gb)
    }
}

/// Full-batch gradient descent from zero weights.
pub fn logreg_train(xs: &[Vec<f64>], ys: &[u8], cfg: &LogRegConfig) -> Result<LogRegModel, ModelError> {
    if xs.is_empty() {
        return Err(ModelError::EmptyTrainingSet);
    }
    if xs.len() != ys.len() {
        return Err(ModelError::ShapeMismatch(format!("{} rows vs {} labels", xs.len(), ys.len())));
    }
    let d = xs[0].len();
    if let Some(bad) = xs.iter().find(|x| x.len() != d) {
        return Err(ModelError::ShapeMismatch(format!("row width {} vs {d}", bad.len())));
    }
    if ys.iter().all(|&y| y == ys[0]) {
        return Err(ModelError::SingleClass);
    }
    let mut model = LogRegModel::zeros(d);
    for epoch in 0..cfg.epochs {
        let (loss, gw, gb) = model.loss_and_grad(xs, ys, cfg.l2);
        if !loss.is_finite() {
            return Err(ModelError::NanLoss { epoch, batch: 0 });
        }
        for (w, g) in model.weights.iter_mut().zip(&gw) {
            *w -= cfg.lr * g;
        }
        model.bias -= cfg.lr * gb;
    }
    if model.weights.iter().any(|w| !w.is_finite()) || !model.bias.is_finite() {
        return Err(ModelError::NonFinite("logistic regression weights".into()));
    }
    Ok(model)
}
