//! Compact two-stage CNN over single-channel log-Mel patches.
//!
//! conv 3x3 -> ReLU -> 2x2 max-pool, twice, then a dense layer to two logits.
//! Convolutions are true (kernel-flipped) convolutions with valid padding and
//! stride 1. Pooling uses ceil mode so odd edges form a partial window.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::softmax2;
use super::train::{cross_entropy, train_network, EpochLog, Network, TrainConfig};
use super::{ModelError, Tensor};
use crate::dsp::{FeatureKind, FeatureMatrix};

const K: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CnnConfig {
    /// Patch height in frames.
    pub height: usize,
    /// Patch width in mel bands.
    pub width: usize,
    pub conv1_filters: usize,
    pub conv2_filters: usize,
}

impl Default for CnnConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            conv1_filters: 8,
            conv2_filters: 16,
        }
    }
}

fn pooled(n: usize) -> usize {
    n.div_ceil(2)
}

impl CnnConfig {
    /// Spatial sizes `(conv1, pool1, conv2, pool2)` along one axis.
    fn sizes(n: usize) -> Result<[usize; 4], ModelError> {
        if n < K {
            return Err(ModelError::InvalidConfig(format!("patch side {n} is smaller than the kernel")));
        }
        let c1 = n - K + 1;
        let p1 = pooled(c1);
        if p1 < K {
            return Err(ModelError::InvalidConfig(format!(
                "patch side {n} leaves {p1} after the first pool, below the kernel size"
            )));
        }
        let c2 = p1 - K + 1;
        Ok([c1, p1, c2, pooled(c2)])
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        Self::sizes(self.height)?;
        Self::sizes(self.width)?;
        if self.conv1_filters == 0 || self.conv2_filters == 0 {
            return Err(ModelError::InvalidConfig("filter counts must be positive".into()));
        }
        Ok(())
    }

    pub fn dense_inputs(&self) -> Result<usize, ModelError> {
        Ok(self.conv2_filters * Self::sizes(self.height)?[3] * Self::sizes(self.width)?[3])
    }
}

/// Valid-padding, stride-1 convolution of a `[in_c, h, w]` volume with
/// `[out_c, in_c, 3, 3]` kernels. Returns `[out_c, h-2, w-2]`.
pub fn conv2d_valid(input: &[f64], in_c: usize, h: usize, w: usize, kernel: &[f64], bias: &[f64]) -> Vec<f64> {
    let out_c = bias.len();
    let (oh, ow) = (h + 1 - K, w + 1 - K);
    let mut out = vec![0.0; out_c * oh * ow];
    for o in 0..out_c {
        let plane = &mut out[o * oh * ow..(o + 1) * oh * ow];
        plane.iter_mut().for_each(|v| *v = bias[o]);
        for i in 0..in_c {
            let x = &input[i * h * w..(i + 1) * h * w];
            let k = &kernel[(o * in_c + i) * K * K..(o * in_c + i + 1) * K * K];
            for a in 0..K {
                for b in 0..K {
                    let kv = k[a * K + b];
                    let (dr, dc) = (K - 1 - a, K - 1 - b);
                    for r in 0..oh {
                        let xr = &x[(r + dr) * w + dc..(r + dr) * w + dc + ow];
                        let orow = &mut plane[r * ow..(r + 1) * ow];
                        for (ov, xv) in orow.iter_mut().zip(xr) {
                            *ov += kv * xv;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gradients of `conv2d_valid` given the output gradient.
fn conv2d_backward(
    input: &[f64],
    in_c: usize,
    h: usize,
    w: usize,
    kernel: &[f64],
    dout: &[f64],
    out_c: usize,
    dkernel: &mut [f64],
    dbias: &mut [f64],
    dinput: Option<&mut [f64]>,
) {
    let (oh, ow) = (h + 1 - K, w + 1 - K);
    let mut dinput = dinput;
    for o in 0..out_c {
        let g = &dout[o * oh * ow..(o + 1) * oh * ow];
        dbias[o] += g.iter().sum::<f64>();
        for i in 0..in_c {
            let x = &input[i * h * w..(i + 1) * h * w];
            let base = (o * in_c + i) * K * K;
            for a in 0..K {
                for b in 0..K {
                    let (dr, dc) = (K - 1 - a, K - 1 - b);
                    let mut acc = 0.0;
                    for r in 0..oh {
                        let xr = &x[(r + dr) * w + dc..(r + dr) * w + dc + ow];
                        acc += g[r * ow..(r + 1) * ow].iter().zip(xr).map(|(p, q)| p * q).sum::<f64>();
                    }
                    dkernel[base + a * K + b] += acc;
                    if let Some(dx) = dinput.as_deref_mut() {
                        let kv = kernel[base + a * K + b];
                        let dxp = &mut dx[i * h * w..(i + 1) * h * w];
                        for r in 0..oh {
                            let row = &mut dxp[(r + dr) * w + dc..(r + dr) * w + dc + ow];
                            for (d, gv) in row.iter_mut().zip(&g[r * ow..(r + 1) * ow]) {
                                *d += kv * gv;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// ReLU then 2x2 ceil-mode max-pool over `[c, h, w]`. Returns the pooled
/// values and, per output cell, the flat index of the winning input.
fn relu_pool(x: &[f64], c: usize, h: usize, w: usize) -> (Vec<f64>, Vec<usize>) {
    let (ph, pw) = (pooled(h), pooled(w));
    let mut out = vec![0.0; c * ph * pw];
    let mut arg = vec![0; c * ph * pw];
    for ch in 0..c {
        for r in 0..ph {
            for q in 0..pw {
                let mut best = f64::NEG_INFINITY;
                let mut best_i = 0;
                for rr in 2 * r..(2 * r + 2).min(h) {
                    for qq in 2 * q..(2 * q + 2).min(w) {
                        let i = ch * h * w + rr * w + qq;
                        if x[i] > best {
                            best = x[i];
                            best_i = i;
                        }
                    }
                }
                let o = ch * ph * pw + r * pw + q;
                out[o] = best.max(0.0);
                arg[o] = best_i;
            }
        }
    }
    (out, arg)
}

/// Routes pooled gradients back through max-pool and ReLU.
fn relu_pool_backward(dpool: &[f64], pooled_vals: &[f64], arg: &[usize], n_in: usize) -> Vec<f64> {
    let mut d = vec![0.0; n_in];
    for ((g, v), &i) in dpool.iter().zip(pooled_vals).zip(arg) {
        if *v > 0.0 {
            d[i] += g;
        }
    }
    d
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnnParams {
    pub config: CnnConfig,
    /// `[c1, 1, 3, 3]`
    pub conv1_w: Tensor,
    pub conv1_b: Tensor,
    /// `[c2, c1, 3, 3]`
    pub conv2_w: Tensor,
    pub conv2_b: Tensor,
    /// `[2, dense_inputs]`
    pub dense_w: Tensor,
    pub dense_b: Tensor,
}

struct Activations {
    conv1: Vec<f64>,
    pool1: Vec<f64>,
    arg1: Vec<usize>,
    conv2: Vec<f64>,
    pool2: Vec<f64>,
    arg2: Vec<usize>,
    probs: [f64; 2],
}

impl CnnParams {
    pub fn zeros(config: CnnConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let (c1, c2) = (config.conv1_filters, config.conv2_filters);
        Ok(Self {
            config,
            conv1_w: Tensor::zeros(&[c1, 1, K, K]),
            conv1_b: Tensor::zeros(&[c1]),
            conv2_w: Tensor::zeros(&[c2, c1, K, K]),
            conv2_b: Tensor::zeros(&[c2]),
            dense_w: Tensor::zeros(&[2, config.dense_inputs()?]),
            dense_b: Tensor::zeros(&[2]),
        })
    }

    /// He-normal convolution weights, small dense weights, zero biases.
    pub fn init(config: CnnConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let (c1, c2) = (config.conv1_filters, config.conv2_filters);
        let n_dense = config.dense_inputs()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self {
            config,
            conv1_w: Tensor::randn(&[c1, 1, K, K], (2.0 / (K * K) as f64).sqrt(), &mut rng),
            conv1_b: Tensor::zeros(&[c1]),
            conv2_w: Tensor::randn(&[c2, c1, K, K], (2.0 / (c1 * K * K) as f64).sqrt(), &mut rng),
            conv2_b: Tensor::zeros(&[c2]),
            dense_w: Tensor::randn(&[2, n_dense], (1.0 / n_dense as f64).sqrt(), &mut rng),
            dense_b: Tensor::zeros(&[2]),
        })
    }

    fn forward(&self, x: &[f64]) -> Result<Activations, ModelError> {
        let cfg = &self.config;
        if x.len() != cfg.height * cfg.width {
            return Err(ModelError::ShapeMismatch(format!(
                "patch has {} values, expected {}x{}",
                x.len(),
                cfg.height,
                cfg.width
            )));
        }
        let sh = CnnConfig::sizes(cfg.height)?;
        let sw = CnnConfig::sizes(cfg.width)?;
        let (c1, c2) = (cfg.conv1_filters, cfg.conv2_filters);
        let conv1 = conv2d_valid(x, 1, cfg.height, cfg.width, self.conv1_w.data(), self.conv1_b.data());
        let (pool1, arg1) = relu_pool(&conv1, c1, sh[0], sw[0]);
        let conv2 = conv2d_valid(&pool1, c1, sh[1], sw[1], self.conv2_w.data(), self.conv2_b.data());
        let (pool2, arg2) = relu_pool(&conv2, c2, sh[2], sw[2]);
        let n = pool2.len();
        let (dw, db) = (self.dense_w.data(), self.dense_b.data());
        let mut logits = [db[0], db[1]];
        for (k, l) in logits.iter_mut().enumerate() {
            *l += dw[k * n..(k + 1) * n].iter().zip(&pool2).map(|(a, b)| a * b).sum::<f64>();
        }
        Ok(Activations {
            conv1,
            pool1,
            arg1,
            conv2,
            pool2,
            arg2,
            probs: softmax2(logits),
        })
    }
}

impl Network for CnnParams {
    /// Row-major `height x width` patch.
    type Input = Vec<f64>;

    fn zeros_like(&self) -> Self {
        Self::zeros(self.config).expect("config already validated")
    }

    fn params(&self) -> Vec<&Tensor> {
        vec![
            &self.conv1_w,
            &self.conv1_b,
            &self.conv2_w,
            &self.conv2_b,
            &self.dense_w,
            &self.dense_b,
        ]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.conv1_w,
            &mut self.conv1_b,
            &mut self.conv2_w,
            &mut self.conv2_b,
            &mut self.dense_w,
            &mut self.dense_b,
        ]
    }

    fn probs(&self, input: &Vec<f64>) -> Result<[f64; 2], ModelError> {
        Ok(self.forward(input)?.probs)
    }

    fn accumulate(
        &self,
        x: &Vec<f64>,
        label: u8,
        scale: f64,
        grads: &mut Self,
    ) -> Result<(f64, [f64; 2]), ModelError> {
        let cfg = self.config;
        let act = self.forward(x)?;
        let sh = CnnConfig::sizes(cfg.height)?;
        let sw = CnnConfig::sizes(cfg.width)?;
        let (c1, c2) = (cfg.conv1_filters, cfg.conv2_filters);
        let loss = cross_entropy(act.probs, label);
        let mut dlogits = act.probs;
        dlogits[label as usize] -= 1.0;
        dlogits.iter_mut().for_each(|v| *v *= scale);

        let n = act.pool2.len();
        let dw = self.dense_w.data();
        let mut dpool2 = vec![0.0; n];
        {
            let gdw = grads.dense_w.data_mut();
            for k in 0..2 {
                for j in 0..n {
                    gdw[k * n + j] += dlogits[k] * act.pool2[j];
                    dpool2[j] += dlogits[k] * dw[k * n + j];
                }
            }
            let gdb = grads.dense_b.data_mut();
            gdb[0] += dlogits[0];
            gdb[1] += dlogits[1];
        }
        let dconv2 = relu_pool_backward(&dpool2, &act.pool2, &act.arg2, act.conv2.len());
        let mut dpool1 = vec![0.0; act.pool1.len()];
        conv2d_backward(
            &act.pool1,
            c1,
            sh[1],
            sw[1],
            self.conv2_w.data(),
            &dconv2,
            c2,
            grads.conv2_w.data_mut(),
            grads.conv2_b.data_mut(),
            Some(&mut dpool1),
        );
        let dconv1 = relu_pool_backward(&dpool1, &act.pool1, &act.arg1, act.conv1.len());
        conv2d_backward(
            x,
            1,
            cfg.height,
            cfg.width,
            self.conv1_w.data(),
            &dconv1,
            c1,
            grads.conv1_w.data_mut(),
            grads.conv1_b.data_mut(),
            None,
        );
        Ok((loss, act.probs))
    }
}

/// Trained CNN plus the scalar standardization fitted on training patches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnnModel {
    pub params: CnnParams,
    pub input_mean: f64,
    pub input_std: f64,
}

/// Center crop (or zero pad) of a log-Mel matrix to `height x width`. Values
/// outside the source are `None` so that padding can be applied after
/// standardization.
fn crop_cells(m: &FeatureMatrix, cfg: &CnnConfig) -> Vec<Option<f64>> {
    let offset = |have: usize, want: usize| -> isize { (have as isize - want as isize) / 2 };
    let r0 = offset(m.n_rows(), cfg.height);
    let c0 = offset(m.n_cols(), cfg.width);
    let mut out = Vec::with_capacity(cfg.height * cfg.width);
    for r in 0..cfg.height as isize {
        for c in 0..cfg.width as isize {
            let (sr, sc) = (r + r0, c + c0);
            let inside = sr >= 0 && sc >= 0 && (sr as usize) < m.n_rows() && (sc as usize) < m.n_cols();
            out.push(inside.then(|| m.get(sr as usize, sc as usize)));
        }
    }
    out
}

fn check_input(m: &FeatureMatrix) -> Result<(), ModelError> {
    if m.kind() != FeatureKind::LogMel {
        return Err(ModelError::FeatureKindMismatch {
            expected: FeatureKind::LogMel.to_string(),
            got: m.kind().to_string(),
        });
    }
    Ok(())
}

impl CnnModel {
    /// Crops or pads to the patch size, standardizes, and fills padding with
    /// zero (the standardized mean).
    pub fn patch(&self, m: &FeatureMatrix) -> Result<Vec<f64>, ModelError> {
        check_input(m)?;
        Ok(crop_cells(m, &self.params.config)
            .into_iter()
            .map(|v| v.map_or(0.0, |v| (v - self.input_mean) / self.input_std))
            .collect())
    }

    pub fn probability(&self, m: &FeatureMatrix) -> Result<f64, ModelError> {
        Ok(self.params.probs(&self.patch(m)?)?[1])
    }

    pub fn train(
        mats: &[FeatureMatrix],
        labels: &[u8],
        config: CnnConfig,
        train: &TrainConfig,
    ) -> Result<(Self, Vec<EpochLog>), ModelError> {
        if mats.len() != labels.len() {
            return Err(ModelError::ShapeMismatch(format!(
                "{} patches vs {} labels",
                mats.len(),
                labels.len()
            )));
        }
        if !labels.is_empty() && labels.iter().all(|&l| l == labels[0]) {
            return Err(ModelError::SingleClass);
        }
        config.validate()?;
        let (mut sum, mut sum_sq, mut count) = (0.0, 0.0, 0usize);
        for m in mats {
            check_input(m)?;
            for v in crop_cells(m, &config).into_iter().flatten() {
                sum += v;
                sum_sq += v * v;
                count += 1;
            }
        }
        if count == 0 {
            return Err(ModelError::EmptyTrainingSet);
        }
        let mean = sum / count as f64;
        let std = (sum_sq / count as f64 - mean * mean).max(0.0).sqrt();
        let mut model = Self {
            params: CnnParams::init(config, train.seed)?,
            input_mean: mean,
            input_std: if std > 1e-12 { std } else { 1.0 },
        };
        let data = mats
            .iter()
            .zip(labels)
            .map(|(m, &y)| Ok((model.patch(m)?, y)))
            .collect::<Result<Vec<_>, ModelError>>()?;
        let (params, log) = train_network(model.params.clone(), &data, train)?;
        model.params = params;
        Ok((model, log))
    }
}
