//! Single-layer LSTM over MFCC frames with a two-way softmax head.
//!
//! Gate blocks are stacked in the order input, forget, output, candidate, so
//! row `k * H + j` of `w`, `u` and `b` belongs to gate `k`, unit `j`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{sigmoid, softmax2};
use super::train::{cross_entropy, train_network, EpochLog, Network, TrainConfig};
use super::{ModelError, Tensor};
use crate::dsp::{FeatureKind, FeatureMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LstmConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    /// Frames consumed per sequence; extra frames at the end are dropped and
    /// shorter sequences simply stop early.
    pub seq_len: usize,
}

impl Default for LstmConfig {
    fn default() -> Self {
        Self {
            input_dim: 13,
            hidden_dim: 128,
            seq_len: 300,
        }
    }
}

impl LstmConfig {
    pub fn param_count(&self) -> usize {
        let (d, h) = (self.input_dim, self.hidden_dim);
        4 * h * (d + h + 1) + 2 * h + 2
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    pub config: LstmConfig,
    /// `[4H, D]` input weights.
    pub w: Tensor,
    /// `[4H, H]` recurrent weights.
    pub u: Tensor,
    /// `[4H]` gate biases.
    pub b: Tensor,
    /// `[2, H]` output projection.
    pub w_out: Tensor,
    /// `[2]` output bias.
    pub b_out: Tensor,
}

/// Per-step activations kept for the backward pass.
struct Step {
    gates: Vec<f64>,
    c: Vec<f64>,
    tanh_c: Vec<f64>,
    h: Vec<f64>,
}

impl LstmParams {
    pub fn zeros(config: LstmConfig) -> Self {
        let (d, h) = (config.input_dim, config.hidden_dim);
        Self {
            config,
            w: Tensor::zeros(&[4 * h, d]),
            u: Tensor::zeros(&[4 * h, h]),
            b: Tensor::zeros(&[4 * h]),
            w_out: Tensor::zeros(&[2, h]),
            b_out: Tensor::zeros(&[2]),
        }
    }

    /// Uniform(±1/sqrt(H)) weights, zero biases except forget gates at +1.
    pub fn init(config: LstmConfig, seed: u64) -> Self {
        let (d, h) = (config.input_dim, config.hidden_dim);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (h as f64).sqrt();
        let mut b = Tensor::zeros(&[4 * h]);
        b.data_mut()[h..2 * h].iter_mut().for_each(|v| *v = 1.0);
        Self {
            config,
            w: Tensor::uniform(&[4 * h, d], bound, &mut rng),
            u: Tensor::uniform(&[4 * h, h], bound, &mut rng),
            b,
            w_out: Tensor::uniform(&[2, h], bound, &mut rng),
            b_out: Tensor::zeros(&[2]),
        }
    }

    fn steps_for(&self, seq: &[f64]) -> Result<usize, ModelError> {
        let d = self.config.input_dim;
        if !seq.len().is_multiple_of(d) {
            return Err(ModelError::ShapeMismatch(format!(
                "sequence of {} values is not a multiple of input width {d}",
                seq.len()
            )));
        }
        Ok((seq.len() / d).min(self.config.seq_len))
    }

    fn run(&self, seq: &[f64]) -> Result<(Vec<Step>, [f64; 2]), ModelError> {
        let (d, h) = (self.config.input_dim, self.config.hidden_dim);
        let steps = self.steps_for(seq)?;
        let (w, u, b) = (self.w.data(), self.u.data(), self.b.data());
        let mut trace = Vec::with_capacity(steps);
        let mut h_prev = vec![0.0; h];
        let mut c_prev = vec![0.0; h];
        let mut z = vec![0.0; 4 * h];
        for t in 0..steps {
            let x = &seq[t * d..(t + 1) * d];
            for r in 0..4 * h {
                let wr = &w[r * d..(r + 1) * d];
                let ur = &u[r * h..(r + 1) * h];
                let mut acc = b[r];
                for k in 0..d {
                    acc += wr[k] * x[k];
                }
                for k in 0..h {
                    acc += ur[k] * h_prev[k];
                }
                z[r] = acc;
            }
            let mut gates = vec![0.0; 4 * h];
            for r in 0..3 * h {
                gates[r] = sigmoid(z[r]);
            }
            for r in 3 * h..4 * h {
                gates[r] = z[r].tanh();
            }
            let mut c = vec![0.0; h];
            let mut tanh_c = vec![0.0; h];
            let mut h_new = vec![0.0; h];
            for j in 0..h {
                c[j] = gates[h + j] * c_prev[j] + gates[j] * gates[3 * h + j];
                tanh_c[j] = c[j].tanh();
                h_new[j] = gates[2 * h + j] * tanh_c[j];
            }
            h_prev.clone_from(&h_new);
            c_prev.clone_from(&c);
            trace.push(Step {
                gates,
                c,
                tanh_c,
                h: h_new,
            });
        }
        let (wo, bo) = (self.w_out.data(), self.b_out.data());
        let mut logits = [bo[0], bo[1]];
        for (k, l) in logits.iter_mut().enumerate() {
            *l += wo[k * h..(k + 1) * h].iter().zip(&h_prev).map(|(a, b)| a * b).sum::<f64>();
        }
        Ok((trace, softmax2(logits)))
    }

    /// Cell states `c_t` for every processed step (for inspection and tests).
    pub fn cell_states(&self, seq: &[f64]) -> Result<Vec<Vec<f64>>, ModelError> {
        Ok(self.run(seq)?.0.into_iter().map(|s| s.c).collect())
    }
}

impl Network for LstmParams {
    /// Row-major frames, `input_dim` values each.
    type Input = Vec<f64>;

    fn zeros_like(&self) -> Self {
        Self::zeros(self.config)
    }

    fn params(&self) -> Vec<&Tensor> {
        vec![&self.w, &self.u, &self.b, &self.w_out, &self.b_out]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.w, &mut self.u, &mut self.b, &mut self.w_out, &mut self.b_out]
    }

    fn probs(&self, input: &Vec<f64>) -> Result<[f64; 2], ModelError> {
        Ok(self.run(input)?.1)
    }

    fn accumulate(
        &self,
        seq: &Vec<f64>,
        label: u8,
        scale: f64,
        grads: &mut Self,
    ) -> Result<(f64, [f64; 2]), ModelError> {
        let (d, h) = (self.config.input_dim, self.config.hidden_dim);
        let (trace, probs) = self.run(seq)?;
        let loss = cross_entropy(probs, label);
        let mut dlogits = probs;
        dlogits[label as usize] -= 1.0;
        dlogits.iter_mut().for_each(|v| *v *= scale);

        let zeros = vec![0.0; h];
        let h_last = trace.last().map_or(&zeros, |s| &s.h);
        let wo = self.w_out.data();
        let mut dh = vec![0.0; h];
        {
            let gwo = grads.w_out.data_mut();
            for k in 0..2 {
                for j in 0..h {
                    gwo[k * h + j] += dlogits[k] * h_last[j];
                    dh[j] += dlogits[k] * wo[k * h + j];
                }
            }
            let gbo = grads.b_out.data_mut();
            gbo[0] += dlogits[0];
            gbo[1] += dlogits[1];
        }

        let u = self.u.data();
        let mut dc = vec![0.0; h];
        let mut dz = vec![0.0; 4 * h];
        for t in (0..trace.len()).rev() {
            let s = &trace[t];
            let c_prev = if t > 0 { &trace[t - 1].c } else { &zeros };
            let h_prev = if t > 0 { &trace[t - 1].h } else { &zeros };
            let g = &s.gates;
            for j in 0..h {
                let (ig, fg, og, cg) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
                let tc = s.tanh_c[j];
                dc[j] += dh[j] * og * (1.0 - tc * tc);
                let d_o = dh[j] * tc;
                let d_i = dc[j] * cg;
                let d_g = dc[j] * ig;
                let d_f = dc[j] * c_prev[j];
                dz[j] = d_i * ig * (1.0 - ig);
                dz[h + j] = d_f * fg * (1.0 - fg);
                dz[2 * h + j] = d_o * og * (1.0 - og);
                dz[3 * h + j] = d_g * (1.0 - cg * cg);
                dc[j] *= fg;
            }
            let x = &seq[t * d..(t + 1) * d];
            let gw = grads.w.data_mut();
            for r in 0..4 * h {
                let row = &mut gw[r * d..(r + 1) * d];
                for k in 0..d {
                    row[k] += dz[r] * x[k];
                }
            }
            let gu = grads.u.data_mut();
            for r in 0..4 * h {
                let row = &mut gu[r * h..(r + 1) * h];
                for k in 0..h {
                    row[k] += dz[r] * h_prev[k];
                }
            }
            for (gb, v) in grads.b.data_mut().iter_mut().zip(&dz) {
                *gb += v;
            }
            dh.iter_mut().for_each(|v| *v = 0.0);
            for r in 0..4 * h {
                let ur = &u[r * h..(r + 1) * h];
                for k in 0..h {
                    dh[k] += ur[k] * dz[r];
                }
            }
        }
        Ok((loss, probs))
    }
}

/// Trained LSTM together with the per-coefficient input standardization
/// fitted on its training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmModel {
    pub params: LstmParams,
    pub input_mean: Vec<f64>,
    pub input_std: Vec<f64>,
}

impl LstmModel {
    /// Standardizes and truncates a feature matrix into the network input.
    pub fn prepare(&self, m: &FeatureMatrix) -> Result<Vec<f64>, ModelError> {
        prepare(m, &self.params.config, &self.input_mean, &self.input_std)
    }

    pub fn probability(&self, m: &FeatureMatrix) -> Result<f64, ModelError> {
        Ok(self.params.probs(&self.prepare(m)?)?[1])
    }

    pub fn train(
        seqs: &[FeatureMatrix],
        labels: &[u8],
        config: LstmConfig,
        train: &TrainConfig,
    ) -> Result<(Self, Vec<EpochLog>), ModelError> {
        if seqs.len() != labels.len() {
            return Err(ModelError::ShapeMismatch(format!(
                "{} sequences vs {} labels",
                seqs.len(),
                labels.len()
            )));
        }
        if labels.iter().all(|&l| l == labels[0]) && !labels.is_empty() {
            return Err(ModelError::SingleClass);
        }
        let (mean, std) = fit_standardizer(seqs, &config)?;
        let data = seqs
            .iter()
            .zip(labels)
            .map(|(m, &y)| Ok((prepare(m, &config, &mean, &std)?, y)))
            .collect::<Result<Vec<_>, ModelError>>()?;
        let init = LstmParams::init(config, train.seed);
        let (params, log) = train_network(init, &data, train)?;
        Ok((
            Self {
                params,
                input_mean: mean,
                input_std: std,
            },
            log,
        ))
    }
}

fn check_input(m: &FeatureMatrix, config: &LstmConfig) -> Result<(), ModelError> {
    if m.kind() != FeatureKind::Mfcc {
        return Err(ModelError::FeatureKindMismatch {
            expected: FeatureKind::Mfcc.to_string(),
            got: m.kind().to_string(),
        });
    }
    if m.n_cols() != config.input_dim {
        return Err(ModelError::ShapeMismatch(format!(
            "{} coefficients per frame, model expects {}",
            m.n_cols(),
            config.input_dim
        )));
    }
    Ok(())
}

fn fit_standardizer(seqs: &[FeatureMatrix], config: &LstmConfig) -> Result<(Vec<f64>, Vec<f64>), ModelError> {
    let d = config.input_dim;
    let mut sum = vec![0.0; d];
    let mut count = 0usize;
    for m in seqs {
        check_input(m, config)?;
        for row in m.rows().take(config.seq_len) {
            sum.iter_mut().zip(row).for_each(|(s, v)| *s += v);
            count += 1;
        }
    }
    if count == 0 {
        return Err(ModelError::EmptyTrainingSet);
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
    let mut var = vec![0.0; d];
    for m in seqs {
        for row in m.rows().take(config.seq_len) {
            for k in 0..d {
                var[k] += (row[k] - mean[k]).powi(2);
            }
        }
    }
    let std = var
        .iter()
        .map(|v| {
            let s = (v / count as f64).sqrt();
            if s > 1e-12 {
                s
            } else {
                1.0
            }
        })
        .collect();
    Ok((mean, std))
}

fn prepare(m: &FeatureMatrix, config: &LstmConfig, mean: &[f64], std: &[f64]) -> Result<Vec<f64>, ModelError> {
    check_input(m, config)?;
    Ok(m.rows()
        .take(config.seq_len)
        .flat_map(|row| row.iter().zip(mean.iter().zip(std)).map(|(v, (mu, s))| (v - mu) / s))
        .collect())
}
