use super::{ModelError, Tensor};

/// Probabilities are clamped into `[PROB_FLOOR, 1 - PROB_FLOOR]` before the log.
pub const PROB_FLOOR: f64 = 1e-12;

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Numerically stable softmax over two logits.
pub fn softmax2(logits: [f64; 2]) -> [f64; 2] {
    let m = logits[0].max(logits[1]);
    let e0 = (logits[0] - m).exp();
    let e1 = (logits[1] - m).exp();
    let s = e0 + e1;
    [e0 / s, e1 / s]
}

/// Mean binary cross-entropy and its exact gradient with respect to `probs`.
///
/// `probs` is either shape `[n]` (probability of the positive class) or
/// `[n, 2]` (softmax output; only the true-class column enters the loss).
pub fn bce_loss(probs: &Tensor, labels: &[u8]) -> Result<(f64, Tensor), ModelError> {
    let n = labels.len();
    let shape = probs.shape();
    let two_col = match shape {
        [m] if *m == n => false,
        [m, 2] if *m == n => true,
        _ => {
            return Err(ModelError::ShapeMismatch(format!(
                "probabilities {shape:?} vs {n} labels"
            )))
        }
    };
    if n == 0 {
        return Err(ModelError::ShapeMismatch("no samples".into()));
    }
    let clamp = |p: f64| p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
    let mut grad = Tensor::zeros_like(probs);
    let mut loss = 0.0;
    let inv_n = 1.0 / n as f64;
    let p = probs.data();
    let g = grad.data_mut();
    for (i, &y) in labels.iter().enumerate() {
        if two_col {
            let k = 2 * i + y as usize;
            let pk = clamp(p[k]);
            loss -= pk.ln();
            g[k] = -inv_n / pk;
        } else {
            let pi = clamp(p[i]);
            if y == 1 {
                loss -= pi.ln();
                g[i] = -inv_n / pi;
            } else {
                loss -= (1.0 - pi).ln();
                g[i] = inv_n / (1.0 - pi);
            }
        }
    }
    Ok((loss * inv_n, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn perfect_prediction_is_near_zero() {
        let probs = Tensor::new(vec![3], vec![1.0, 0.0, 1.0]).unwrap();
        let (loss, _) = bce_loss(&probs, &[1, 0, 1]).unwrap();
        assert!(loss < 1e-11);
    }

    #[test]
    fn half_everywhere_is_ln2() {
        let probs = Tensor::filled(&[4], 0.5);
        let (loss, _) = bce_loss(&probs, &[1, 0, 0, 1]).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
        let probs2 = Tensor::filled(&[4, 2], 0.5);
        let (loss2, _) = bce_loss(&probs2, &[1, 0, 0, 1]).unwrap();
        assert!((loss2 - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch() {
        assert!(bce_loss(&Tensor::zeros(&[3]), &[1, 0]).is_err());
        assert!(bce_loss(&Tensor::zeros(&[2, 3]), &[1, 0]).is_err());
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for two_col in [false, true] {
            let n = 8;
            let shape = if two_col { vec![n, 2] } else { vec![n] };
            let len = shape.iter().product();
            let data: Vec<f64> = (0..len).map(|_| rng.random_range(0.05..0.95)).collect();
            let labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
            let probs = Tensor::new(shape.clone(), data.clone()).unwrap();
            let (_, grad) = bce_loss(&probs, &labels).unwrap();
            let h = 1e-5;
            for k in 0..len {
                let mut plus = data.clone();
                plus[k] += h;
                let mut minus = data.clone();
                minus[k] -= h;
                let lp = bce_loss(&Tensor::new(shape.clone(), plus).unwrap(), &labels).unwrap().0;
                let lm = bce_loss(&Tensor::new(shape.clone(), minus).unwrap(), &labels).unwrap().0;
                let fd = (lp - lm) / (2.0 * h);
                let an = grad.data()[k];
                let denom = fd.abs().max(an.abs()).max(1e-12);
                if fd == 0.0 && an == 0.0 {
                    continue;
                }
                assert!((fd - an).abs() / denom < 1e-6, "k={k}: fd {fd} vs {an}");
            }
        }
    }

    #[test]
    fn softmax_normalizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let l = [rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0)];
            let p = softmax2(l);
            assert!((p[0] + p[1] - 1.0).abs() < 1e-12);
        }
        assert_eq!(softmax2([0.0, 0.0]), [0.5, 0.5]);
    }

    #[test]
    fn stable_helpers() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        assert!((softplus(800.0) - 800.0).abs() < 1e-12);
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
    }
}
