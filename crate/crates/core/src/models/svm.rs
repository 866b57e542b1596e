//! RBF-kernel C-SVM trained by sequential minimal optimization.
//!
//! The solver follows the second-order working-set selection used by LIBSVM:
//! the first index maximizes the KKT violation, the second maximizes the
//! guaranteed decrease of the dual objective.

use serde::{Deserialize, Serialize};

use super::loss::{sigmoid, softplus};
use super::ModelError;

const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmConfig {
    pub c: f64,
    /// `None` means `1 / n_features`.
    pub gamma: Option<f64>,
    pub tol: f64,
    /// `None` means `max(100_000, 100 * n)`.
    pub max_iter: Option<usize>,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self {
            c: 1.0,
            gamma: None,
            tol: 1e-3,
            max_iter: None,
        }
    }
}

pub fn rbf_kernel(a: &[f64], b: &[f64], gamma: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-gamma * d2).exp()
}

/// Raw output of the dual solver.
#[derive(Debug, Clone, PartialEq)]
pub struct DualSolution {
    pub alpha: Vec<f64>,
    /// Decision function is `sum_i alpha_i y_i K(x_i, x) - rho`.
    pub rho: f64,
    /// `sum(alpha) - 1/2 alpha^T Q alpha`, the quantity being maximized.
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Solves `max sum(a) - 1/2 a^T Q a` s.t. `0 <= a <= c`, `y^T a = 0`, where
/// `Q_ij = y_i y_j K_ij`. `kernel` is the full Gram matrix, `y` holds ±1.
pub fn svm_solve_dual(
    kernel: &[Vec<f64>],
    y: &[f64],
    c: f64,
    tol: f64,
    max_iter: usize,
) -> Result<DualSolution, ModelError> {
    let n = y.len();
    if kernel.len() != n || kernel.iter().any(|r| r.len() != n) {
        return Err(ModelError::ShapeMismatch(format!("kernel is not {n}x{n}")));
    }
    if !y.iter().any(|&v| v > 0.0) || !y.iter().any(|&v| v < 0.0) {
        return Err(ModelError::SingleClass);
    }
    if !(c > 0.0) {
        return Err(ModelError::InvalidConfig(format!("C must be positive, got {c}")));
    }
    let q = |i: usize, j: usize| y[i] * y[j] * kernel[i][j];
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let is_upper = |a: f64| a >= c;
    let is_lower = |a: f64| a <= 0.0;

    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        // First index: maximal violation among I_up.
        let mut gmax = f64::NEG_INFINITY;
        let mut i_sel = None;
        for t in 0..n {
            let in_up = if y[t] > 0.0 { !is_upper(alpha[t]) } else { !is_lower(alpha[t]) };
            if in_up && -y[t] * grad[t] >= gmax {
                gmax = -y[t] * grad[t];
                i_sel = Some(t);
            }
        }
        // Second index: largest second-order decrease among I_low.
        let mut gmax2 = f64::NEG_INFINITY;
        let mut j_sel = None;
        let mut best = f64::INFINITY;
        if let Some(i) = i_sel {
            for t in 0..n {
                let in_low = if y[t] > 0.0 { !is_lower(alpha[t]) } else { !is_upper(alpha[t]) };
                if !in_low {
                    continue;
                }
                let yg = y[t] * grad[t];
                gmax2 = gmax2.max(yg);
                let b = gmax + yg;
                if b > 0.0 {
                    let mut a = kernel[i][i] + kernel[t][t] - 2.0 * kernel[i][t];
                    if a <= 0.0 {
                        a = TAU;
                    }
                    let decrease = -(b * b) / a;
                    if decrease <= best {
                        best = decrease;
                        j_sel = Some(t);
                    }
                }
            }
        }
        if gmax + gmax2 < tol {
            converged = true;
            break;
        }
        let (Some(i), Some(j)) = (i_sel, j_sel) else {
            converged = true;
            break;
        };
        iterations += 1;

        let (old_i, old_j) = (alpha[i], alpha[j]);
        let mut quad = kernel[i][i] + kernel[j][j] - 2.0 * kernel[i][j];
        if quad <= 0.0 {
            quad = TAU;
        }
        if y[i] != y[j] {
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..n {
            grad[t] += q(t, i) * di + q(t, j) * dj;
        }
    }

    // Bias from free vectors, or the midpoint of the feasible interval.
    let (mut ub, mut lb, mut sum, mut n_free) = (f64::INFINITY, f64::NEG_INFINITY, 0.0, 0usize);
    for t in 0..n {
        let yg = y[t] * grad[t];
        if is_upper(alpha[t]) {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if is_lower(alpha[t]) {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            n_free += 1;
            sum += yg;
        }
    }
    let rho = if n_free > 0 { sum / n_free as f64 } else { (ub + lb) / 2.0 };
    // grad = Q a - 1, so a^T Q a = a^T (grad + 1).
    let quad_term: f64 = alpha.iter().zip(&grad).map(|(a, g)| a * (g + 1.0)).sum();
    let objective = alpha.iter().sum::<f64>() - 0.5 * quad_term;
    if !converged {
        log::warn!("SMO stopped after {iterations} iterations without reaching tol {tol}");
    }
    Ok(DualSolution {
        alpha,
        rho,
        objective,
        iterations,
        converged,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub support_vectors: Vec<Vec<f64>>,
    /// Multipliers in `(0, C]`, one per support vector.
    pub alphas: Vec<f64>,
    /// ±1 label of each support vector.
    pub sv_labels: Vec<f64>,
    pub bias: f64,
    pub gamma: f64,
    pub c: f64,
    pub converged: bool,
    pub dual_objective: f64,
    /// Slope of the logistic link `p = sigmoid(a * f(x))` used by `probability`.
    pub link_slope: f64,
}

impl SvmModel {
    pub fn decision(&self, x: &[f64]) -> f64 {
        self.support_vectors
            .iter()
            .zip(self.alphas.iter().zip(&self.sv_labels))
            .map(|(sv, (a, y))| a * y * rbf_kernel(sv, x, self.gamma))
            .sum::<f64>()
            + self.bias
    }

    /// Calibrated probability of the positive class; `>= 0.5` exactly when
    /// the decision value is non-negative.
    pub fn probability(&self, x: &[f64]) -> f64 {
        sigmoid(self.link_slope * self.decision(x))
    }
}

/// Fits `a > 0` in `p = sigmoid(a f)` by Newton's method on smoothed targets.
/// The intercept is pinned at zero so the 0.5 threshold coincides with the
/// sign of the decision value.
fn fit_link(decisions: &[f64], labels: &[u8]) -> f64 {
    let n_pos = labels.iter().filter(|&&l| l == 1).count() as f64;
    let n_neg = labels.len() as f64 - n_pos;
    let hi = (n_pos + 1.0) / (n_pos + 2.0);
    let lo = 1.0 / (n_neg + 2.0);
    let targets: Vec<f64> = labels.iter().map(|&l| if l == 1 { hi } else { lo }).collect();
    let objective = |a: f64| -> f64 {
        decisions
            .iter()
            .zip(&targets)
            .map(|(f, t)| softplus(a * f) - t * a * f)
            .sum()
    };
    let mut a = 1.0;
    for _ in 0..100 {
        let (mut g, mut h) = (0.0, 0.0);
        for (f, t) in decisions.iter().zip(&targets) {
            let p = sigmoid(a * f);
            g += (p - t) * f;
            h += p * (1.0 - p) * f * f;
        }
        if h < 1e-12 || g.abs() < 1e-10 {
            break;
        }
        let mut step = g / h;
        // Backtrack so the objective never increases.
        let base = objective(a);
        while step.abs() > 1e-14 && objective(a - step) > base {
            step *= 0.5;
        }
        a -= step;
    }
    if a.is_finite() && a > 1e-6 {
        a
    } else {
        1e-6
    }
}

pub fn svm_train_smo(xs: &[Vec<f64>], labels: &[u8], cfg: &SvmConfig) -> Result<SvmModel, ModelError> {
    if xs.is_empty() {
        return Err(ModelError::EmptyTrainingSet);
    }
    if xs.len() != labels.len() {
        return Err(ModelError::ShapeMismatch(format!("{} rows vs {} labels", xs.len(), labels.len())));
    }
    let d = xs[0].len();
    if d == 0 || xs.iter().any(|x| x.len() != d) {
        return Err(ModelError::ShapeMismatch("ragged or empty feature rows".into()));
    }
    let gamma = cfg.gamma.unwrap_or(1.0 / d as f64);
    let n = xs.len();
    let kernel: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| rbf_kernel(&xs[i], &xs[j], gamma)).collect())
        .collect();
    let y: Vec<f64> = labels.iter().map(|&l| if l == 1 { 1.0 } else { -1.0 }).collect();
    let max_iter = cfg.max_iter.unwrap_or((100 * n).max(100_000));
    let sol = svm_solve_dual(&kernel, &y, cfg.c, cfg.tol, max_iter)?;

    let mut model = SvmModel {
        support_vectors: Vec::new(),
        alphas: Vec::new(),
        sv_labels: Vec::new(),
        bias: -sol.rho,
        gamma,
        c: cfg.c,
        converged: sol.converged,
        dual_objective: sol.objective,
        link_slope: 1.0,
    };
    for (i, &a) in sol.alpha.iter().enumerate() {
        if a > 0.0 {
            model.support_vectors.push(xs[i].clone());
            model.alphas.push(a);
            model.sv_labels.push(y[i]);
        }
    }
    let decisions: Vec<f64> = xs.iter().map(|x| model.decision(x)).collect();
    model.link_slope = fit_link(&decisions, labels);
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn xor() -> (Vec<Vec<f64>>, Vec<u8>) {
        (
            vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![0.0, 1.0], vec![1.0, 0.0]],
            vec![0, 0, 1, 1],
        )
    }

    #[test]
    fn xor_is_kernel_separable() {
        let (xs, ys) = xor();
        let cfg = SvmConfig {
            c: 10.0,
            gamma: Some(2.0),
            ..SvmConfig::default()
        };
        let m = svm_train_smo(&xs, &ys, &cfg).unwrap();
        assert!(m.converged);
        for (x, &y) in xs.iter().zip(&ys) {
            let f = m.decision(x);
            assert_eq!(u8::from(f >= 0.0), y);
            assert_eq!(u8::from(m.probability(x) >= 0.5), y);
        }
    }

    #[test]
    fn feasibility_at_convergence() {
        let (xs, ys) = xor();
        let m = svm_train_smo(&xs, &ys, &SvmConfig::default()).unwrap();
        let eq: f64 = m.alphas.iter().zip(&m.sv_labels).map(|(a, y)| a * y).sum();
        assert!(eq.abs() <= 1e-9);
        assert!(m.alphas.iter().all(|&a| a > 0.0 && a <= m.c));
    }

    #[test]
    fn default_gamma_is_inverse_width() {
        let (xs, ys) = xor();
        let m = svm_train_smo(&xs, &ys, &SvmConfig::default()).unwrap();
        assert_eq!(m.gamma, 0.5);
    }

    #[test]
    fn single_class_rejected() {
        let xs = vec![vec![0.0], vec![1.0]];
        assert_eq!(
            svm_train_smo(&xs, &[0, 0], &SvmConfig::default()),
            Err(ModelError::SingleClass)
        );
    }
}
