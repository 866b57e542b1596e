//! Independent reference implementations used as test oracles. Nothing here
//! calls into the optimized code paths it checks.

#![allow(dead_code)]

use std::f64::consts::PI;

use voxscreen::models::{Network, Tensor};

/// MFCCs of a single 400-sample frame, computed the slow way: pre-emphasis,
/// periodic Hann, a direct 512-point DFT, triangular Mel weights evaluated
/// from the Mel formula, natural log with the 1e-10 floor, and an explicit
/// orthonormal DCT-II sum.
pub fn reference_mfcc(frame: &[f64], n_mels: usize, n_mfcc: usize) -> Vec<f64> {
    let n = frame.len();
    let fft = 512usize;
    let sr = 16_000.0;
    let mut y = vec![0.0; n];
    for t in 0..n {
        y[t] = if t == 0 { frame[0] } else { frame[t] - 0.97 * frame[t - 1] };
    }
    for (t, v) in y.iter_mut().enumerate() {
        *v *= 0.5 - 0.5 * (2.0 * PI * t as f64 / n as f64).cos();
    }
    let power: Vec<f64> = (0..=fft / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (t, v) in y.iter().enumerate() {
                let ang = -2.0 * PI * (k * t) as f64 / fft as f64;
                re += v * ang.cos();
                im += v * ang.sin();
            }
            re * re + im * im
        })
        .collect();

    // mel(1000 Hz) = 1000 fixes the multiplier.
    let mel = |f: f64| 1000.0 * (1.0 + f / 700.0).log10() / (1.0 + 1000.0 / 700.0f64).log10();
    let top = mel(sr / 2.0);
    let edges: Vec<f64> = (0..n_mels + 2).map(|i| top * i as f64 / (n_mels + 1) as f64).collect();
    let log_mel: Vec<f64> = (0..n_mels)
        .map(|m| {
            let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
            let energy: f64 = power
                .iter()
                .enumerate()
                .map(|(k, p)| {
                    let b = mel(k as f64 * sr / fft as f64);
                    let w = if b > l && b <= c {
                        (b - l) / (c - l)
                    } else if b > c && b < r {
                        (r - b) / (r - c)
                    } else {
                        0.0
                    };
                    w * p
                })
                .sum();
            (energy + 1e-10).ln()
        })
        .collect();
    (0..n_mfcc)
        .map(|j| {
            let s = if j == 0 { (1.0 / n_mels as f64).sqrt() } else { (2.0 / n_mels as f64).sqrt() };
            s * log_mel
                .iter()
                .enumerate()
                .map(|(m, v)| v * (PI * j as f64 * (m as f64 + 0.5) / n_mels as f64).cos())
                .sum::<f64>()
        })
        .collect()
}

/// Mann-Whitney U / (n_pos * n_neg), ties counted as one half.
pub fn mann_whitney(scores: &[f64], labels: &[u8]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] != 1 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] != 0 {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// Projection onto `{0 <= a <= c, y^T a = 0}` by bisection on the multiplier
/// of the equality constraint.
fn project(v: &[f64], y: &[f64], c: f64) -> Vec<f64> {
    let at = |lam: f64| -> Vec<f64> { v.iter().zip(y).map(|(vi, yi)| (vi - lam * yi).clamp(0.0, c)).collect() };
    let g = |lam: f64| -> f64 { at(lam).iter().zip(y).map(|(a, yi)| a * yi).sum() };
    let bound = v.iter().fold(0.0f64, |m, x| m.max(x.abs())) + c + 1.0;
    let (mut lo, mut hi) = (-bound, bound);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    at(0.5 * (lo + hi))
}

/// Maximizes the SVM dual `sum(a) - 1/2 a^T Q a` by accelerated projected
/// gradient with adaptive restart, run until the iterate stops moving.
/// Returns `(objective, alpha)`.
pub fn dual_oracle(kernel: &[Vec<f64>], y: &[f64], c: f64) -> (f64, Vec<f64>) {
    let n = y.len();
    let q: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| y[i] * y[j] * kernel[i][j]).collect()).collect();
    // Gershgorin bound on the largest eigenvalue.
    let lip = q.iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    let step = 1.0 / lip;
    let grad = |a: &[f64]| -> Vec<f64> { (0..n).map(|i| q[i].iter().zip(a).map(|(x, y)| x * y).sum::<f64>() - 1.0).collect() };
    let objective = |a: &[f64]| -> f64 {
        let quad: f64 = (0..n).map(|i| a[i] * q[i].iter().zip(a).map(|(x, y)| x * y).sum::<f64>()).sum();
        a.iter().sum::<f64>() - 0.5 * quad
    };
    let mut a = vec![0.0; n];
    let mut z = a.clone();
    let mut t = 1.0f64;
    for _ in 0..200_000 {
        let g = grad(&z);
        let stepped: Vec<f64> = z.iter().zip(&g).map(|(zi, gi)| zi - step * gi).collect();
        let next = project(&stepped, y, c);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let moved: f64 = next.iter().zip(&a).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        // Restart momentum whenever it points uphill.
        let uphill: f64 = g.iter().zip(next.iter().zip(&a)).map(|(gi, (p, q))| gi * (p - q)).sum();
        if uphill > 0.0 {
            t = 1.0;
            z = a.clone();
            continue;
        }
        z = next.iter().zip(&a).map(|(p, q)| p + (t - 1.0) / t_next * (p - q)).collect();
        a = next;
        t = t_next;
        if moved < 1e-14 {
            break;
        }
    }
    (objective(&a), a)
}

/// Largest relative error between the analytic gradient of `net` (summed
/// over `data`) and central finite differences with step `h`. Relative
/// error is `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn max_gradient_error<N: Network>(net: &N, data: &[(N::Input, u8)], h: f64) -> f64 {
    let mut grads = net.zeros_like();
    for (x, y) in data {
        net.accumulate(x, *y, 1.0, &mut grads).unwrap();
    }
    let analytic: Vec<Vec<f64>> = grads.params().iter().map(|t| t.data().to_vec()).collect();
    let loss = |n: &N| -> f64 {
        data.iter()
            .map(|(x, y)| -n.probs(x).unwrap()[*y as usize].ln())
            .sum()
    };
    let mut worst = 0.0f64;
    for (p, an) in analytic.iter().enumerate() {
        for (i, &a) in an.iter().enumerate() {
            let eval = |delta: f64| {
                let mut m = net.clone();
                let mut params: Vec<&mut Tensor> = m.params_mut();
                params[p].data_mut()[i] += delta;
                loss(&m)
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    worst
}
