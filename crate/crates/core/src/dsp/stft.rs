use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{DspConfig, DspError};
use crate::audio::AudioBuffer;

/// Periodic Hann window of length `n`: `0.5 * (1 - cos(2*pi*i/n))`.
pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 * (1.0 - (2.0 * PI * i as f64 / n as f64).cos()))
        .collect()
}

/// First-order pre-emphasis `y[t] = x[t] - alpha * x[t-1]`, with `y[0] = x[0]`.
pub fn preemphasis(x: &[f64], alpha: f64) -> Vec<f64> {
    let mut y = Vec::with_capacity(x.len());
    if let Some(&first) = x.first() {
        y.push(first);
    }
    y.extend(x.windows(2).map(|w| w[1] - alpha * w[0]));
    y
}

/// Pre-emphasizes the signal, slices it into `frame_len` frames at a stride of
/// `hop_len` (a trailing partial frame is dropped) and applies the Hann window.
pub fn frame_and_window(buf: &AudioBuffer, cfg: &DspConfig) -> Result<Vec<Vec<f64>>, DspError> {
    if buf.len() < cfg.frame_len {
        return Err(DspError::TooShort {
            needed: cfg.frame_len,
            got: buf.len(),
        });
    }
    let emphasized = preemphasis(&buf.samples, cfg.preemphasis);
    let window = hann_window(cfg.frame_len);
    let frames = (0..cfg.num_frames(buf.len()))
        .map(|f| {
            let start = f * cfg.hop_len;
            emphasized[start..start + cfg.frame_len]
                .iter()
                .zip(&window)
                .map(|(x, w)| x * w)
                .collect()
        })
        .collect();
    Ok(frames)
}

/// Reusable real-input power spectrum of a fixed FFT size.
#[derive(Clone)]
pub struct Spectrum {
    fft: Arc<dyn Fft<f64>>,
    size: usize,
}

impl std::fmt::Debug for Spectrum {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Spectrum").field("size", &self.size).finish()
    }
}

impl Spectrum {
    pub fn new(fft_size: usize) -> Self {
        let fft = FftPlanner::new().plan_fft_forward(fft_size);
        Self {
            fft,
            size: fft_size,
        }
    }

    pub fn n_bins(&self) -> usize {
        self.size / 2 + 1
    }

    /// `|X_k|^2` for `k = 0..=size/2`, zero-padding `frame` to the FFT size.
    pub fn power_into(&self, frame: &[f64], scratch: &mut Vec<Complex<f64>>, out: &mut [f64]) {
        assert!(frame.len() <= self.size, "frame longer than FFT size");
        scratch.clear();
        scratch.extend(frame.iter().map(|&x| Complex::new(x, 0.0)));
        scratch.resize(self.size, Complex::new(0.0, 0.0));
        self.fft.process(scratch);
        for (o, c) in out.iter_mut().zip(scratch.iter()).take(self.n_bins()) {
            *o = c.norm_sqr();
        }
    }

    pub fn power(&self, frame: &[f64]) -> Vec<f64> {
        let mut scratch = Vec::with_capacity(self.size);
        let mut out = vec![0.0; self.n_bins()];
        self.power_into(frame, &mut scratch, &mut out);
        out
    }
}

/// Power spectrum of a single windowed frame: `fft_size / 2 + 1` bins.
pub fn power_spectrum(frame: &[f64], cfg: &DspConfig) -> Vec<f64> {
    Spectrum::new(cfg.fft_size).power(frame)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn direct_dft_power(frame: &[f64], n: usize) -> Vec<f64> {
        (0..=n / 2)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (t, &x) in frame.iter().enumerate() {
                    let ang = -2.0 * PI * ((k * t) % n) as f64 / n as f64;
                    re += x * ang.cos();
                    im += x * ang.sin();
                }
                re * re + im * im
            })
            .collect()
    }

    #[test]
    fn hann_endpoints() {
        let w = hann_window(400);
        assert_eq!(w[0], 0.0);
        assert!((w[200] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn framing_boundaries() {
        let cfg = DspConfig::default();
        let exact = AudioBuffer::new(vec![0.1; 400], 16_000, "a");
        assert_eq!(frame_and_window(&exact, &cfg).unwrap().len(), 1);
        let partial = AudioBuffer::new(vec![0.1; 400 + 160 - 1], 16_000, "a");
        assert_eq!(frame_and_window(&partial, &cfg).unwrap().len(), 1);
        let short = AudioBuffer::new(vec![0.1; 399], 16_000, "a");
        assert_eq!(
            frame_and_window(&short, &cfg),
            Err(DspError::TooShort { needed: 400, got: 399 })
        );
    }

    #[test]
    fn preemphasis_keeps_first_sample() {
        assert_eq!(preemphasis(&[1.0, 1.0, 2.0], 0.5), vec![1.0, 0.5, 1.5]);
    }

    #[test]
    fn zero_frame_zero_spectrum() {
        let cfg = DspConfig::default();
        assert!(power_spectrum(&[0.0; 400], &cfg).iter().all(|&p| p == 0.0));
    }

    #[test]
    fn cosine_on_bin_eight() {
        let n = 512;
        let frame: Vec<f64> = (0..n).map(|t| (2.0 * PI * 8.0 * t as f64 / n as f64).cos()).collect();
        let cfg = DspConfig {
            frame_len: n,
            ..DspConfig::default()
        };
        let power = power_spectrum(&frame, &cfg);
        let oracle = direct_dft_power(&frame, n);
        let peak = power[8];
        assert!((peak - oracle[8]).abs() / oracle[8] < 1e-12);
        assert!((peak - (n as f64 / 2.0).powi(2)).abs() < 1e-6);
        for (k, &p) in power.iter().enumerate() {
            if (7..=9).contains(&k) {
                continue;
            }
            assert!(p < 1e-18 * peak, "bin {k}: {p}");
        }
    }

    #[test]
    fn fft_matches_direct_dft() {
        let cfg = DspConfig::default();
        let spectrum = Spectrum::new(cfg.fft_size);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut worst = 0.0f64;
        for _ in 0..50 {
            let frame: Vec<f64> = (0..cfg.frame_len).map(|_| rng.random_range(-1.0..1.0)).collect();
            let fast = spectrum.power(&frame);
            let slow = direct_dft_power(&frame, cfg.fft_size);
            for (a, b) in fast.iter().zip(&slow) {
                worst = worst.max((a - b).abs());
            }
        }
        assert!(worst < 1e-8, "max abs diff {worst}");
    }
}
