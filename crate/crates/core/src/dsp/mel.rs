use super::{DspConfig, DspError};

/// Multiplier of the `log10(1 + f / 700)` Mel scale, chosen so 1000 Hz maps to
/// exactly 1000 mel. The customary rounded value 2595 misses that anchor by
/// 0.0145 mel.
pub const MEL_SCALE: f64 = 2595.03753166549;

/// Mel scale `MEL_SCALE * log10(1 + f / 700)`.
pub fn hz_to_mel(hz: f64) -> f64 {
    MEL_SCALE * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / MEL_SCALE) - 1.0)
}

/// Triangular filters on a uniform Mel grid.
///
/// `n_mels + 2` edge points are spaced evenly in Mel between `fmin` and `fmax`;
/// filter `m` rises from point `m` to its apex at point `m + 1` and falls to
/// point `m + 2`. Weights are triangle heights evaluated at each FFT bin's Mel
/// coordinate, with an apex of 1 (no area normalization).
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    n_mels: usize,
    n_bins: usize,
    points_mel: Vec<f64>,
    weights: Vec<f64>,
    // Non-zero column span [start, end) of each row.
    spans: Vec<(usize, usize)>,
}

impl MelFilterbank {
    pub fn new(cfg: &DspConfig, sample_rate_hz: u32) -> Result<Self, DspError> {
        cfg.validate(sample_rate_hz)?;
        let n_mels = cfg.n_mels;
        let n_bins = cfg.n_bins();
        let lo = hz_to_mel(cfg.fmin_hz);
        let hi = hz_to_mel(cfg.fmax_hz);
        let step = (hi - lo) / (n_mels + 1) as f64;
        let points_mel: Vec<f64> = (0..n_mels + 2).map(|i| lo + step * i as f64).collect();
        if points_mel.windows(2).any(|w| w[1] <= w[0]) {
            return Err(DspError::InvalidRange(format!(
                "{n_mels} filters between {} Hz and {} Hz",
                cfg.fmin_hz, cfg.fmax_hz
            )));
        }

        let bin_mels: Vec<f64> = (0..n_bins)
            .map(|k| hz_to_mel(k as f64 * sample_rate_hz as f64 / cfg.fft_size as f64))
            .collect();

        let mut bank = Self {
            n_mels,
            n_bins,
            points_mel,
            weights: vec![0.0; n_mels * n_bins],
            spans: Vec::with_capacity(n_mels),
        };
        for m in 0..n_mels {
            let row = &mut bank.weights[m * n_bins..(m + 1) * n_bins];
            let mut first = n_bins;
            let mut last = 0;
            for (k, &mel) in bin_mels.iter().enumerate() {
                let w = triangle(&bank.points_mel, m, mel);
                if w > 0.0 {
                    row[k] = w;
                    first = first.min(k);
                    last = k + 1;
                }
            }
            if first >= last {
                return Err(DspError::InvalidRange(format!(
                    "filter {m} covers no FFT bin; reduce n_mels or widen the range"
                )));
            }
            bank.spans.push((first, last));
        }
        Ok(bank)
    }

    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    /// The `n_mels + 2` edge points in Mel.
    pub fn points_mel(&self) -> &[f64] {
        &self.points_mel
    }

    /// Apex of filter `m`, in Mel.
    pub fn center_mel(&self, m: usize) -> f64 {
        self.points_mel[m + 1]
    }

    pub fn center_hz(&self, m: usize) -> f64 {
        mel_to_hz(self.center_mel(m))
    }

    pub fn row(&self, m: usize) -> &[f64] {
        &self.weights[m * self.n_bins..(m + 1) * self.n_bins]
    }

    /// Height of filter `m` at an arbitrary Mel coordinate.
    pub fn weight_at_mel(&self, m: usize, mel: f64) -> f64 {
        triangle(&self.points_mel, m, mel)
    }

    /// Mel-band energies of one power spectrum.
    pub fn apply(&self, power: &[f64], out: &mut [f64]) {
        debug_assert_eq!(power.len(), self.n_bins);
        for (m, o) in out.iter_mut().enumerate().take(self.n_mels) {
            let (s, e) = self.spans[m];
            let row = self.row(m);
            *o = row[s..e].iter().zip(&power[s..e]).map(|(w, p)| w * p).sum();
        }
    }
}

fn triangle(points: &[f64], m: usize, mel: f64) -> f64 {
    let (left, center, right) = (points[m], points[m + 1], points[m + 2]);
    if mel <= left || mel >= right {
        0.0
    } else if mel <= center {
        (mel - left) / (center - left)
    } else {
        (right - mel) / (right - center)
    }
}
