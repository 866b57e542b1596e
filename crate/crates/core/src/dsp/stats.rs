use serde::{Deserialize, Serialize};

use super::DspError;
use crate::audio::AudioBuffer;

const MODE_BINS: usize = 256;

/// Whole-signal summary statistics of the raw samples.
///
/// Moments are population moments (divide by `n`); `kurtosis` is excess
/// kurtosis. Quartiles interpolate linearly between order statistics, and
/// `mode` is the center of the fullest of 256 equal-width bins over
/// `[min, max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatDescriptor {
    pub mean: f64,
    pub std: f64,
    pub max: f64,
    pub min: f64,
    pub median: f64,
    pub kurtosis: f64,
    pub q1: f64,
    pub q3: f64,
    pub iqr: f64,
    pub skewness: f64,
    pub mode: f64,
    /// Set when every sample is identical; skewness and kurtosis are then
    /// undefined and reported as 0.
    pub degenerate: bool,
}

impl StatDescriptor {
    pub const FIELDS: [&'static str; 11] = [
        "mean", "std", "max", "min", "median", "kurtosis", "q1", "q3", "iqr", "skewness", "mode",
    ];

    pub fn values(&self) -> [f64; 11] {
        [
            self.mean,
            self.std,
            self.max,
            self.min,
            self.median,
            self.kurtosis,
            self.q1,
            self.q3,
            self.iqr,
            self.skewness,
            self.mode,
        ]
    }
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

fn histogram_mode(samples: &[f64], min: f64, max: f64) -> f64 {
    let width = (max - min) / MODE_BINS as f64;
    if width <= 0.0 {
        return min;
    }
    let mut counts = [0usize; MODE_BINS];
    for &x in samples {
        let bin = (((x - min) / width) as usize).min(MODE_BINS - 1);
        counts[bin] += 1;
    }
    // First maximum wins on ties.
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    min + (best as f64 + 0.5) * width
}

pub fn stat_features(buf: &AudioBuffer) -> Result<StatDescriptor, DspError> {
    let x = &buf.samples;
    if x.len() < 2 {
        return Err(DspError::TooShort {
            needed: 2,
            got: x.len(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(DspError::NonFinite("audio samples"));
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &v in x {
        let d = v - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;

    let mut sorted = x.clone();
    sorted.sort_by(f64::total_cmp);
    let min = sorted[0];
    let max = sorted[sorted.len() - 1];
    let q1 = quantile(&sorted, 0.25);
    let median = quantile(&sorted, 0.5);
    let q3 = quantile(&sorted, 0.75);

    let degenerate = min == max || m2 == 0.0;
    // Summation can leave a constant signal with a mean one ulp off and a
    // tiny positive variance; report the exact values instead.
    let (mean, m2) = if min == max { (min, 0.0) } else { (mean, m2) };
    let (skewness, kurtosis) = if degenerate {
        log::warn!(
            "{}: constant signal, skewness and kurtosis undefined (reported as 0)",
            buf.source_id
        );
        (0.0, 0.0)
    } else {
        (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0)
    };

    Ok(StatDescriptor {
        mean,
        std: m2.sqrt(),
        max,
        min,
        median,
        kurtosis,
        q1,
        q3,
        iqr: q3 - q1,
        skewness,
        mode: histogram_mode(x, min, max),
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn buf(v: Vec<f64>) -> AudioBuffer {
        AudioBuffer::new(v, 16_000, "t")
    }

    #[test]
    fn interpolated_quartiles() {
        let s = stat_features(&buf(vec![1.0, 2.0, 3.0, 4.0])).unwrap();
        assert_eq!(s.mean, 2.5);
        assert_eq!(s.median, 2.5);
        assert_eq!(s.q1, 1.75);
        assert_eq!(s.q3, 3.25);
        assert_eq!(s.iqr, 1.5);
        assert_eq!((s.min, s.max), (1.0, 4.0));
        assert!((s.std - 1.25f64.sqrt()).abs() < 1e-15);
        assert!(!s.degenerate);
    }

    #[test]
    fn constant_signal_is_flagged() {
        let s = stat_features(&buf(vec![0.3; 10])).unwrap();
        assert!(s.degenerate);
        assert_eq!((s.skewness, s.kurtosis, s.std), (0.0, 0.0, 0.0));
        assert_eq!(s.mode, 0.3);
    }

    #[test]
    fn too_short() {
        assert!(matches!(stat_features(&buf(vec![1.0])), Err(DspError::TooShort { .. })));
    }

    #[test]
    fn mode_picks_dense_region() {
        let mut v = vec![0.0; 50];
        v.extend(std::iter::repeat_n(1.0, 10));
        v.push(-1.0);
        let s = stat_features(&buf(v)).unwrap();
        let width = 2.0 / 256.0;
        assert!((s.mode - 0.0).abs() <= width);
    }

    #[test]
    fn gaussian_excess_kurtosis_near_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let v: Vec<f64> = (0..1_000_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let s = stat_features(&buf(v)).unwrap();
        assert!(s.kurtosis.abs() < 0.05, "kurtosis {}", s.kurtosis);
        assert!(s.skewness.abs() < 0.05);
        assert!((s.std - 1.0).abs() < 0.01);
    }

    proptest! {
        #[test]
        fn ordering_invariants(v in proptest::collection::vec(-1.0f64..1.0, 2..300)) {
            let s = stat_features(&buf(v)).unwrap();
            prop_assert!(s.min <= s.q1 && s.q1 <= s.median && s.median <= s.q3 && s.q3 <= s.max);
            prop_assert_eq!(s.iqr, s.q3 - s.q1);
            prop_assert!(s.std >= 0.0);
            prop_assert!(s.mode >= s.min && s.mode <= s.max);
        }

        #[test]
        fn skewness_is_odd(v in proptest::collection::vec(-1.0f64..1.0, 3..300)) {
            let neg: Vec<f64> = v.iter().map(|x| -x).collect();
            let a = stat_features(&buf(v)).unwrap();
            let b = stat_features(&buf(neg)).unwrap();
            prop_assert!((a.skewness + b.skewness).abs() < 1e-9);
        }
    }
}
