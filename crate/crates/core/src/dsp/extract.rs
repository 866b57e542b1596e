use std::f64::consts::PI;

use rustfft::num_complex::Complex;

use super::{frame_and_window, DspConfig, DspError, FeatureKind, FeatureMatrix, MelFilterbank, Spectrum};
use crate::audio::AudioBuffer;

/// Orthonormal DCT-II basis restricted to the first `n_out` coefficients,
/// row-major `n_out x n_in`.
pub fn dct_ii_table(n_in: usize, n_out: usize) -> Vec<f64> {
    let mut table = Vec::with_capacity(n_in * n_out);
    for k in 0..n_out {
        let scale = if k == 0 {
            (1.0 / n_in as f64).sqrt()
        } else {
            (2.0 / n_in as f64).sqrt()
        };
        for n in 0..n_in {
            table.push(scale * (PI * k as f64 * (2 * n + 1) as f64 / (2 * n_in) as f64).cos());
        }
    }
    table
}

/// Holds everything that depends only on the configuration (FFT plan,
/// filterbank, DCT table) so it can be built once and shared across workers.
#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    cfg: DspConfig,
    sample_rate_hz: u32,
    spectrum: Spectrum,
    bank: MelFilterbank,
    dct: Vec<f64>,
    hash: [u8; 32],
}

impl FeatureExtractor {
    pub fn new(cfg: &DspConfig, sample_rate_hz: u32) -> Result<Self, DspError> {
        let bank = MelFilterbank::new(cfg, sample_rate_hz)?;
        Ok(Self {
            cfg: cfg.clone(),
            sample_rate_hz,
            spectrum: Spectrum::new(cfg.fft_size),
            dct: dct_ii_table(cfg.n_mels, cfg.n_mfcc),
            hash: cfg.hash(),
            bank,
        })
    }

    pub fn config(&self) -> &DspConfig {
        &self.cfg
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.bank
    }

    fn check(&self, buf: &AudioBuffer) -> Result<(), DspError> {
        if buf.sample_rate_hz != self.sample_rate_hz {
            return Err(DspError::InvalidConfig(format!(
                "extractor built for {} Hz, buffer is {} Hz",
                self.sample_rate_hz, buf.sample_rate_hz
            )));
        }
        if buf.samples.iter().any(|s| !s.is_finite()) {
            return Err(DspError::NonFinite("audio samples"));
        }
        Ok(())
    }

    /// Log-Mel energies of one already-windowed frame.
    pub fn log_mel_of_frame(&self, windowed: &[f64]) -> Vec<f64> {
        let mut scratch = Vec::with_capacity(self.cfg.fft_size);
        let mut power = vec![0.0; self.cfg.n_bins()];
        let mut out = vec![0.0; self.cfg.n_mels];
        self.log_mel_into(windowed, &mut scratch, &mut power, &mut out);
        out
    }

    fn log_mel_into(
        &self,
        windowed: &[f64],
        scratch: &mut Vec<Complex<f64>>,
        power: &mut [f64],
        out: &mut [f64],
    ) {
        self.spectrum.power_into(windowed, scratch, power);
        self.bank.apply(power, out);
        for e in out.iter_mut() {
            *e = (*e + self.cfg.log_floor).ln();
        }
    }

    /// Cepstral coefficients `0..n_mfcc` of a log-Mel vector.
    pub fn dct(&self, log_mel: &[f64]) -> Vec<f64> {
        let n = self.cfg.n_mels;
        self.dct
            .chunks_exact(n)
            .map(|basis| basis.iter().zip(log_mel).map(|(b, x)| b * x).sum())
            .collect()
    }

    pub fn mfcc_of_frame(&self, windowed: &[f64]) -> Vec<f64> {
        self.dct(&self.log_mel_of_frame(windowed))
    }

    pub fn log_mel(&self, buf: &AudioBuffer) -> Result<FeatureMatrix, DspError> {
        self.check(buf)?;
        let frames = frame_and_window(buf, &self.cfg)?;
        let n_mels = self.cfg.n_mels;
        let mut data = vec![0.0; frames.len() * n_mels];
        let mut scratch = Vec::with_capacity(self.cfg.fft_size);
        let mut power = vec![0.0; self.cfg.n_bins()];
        for (frame, row) in frames.iter().zip(data.chunks_exact_mut(n_mels)) {
            self.log_mel_into(frame, &mut scratch, &mut power, row);
        }
        FeatureMatrix::new(data, frames.len(), n_mels, FeatureKind::LogMel, self.hash)
    }

    pub fn mfcc(&self, buf: &AudioBuffer) -> Result<FeatureMatrix, DspError> {
        let log_mel = self.log_mel(buf)?;
        let data: Vec<f64> = log_mel.rows().flat_map(|row| self.dct(row)).collect();
        FeatureMatrix::new(
            data,
            log_mel.n_rows(),
            self.cfg.n_mfcc,
            FeatureKind::Mfcc,
            self.hash,
        )
    }
}

/// Natural-log Mel spectrogram, one row per frame.
pub fn log_mel_spectrogram(buf: &AudioBuffer, cfg: &DspConfig) -> Result<FeatureMatrix, DspError> {
    FeatureExtractor::new(cfg, buf.sample_rate_hz)?.log_mel(buf)
}

/// MFCC sequence: orthonormal DCT-II of each log-Mel frame, first `n_mfcc` kept.
pub fn mfcc(buf: &AudioBuffer, cfg: &DspConfig) -> Result<FeatureMatrix, DspError> {
    FeatureExtractor::new(cfg, buf.sample_rate_hz)?.mfcc(buf)
}
