use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::DspError;

/// Analysis hyperparameters. The defaults are 25 ms frames with a 10 ms hop
/// at 16 kHz, 40 Mel bands and 13 cepstral coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DspConfig {
    pub frame_len: usize,
    pub hop_len: usize,
    pub fft_size: usize,
    pub n_mels: usize,
    pub n_mfcc: usize,
    pub fmin_hz: f64,
    pub fmax_hz: f64,
    pub preemphasis: f64,
    pub log_floor: f64,
}

impl Default for DspConfig {
    fn default() -> Self {
        Self {
            frame_len: 400,
            hop_len: 160,
            fft_size: 512,
            n_mels: 40,
            n_mfcc: 13,
            fmin_hz: 0.0,
            fmax_hz: 8000.0,
            preemphasis: 0.97,
            log_floor: 1e-10,
        }
    }
}

impl DspConfig {
    /// Checks the internal invariants, and the Mel range against `sample_rate_hz`.
    pub fn validate(&self, sample_rate_hz: u32) -> Result<(), DspError> {
        let bad = |msg: String| Err(DspError::InvalidConfig(msg));
        if self.hop_len == 0 || self.hop_len > self.frame_len {
            return bad(format!(
                "hop_len {} must be in 1..=frame_len {}",
                self.hop_len, self.frame_len
            ));
        }
        if self.frame_len > self.fft_size {
            return bad(format!(
                "frame_len {} exceeds fft_size {}",
                self.frame_len, self.fft_size
            ));
        }
        if !self.fft_size.is_power_of_two() {
            return bad(format!("fft_size {} is not a power of two", self.fft_size));
        }
        if self.n_mels == 0 || self.n_mfcc == 0 || self.n_mfcc > self.n_mels {
            return bad(format!(
                "need 1 <= n_mfcc ({}) <= n_mels ({})",
                self.n_mfcc, self.n_mels
            ));
        }
        let nyquist = sample_rate_hz as f64 / 2.0;
        if !(self.fmin_hz >= 0.0 && self.fmin_hz < self.fmax_hz && self.fmax_hz <= nyquist) {
            return bad(format!(
                "need 0 <= fmin ({}) < fmax ({}) <= {nyquist}",
                self.fmin_hz, self.fmax_hz
            ));
        }
        if !(0.0..1.0).contains(&self.preemphasis) {
            return bad(format!("preemphasis {} not in [0, 1)", self.preemphasis));
        }
        if !(self.log_floor > 0.0 && self.log_floor.is_finite()) {
            return bad(format!("log_floor {} must be positive", self.log_floor));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form. Feature files carry it so matrices
    /// computed under different settings are never mixed.
    pub fn hash(&self) -> [u8; 32] {
        let canonical = serde_json::to_vec(self).expect("DspConfig serializes");
        Sha256::digest(&canonical).into()
    }

    pub fn hash_hex(&self) -> String {
        hex_string(&self.hash())
    }

    pub fn n_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Number of whole frames a signal of `len` samples yields.
    pub fn num_frames(&self, len: usize) -> usize {
        if len < self.frame_len {
            0
        } else {
            (len - self.frame_len) / self.hop_len + 1
        }
    }
}

pub(crate) fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid_at_16k() {
        DspConfig::default().validate(16_000).unwrap();
    }

    #[test]
    fn fmax_above_nyquist_rejected() {
        assert!(DspConfig::default().validate(8_000).is_err());
    }

    #[test]
    fn invariants_enforced() {
        let mut c = DspConfig::default();
        c.hop_len = 500;
        assert!(c.validate(16_000).is_err());
        let mut c = DspConfig::default();
        c.fft_size = 300;
        assert!(c.validate(16_000).is_err());
        let mut c = DspConfig::default();
        c.n_mfcc = 41;
        assert!(c.validate(16_000).is_err());
        let mut c = DspConfig::default();
        c.preemphasis = 1.0;
        assert!(c.validate(16_000).is_err());
    }

    #[test]
    fn hash_tracks_every_field() {
        let base = DspConfig::default();
        let mut other = base.clone();
        other.n_mels = 64;
        assert_ne!(base.hash(), other.hash());
        assert_eq!(base.hash(), DspConfig::default().hash());
        assert_eq!(base.hash_hex().len(), 64);
    }

    #[test]
    fn frame_count_arithmetic() {
        let c = DspConfig::default();
        assert_eq!(c.num_frames(16_000), 98);
        assert_eq!(c.num_frames(400), 1);
        assert_eq!(c.num_frames(399), 0);
        assert_eq!(c.num_frames(400 + 160 - 1), 1);
    }
}
