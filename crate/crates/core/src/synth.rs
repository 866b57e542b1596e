//! Seeded synthetic corpus: two tone classes buried in white noise, with
//! random questionnaire rows attached. Used for end-to-end checks where real
//! recordings are unavailable.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::audio::{encode_wav_pcm16, AudioBuffer};
use crate::metadata::{write_manifest, Gender, ParticipantRecord};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub n_recordings: usize,
    pub sample_rate_hz: u32,
    pub duration_secs: f64,
    /// Fundamental of the negative class.
    pub freq_negative_hz: f64,
    /// Fundamental of the positive class.
    pub freq_positive_hz: f64,
    /// Tone power over noise power, in dB.
    pub snr_db: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_recordings: 200,
            sample_rate_hz: 16_000,
            duration_secs: 1.0,
            freq_negative_hz: 220.0,
            freq_positive_hz: 440.0,
            snr_db: 10.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthRecording {
    pub record: ParticipantRecord,
    pub audio: AudioBuffer,
}

const SMOKING: [&str; 6] = ["never", "ex", "1-10", "11-20", "21+", "ltOnce"];
const MEDICAL: [&str; 7] = ["asthma", "hbp", "diabetes", "heart", "cancer", "copd", "longterm"];
const SYMPTOMS: [&str; 6] = ["drycough", "fever", "sorethroat", "smelltasteloss", "headache", "muscleache"];
const AGES: [&str; 7] = ["16-19", "20-29", "30-39", "40-49", "50-59", "60-69", "70-79"];

fn pick<R: Rng>(rng: &mut R, items: &[&str], p: f64) -> Vec<String> {
    items.iter().filter(|_| rng.random_bool(p)).map(|s| s.to_string()).collect()
}

/// Labels alternate negative/positive so the classes are balanced. Each
/// recording has its own participant.
pub fn generate(spec: &SynthSpec) -> Vec<SynthRecording> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_samples = (spec.duration_secs * f64::from(spec.sample_rate_hz)).round() as usize;
    let sr = f64::from(spec.sample_rate_hz);
    // A unit-amplitude sine has power 1/2.
    let noise_std = (0.5 / 10f64.powf(spec.snr_db / 10.0)).sqrt();
    let noise = Normal::new(0.0, noise_std).expect("finite std");
    (0..spec.n_recordings)
        .map(|i| {
            let label = (i % 2) as u8;
            let freq = if label == 1 { spec.freq_positive_hz } else { spec.freq_negative_hz };
            let phase = rng.random_range(0.0..2.0 * PI);
            let samples: Vec<f64> = (0..n_samples)
                .map(|t| (2.0 * PI * freq * t as f64 / sr + phase).sin() + noise.sample(&mut rng))
                .collect();
            let sample_id = format!("syn{i:04}");
            let record = ParticipantRecord {
                sample_id: sample_id.clone(),
                participant_id: format!("p{i:04}"),
                audio_path: format!("audio/{sample_id}.wav"),
                gender: [Gender::Female, Gender::Male, Gender::Other][rng.random_range(0..3)],
                age_field: AGES[rng.random_range(0..AGES.len())].to_string(),
                medical_history: pick(&mut rng, &MEDICAL, 0.15),
                smoking: SMOKING[rng.random_range(0..SMOKING.len())].to_string(),
                symptoms: pick(&mut rng, &SYMPTOMS, if label == 1 { 0.5 } else { 0.2 }),
                hospitalized: label == 1 && rng.random_bool(0.1),
                label,
            };
            SynthRecording {
                audio: AudioBuffer::new(samples, spec.sample_rate_hz, sample_id),
                record,
            }
        })
        .collect()
}

/// Writes `audio/<id>.wav` (16-bit PCM, peak scaled to 0.9 full scale) and
/// `manifest.csv` under `dir`.
pub fn write_corpus(dir: &Path, recordings: &[SynthRecording]) -> crate::Result<()> {
    let audio_dir = dir.join("audio");
    std::fs::create_dir_all(&audio_dir).map_err(|e| crate::Error::io(&audio_dir, e))?;
    for r in recordings {
        let peak = r.audio.peak().max(f64::MIN_POSITIVE);
        let pcm: Vec<i16> = r
            .audio
            .samples
            .iter()
            .map(|s| (s / peak * 0.9 * 32767.0).round() as i16)
            .collect();
        let path = dir.join(&r.record.audio_path);
        std::fs::write(&path, encode_wav_pcm16(&pcm, 1, r.audio.sample_rate_hz))
            .map_err(|e| crate::Error::io(&path, e))?;
    }
    let manifest = dir.join("manifest.csv");
    let file = std::fs::File::create(&manifest).map_err(|e| crate::Error::io(&manifest, e))?;
    let records: Vec<ParticipantRecord> = recordings.iter().map(|r| r.record.clone()).collect();
    write_manifest(file, &records)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_and_balanced() {
        let spec = SynthSpec {
            n_recordings: 10,
            ..SynthSpec::default()
        };
        let a = generate(&spec);
        let b = generate(&spec);
        assert_eq!(a.len(), 10);
        assert_eq!(a.iter().filter(|r| r.record.label == 1).count(), 5);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.audio.samples, y.audio.samples);
            assert_eq!(x.record, y.record);
        }
        assert_eq!(a[0].audio.len(), 16_000);
    }

    #[test]
    fn noise_level_matches_snr() {
        let spec = SynthSpec {
            n_recordings: 1,
            duration_secs: 4.0,
            ..SynthSpec::default()
        };
        let rec = &generate(&spec)[0];
        let power: f64 = rec.audio.samples.iter().map(|s| s * s).sum::<f64>() / rec.audio.len() as f64;
        // tone 0.5 + noise 0.05
        assert!((power - 0.55).abs() < 0.01, "{power}");
    }
}
