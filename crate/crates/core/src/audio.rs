//! Audio ingestion: RIFF/WAVE decoding, resampling and peak normalization.
//!
//! Everything downstream works on a mono [`AudioBuffer`] at
//! [`CANONICAL_RATE_HZ`]. Resampling is linear interpolation, which images
//! content above the lower Nyquist frequency back into the band; that error is
//! tolerated because the features only need the spectral envelope.

use thiserror::Error;

/// Sample rate every recording is brought to before feature extraction.
pub const CANONICAL_RATE_HZ: u32 = 16_000;

const WAVE_FORMAT_PCM: u16 = 0x0001;
const WAVE_FORMAT_IEEE_FLOAT: u16 = 0x0003;
const WAVE_FORMAT_EXTENSIBLE: u16 = 0xFFFE;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AudioError {
    #[error("malformed WAV header: {0}")]
    MalformedHeader(String),
    #[error("unsupported encoding: {0}")]
    UnsupportedEncoding(String),
    #[error("audio contains no sample frames")]
    EmptyAudio,
    #[error("invalid sample rate {0}")]
    InvalidRate(u32),
}

/// Decoded mono PCM at a known rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    pub samples: Vec<f64>,
    pub sample_rate_hz: u32,
    pub source_id: String,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32, source_id: impl Into<String>) -> Self {
        Self {
            samples,
            sample_rate_hz,
            source_id: source_id.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0f64, |m, s| m.max(s.abs()))
    }
}

struct FmtChunk {
    format: u16,
    channels: u16,
    sample_rate: u32,
    bits: u16,
}

fn read_u16(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn read_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

fn parse_fmt(body: &[u8]) -> Result<FmtChunk, AudioError> {
    if body.len() < 16 {
        return Err(AudioError::MalformedHeader("fmt chunk shorter than 16 bytes".into()));
    }
    let mut format = read_u16(body, 0);
    let channels = read_u16(body, 2);
    let sample_rate = read_u32(body, 4);
    let bits = read_u16(body, 14);
    if format == WAVE_FORMAT_EXTENSIBLE {
        // cbSize(2) validBits(2) channelMask(4) then the sub-format GUID.
        if body.len() < 26 {
            return Err(AudioError::MalformedHeader("truncated WAVE_FORMAT_EXTENSIBLE".into()));
        }
        format = read_u16(body, 24);
    }
    Ok(FmtChunk {
        format,
        channels,
        sample_rate,
        bits,
    })
}

/// Decodes a RIFF/WAVE container holding 16-bit PCM or 32-bit IEEE float,
/// mono or stereo. Stereo is averaged down to mono.
pub fn decode_wav(bytes: &[u8], source_id: &str) -> Result<AudioBuffer, AudioError> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(AudioError::MalformedHeader("missing RIFF/WAVE signature".into()));
    }

    let mut fmt: Option<FmtChunk> = None;
    let mut data: Option<&[u8]> = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = read_u32(bytes, pos + 4) as usize;
        let body_start = pos + 8;
        let body_end = body_start.saturating_add(size).min(bytes.len());
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => fmt = Some(parse_fmt(body)?),
            // A data chunk whose declared size overruns the file is clipped to
            // what is actually present; only whole frames are decoded below.
            b"data" => data = Some(body),
            _ => {}
        }
        if data.is_some() && fmt.is_some() {
            break;
        }
        pos = body_start.saturating_add(size + (size & 1));
    }

    let fmt = fmt.ok_or_else(|| AudioError::MalformedHeader("no fmt chunk".into()))?;
    let data = data.ok_or_else(|| AudioError::MalformedHeader("no data chunk".into()))?;

    if fmt.sample_rate == 0 {
        return Err(AudioError::MalformedHeader("sample rate is zero".into()));
    }
    if fmt.channels == 0 || fmt.channels > 2 {
        return Err(AudioError::UnsupportedEncoding(format!(
            "{} channels",
            fmt.channels
        )));
    }
    let channels = fmt.channels as usize;

    let decoded: Vec<f64> = match (fmt.format, fmt.bits) {
        (WAVE_FORMAT_PCM, 16) => data
            .chunks_exact(2)
            .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / 32768.0)
            .collect(),
        (WAVE_FORMAT_IEEE_FLOAT, 32) => data
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect(),
        (f, b) => {
            return Err(AudioError::UnsupportedEncoding(format!(
                "format tag {f:#06x} with {b} bits per sample"
            )))
        }
    };

    let samples: Vec<f64> = decoded
        .chunks_exact(channels)
        .map(|frame| frame.iter().sum::<f64>() / channels as f64)
        .collect();
    if samples.is_empty() {
        return Err(AudioError::EmptyAudio);
    }
    Ok(AudioBuffer::new(samples, fmt.sample_rate, source_id))
}

fn wav_bytes(format: u16, channels: u16, sample_rate: u32, bits: u16, payload: &[u8]) -> Vec<u8> {
    let block_align = channels * bits / 8;
    let mut out = Vec::with_capacity(44 + payload.len());
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + payload.len() as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&format.to_le_bytes());
    out.extend_from_slice(&channels.to_le_bytes());
    out.extend_from_slice(&sample_rate.to_le_bytes());
    out.extend_from_slice(&(sample_rate * block_align as u32).to_le_bytes());
    out.extend_from_slice(&block_align.to_le_bytes());
    out.extend_from_slice(&bits.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(payload);
    out
}

/// Encodes interleaved 16-bit PCM frames as a WAV file.
pub fn encode_wav_pcm16(interleaved: &[i16], channels: u16, sample_rate: u32) -> Vec<u8> {
    let payload: Vec<u8> = interleaved.iter().flat_map(|s| s.to_le_bytes()).collect();
    wav_bytes(WAVE_FORMAT_PCM, channels, sample_rate, 16, &payload)
}

/// Encodes interleaved 32-bit float frames as a WAV file.
pub fn encode_wav_f32(interleaved: &[f32], channels: u16, sample_rate: u32) -> Vec<u8> {
    let payload: Vec<u8> = interleaved.iter().flat_map(|s| s.to_le_bytes()).collect();
    wav_bytes(WAVE_FORMAT_IEEE_FLOAT, channels, sample_rate, 32, &payload)
}

/// Linear-interpolation resampling to `target_hz`.
///
/// Output length is `round(len * target / source)`. When the rates already
/// match the buffer is returned unchanged. There is no anti-alias filter, so
/// content above the lower Nyquist folds back and upsampling leaves imaging
/// above the source band; both are small for speech-band features.
pub fn resample(buf: &AudioBuffer, target_hz: u32) -> Result<AudioBuffer, AudioError> {
    if target_hz == 0 {
        return Err(AudioError::InvalidRate(target_hz));
    }
    if buf.sample_rate_hz == 0 {
        return Err(AudioError::InvalidRate(buf.sample_rate_hz));
    }
    if buf.is_empty() {
        return Err(AudioError::EmptyAudio);
    }
    if buf.sample_rate_hz == target_hz {
        return Ok(buf.clone());
    }

    let n_in = buf.len();
    let n_out = ((n_in as f64 * target_hz as f64 / buf.sample_rate_hz as f64).round() as usize).max(1);
    let step = buf.sample_rate_hz as f64 / target_hz as f64;
    let last = n_in - 1;
    let samples = (0..n_out)
        .map(|i| {
            let t = i as f64 * step;
            let lo = (t.floor() as usize).min(last);
            let hi = (lo + 1).min(last);
            let frac = t - lo as f64;
            let (a, b) = (buf.samples[lo], buf.samples[hi]);
            if frac == 0.0 {
                a
            } else {
                a + (b - a) * frac
            }
        })
        .collect();
    Ok(AudioBuffer::new(samples, target_hz, buf.source_id.clone()))
}

/// Scales the buffer so that its largest absolute sample is exactly 1.0.
/// Silence is returned unchanged.
pub fn peak_normalize(buf: &AudioBuffer) -> AudioBuffer {
    let peak = buf.peak();
    if peak == 0.0 || !peak.is_finite() {
        return buf.clone();
    }
    let samples = buf
        .samples
        .iter()
        .map(|&s| {
            // Division (not multiplication by 1/peak) keeps the peak sample at exactly ±1.
            let v = s / peak;
            v.clamp(-1.0, 1.0)
        })
        .collect();
    AudioBuffer::new(samples, buf.sample_rate_hz, buf.source_id.clone())
}

/// Decode, resample to the canonical rate and peak-normalize.
pub fn load_canonical(bytes: &[u8], source_id: &str) -> Result<AudioBuffer, AudioError> {
    let decoded = decode_wav(bytes, source_id)?;
    let resampled = resample(&decoded, CANONICAL_RATE_HZ)?;
    Ok(peak_normalize(&resampled))
}
