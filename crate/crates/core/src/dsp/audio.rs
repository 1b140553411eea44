//! Audio ingestion: WAV decoding, downmixing and windowed-sinc resampling.

use std::f64::consts::PI;
use std::path::Path;

use crate::error::{Error, Result};

/// Analysis sample rate every clip is brought to on ingestion.
pub const SAMPLE_RATE: u32 = 22050;

/// Mono audio at a known sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioClip {
    /// Wraps samples, rejecting non-finite values and clamping to [-1, 1].
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Domain("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::Domain(format!("non-finite sample at index {i}")));
        }
        let samples = samples.into_iter().map(|s| s.clamp(-1.0, 1.0)).collect();
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Returns the clip at the analysis rate, resampling if needed.
    pub fn to_analysis_rate(&self) -> Result<AudioClip> {
        if self.sample_rate == SAMPLE_RATE {
            return Ok(self.clone());
        }
        AudioClip::new(
            resample(&self.samples, self.sample_rate, SAMPLE_RATE),
            SAMPLE_RATE,
        )
    }

    /// Sub-range `[start, start + len)`, zero-padded past the end.
    pub fn excerpt(&self, start: usize, len: usize) -> AudioClip {
        let mut out = vec![0.0; len];
        if start < self.samples.len() {
            let end = (start + len).min(self.samples.len());
            out[..end - start].copy_from_slice(&self.samples[start..end]);
        }
        AudioClip {
            samples: out,
            sample_rate: self.sample_rate,
        }
    }
}

/// Reads a PCM (16/24/32-bit int) or float WAV file, downmixes to mono by
/// averaging channels, and resamples to [`SAMPLE_RATE`].
pub fn read_wav(path: &Path) -> Result<AudioClip> {
    let audio_err = |msg: String| Error::Audio {
        path: path.to_path_buf(),
        msg,
    };
    let mut reader = hound::WavReader::open(path).map_err(|e| audio_err(e.to_string()))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(audio_err("zero channels".into()));
    }
    let interleaved: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| audio_err(e.to_string()))?,
        hound::SampleFormat::Int => {
            let scale = (1u64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| audio_err(e.to_string()))?
        }
    };
    let mono: Vec<f64> = interleaved
        .chunks_exact(channels)
        .map(|frame| frame.iter().sum::<f64>() / channels as f64)
        .collect();
    AudioClip::new(mono, spec.sample_rate)
        .map_err(|e| audio_err(e.to_string()))?
        .to_analysis_rate()
}

/// Writes a mono 16-bit PCM WAV.
pub fn write_wav(path: &Path, clip: &AudioClip) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let to_err = |e: hound::Error| Error::Audio {
        path: path.to_path_buf(),
        msg: e.to_string(),
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(to_err)?;
    for &s in &clip.samples {
        let v = (s * 32767.0).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(v).map_err(to_err)?;
    }
    writer.finalize().map_err(to_err)
}

const SINC_ZERO_CROSSINGS: f64 = 32.0;

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Band-limited resampling with a Blackman-windowed sinc kernel.
///
/// The cutoff sits at the lower of the two Nyquist frequencies; output length
/// is `ceil(len * to / from)`.
pub fn resample(samples: &[f64], from: u32, to: u32) -> Vec<f64> {
    if from == to || samples.is_empty() {
        return samples.to_vec();
    }
    let ratio = to as f64 / from as f64;
    let cutoff = ratio.min(1.0);
    let half_width = SINC_ZERO_CROSSINGS / cutoff;
    let out_len = (samples.len() as f64 * ratio).ceil() as usize;
    let n = samples.len() as isize;
    (0..out_len)
        .map(|i| {
            let x = i as f64 / ratio;
            let lo = ((x - half_width).ceil() as isize).max(0);
            let hi = ((x + half_width).floor() as isize).min(n - 1);
            let mut acc = 0.0;
            for k in lo..=hi {
                let d = x - k as f64;
                let w = blackman(d / half_width);
                acc += samples[k as usize] * cutoff * sinc(cutoff * d) * w;
            }
            acc
        })
        .collect()
}

/// Halves the sample rate: low-pass at the new Nyquist, keep even samples.
pub fn decimate2(samples: &[f64]) -> Vec<f64> {
    let half_width = 2.0 * SINC_ZERO_CROSSINGS;
    let taps: Vec<f64> = (-(half_width as isize)..=half_width as isize)
        .map(|k| {
            let d = k as f64;
            0.5 * sinc(0.5 * d) * blackman(d / half_width)
        })
        .collect();
    let center = half_width as isize;
    let n = samples.len() as isize;
    (0..samples.len().div_ceil(2))
        .map(|i| {
            let pos = 2 * i as isize;
            let mut acc = 0.0;
            for (j, &t) in taps.iter().enumerate() {
                let k = pos + j as isize - center;
                if k >= 0 && k < n {
                    acc += samples[k as usize] * t;
                }
            }
            acc
        })
        .collect()
}

/// Blackman window on [-1, 1], zero outside.
fn blackman(u: f64) -> f64 {
    if u.abs() >= 1.0 {
        return 0.0;
    }
    let phase = PI * (u + 1.0);
    0.42 - 0.5 * phase.cos() + 0.08 * (2.0 * phase).cos()
}
