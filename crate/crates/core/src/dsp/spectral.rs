use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{AudioClip, BinKind, TimeFrequencyMap};
use crate::error::{Error, Result};

/// 512 samples at 22050 Hz (23.2 ms).
pub const WINDOW: usize = 512;
/// 50 % overlap.
pub const HOP: usize = 256;
pub const N_MELS: usize = 128;

/// Periodic Hann window.
pub(crate) fn hann_periodic(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Magnitude STFT with centered frames (zero padding of `window / 2` on
/// both sides); yields `1 + len / hop` frames of `window / 2 + 1` bins.
pub fn compute_stft(clip: &AudioClip, window: usize, hop: usize) -> Result<TimeFrequencyMap> {
    if window == 0 || hop == 0 {
        return Err(Error::Domain("window and hop must be positive".into()));
    }
    let x = clip.samples();
    if x.len() < window {
        return Err(Error::InputTooShort {
            len: x.len(),
            needed: window,
        });
    }
    let frames = 1 + x.len() / hop;
    let n_bins = window / 2 + 1;
    let win = hann_periodic(window);
    let fft = FftPlanner::new().plan_fft_forward(window);
    let half = (window / 2) as isize;
    let mut buf = vec![Complex::new(0.0, 0.0); window];
    let mut out = TimeFrequencyMap::zeros(
        n_bins,
        frames,
        BinKind::LinearFreq,
        clip.sample_rate() as f64 / hop as f64,
    );
    for t in 0..frames {
        let start = (t * hop) as isize - half;
        for (i, slot) in buf.iter_mut().enumerate() {
            let k = start + i as isize;
            let v = if k >= 0 && (k as usize) < x.len() {
                x[k as usize] * win[i]
            } else {
                0.0
            };
            *slot = Complex::new(v, 0.0);
        }
        fft.process(&mut buf);
        for b in 0..n_bins {
            out.set(b, t, buf[b].norm());
        }
    }
    Ok(out)
}

fn hz_to_mel(hz: f64) -> f64 {
    const F_SP: f64 = 200.0 / 3.0;
    const MIN_LOG_HZ: f64 = 1000.0;
    let min_log_mel = MIN_LOG_HZ / F_SP;
    let logstep = 6.4f64.ln() / 27.0;
    if hz >= MIN_LOG_HZ {
        min_log_mel + (hz / MIN_LOG_HZ).ln() / logstep
    } else {
        hz / F_SP
    }
}

fn mel_to_hz(mel: f64) -> f64 {
    const F_SP: f64 = 200.0 / 3.0;
    const MIN_LOG_HZ: f64 = 1000.0;
    let min_log_mel = MIN_LOG_HZ / F_SP;
    let logstep = 6.4f64.ln() / 27.0;
    if mel >= min_log_mel {
        MIN_LOG_HZ * (logstep * (mel - min_log_mel)).exp()
    } else {
        F_SP * mel
    }
}

/// Center frequencies (Hz) of the `n_mels` triangular filters spanning
/// `[0, sr / 2]` on the Slaney mel scale.
pub fn mel_center_frequencies(n_mels: usize, sample_rate: f64) -> Vec<f64> {
    mel_edges(n_mels, sample_rate)[1..=n_mels].to_vec()
}

fn mel_edges(n_mels: usize, sample_rate: f64) -> Vec<f64> {
    let top = hz_to_mel(sample_rate / 2.0);
    (0..n_mels + 2)
        .map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64))
        .collect()
}

/// Slaney-normalized triangular filterbank, `n_mels x (n_fft / 2 + 1)`.
pub fn mel_filterbank(n_mels: usize, n_fft: usize, sample_rate: f64) -> Vec<Vec<f64>> {
    let edges = mel_edges(n_mels, sample_rate);
    let n_bins = n_fft / 2 + 1;
    (0..n_mels)
        .map(|m| {
            let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            let norm = 2.0 / (hi - lo);
            (0..n_bins)
                .map(|j| {
                    let f = j as f64 * sample_rate / n_fft as f64;
                    let up = (f - lo) / (mid - lo);
                    let down = (hi - f) / (hi - mid);
                    up.min(down).max(0.0) * norm
                })
                .collect()
        })
        .collect()
}

/// 128-band mel energies of the power spectrum.
pub fn mel_spectrogram(clip: &AudioClip) -> Result<TimeFrequencyMap> {
    let mag = compute_stft(clip, WINDOW, HOP)?;
    let fb = mel_filterbank(N_MELS, WINDOW, clip.sample_rate() as f64);
    let mut out = TimeFrequencyMap::zeros(N_MELS, mag.frames(), BinKind::Mel, mag.frame_rate());
    let power = mag.map_values(|v| v * v);
    for (m, weights) in fb.iter().enumerate() {
        // Each filter is supported on a narrow band.
        let support: Vec<(usize, f64)> = weights
            .iter()
            .enumerate()
            .filter(|(_, &w)| w > 0.0)
            .map(|(j, &w)| (j, w))
            .collect();
        for t in 0..mag.frames() {
            let e: f64 = support.iter().map(|&(j, w)| w * power.get(j, t)).sum();
            out.set(m, t, e);
        }
    }
    Ok(out)
}

/// Elementwise `log10(1 + 10 * s)`.
pub fn log_compress(s: &TimeFrequencyMap) -> Result<TimeFrequencyMap> {
    if let Some(v) = s.values().iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::Domain(format!(
            "log_compress needs nonnegative input, got {v}"
        )));
    }
    Ok(s.map_values(|v| (1.0 + 10.0 * v).log10()))
}

/// Global z-score over the whole map. A constant map becomes all zeros.
pub fn zscore(m: &TimeFrequencyMap) -> TimeFrequencyMap {
    let n = m.values().len().max(1) as f64;
    let mean = m.values().iter().sum::<f64>() / n;
    let var = m.values().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std <= 1e-12 * mean.abs().max(1.0) {
        return m.map_values(|_| 0.0);
    }
    m.map_values(|v| (v - mean) / std)
}
