//! Constant-Q chroma and CENS.

use std::f64::consts::PI;

use super::audio::decimate2;
use super::{AudioClip, BinKind, TimeFrequencyMap, HOP, WINDOW};
use crate::error::{Error, Result};

pub const BINS_PER_OCTAVE: usize = 36;
pub const N_OCTAVES: usize = 6;
pub const N_CHROMA: usize = 12;

/// C2 in twelve-tone equal temperament with A4 = 440 Hz.
pub fn cqt_fmin() -> f64 {
    440.0 * 2f64.powf(-33.0 / 12.0)
}

/// Center frequency of constant-Q bin `k` (bin 0 = C2).
pub fn cqt_frequency(k: usize) -> f64 {
    cqt_fmin() * 2f64.powf(k as f64 / BINS_PER_OCTAVE as f64)
}

/// Pitch class (C = 0) owning constant-Q bin `k`: the three bins nearest a
/// semitone map to it.
pub fn bin_pitch_class(k: usize) -> usize {
    let per_semitone = BINS_PER_OCTAVE / N_CHROMA;
    ((k + per_semitone / 2) / per_semitone) % N_CHROMA
}

struct Kernel {
    re: Vec<f64>,
    im: Vec<f64>,
}

impl Kernel {
    fn new(freq: f64, sample_rate: f64) -> Self {
        let q = 1.0 / (2f64.powf(1.0 / BINS_PER_OCTAVE as f64) - 1.0);
        let len = (q * sample_rate / freq).ceil() as usize | 1;
        let half = (len / 2) as f64;
        let win: Vec<f64> = (0..len)
            .map(|i| 0.5 - 0.5 * (2.0 * PI * (i as f64 + 0.5) / len as f64).cos())
            .collect();
        let norm: f64 = win.iter().sum();
        let (mut re, mut im) = (Vec::with_capacity(len), Vec::with_capacity(len));
        for (i, w) in win.iter().enumerate() {
            let ph = -2.0 * PI * freq * (i as f64 - half) / sample_rate;
            re.push(w / norm * ph.cos());
            im.push(w / norm * ph.sin());
        }
        Self { re, im }
    }

    fn magnitude_at(&self, x: &[f64], center: isize) -> f64 {
        let half = (self.re.len() / 2) as isize;
        let start = center - half;
        let lo = (-start).max(0) as usize;
        let hi = ((x.len() as isize - start).min(self.re.len() as isize)).max(0) as usize;
        let (mut re, mut im) = (0.0, 0.0);
        for i in lo..hi {
            let v = x[(start + i as isize) as usize];
            re += v * self.re[i];
            im += v * self.im[i];
        }
        (re * re + im * im).sqrt()
    }
}

/// Constant-Q magnitudes, `216 x frames`, on the shared STFT frame grid.
///
/// Computed octave by octave from the top, halving the sample rate before
/// each lower octave so kernel lengths stay bounded.
pub fn cqt_magnitudes(clip: &AudioClip) -> Result<TimeFrequencyMap> {
    if clip.len() < WINDOW {
        return Err(Error::InputTooShort {
            len: clip.len(),
            needed: WINDOW,
        });
    }
    let frames = 1 + clip.len() / HOP;
    let n_bins = BINS_PER_OCTAVE * N_OCTAVES;
    let frame_rate = clip.sample_rate() as f64 / HOP as f64;
    let mut out = TimeFrequencyMap::zeros(n_bins, frames, BinKind::LinearFreq, frame_rate);
    let mut signal = clip.samples().to_vec();
    let mut sr = clip.sample_rate() as f64;
    let mut hop = HOP;
    for level in 0..N_OCTAVES {
        if level > 0 {
            signal = decimate2(&signal);
            sr /= 2.0;
            hop /= 2;
        }
        let octave = N_OCTAVES - 1 - level;
        for j in 0..BINS_PER_OCTAVE {
            let k = octave * BINS_PER_OCTAVE + j;
            let kernel = Kernel::new(cqt_frequency(k), sr);
            for t in 0..frames {
                out.set(k, t, kernel.magnitude_at(&signal, (t * hop) as isize));
            }
        }
    }
    Ok(out)
}

/// 12-bin chroma summed from a 36-bins-per-octave constant-Q analysis over
/// six octaves starting at C2. Rows are pitch classes C..B.
pub fn cqt_chroma(clip: &AudioClip) -> Result<TimeFrequencyMap> {
    let cqt = cqt_magnitudes(clip)?;
    let mut chroma =
        TimeFrequencyMap::zeros(N_CHROMA, cqt.frames(), BinKind::Chroma, cqt.frame_rate());
    for k in 0..cqt.bins() {
        let pc = bin_pitch_class(k);
        for t in 0..cqt.frames() {
            let v = chroma.get(pc, t) + cqt.get(k, t);
            chroma.set(pc, t, v);
        }
    }
    Ok(chroma)
}

pub const CENS_THRESHOLDS: [f64; 4] = [0.05, 0.1, 0.2, 0.4];
pub const CENS_SMOOTHING: usize = 41;

/// Chroma energy normalized statistics: l1-normalize, quantize, smooth each
/// row with a Hann window, l2-normalize. All-zero frames stay zero.
pub fn cens(chroma: &TimeFrequencyMap) -> TimeFrequencyMap {
    let (bins, frames) = (chroma.bins(), chroma.frames());
    let mut quant = TimeFrequencyMap::zeros(bins, frames, BinKind::Chroma, chroma.frame_rate());
    for t in 0..frames {
        let l1: f64 = (0..bins).map(|b| chroma.get(b, t).abs()).sum();
        if l1 <= 0.0 {
            continue;
        }
        for b in 0..bins {
            let v = chroma.get(b, t).abs() / l1;
            let level = CENS_THRESHOLDS.iter().filter(|&&th| v >= th).count();
            quant.set(b, t, level as f64);
        }
    }

    // Symmetric Hann of length 43 with the zero endpoints dropped.
    let win: Vec<f64> = (1..=CENS_SMOOTHING)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / (CENS_SMOOTHING + 1) as f64).cos())
        .collect();
    let half = (CENS_SMOOTHING / 2) as isize;
    let mut smooth = TimeFrequencyMap::zeros(bins, frames, BinKind::Chroma, chroma.frame_rate());
    for b in 0..bins {
        let row = quant.row(b);
        for t in 0..frames {
            let mut acc = 0.0;
            for (i, w) in win.iter().enumerate() {
                let src = t as isize + i as isize - half;
                if src >= 0 && (src as usize) < frames {
                    acc += w * row[src as usize];
                }
            }
            smooth.set(b, t, acc);
        }
    }

    for t in 0..frames {
        let l2 = (0..bins)
            .map(|b| smooth.get(b, t).powi(2))
            .sum::<f64>()
            .sqrt();
        if l2 > 0.0 {
            for b in 0..bins {
                let v = smooth.get(b, t) / l2;
                smooth.set(b, t, v);
            }
        }
    }
    smooth
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::SAMPLE_RATE;
    use proptest::prelude::*;

    fn tones(freqs: &[f64], secs: f64) -> AudioClip {
        let n = (SAMPLE_RATE as f64 * secs) as usize;
        let s = (0..n)
            .map(|i| {
                let t = i as f64 / SAMPLE_RATE as f64;
                freqs.iter().map(|f| 0.25 * (2.0 * PI * f * t).sin()).sum()
            })
            .collect();
        AudioClip::new(s, SAMPLE_RATE).unwrap()
    }

    fn argmax(v: &[f64]) -> usize {
        v.iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0
    }

    /// Oracle: pitch class of a frequency in 12-TET, A4 = 440.
    fn pitch_class_of(freq: f64) -> usize {
        let midi = 69.0 + 12.0 * (freq / 440.0).log2();
        (midi.round() as i64).rem_euclid(12) as usize
    }

    #[test]
    fn bin_mapping_matches_center_frequency() {
        for k in 0..BINS_PER_OCTAVE * N_OCTAVES {
            assert_eq!(
                bin_pitch_class(k),
                pitch_class_of(cqt_frequency(k)),
                "bin {k}"
            );
        }
    }

    #[test]
    fn a440_maps_to_class_9() {
        assert_eq!(pitch_class_of(440.0), 9);
        let chroma = cqt_chroma(&tones(&[440.0], 1.0)).unwrap();
        let hits = (0..chroma.frames())
            .filter(|&t| argmax(&chroma.column(t)) == 9)
            .count();
        assert!(hits as f64 >= 0.95 * chroma.frames() as f64, "{hits}");
    }

    #[test]
    fn c_major_triad_top_three() {
        let c4 = 261.6256;
        let freqs = [c4, c4 * 2f64.powf(4.0 / 12.0), c4 * 2f64.powf(7.0 / 12.0)];
        let expected: Vec<usize> = {
            let mut v: Vec<usize> = freqs.iter().map(|&f| pitch_class_of(f)).collect();
            v.sort();
            v
        };
        assert_eq!(expected, vec![0, 4, 7]);
        let chroma = cqt_chroma(&tones(&freqs, 1.0)).unwrap();
        let avg = chroma.time_average();
        let mut idx: Vec<usize> = (0..12).collect();
        idx.sort_by(|&a, &b| avg[b].total_cmp(&avg[a]));
        let mut top: Vec<usize> = idx[..3].to_vec();
        top.sort();
        assert_eq!(top, expected);
    }

    #[test]
    fn silence_is_zero() {
        let chroma = cqt_chroma(&tones(&[], 1.0)).unwrap();
        assert_eq!(chroma.frames(), 1 + 22050 / HOP);
        assert!(chroma.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cens_constant_vector() {
        let chroma = TimeFrequencyMap::new(12, 50, vec![1.0; 600], BinKind::Chroma, 1.0);
        let out = cens(&chroma);
        for v in out.values() {
            assert!((v - 1.0 / 12f64.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn cens_zero_frames_pass_through() {
        let chroma = TimeFrequencyMap::zeros(12, 60, BinKind::Chroma, 1.0);
        assert!(cens(&chroma).values().iter().all(|&v| v == 0.0));
    }

    fn random_chroma() -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(0.0f64..1.0, 12 * 30)
    }

    proptest! {
        #[test]
        fn cens_unit_or_zero(vals in random_chroma()) {
            let out = cens(&TimeFrequencyMap::new(12, 30, vals, BinKind::Chroma, 1.0));
            for t in 0..30 {
                let n = out.column(t).iter().map(|v| v * v).sum::<f64>().sqrt();
                prop_assert!(n.abs() < 1e-6 || (n - 1.0).abs() < 1e-6);
            }
        }

        #[test]
        fn cens_shift_equivariant(vals in random_chroma(), k in 0usize..12) {
            let input = TimeFrequencyMap::new(12, 30, vals.clone(), BinKind::Chroma, 1.0);
            let mut shifted = TimeFrequencyMap::zeros(12, 30, BinKind::Chroma, 1.0);
            for b in 0..12 {
                for t in 0..30 {
                    shifted.set((b + k) % 12, t, input.get(b, t));
                }
            }
            let a = cens(&input);
            let b = cens(&shifted);
            for pc in 0..12 {
                for t in 0..30 {
                    prop_assert!((a.get(pc, t) - b.get((pc + k) % 12, t)).abs() < 1e-12);
                }
            }
        }
    }
}
