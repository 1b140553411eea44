//! Onset novelty, local autocorrelation tempogram and its octave-folded form.

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{BinKind, TimeFrequencyMap};

pub const TEMPOGRAM_LAGS: usize = 384;
pub const CYCLIC_BINS: usize = 64;
/// Reference octave of the cyclic tempogram, `[60, 120)` bpm.
pub const CYCLIC_REF_BPM: f64 = 60.0;
/// Tempi outside this range are not folded.
pub const FOLD_MIN_BPM: f64 = 45.0;
pub const FOLD_MAX_BPM: f64 = 480.0;

/// Width in frames of the centred local mean removed from the novelty.
pub const NOVELTY_DETREND_FRAMES: usize = 43;

/// Half-wave rectified spectral flux summed over bands, minus its centred
/// local mean and rectified again; frame 0 is 0.
pub fn onset_novelty(mel_log: &TimeFrequencyMap) -> Vec<f64> {
    let frames = mel_log.frames();
    let mut flux = vec![0.0; frames];
    for (t, slot) in flux.iter_mut().enumerate().skip(1) {
        *slot = (0..mel_log.bins())
            .map(|b| (mel_log.get(b, t) - mel_log.get(b, t - 1)).max(0.0))
            .sum();
    }
    let mut prefix = vec![0.0; frames + 1];
    for (t, v) in flux.iter().enumerate() {
        prefix[t + 1] = prefix[t] + v;
    }
    let half = NOVELTY_DETREND_FRAMES / 2;
    let mut out: Vec<f64> = (0..frames)
        .map(|t| {
            let (lo, hi) = (t.saturating_sub(half), (t + half + 1).min(frames));
            let mean = (prefix[hi] - prefix[lo]) / (hi - lo) as f64;
            (flux[t] - mean).max(0.0)
        })
        .collect();
    if let Some(first) = out.first_mut() {
        *first = 0.0;
    }
    out
}

/// Lags whose window overlap falls below this fraction of the lag-0
/// overlap are left at zero.
pub const MIN_LAG_SUPPORT: f64 = 0.05;

/// Hann-windowed local autocorrelation over lags `0..384` for each frame.
///
/// The window is centered on the frame; samples past the ends of the
/// novelty are missing, not zero. Each lag is divided by the overlap of the
/// window (restricted to available samples) with itself at that lag, then
/// by the lag-0 value, so a constant novelty gives 1 at every supported lag.
pub fn autocorrelation_tempogram(novelty: &[f64], frame_rate: f64) -> TimeFrequencyMap {
    let frames = novelty.len();
    let win_len = TEMPOGRAM_LAGS;
    let n_fft = (2 * win_len).next_power_of_two();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(n_fft);
    let inv = planner.plan_fft_inverse(n_fft);
    let win: Vec<f64> = (0..win_len)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / win_len as f64).cos())
        .collect();
    let half = (win_len / 2) as isize;
    let mut out = TimeFrequencyMap::zeros(TEMPOGRAM_LAGS, frames, BinKind::TempoLag, frame_rate);
    let mut data = vec![Complex::new(0.0, 0.0); n_fft];
    let mut support = vec![Complex::new(0.0, 0.0); n_fft];
    let autocorrelate = |buf: &mut [Complex<f64>]| {
        fwd.process(buf);
        for c in buf.iter_mut() {
            *c = Complex::new(c.norm_sqr(), 0.0);
        }
        inv.process(buf);
    };
    for t in 0..frames {
        data.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
        support.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
        let mut any = false;
        for i in 0..win_len {
            let src = t as isize - half + i as isize;
            if src >= 0 && (src as usize) < frames {
                let v = novelty[src as usize] * win[i];
                any |= v != 0.0;
                data[i] = Complex::new(v, 0.0);
                support[i] = Complex::new(win[i], 0.0);
            }
        }
        if !any {
            continue;
        }
        autocorrelate(&mut data);
        autocorrelate(&mut support);
        let floor = MIN_LAG_SUPPORT * support[0].re;
        let unbiased = |lag: usize| {
            if support[lag].re > floor {
                data[lag].re / support[lag].re
            } else {
                0.0
            }
        };
        let zero = unbiased(0);
        if zero <= 0.0 {
            continue;
        }
        for lag in 0..TEMPOGRAM_LAGS {
            out.set(lag, t, (unbiased(lag) / zero).max(0.0));
        }
    }
    out
}

/// Tempo in bpm represented by an autocorrelation lag (frames).
pub fn lag_to_bpm(lag: f64, frame_rate: f64) -> f64 {
    60.0 * frame_rate / lag
}

/// Cyclic bin of a tempo: fold into `[60, 120)` by exact doubling or
/// halving, then split the octave into 64 log-spaced bins.
pub fn cyclic_bin(bpm: f64) -> usize {
    let mut b = bpm;
    while b >= 2.0 * CYCLIC_REF_BPM {
        b /= 2.0;
    }
    while b < CYCLIC_REF_BPM {
        b *= 2.0;
    }
    ((CYCLIC_BINS as f64 * (b / CYCLIC_REF_BPM).log2()) as usize).min(CYCLIC_BINS - 1)
}

/// Folds a lag tempogram onto one tempo octave. Each of the 64
/// log-spaced bins reads the tempogram, linearly interpolated between lags,
/// at every octave of its centre tempo inside `[45, 480]` bpm and holds the
/// mean of those readings.
pub fn cyclic_fold(tempogram: &TimeFrequencyMap) -> TimeFrequencyMap {
    let fr = tempogram.frame_rate();
    let max_lag = (tempogram.bins() - 1) as f64;
    let taps: Vec<Vec<(usize, f64)>> = (0..CYCLIC_BINS)
        .map(|bin| {
            let centre = CYCLIC_REF_BPM * 2f64.powf((bin as f64 + 0.5) / CYCLIC_BINS as f64);
            let mut taps = Vec::new();
            let mut bpm = centre;
            while bpm / 2.0 >= FOLD_MIN_BPM {
                bpm /= 2.0;
            }
            let mut reads = 0usize;
            while bpm <= FOLD_MAX_BPM {
                let lag = 60.0 * fr / bpm;
                if bpm >= FOLD_MIN_BPM && (1.0..=max_lag).contains(&lag) {
                    let lo = lag.floor() as usize;
                    let frac = lag - lo as f64;
                    taps.push((lo, 1.0 - frac));
                    if frac > 0.0 {
                        taps.push((lo + 1, frac));
                    }
                    reads += 1;
                }
                bpm *= 2.0;
            }
            for tap in taps.iter_mut() {
                tap.1 /= reads.max(1) as f64;
            }
            taps
        })
        .collect();
    let frames = tempogram.frames();
    let mut out = TimeFrequencyMap::zeros(CYCLIC_BINS, frames, BinKind::CyclicTempo, fr);
    for (bin, taps) in taps.iter().enumerate() {
        for t in 0..frames {
            let v = taps.iter().map(|&(lag, w)| w * tempogram.get(lag, t)).sum();
            out.set(bin, t, v);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{frame_rate, log_compress, mel_spectrogram, AudioClip, SAMPLE_RATE};

    pub(crate) fn click_track(bpm: f64, secs: f64) -> AudioClip {
        let n = (SAMPLE_RATE as f64 * secs) as usize;
        let mut s = vec![0.0; n];
        let period = 60.0 / bpm * SAMPLE_RATE as f64;
        let mut pos = 0.25 * SAMPLE_RATE as f64;
        while (pos as usize) < n {
            let start = pos as usize;
            for i in 0..64.min(n - start) {
                s[start + i] =
                    0.8 * (-(i as f64) / 12.0).exp() * if i % 2 == 0 { 1.0 } else { -1.0 };
            }
            pos += period;
        }
        AudioClip::new(s, SAMPLE_RATE).unwrap()
    }

    fn novelty_of(clip: &AudioClip) -> Vec<f64> {
        onset_novelty(&log_compress(&mel_spectrogram(clip).unwrap()).unwrap())
    }

    fn cosine(a: &[f64], b: &[f64]) -> f64 {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        dot / (na * nb)
    }

    #[test]
    fn novelty_silence_and_click() {
        let silent = AudioClip::new(vec![0.0; 22050], SAMPLE_RATE).unwrap();
        assert!(novelty_of(&silent).iter().all(|&v| v == 0.0));

        let mut s = vec![0.0; 22050];
        s[11025] = 1.0;
        let nov = novelty_of(&AudioClip::new(s, SAMPLE_RATE).unwrap());
        assert_eq!(nov[0], 0.0);
        assert!(nov.iter().all(|&v| v >= 0.0));
        let peak = nov
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        // Frames 42 and 43 both overlap sample 11025; the rise is in the first.
        assert_eq!(peak, 11025 / 256);
        let second = nov
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != peak)
            .map(|(_, v)| *v)
            .fold(0.0, f64::max);
        assert!(second < 0.5 * nov[peak]);
    }

    #[test]
    fn click_novelty_period() {
        let nov = novelty_of(&click_track(120.0, 4.0));
        let peaks: Vec<usize> = (1..nov.len() - 1)
            .filter(|&i| nov[i] > nov[i - 1] && nov[i] >= nov[i + 1] && nov[i] > 1.0)
            .collect();
        let expected = 0.5 * frame_rate();
        for w in peaks.windows(2) {
            let gap = (w[1] - w[0]) as f64;
            assert!((gap - expected).abs() <= 1.0, "gap {gap} vs {expected}");
        }
        assert!(peaks.len() >= 6);
    }

    #[test]
    fn tempogram_zero_and_click_lag() {
        let tg = autocorrelation_tempogram(&vec![0.0; 300], frame_rate());
        assert_eq!(tg.bins(), TEMPOGRAM_LAGS);
        assert!(tg.values().iter().all(|&v| v == 0.0));

        let nov = novelty_of(&click_track(120.0, 6.0));
        let tg = autocorrelation_tempogram(&nov, frame_rate());
        let expected = 60.0 / 120.0 * frame_rate();
        for t in [200, 250, 300] {
            // Local max in the vicinity of the beat period.
            let col = tg.column(t);
            let best = (30..60).max_by(|&a, &b| col[a].total_cmp(&col[b])).unwrap();
            assert!(
                (best as f64 - expected).abs() <= 1.0,
                "frame {t}: lag {best}"
            );
            assert!(col[best] > col[best - 3] && col[best] > col[best + 3]);
        }
    }

    #[test]
    fn tempogram_constant_novelty_is_flat() {
        let tg = autocorrelation_tempogram(&vec![1.0; 1000], frame_rate());
        for t in [200, 500, 799] {
            let col = tg.column(t);
            let supported: Vec<f64> = col.iter().copied().filter(|&v| v != 0.0).collect();
            assert!(supported.len() > TEMPOGRAM_LAGS / 2, "frame {t}");
            assert!(supported.iter().all(|v| (v - 1.0).abs() < 1e-9), "frame {t}");
        }
        // A short excerpt supports fewer lags, still flat.
        let tg = autocorrelation_tempogram(&vec![2.0; 259], frame_rate());
        let col = tg.column(129);
        assert!(col[..150].iter().all(|v| (v - 1.0).abs() < 1e-9));
    }

    #[test]
    fn fold_identifies_octaves() {
        let fr = frame_rate();
        for lag in [12usize, 24, 40, 50, 57] {
            let mut a = TimeFrequencyMap::zeros(TEMPOGRAM_LAGS, 3, BinKind::TempoLag, fr);
            let mut b = a.clone();
            for t in 0..3 {
                a.set(lag, t, 1.0);
                b.set(2 * lag, t, 1.0);
            }
            let peak = |m: &TimeFrequencyMap| {
                let col = m.column(0);
                (0..CYCLIC_BINS).max_by(|&x, &y| col[x].total_cmp(&col[y])).unwrap()
            };
            let (pa, pb) = (peak(&cyclic_fold(&a)), peak(&cyclic_fold(&b)));
            let expected = cyclic_bin(lag_to_bpm(lag as f64, fr));
            for p in [pa, pb] {
                let d = (p as isize - expected as isize).rem_euclid(CYCLIC_BINS as isize);
                assert!(d <= 1 || d == CYCLIC_BINS as isize - 1, "lag {lag}: {pa} {pb}");
            }
        }
    }

    #[test]
    fn fold_uniform_is_uniform() {
        let fr = frame_rate();
        let tg = TimeFrequencyMap::new(
            TEMPOGRAM_LAGS,
            2,
            vec![0.5; TEMPOGRAM_LAGS * 2],
            BinKind::TempoLag,
            fr,
        );
        let folded = cyclic_fold(&tg);
        assert_eq!(folded.bins(), CYCLIC_BINS);
        for v in folded.values() {
            assert!((v - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn folded_click_octaves_agree() {
        let fold = |bpm| {
            let nov = novelty_of(&click_track(bpm, 6.0));
            cyclic_fold(&autocorrelation_tempogram(&nov, frame_rate())).time_average()
        };
        let sim = cosine(&fold(60.0), &fold(120.0));
        assert!(sim >= 0.9, "cosine {sim}");
    }
}
