//! Built-in tempo and key estimators used to annotate tracks.

use super::{Key, Mode};
use crate::dsp::tempo::lag_to_bpm;
use crate::dsp::{
    autocorrelation_tempogram, log_compress, mel_spectrogram, onset_novelty, AudioClip, BinKind,
    TimeFrequencyMap, CYCLIC_BINS,
};
use crate::error::{Error, Result};

pub const TEMPO_RANGE_BPM: (f64, f64) = (40.0, 200.0);
/// Centre and width (octaves) of the log-normal tempo prior applied to the
/// lag tempogram.
pub const TEMPO_PRIOR_BPM: f64 = 120.0;
pub const TEMPO_PRIOR_OCTAVES: f64 = 1.0;

fn tempo_prior(bpm: f64) -> f64 {
    (-0.5 * ((bpm / TEMPO_PRIOR_BPM).log2() / TEMPO_PRIOR_OCTAVES).powi(2)).exp()
}

/// Krumhansl-Schmuckler key profiles, tonic first.
pub const MAJOR_PROFILE: [f64; 12] = [
    6.35, 2.23, 3.48, 2.33, 4.38, 4.09, 2.52, 5.19, 2.39, 3.66, 2.29, 2.88,
];
pub const MINOR_PROFILE: [f64; 12] = [
    6.33, 2.68, 3.52, 5.38, 2.60, 3.53, 2.54, 4.75, 3.98, 2.69, 3.34, 3.17,
];

/// Vertex offset of the parabola through three equally spaced samples.
fn parabolic_offset(left: f64, mid: f64, right: f64) -> f64 {
    let denom = left - 2.0 * mid + right;
    if denom.abs() < 1e-15 {
        0.0
    } else {
        (0.5 * (left - right) / denom).clamp(-0.5, 0.5)
    }
}

/// Global tempo from a lag tempogram (argmax of the time average weighted by
/// a log-normal prior around 120 bpm, over lags in 40-200 bpm, refined by
/// parabolic interpolation), or from a cyclic
/// tempogram (argmax bin, reported within the 60-120 bpm reference octave).
pub fn estimate_tempo(tempogram: &TimeFrequencyMap) -> Result<f64> {
    let avg = tempogram.time_average();
    if avg.iter().all(|&v| v == 0.0) {
        return Err(Error::NoTempo);
    }
    let fr = tempogram.frame_rate();
    match tempogram.kind() {
        BinKind::TempoLag => {
            let avg: Vec<f64> = avg
                .iter()
                .enumerate()
                .map(|(lag, v)| if lag == 0 { 0.0 } else { v * tempo_prior(lag_to_bpm(lag as f64, fr)) })
                .collect();
            let (lo, hi) = TEMPO_RANGE_BPM;
            let min_lag = (60.0 * fr / hi).ceil() as usize;
            let max_lag = ((60.0 * fr / lo).floor() as usize).min(avg.len() - 1);
            let best = (min_lag.max(1)..=max_lag)
                .max_by(|&a, &b| avg[a].total_cmp(&avg[b]).then(b.cmp(&a)))
                .ok_or(Error::NoTempo)?;
            if avg[best] <= 0.0 {
                return Err(Error::NoTempo);
            }
            let off = if best + 1 < avg.len() {
                parabolic_offset(avg[best - 1], avg[best], avg[best + 1])
            } else {
                0.0
            };
            Ok(lag_to_bpm(best as f64 + off, fr))
        }
        BinKind::CyclicTempo => {
            let n = avg.len();
            let best = (0..n)
                .max_by(|&a, &b| avg[a].total_cmp(&avg[b]).then(b.cmp(&a)))
                .unwrap();
            let off = parabolic_offset(avg[(best + n - 1) % n], avg[best], avg[(best + 1) % n]);
            let pos = (best as f64 + 0.5 + off) / CYCLIC_BINS as f64;
            Ok(60.0 * 2f64.powf(pos))
        }
        other => Err(Error::Domain(format!(
            "expected a tempogram, got {other:?} map"
        ))),
    }
}

/// Tempo of a whole clip via novelty and lag tempogram.
pub fn estimate_track_tempo(clip: &AudioClip) -> Result<f64> {
    let clip = clip.to_analysis_rate()?;
    let mel = log_compress(&mel_spectrogram(&clip)?)?;
    let tg = autocorrelation_tempogram(&onset_novelty(&mel), mel.frame_rate());
    estimate_tempo(&tg)
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut num, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        num += (x - ma) * (y - mb);
        va += (x - ma).powi(2);
        vb += (y - mb).powi(2);
    }
    if va <= 0.0 || vb <= 0.0 {
        0.0
    } else {
        num / (va * vb).sqrt()
    }
}

/// Profile for `key`, indexed by absolute pitch class.
pub fn key_profile(key: Key) -> [f64; 12] {
    let base = match key.mode {
        Mode::Major => &MAJOR_PROFILE,
        Mode::Minor => &MINOR_PROFILE,
    };
    std::array::from_fn(|pc| base[(pc + 12 - key.tonic as usize) % 12])
}

/// Template-correlation key estimate on the time-averaged chroma. Ties go to
/// the lowest tonic, then major before minor.
pub fn estimate_key(chroma: &TimeFrequencyMap) -> Result<Key> {
    if chroma.bins() != 12 {
        return Err(Error::Shape(format!(
            "chroma needs 12 rows, got {}",
            chroma.bins()
        )));
    }
    let avg = chroma.time_average();
    if avg.iter().all(|&v| v == 0.0) {
        return Err(Error::NoKey);
    }
    let mut best: Option<(Key, f64)> = None;
    for key in Key::all() {
        let r = pearson(&avg, &key_profile(key));
        if best.map_or(true, |(_, b)| r > b) {
            best = Some((key, r));
        }
    }
    Ok(best.unwrap().0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{cqt_chroma, frame_rate, SAMPLE_RATE};
    use std::f64::consts::PI;

    fn click_track(bpm: f64, secs: f64) -> AudioClip {
        let n = (SAMPLE_RATE as f64 * secs) as usize;
        let mut s = vec![0.0; n];
        let period = 60.0 / bpm * SAMPLE_RATE as f64;
        let mut pos = 0.1 * SAMPLE_RATE as f64;
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

    #[test]
    fn click_tempi() {
        for bpm in [120.0, 90.0] {
            let est = estimate_track_tempo(&click_track(bpm, 8.0)).unwrap();
            assert!((est - bpm).abs() <= 2.0, "{bpm}: estimated {est}");
        }
    }

    #[test]
    fn silence_has_no_tempo() {
        let clip = AudioClip::new(vec![0.0; 3 * SAMPLE_RATE as usize], SAMPLE_RATE).unwrap();
        assert!(matches!(estimate_track_tempo(&clip), Err(Error::NoTempo)));
    }

    #[test]
    fn cyclic_tempo_in_reference_octave() {
        let mut tg = TimeFrequencyMap::zeros(CYCLIC_BINS, 4, BinKind::CyclicTempo, frame_rate());
        let bin = crate::dsp::tempo::cyclic_bin(80.0);
        for t in 0..4 {
            tg.set(bin, t, 1.0);
        }
        let est = estimate_tempo(&tg).unwrap();
        assert!((est - 80.0).abs() < 1.0, "{est}");
    }

    fn chroma_from(avg: [f64; 12]) -> TimeFrequencyMap {
        let mut m = TimeFrequencyMap::zeros(12, 3, BinKind::Chroma, 1.0);
        for (pc, v) in avg.iter().enumerate() {
            for t in 0..3 {
                m.set(pc, t, *v);
            }
        }
        m
    }

    #[test]
    fn all_24_templates_recovered() {
        for key in Key::all() {
            assert_eq!(estimate_key(&chroma_from(key_profile(key))).unwrap(), key);
        }
    }

    #[test]
    fn zero_chroma_has_no_key() {
        assert!(matches!(
            estimate_key(&chroma_from([0.0; 12])),
            Err(Error::NoKey)
        ));
    }

    #[test]
    fn c_major_scale_tones() {
        // C4 D4 E4 F4 G4 A4 B4 C5, 0.4 s each, tonic triad tones repeated.
        let c4 = 261.6256;
        let steps = [0, 2, 4, 5, 7, 9, 11, 12, 7, 4, 0];
        let note = (0.4 * SAMPLE_RATE as f64) as usize;
        let mut s = Vec::new();
        for st in steps {
            let f = c4 * 2f64.powf(st as f64 / 12.0);
            s.extend((0..note).map(|i| 0.4 * (2.0 * PI * f * i as f64 / SAMPLE_RATE as f64).sin()));
        }
        let chroma = cqt_chroma(&AudioClip::new(s, SAMPLE_RATE).unwrap()).unwrap();
        assert_eq!(
            estimate_key(&chroma).unwrap(),
            Key::new(0, Mode::Major).unwrap()
        );
    }
}
