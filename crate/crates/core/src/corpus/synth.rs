//! Deterministic synthetic corpus: every combination of class factors is
//! rendered as additive-synthesis audio with known tempo and key.
//!
//! Factor presets:
//! - genre: timbre family, a spectral formant emphasis
//! - mood: amplitude envelope
//! - instrument: waveform (harmonic amplitude pattern)
//! - era: filtered background noise band

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::{write_manifest, Corpus, Key, Mode, TrackMetadata};
use crate::dsp::{write_wav, AudioClip, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::similarity::Dimension;

pub const GENRES: [&str; 4] = ["dark", "bright", "warm", "thin"];
pub const MOODS: [&str; 4] = ["calm", "energetic", "tense", "mellow"];
pub const INSTRUMENTS: [&str; 4] = ["saw", "square", "organ", "reed"];
pub const ERAS: [&str; 4] = ["vinyl", "tape", "radio", "digital"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub genres: Vec<String>,
    pub moods: Vec<String>,
    pub instruments: Vec<String>,
    pub eras: Vec<String>,
    pub tempi: Vec<f64>,
    pub keys: Vec<String>,
    pub tracks_per_cell: usize,
    pub duration_secs: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        let two = |names: &[&str]| names[..2].iter().map(|s| s.to_string()).collect();
        Self {
            genres: two(&GENRES),
            moods: two(&MOODS),
            instruments: two(&INSTRUMENTS),
            eras: two(&ERAS),
            tempi: vec![80.0, 120.0],
            keys: vec!["C:maj".into(), "G:min".into()],
            tracks_per_cell: 3,
            duration_secs: 3.0,
        }
    }
}

impl SynthSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let spec: SynthSpec = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let check = |what: &str, names: &[String], allowed: &[&str]| -> Result<()> {
            if names.is_empty() {
                return Err(Error::Config(format!(
                    "synth spec needs at least one {what}"
                )));
            }
            for n in names {
                if !allowed.contains(&n.as_str()) {
                    return Err(Error::Config(format!(
                        "unknown {what} preset {n:?}, expected one of {allowed:?}"
                    )));
                }
            }
            Ok(())
        };
        check("genre", &self.genres, &GENRES)?;
        check("mood", &self.moods, &MOODS)?;
        check("instrument", &self.instruments, &INSTRUMENTS)?;
        check("era", &self.eras, &ERAS)?;
        if self.tempi.is_empty() || self.tempi.iter().any(|t| !(*t > 20.0 && *t < 400.0)) {
            return Err(Error::Config(
                "tempi must be nonempty and within (20, 400)".into(),
            ));
        }
        if self.keys.is_empty() {
            return Err(Error::Config("synth spec needs at least one key".into()));
        }
        for k in &self.keys {
            k.parse::<Key>()?;
        }
        if self.tracks_per_cell == 0 || !(self.duration_secs > 0.1) {
            return Err(Error::Config(
                "tracks_per_cell and duration_secs must be positive".into(),
            ));
        }
        Ok(())
    }

    /// One parameter set per track, in manifest order.
    pub fn cells(&self) -> Result<Vec<TrackParams>> {
        self.validate()?;
        let mut out = Vec::new();
        for g in &self.genres {
            for m in &self.moods {
                for i in &self.instruments {
                    for e in &self.eras {
                        for &tempo in &self.tempi {
                            for k in &self.keys {
                                let key: Key = k.parse()?;
                                for _ in 0..self.tracks_per_cell {
                                    out.push(TrackParams {
                                        genre: g.clone(),
                                        mood: m.clone(),
                                        instrument: i.clone(),
                                        era: e.clone(),
                                        tempo,
                                        key,
                                        duration_secs: self.duration_secs,
                                    });
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackParams {
    pub genre: String,
    pub mood: String,
    pub instrument: String,
    pub era: String,
    pub tempo: f64,
    pub key: Key,
    pub duration_secs: f64,
}

impl TrackParams {
    pub fn metadata(&self, id: &str, path: PathBuf) -> TrackMetadata {
        let mut t = TrackMetadata::new(id, path);
        t.labels_mut(Dimension::Genre).insert(self.genre.clone());
        t.labels_mut(Dimension::Mood).insert(self.mood.clone());
        t.labels_mut(Dimension::Instrument)
            .insert(self.instrument.clone());
        t.labels_mut(Dimension::Era).insert(self.era.clone());
        t.tempo = Some(self.tempo);
        t.key = Some(self.key);
        t
    }
}

fn formant_hz(genre: &str) -> f64 {
    match genre {
        "dark" => 350.0,
        "bright" => 2800.0,
        "warm" => 800.0,
        _ => 1600.0,
    }
}

/// Harmonic amplitude (before formant weighting) for harmonic `h >= 1`.
fn harmonic_amp(instrument: &str, h: usize) -> f64 {
    let h = h as f64;
    match instrument {
        "saw" => 1.0 / h,
        "square" => {
            if h as usize % 2 == 1 {
                1.0 / h
            } else {
                0.0
            }
        }
        "organ" => {
            if [1.0, 2.0, 4.0, 8.0].contains(&h) {
                1.0 / h.sqrt()
            } else {
                0.0
            }
        }
        _ => {
            if h as usize % 3 == 0 {
                0.0
            } else {
                1.0 / (h * h).sqrt().powf(1.5)
            }
        }
    }
}

/// Envelope at time `t` seconds into a note of length `len`. Every shape
/// settles on a sustain level rather than decaying to silence.
fn envelope(mood: &str, t: f64, len: f64) -> f64 {
    let release = ((len - t) / 0.02).clamp(0.0, 1.0);
    let shape = match mood {
        "calm" => (t / 0.08).min(1.0) * (0.85 + 0.15 * (-t / 0.6).exp()),
        "energetic" => (t / 0.004).min(1.0) * (0.4 + 0.6 * (-t / 0.09).exp()),
        "tense" => {
            (t / 0.01).min(1.0)
                * (0.6 + 0.4 * (2.0 * PI * 9.0 * t).sin().abs())
                * (0.5 + 0.5 * (-t / 0.5).exp())
        }
        _ => (t / 0.03).min(1.0) * (0.4 + 0.6 * (-t / 0.3).exp()),
    };
    shape * release
}

/// Passband of the era noise in Hz.
fn era_band(era: &str) -> (f64, f64, f64) {
    match era {
        "vinyl" => (20.0, 55.0, 0.15),
        "tape" => (4500.0, 9000.0, 0.12),
        "radio" => (900.0, 2500.0, 0.12),
        _ => (20.0, 11000.0, 0.002),
    }
}

fn band_noise(n: usize, lo: f64, hi: f64, rms: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let size = n.next_power_of_two();
    let mut buf: Vec<Complex<f64>> = (0..size)
        .map(|_| Complex::new(rng.gen_range(-1.0..1.0), 0.0))
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(size).process(&mut buf);
    for (k, c) in buf.iter_mut().enumerate() {
        let bin = k.min(size - k);
        let f = bin as f64 * SAMPLE_RATE as f64 / size as f64;
        if f < lo || f > hi {
            *c = Complex::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(size).process(&mut buf);
    let mut out: Vec<f64> = buf[..n].iter().map(|c| c.re).collect();
    let cur = (out.iter().map(|v| v * v).sum::<f64>() / n.max(1) as f64).sqrt();
    if cur > 0.0 {
        out.iter_mut().for_each(|v| *v *= rms / cur);
    }
    out
}

fn scale_steps(mode: Mode) -> [i32; 7] {
    match mode {
        Mode::Major => [0, 2, 4, 5, 7, 9, 11],
        Mode::Minor => [0, 2, 3, 5, 7, 8, 10],
    }
}

/// Renders one track. The same `(params, seed)` always yields the same audio.
pub fn render_track(params: &TrackParams, seed: u64) -> AudioClip {
    let sr = SAMPLE_RATE as f64;
    let n = (params.duration_secs * sr).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![0.0; n];

    let beat = 60.0 / params.tempo;
    let offset = rng.gen_range(0.0..0.5 * beat);
    let steps = scale_steps(params.key.mode);
    let tonic_midi = 48 + params.key.tonic as i32;
    let formant = formant_hz(&params.genre);
    let note_len = beat;

    let mut start = offset;
    let mut beat_index = 0;
    while start < params.duration_secs {
        // Tonic and dominant alternate every beat, so any whole number of
        // beat pairs holds the same harmony.
        let degree = [0, 4][beat_index % 2];
        beat_index += 1;
        let mut midis: Vec<i32> = (0..3)
            .map(|i| {
                let d = degree + 2 * i;
                tonic_midi + steps[d % 7] + 12 * (d / 7) as i32
            })
            .collect();
        // Melody mostly outlines the tonic triad.
        let mel = [0, 0, 2, 4, 1, 3, 5, 6][rng.gen_range(0..8)];
        midis.push(tonic_midi + 12 + steps[mel]);
        // Tonic pedal an octave below.
        midis.push(tonic_midi - 12);

        let s0 = (start * sr) as usize;
        let s1 = (((start + note_len) * sr) as usize).min(n);
        for (v, &midi) in midis.iter().enumerate() {
            let f0 = 440.0 * 2f64.powf((midi - 69) as f64 / 12.0);
            let voice_gain = [1.0, 1.0, 1.0, 0.7, 0.8][v];
            for h in 1..=16 {
                let f = f0 * h as f64;
                if f > 0.45 * sr {
                    break;
                }
                let amp = harmonic_amp(&params.instrument, h)
                    * (0.3 + (-(f / formant).log2().powi(2) / 0.5).exp())
                    * voice_gain
                    / (h as f64).sqrt();
                if amp == 0.0 {
                    continue;
                }
                let w = 2.0 * PI * f / sr;
                let (step_re, step_im) = (w.cos(), w.sin());
                let (mut re, mut im) = (1.0f64, 0.0f64);
                for (i, slot) in out[s0..s1].iter_mut().enumerate() {
                    let t = i as f64 / sr;
                    *slot += amp * im * envelope(&params.mood, t, note_len);
                    let nre = re * step_re - im * step_im;
                    im = re * step_im + im * step_re;
                    re = nre;
                }
            }
        }
        start += beat;
    }

    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        out.iter_mut().for_each(|v| *v *= 0.7 / peak);
    }
    let (lo, hi, rms) = era_band(&params.era);
    for (o, z) in out.iter_mut().zip(band_noise(n, lo, hi, rms, &mut rng)) {
        *o += z;
    }
    AudioClip::new(out, SAMPLE_RATE).expect("synthesized audio is finite")
}

/// Per-track seed derived from the corpus seed and the track index.
fn track_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (index as u64).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

/// Writes `audio/trkNNNN.wav` files and `manifest.jsonl` under `out_dir`.
pub fn generate_synthetic_corpus(spec: &SynthSpec, seed: u64, out_dir: &Path) -> Result<Corpus> {
    let cells = spec.cells()?;
    let audio_dir = out_dir.join("audio");
    std::fs::create_dir_all(&audio_dir)?;
    let mut tracks = Vec::with_capacity(cells.len());
    for (i, params) in cells.iter().enumerate() {
        let id = format!("trk{i:04}");
        let rel = PathBuf::from("audio").join(format!("{id}.wav"));
        write_wav(
            &out_dir.join(&rel),
            &render_track(params, track_seed(seed, i)),
        )?;
        tracks.push(params.metadata(&id, rel));
    }
    let corpus = Corpus::new(out_dir, tracks)?;
    write_manifest(&out_dir.join("manifest.jsonl"), &corpus)?;
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{estimate_key, estimate_track_tempo, load_manifest};
    use crate::dsp::cqt_chroma;

    #[test]
    fn counting_and_determinism() {
        let spec = SynthSpec {
            genres: vec!["dark".into(), "bright".into()],
            moods: vec!["calm".into()],
            instruments: vec!["saw".into()],
            eras: vec!["vinyl".into()],
            tempi: vec![90.0, 130.0],
            keys: vec!["C:maj".into(), "A:min".into()],
            tracks_per_cell: 3,
            duration_secs: 0.5,
        };
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ca = generate_synthetic_corpus(&spec, 11, a.path()).unwrap();
        generate_synthetic_corpus(&spec, 11, b.path()).unwrap();
        assert_eq!(ca.len(), 24);
        let ma = std::fs::read(a.path().join("manifest.jsonl")).unwrap();
        let mb = std::fs::read(b.path().join("manifest.jsonl")).unwrap();
        assert_eq!(ma, mb);
        assert_eq!(String::from_utf8(ma).unwrap().lines().count(), 24);
        let wa = std::fs::read(a.path().join("audio/trk0005.wav")).unwrap();
        let wb = std::fs::read(b.path().join("audio/trk0005.wav")).unwrap();
        assert_eq!(wa, wb);
        let loaded = load_manifest(&a.path().join("manifest.jsonl"), None).unwrap();
        assert_eq!(loaded.tracks(), ca.tracks());
    }

    #[test]
    fn rejects_unknown_preset() {
        let spec = SynthSpec {
            genres: vec!["polka".into()],
            ..SynthSpec::default()
        };
        assert!(spec.validate().is_err());
    }

    fn params(tempo: f64, key: &str) -> TrackParams {
        TrackParams {
            genre: "warm".into(),
            mood: "energetic".into(),
            instrument: "saw".into(),
            era: "digital".into(),
            tempo,
            key: key.parse().unwrap(),
            duration_secs: 8.0,
        }
    }

    #[test]
    fn generated_tempo_is_recovered() {
        let clip = render_track(&params(100.0, "C:maj"), 3);
        let est = estimate_track_tempo(&clip).unwrap();
        assert!((est - 100.0).abs() <= 2.0, "estimated {est}");
    }

    #[test]
    fn generated_key_is_recovered() {
        // Template matching is only reliable on harmonically clean timbres.
        for key in ["C:maj", "G:min", "E:maj"] {
            let p = TrackParams {
                genre: "bright".into(),
                instrument: "organ".into(),
                mood: "calm".into(),
                ..params(120.0, key)
            };
            let clip = render_track(&p, 5);
            let est = estimate_key(&cqt_chroma(&clip).unwrap()).unwrap();
            assert_eq!(est, key.parse().unwrap(), "{key}");
        }
    }
}
