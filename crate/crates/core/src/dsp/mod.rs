//! Feature extraction: mel-spectrogram, CENS chromagram and cyclic tempogram
//! on a shared frame grid.

pub mod audio;
pub mod cache;
pub mod chroma;
pub mod features;
pub mod spectral;
pub mod tempo;

pub use audio::{read_wav, write_wav, AudioClip, SAMPLE_RATE};
pub use chroma::{cens, cqt_chroma};
pub use features::{
    extract_aligned, extract_features, FeatureSet, EXCERPT_FRAMES, EXCERPT_SAMPLES,
};
pub use spectral::{compute_stft, log_compress, mel_spectrogram, zscore, HOP, N_MELS, WINDOW};
pub use tempo::{
    autocorrelation_tempogram, cyclic_fold, onset_novelty, CYCLIC_BINS, TEMPOGRAM_LAGS,
};

/// Frame rate of every map produced at the default hop.
pub fn frame_rate() -> f64 {
    SAMPLE_RATE as f64 / HOP as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinKind {
    LinearFreq,
    Mel,
    Chroma,
    TempoLag,
    CyclicTempo,
}

/// Row-major `bins x frames` real matrix with its frame rate.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeFrequencyMap {
    bins: usize,
    frames: usize,
    values: Vec<f64>,
    kind: BinKind,
    frame_rate: f64,
}

impl TimeFrequencyMap {
    pub fn new(
        bins: usize,
        frames: usize,
        values: Vec<f64>,
        kind: BinKind,
        frame_rate: f64,
    ) -> Self {
        assert_eq!(values.len(), bins * frames, "map size mismatch");
        Self {
            bins,
            frames,
            values,
            kind,
            frame_rate,
        }
    }

    pub fn zeros(bins: usize, frames: usize, kind: BinKind, frame_rate: f64) -> Self {
        Self::new(bins, frames, vec![0.0; bins * frames], kind, frame_rate)
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn kind(&self) -> BinKind {
        self.kind
    }

    pub fn frame_rate(&self) -> f64 {
        self.frame_rate
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    #[inline]
    pub fn get(&self, bin: usize, frame: usize) -> f64 {
        self.values[bin * self.frames + frame]
    }

    #[inline]
    pub fn set(&mut self, bin: usize, frame: usize, v: f64) {
        self.values[bin * self.frames + frame] = v;
    }

    pub fn row(&self, bin: usize) -> &[f64] {
        &self.values[bin * self.frames..(bin + 1) * self.frames]
    }

    pub fn column(&self, frame: usize) -> Vec<f64> {
        (0..self.bins).map(|b| self.get(b, frame)).collect()
    }

    /// Mean over frames, one value per bin.
    pub fn time_average(&self) -> Vec<f64> {
        (0..self.bins)
            .map(|b| self.row(b).iter().sum::<f64>() / self.frames.max(1) as f64)
            .collect()
    }

    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            values: self.values.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }

    /// Frames `[start, start + len)`, zero-padded where the range leaves the map.
    pub fn frame_range(&self, start: isize, len: usize) -> Self {
        let mut out = Self::zeros(self.bins, len, self.kind, self.frame_rate);
        for b in 0..self.bins {
            for t in 0..len {
                let src = start + t as isize;
                if src >= 0 && (src as usize) < self.frames {
                    out.set(b, t, self.get(b, src as usize));
                }
            }
        }
        out
    }
}
