use super::chroma::{cens, cqt_chroma};
use super::spectral::{log_compress, mel_spectrogram, zscore};
use super::tempo::{autocorrelation_tempogram, cyclic_fold, onset_novelty};
use super::{AudioClip, TimeFrequencyMap, SAMPLE_RATE};
use crate::error::{Error, Result};

/// Frames per 3-second excerpt after crop/pad.
pub const EXCERPT_FRAMES: usize = 256;
/// Samples in a 3-second excerpt at the analysis rate.
pub const EXCERPT_SAMPLES: usize = 3 * SAMPLE_RATE as usize;

/// The three time-aligned inputs for one excerpt.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub mel: TimeFrequencyMap,
    pub cyclic_tempogram: TimeFrequencyMap,
    pub cens: TimeFrequencyMap,
}

impl FeatureSet {
    pub fn frames(&self) -> usize {
        self.mel.frames()
    }

    /// Center-crops or zero-pads (at the end) every map to `frames`.
    pub fn fit_frames(&self, frames: usize) -> FeatureSet {
        let have = self.frames();
        let start = if have > frames {
            ((have - frames) / 2) as isize
        } else {
            0
        };
        FeatureSet {
            mel: self.mel.frame_range(start, frames),
            cyclic_tempogram: self.cyclic_tempogram.frame_range(start, frames),
            cens: self.cens.frame_range(start, frames),
        }
    }

    pub fn check_aligned(&self) -> Result<()> {
        let t = self.mel.frames();
        let fr = self.mel.frame_rate();
        for m in [&self.cyclic_tempogram, &self.cens] {
            if m.frames() != t || m.frame_rate() != fr {
                return Err(Error::Shape(format!(
                    "feature maps not aligned: {} frames @ {fr} vs {} @ {}",
                    t,
                    m.frames(),
                    m.frame_rate()
                )));
            }
        }
        Ok(())
    }
}

/// Runs the full chain and crops every map to the common frame count.
pub fn extract_aligned(clip: &AudioClip) -> Result<FeatureSet> {
    let clip = clip.to_analysis_rate()?;
    let mel_power = mel_spectrogram(&clip)?;
    let mel_log = log_compress(&mel_power)?;
    let mel = zscore(&mel_log);

    let novelty = onset_novelty(&mel_log);
    let tempogram = autocorrelation_tempogram(&novelty, mel_log.frame_rate());
    let cyclic = cyclic_fold(&tempogram);

    let chroma = cens(&cqt_chroma(&clip)?);

    let frames = mel.frames().min(cyclic.frames()).min(chroma.frames());
    let fs = FeatureSet {
        mel: mel.frame_range(0, frames),
        cyclic_tempogram: cyclic.frame_range(0, frames),
        cens: chroma.frame_range(0, frames),
    };
    fs.check_aligned()?;
    Ok(fs)
}

/// Features of a 3-second training/evaluation excerpt, fixed to 256 frames.
pub fn extract_features(clip: &AudioClip) -> Result<FeatureSet> {
    Ok(extract_aligned(clip)?.fit_frames(EXCERPT_FRAMES))
}

/// Splits a track into consecutive non-overlapping 3-second excerpts from
/// the start; the trailing remainder is dropped, and a track shorter than one
/// excerpt is zero-padded to a single excerpt.
pub fn segment_track(clip: &AudioClip) -> Vec<AudioClip> {
    let n = (clip.len() / EXCERPT_SAMPLES).max(1);
    (0..n)
        .map(|i| clip.excerpt(i * EXCERPT_SAMPLES, EXCERPT_SAMPLES))
        .collect()
}
