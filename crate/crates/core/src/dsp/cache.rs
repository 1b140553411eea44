//! Binary per-track feature cache.
//!
//! Layout: 16-byte header `b"MSFC"`, version (u16), mel/tempo/chroma row
//! counts (u16 each), total frames (u32), then each map row-major as
//! little-endian f32 in the order mel, cyclic tempogram, CENS. A track with
//! several excerpts stores them back to back along the frame axis.

use std::path::Path;

use super::{frame_rate, BinKind, FeatureSet, TimeFrequencyMap, EXCERPT_FRAMES};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"MSFC";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 16;

pub fn encode(segments: &[FeatureSet]) -> Vec<u8> {
    let frames: usize = segments.iter().map(|s| s.frames()).sum();
    let (mel_rows, tempo_rows, chroma_rows) = match segments.first() {
        Some(s) => (s.mel.bins(), s.cyclic_tempogram.bins(), s.cens.bins()),
        None => (0, 0, 0),
    };
    let mut out =
        Vec::with_capacity(HEADER_LEN + 4 * frames * (mel_rows + tempo_rows + chroma_rows));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for rows in [mel_rows, tempo_rows, chroma_rows] {
        out.extend_from_slice(&(rows as u16).to_le_bytes());
    }
    out.extend_from_slice(&(frames as u32).to_le_bytes());
    let pick: [fn(&FeatureSet) -> &TimeFrequencyMap; 3] =
        [|s| &s.mel, |s| &s.cyclic_tempogram, |s| &s.cens];
    for get in pick {
        let rows = segments.first().map(|s| get(s).bins()).unwrap_or(0);
        for r in 0..rows {
            for seg in segments {
                for &v in get(seg).row(r) {
                    out.extend_from_slice(&(v as f32).to_le_bytes());
                }
            }
        }
    }
    out
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Vec<FeatureSet>> {
    let bad = |msg: &str| Error::Format {
        path: path.to_path_buf(),
        msg: msg.to_string(),
    };
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(bad("missing feature cache header"));
    }
    let u16_at = |i: usize| u16::from_le_bytes([bytes[i], bytes[i + 1]]) as usize;
    if u16_at(4) != VERSION as usize {
        return Err(bad("unsupported feature cache version"));
    }
    let rows = [u16_at(6), u16_at(8), u16_at(10)];
    let frames = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let total = rows.iter().sum::<usize>() * frames;
    if bytes.len() != HEADER_LEN + 4 * total {
        return Err(bad("truncated feature cache"));
    }
    if frames % EXCERPT_FRAMES != 0 {
        return Err(bad("frame count is not a whole number of excerpts"));
    }
    let floats: Vec<f64> = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    let kinds = [BinKind::Mel, BinKind::CyclicTempo, BinKind::Chroma];
    let mut offset = 0;
    let mut maps = Vec::new();
    for (r, kind) in rows.iter().zip(kinds) {
        let n = r * frames;
        maps.push(TimeFrequencyMap::new(
            *r,
            frames,
            floats[offset..offset + n].to_vec(),
            kind,
            frame_rate(),
        ));
        offset += n;
    }
    let n_segments = frames / EXCERPT_FRAMES;
    Ok((0..n_segments)
        .map(|s| {
            let start = (s * EXCERPT_FRAMES) as isize;
            FeatureSet {
                mel: maps[0].frame_range(start, EXCERPT_FRAMES),
                cyclic_tempogram: maps[1].frame_range(start, EXCERPT_FRAMES),
                cens: maps[2].frame_range(start, EXCERPT_FRAMES),
            }
        })
        .collect())
}

pub fn write(path: &Path, segments: &[FeatureSet]) -> Result<()> {
    std::fs::write(path, encode(segments))?;
    Ok(())
}

pub fn read(path: &Path) -> Result<Vec<FeatureSet>> {
    decode(&std::fs::read(path)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fake(seed: f64) -> FeatureSet {
        let map = |rows: usize, kind| {
            let vals = (0..rows * EXCERPT_FRAMES)
                .map(|i| (i as f64 * 0.37 + seed).sin())
                .collect();
            TimeFrequencyMap::new(rows, EXCERPT_FRAMES, vals, kind, frame_rate())
        };
        FeatureSet {
            mel: map(128, BinKind::Mel),
            cyclic_tempogram: map(64, BinKind::CyclicTempo),
            cens: map(12, BinKind::Chroma),
        }
    }

    #[test]
    fn header_and_round_trip() {
        let segs = vec![fake(0.0), fake(1.0)];
        let bytes = encode(&segs);
        assert_eq!(&bytes[..4], MAGIC);
        assert_eq!(bytes.len(), 16 + 4 * (128 + 64 + 12) * 512);
        let back = decode(&bytes, Path::new("x")).unwrap();
        assert_eq!(back.len(), 2);
        // Values survive up to f32 rounding, and re-encoding is byte stable.
        assert!((back[1].mel.get(3, 7) - segs[1].mel.get(3, 7)).abs() < 1e-6);
        assert_eq!(encode(&back), bytes);
    }

    #[test]
    fn rejects_truncation() {
        let bytes = encode(&[fake(0.0)]);
        assert!(decode(&bytes[..bytes.len() - 1], Path::new("x")).is_err());
        assert!(decode(b"nope", Path::new("x")).is_err());
    }
}
