//! Per-track segment features, extracted from audio or loaded from an
//! on-disk cache keyed by audio content hash and extractor version.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::Corpus;
use crate::dsp::{
    cache, extract_features, features::segment_track, read_wav, AudioClip, FeatureSet,
};
use crate::error::{Error, Result};

/// Bumped whenever extraction output changes.
pub const EXTRACTOR_VERSION: &str = "msfeat-2";
const INDEX_FILE: &str = "index.json";

/// Features of every 3 s segment of a track.
pub fn track_features(clip: &AudioClip) -> Result<Vec<FeatureSet>> {
    segment_track(clip).iter().map(extract_features).collect()
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub file: String,
    pub audio_sha256: String,
    pub extractor: String,
}

/// Outcome of a cache refresh.
#[derive(Debug, Default)]
pub struct CacheReport {
    pub written: usize,
    pub skipped: usize,
    pub failed: Vec<(String, Error)>,
}

fn cache_file_name(id: &str) -> String {
    format!("{}.msf", &sha256_hex(id.as_bytes())[..16])
}

fn read_index(dir: &Path) -> Result<BTreeMap<String, CacheEntry>> {
    let path = dir.join(INDEX_FILE);
    if !path.exists() {
        return Ok(BTreeMap::new());
    }
    serde_json::from_str(&fs::read_to_string(&path)?).map_err(|e| Error::Format {
        path,
        msg: e.to_string(),
    })
}

fn write_index(dir: &Path, index: &BTreeMap<String, CacheEntry>) -> Result<()> {
    fs::write(
        dir.join(INDEX_FILE),
        serde_json::to_string_pretty(index)? + "\n",
    )?;
    Ok(())
}

enum Refresh {
    Skipped,
    Written(CacheEntry),
}

/// Extracts features for every track whose audio hash or extractor version
/// differs from the index; failures are collected per track.
pub fn build_feature_cache(corpus: &Corpus, dir: &Path) -> Result<CacheReport> {
    fs::create_dir_all(dir)?;
    let index = read_index(dir)?;
    let results: Vec<(String, Result<Refresh>)> = corpus
        .tracks()
        .par_iter()
        .map(|t| {
            let run = || -> Result<Refresh> {
                let audio_path = corpus.audio_path(t);
                let bytes = fs::read(&audio_path)?;
                let hash = sha256_hex(&bytes);
                let file = cache_file_name(&t.id);
                if let Some(e) = index.get(&t.id) {
                    if e.audio_sha256 == hash
                        && e.extractor == EXTRACTOR_VERSION
                        && dir.join(&e.file).exists()
                    {
                        return Ok(Refresh::Skipped);
                    }
                }
                let clip = read_wav(&audio_path)?;
                cache::write(&dir.join(&file), &track_features(&clip)?)?;
                Ok(Refresh::Written(CacheEntry {
                    file,
                    audio_sha256: hash,
                    extractor: EXTRACTOR_VERSION.to_string(),
                }))
            };
            (t.id.clone(), run())
        })
        .collect();
    let mut index = index;
    let mut report = CacheReport::default();
    for (id, r) in results {
        match r {
            Ok(Refresh::Skipped) => report.skipped += 1,
            Ok(Refresh::Written(entry)) => {
                index.insert(id, entry);
                report.written += 1;
            }
            Err(e) => {
                log::error!("track {id}: {e}");
                report.failed.push((id, e));
            }
        }
    }
    write_index(dir, &index)?;
    Ok(report)
}

/// Segment features aligned with corpus track order.
#[derive(Debug, Clone)]
pub struct FeatureStore {
    tracks: Vec<Vec<FeatureSet>>,
}

impl FeatureStore {
    pub fn new(tracks: Vec<Vec<FeatureSet>>) -> Self {
        Self { tracks }
    }

    /// Extracts features directly from the audio files.
    pub fn extract(corpus: &Corpus) -> Result<Self> {
        let tracks = corpus
            .tracks()
            .par_iter()
            .map(|t| track_features(&read_wav(&corpus.audio_path(t))?))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { tracks })
    }

    /// Refreshes the cache in `dir`, then loads every track from it.
    pub fn cached(corpus: &Corpus, dir: &Path) -> Result<Self> {
        let report = build_feature_cache(corpus, dir)?;
        if let Some((id, e)) = report.failed.into_iter().next() {
            return Err(Error::Audio {
                path: PathBuf::from(id),
                msg: e.to_string(),
            });
        }
        let index = read_index(dir)?;
        let tracks = corpus
            .tracks()
            .iter()
            .map(|t| cache::read(&dir.join(&index[&t.id].file)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { tracks })
    }

    pub fn len(&self) -> usize {
        self.tracks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tracks.is_empty()
    }

    pub fn segments(&self, track: usize) -> &[FeatureSet] {
        &self.tracks[track]
    }

    pub fn segment_counts(&self) -> Vec<usize> {
        self.tracks.iter().map(Vec::len).collect()
    }
}
