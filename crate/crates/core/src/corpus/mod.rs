//! Track metadata, JSON-lines manifests, tag taxonomy and built-in
//! tempo/key annotation.

pub mod estimate;
pub mod synth;
pub mod taxonomy;

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::similarity::Dimension;

pub use estimate::{estimate_key, estimate_tempo, estimate_track_tempo};
pub use synth::{generate_synthetic_corpus, SynthSpec};
pub use taxonomy::{group_tags, Taxonomy};

pub const TONIC_NAMES: [&str; 12] = [
    "C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mode {
    Major,
    Minor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Key {
    pub tonic: u8,
    pub mode: Mode,
}

impl Key {
    pub fn new(tonic: u8, mode: Mode) -> Result<Self> {
        if tonic > 11 {
            return Err(Error::Domain(format!(
                "tonic must be in 0..=11, got {tonic}"
            )));
        }
        Ok(Self { tonic, mode })
    }

    /// All 24 keys, tonic-major order with major before minor.
    pub fn all() -> impl Iterator<Item = Key> {
        (0..12u8).flat_map(|t| [Mode::Major, Mode::Minor].map(|mode| Key { tonic: t, mode }))
    }
}

impl fmt::Display for Key {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mode = match self.mode {
            Mode::Major => "maj",
            Mode::Minor => "min",
        };
        write!(f, "{}:{}", TONIC_NAMES[self.tonic as usize], mode)
    }
}

impl FromStr for Key {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Domain(format!("malformed key {s:?}, expected e.g. \"C#:min\""));
        let (tonic, mode) = s.trim().split_once(':').ok_or_else(bad)?;
        let mode = match mode {
            "maj" | "major" => Mode::Major,
            "min" | "minor" => Mode::Minor,
            _ => return Err(bad()),
        };
        let mut chars = tonic.chars();
        let letter = chars.next().ok_or_else(bad)?.to_ascii_uppercase();
        let base: i32 = match letter {
            'C' => 0,
            'D' => 2,
            'E' => 4,
            'F' => 5,
            'G' => 7,
            'A' => 9,
            'B' => 11,
            _ => return Err(bad()),
        };
        let accidental: i32 = match chars.as_str() {
            "" => 0,
            "#" => 1,
            "b" => -1,
            _ => return Err(bad()),
        };
        Key::new((base + accidental).rem_euclid(12) as u8, mode)
    }
}

/// Metadata of one track. Tag labels are kept as sets per dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackMetadata {
    pub id: String,
    pub audio_path: PathBuf,
    labels: [BTreeSet<String>; 4],
    pub tempo: Option<f64>,
    pub key: Option<Key>,
}

impl TrackMetadata {
    pub fn new(id: impl Into<String>, audio_path: impl Into<PathBuf>) -> Self {
        Self {
            id: id.into(),
            audio_path: audio_path.into(),
            labels: Default::default(),
            tempo: None,
            key: None,
        }
    }

    /// Labels of a tag dimension. Panics for tempo/key.
    pub fn labels(&self, dim: Dimension) -> &BTreeSet<String> {
        assert!(dim.is_tag(), "{dim} has no label set");
        &self.labels[dim.index()]
    }

    pub fn labels_mut(&mut self, dim: Dimension) -> &mut BTreeSet<String> {
        assert!(dim.is_tag(), "{dim} has no label set");
        &mut self.labels[dim.index()]
    }

    /// Whether the track carries data usable for sampling in `dim`.
    pub fn has(&self, dim: Dimension) -> bool {
        match dim {
            Dimension::Tempo => self.tempo.is_some(),
            Dimension::Key => self.key.is_some(),
            tag => !self.labels[tag.index()].is_empty(),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct ManifestRow {
    id: String,
    path: String,
    #[serde(default)]
    genre: Vec<String>,
    #[serde(default)]
    mood: Vec<String>,
    #[serde(default)]
    instrument: Vec<String>,
    #[serde(default)]
    era: Vec<String>,
    #[serde(default)]
    tempo: Option<f64>,
    #[serde(default)]
    key: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    tags: Vec<String>,
}

/// An immutable, validated collection of tracks.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    root: PathBuf,
    tracks: Vec<TrackMetadata>,
    index: HashMap<String, usize>,
}

impl Corpus {
    pub fn new(root: impl Into<PathBuf>, tracks: Vec<TrackMetadata>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tracks.len());
        for (i, t) in tracks.iter().enumerate() {
            if index.insert(t.id.clone(), i).is_some() {
                return Err(Error::Manifest {
                    row: i + 1,
                    msg: format!("duplicate id {:?}", t.id),
                });
            }
            if let Some(tempo) = t.tempo {
                if !(tempo > 20.0 && tempo < 400.0) {
                    return Err(Error::Manifest {
                        row: i + 1,
                        msg: format!("tempo {tempo} outside (20, 400)"),
                    });
                }
            }
        }
        Ok(Self {
            root: root.into(),
            tracks,
            index,
        })
    }

    pub fn tracks(&self) -> &[TrackMetadata] {
        &self.tracks
    }

    pub fn len(&self) -> usize {
        self.tracks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tracks.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&TrackMetadata> {
        self.index.get(id).map(|&i| &self.tracks[i])
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Audio path resolved against the manifest's directory.
    pub fn audio_path(&self, track: &TrackMetadata) -> PathBuf {
        if track.audio_path.is_absolute() {
            track.audio_path.clone()
        } else {
            self.root.join(&track.audio_path)
        }
    }
}

/// Loads a JSON-lines manifest. Rows may carry raw `tags`, which are grouped
/// through `taxonomy` when one is given.
pub fn load_manifest(path: &Path, taxonomy: Option<&Taxonomy>) -> Result<Corpus> {
    let text = std::fs::read_to_string(path)?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_manifest(&text, root, taxonomy)
}

pub fn parse_manifest(text: &str, root: PathBuf, taxonomy: Option<&Taxonomy>) -> Result<Corpus> {
    let mut tracks = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let row_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| Error::Manifest { row: row_no, msg };
        let row: ManifestRow = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        if row.id.is_empty() {
            return Err(err("empty id".into()));
        }
        if !seen.insert(row.id.clone()) {
            return Err(err(format!("duplicate id {:?}", row.id)));
        }
        if let Some(tempo) = row.tempo {
            if !(tempo > 20.0 && tempo < 400.0) {
                return Err(err(format!("tempo {tempo} outside (20, 400)")));
            }
        }
        let mut t = TrackMetadata::new(row.id, row.path);
        for (dim, labels) in
            Dimension::TAGS
                .iter()
                .zip([row.genre, row.mood, row.instrument, row.era])
        {
            t.labels_mut(*dim).extend(labels);
        }
        if let Some(tax) = taxonomy {
            for (dim, labels) in group_tags(row.tags.iter().map(String::as_str), tax) {
                t.labels_mut(dim).extend(labels);
            }
        }
        t.tempo = row.tempo;
        t.key = match row.key {
            Some(k) => Some(k.parse().map_err(|e: Error| err(e.to_string()))?),
            None => None,
        };
        tracks.push(t);
    }
    Corpus::new(root, tracks)
}

/// Canonical JSON-lines rendering: one row per track in corpus order.
pub fn manifest_to_string(corpus: &Corpus) -> String {
    let mut out = String::new();
    for t in corpus.tracks() {
        let labels = |d: Dimension| t.labels(d).iter().cloned().collect::<Vec<_>>();
        let row = ManifestRow {
            id: t.id.clone(),
            path: t.audio_path.to_string_lossy().into_owned(),
            genre: labels(Dimension::Genre),
            mood: labels(Dimension::Mood),
            instrument: labels(Dimension::Instrument),
            era: labels(Dimension::Era),
            tempo: t.tempo,
            key: t.key.map(|k| k.to_string()),
            tags: Vec::new(),
        };
        out.push_str(&serde_json::to_string(&row).expect("manifest row serializes"));
        out.push('\n');
    }
    out
}

pub fn write_manifest(path: &Path, corpus: &Corpus) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(manifest_to_string(corpus).as_bytes())?;
    Ok(())
}
