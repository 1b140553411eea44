//! Per-dimension similarity predicates.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{Key, TrackMetadata};
use crate::error::{Error, Result};

/// A musical dimension; the declaration order fixes the mask layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dimension {
    Genre,
    Mood,
    Instrument,
    Era,
    Tempo,
    Key,
}

impl Dimension {
    pub const ALL: [Dimension; 6] = [
        Dimension::Genre,
        Dimension::Mood,
        Dimension::Instrument,
        Dimension::Era,
        Dimension::Tempo,
        Dimension::Key,
    ];

    /// The four tag-derived dimensions.
    pub const TAGS: [Dimension; 4] = [
        Dimension::Genre,
        Dimension::Mood,
        Dimension::Instrument,
        Dimension::Era,
    ];

    /// The first `n` dimensions (4 or 6).
    pub fn first(n: usize) -> Result<&'static [Dimension]> {
        match n {
            1..=6 => Ok(&Self::ALL[..n]),
            _ => Err(Error::Config(format!(
                "dimension count must be 1..=6, got {n}"
            ))),
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Dimension::Genre => "genre",
            Dimension::Mood => "mood",
            Dimension::Instrument => "instrument",
            Dimension::Era => "era",
            Dimension::Tempo => "tempo",
            Dimension::Key => "key",
        }
    }

    pub fn is_tag(self) -> bool {
        self.index() < 4
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Dimension {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|d| d.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown dimension {s:?}")))
    }
}

/// Largest tempo-octave exponent considered.
pub const MAX_OCTAVE_SHIFT: i32 = 3;
pub const TEMPO_MARGIN_BPM: f64 = 5.0;

/// Two tempi are similar when some octave shift of the first, `t1 * 2^k`
/// with `|k| <= 3`, lies within 5 bpm of the second.
pub fn tempo_similar(t1: f64, t2: f64) -> Result<bool> {
    if !(t1 > 0.0 && t2 > 0.0) {
        return Err(Error::Domain(format!(
            "tempi must be positive, got {t1} and {t2}"
        )));
    }
    Ok((-MAX_OCTAVE_SHIFT..=MAX_OCTAVE_SHIFT)
        .any(|k| (t1 * 2f64.powi(k) - t2).abs() <= TEMPO_MARGIN_BPM))
}

/// Same key or parallel key (same tonic, other mode).
pub fn key_similar(k1: Key, k2: Key) -> bool {
    k1.tonic == k2.tonic
}

pub fn label_similar(a: &BTreeSet<String>, b: &BTreeSet<String>) -> bool {
    !a.is_disjoint(b)
}

/// Dispatches to the predicate for `dim`.
pub fn dimension_similar(a: &TrackMetadata, b: &TrackMetadata, dim: Dimension) -> Result<bool> {
    let unavailable = |t: &TrackMetadata| Error::Unavailable {
        track: t.id.clone(),
        dim,
    };
    for t in [a, b] {
        if !t.has(dim) {
            return Err(unavailable(t));
        }
    }
    match dim {
        Dimension::Tempo => tempo_similar(a.tempo.unwrap(), b.tempo.unwrap()),
        Dimension::Key => Ok(key_similar(a.key.unwrap(), b.key.unwrap())),
        tag => Ok(label_similar(a.labels(tag), b.labels(tag))),
    }
}
