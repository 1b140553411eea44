//! Track embeddings, triplet prediction scores over dimension subspaces, the
//! subset sweep and its report files.

mod report;

use std::collections::HashMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::dsp::{AudioClip, FeatureSet};
use crate::error::{Error, Result};
use crate::model::{DimensionMask, Model};
use crate::similarity::Dimension;
use crate::store::{track_features, FeatureStore};
use crate::training::embed_features;

pub use report::{emit_report, radar_svg};

/// A human-annotated similarity triplet over track ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalTriplet {
    pub anchor_id: String,
    pub positive_id: String,
    pub negative_id: String,
    #[serde(default)]
    pub agreement: Option<f64>,
}

/// Reads a CSV with header `anchor_id,positive_id,negative_id[,agreement]`.
pub fn read_triplets(path: &Path) -> Result<Vec<EvalTriplet>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<EvalTriplet>().enumerate() {
        let t = row?;
        if t.anchor_id == t.positive_id || t.anchor_id == t.negative_id || t.positive_id == t.negative_id {
            return Err(Error::Format {
                path: path.to_path_buf(),
                msg: format!("row {}: triplet ids must be distinct", i + 2),
            });
        }
        if let Some(a) = t.agreement {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::Format {
                    path: path.to_path_buf(),
                    msg: format!("row {}: agreement {a} outside [0, 1]", i + 2),
                });
            }
        }
        out.push(t);
    }
    Ok(out)
}

pub fn write_triplets(path: &Path, triplets: &[EvalTriplet]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for t in triplets {
        w.serialize(t)?;
    }
    w.flush()?;
    Ok(())
}

/// Mean of the segment embeddings, without renormalisation.
pub fn track_embedding(model: &Model<f32>, segments: &[FeatureSet]) -> Result<Vec<f64>> {
    if segments.is_empty() {
        return Err(Error::Eval("track has no segments".into()));
    }
    let embs = segments
        .iter()
        .map(|s| embed_features(model, s))
        .collect::<Result<Vec<_>>>()?;
    Ok(mean(&embs))
}

/// Embeds a whole track from audio (3 s segments from the start).
pub fn track_embedding_from_audio(model: &Model<f32>, clip: &AudioClip) -> Result<Vec<f64>> {
    track_embedding(model, &track_features(clip)?)
}

fn mean(vectors: &[Vec<f64>]) -> Vec<f64> {
    let mut out = vec![0.0; vectors[0].len()];
    for v in vectors {
        for (a, b) in out.iter_mut().zip(v) {
            *a += b;
        }
    }
    let n = vectors.len() as f64;
    out.iter_mut().for_each(|v| *v /= n);
    out
}

/// Track embeddings for a whole corpus keyed by track id.
pub fn embed_corpus(model: &Model<f32>, corpus: &Corpus, store: &FeatureStore) -> Result<HashMap<String, Vec<f64>>> {
    corpus
        .tracks()
        .par_iter()
        .enumerate()
        .map(|(i, t)| Ok((t.id.clone(), track_embedding(model, store.segments(i))?)))
        .collect()
}

/// Euclidean distance over the union of the mask ranges in `subset`.
pub fn subspace_distance(e1: &[f64], e2: &[f64], subset: &[usize], mask: &DimensionMask) -> Result<f64> {
    if subset.is_empty() {
        return Err(Error::Domain("empty dimension subset".into()));
    }
    let mut sum = 0.0;
    for (i, keep) in mask.selector(subset).into_iter().enumerate() {
        if keep {
            let d = e1[i] - e2[i];
            sum += d * d;
        }
    }
    Ok(sum.sqrt())
}

pub type Embeddings = HashMap<String, Vec<f64>>;

fn lookup<'a>(emb: &'a Embeddings, id: &str) -> Result<&'a [f64]> {
    emb.get(id)
        .map(Vec::as_slice)
        .ok_or_else(|| Error::Eval(format!("no embedding for track {id}")))
}

/// True iff the positive is strictly closer to the anchor than the negative.
pub fn triplet_correct(t: &EvalTriplet, emb: &Embeddings, subset: &[usize], mask: &DimensionMask) -> Result<bool> {
    let a = lookup(emb, &t.anchor_id)?;
    let p = lookup(emb, &t.positive_id)?;
    let n = lookup(emb, &t.negative_id)?;
    Ok(subspace_distance(a, p, subset, mask)? < subspace_distance(a, n, subset, mask)?)
}

pub fn triplet_prediction_score(
    triplets: &[EvalTriplet],
    emb: &Embeddings,
    subset: &[usize],
    mask: &DimensionMask,
) -> Result<f64> {
    if triplets.is_empty() {
        return Err(Error::Eval("no triplets to score".into()));
    }
    let mut correct = 0usize;
    for t in triplets {
        if triplet_correct(t, emb, subset, mask)? {
            correct += 1;
        }
    }
    Ok(correct as f64 / triplets.len() as f64)
}

/// Keeps triplets with agreement at or above `threshold`; unannotated
/// triplets are dropped with a warning.
pub fn filter_high_agreement(triplets: &[EvalTriplet], threshold: f64) -> Vec<EvalTriplet> {
    let missing = triplets.iter().filter(|t| t.agreement.is_none()).count();
    if missing > 0 {
        log::warn!("{missing} triplets without agreement were excluded");
    }
    triplets
        .iter()
        .filter(|t| t.agreement.is_some_and(|a| a >= threshold))
        .cloned()
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    /// Bit `s` set when dimension `s` is active.
    pub bitmask: u32,
    pub dims: Vec<Dimension>,
    pub score: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub dims: Vec<Dimension>,
    /// Every nonempty subset, best score first (ties by bitmask).
    pub rows: Vec<SweepRow>,
    pub singletons: Vec<(Dimension, f64)>,
}

impl SweepReport {
    pub fn row(&self, bitmask: u32) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.bitmask == bitmask)
    }

    pub fn full_mask(&self) -> u32 {
        (1u32 << self.dims.len()) - 1
    }
}

pub fn subset_from_bitmask(bitmask: u32, n: usize) -> Vec<usize> {
    (0..n).filter(|s| bitmask & (1 << s) != 0).collect()
}

/// Scores all `2^N - 1` nonempty subsets of `dims`.
pub fn dimension_sweep(triplets: &[EvalTriplet], emb: &Embeddings, dims: &[Dimension]) -> Result<SweepReport> {
    let n = dims.len();
    if n == 0 || n > 6 {
        return Err(Error::Eval(format!("cannot sweep {n} dimensions")));
    }
    let width = emb.values().next().map(Vec::len).ok_or_else(|| Error::Eval("no embeddings".into()))?;
    let mask = DimensionMask::new(width, n)?;
    let mut rows = (1u32..(1 << n))
        .map(|bits| {
            let subset = subset_from_bitmask(bits, n);
            Ok(SweepRow {
                bitmask: bits,
                dims: subset.iter().map(|&s| dims[s]).collect(),
                score: triplet_prediction_score(triplets, emb, &subset, &mask)?,
                n: triplets.len(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.bitmask.cmp(&b.bitmask)));
    let singletons = (0..n)
        .map(|s| {
            let r = rows.iter().find(|r| r.bitmask == 1 << s).unwrap();
            (dims[s], r.score)
        })
        .collect();
    Ok(SweepReport {
        dims: dims.to_vec(),
        rows,
        singletons,
    })
}

/// One triplet per track whose three tracks agree on every dimension except
/// `vary`: the positive matches the anchor on `vary`, the negative does not.
/// Partners are the next matching tracks in corpus order (cyclically).
pub fn controlled_triplets(corpus: &Corpus, vary: Dimension) -> Result<Vec<EvalTriplet>> {
    let tracks = corpus.tracks();
    let fingerprint = |i: usize| {
        let t = &tracks[i];
        let mut parts: Vec<String> = Dimension::TAGS
            .iter()
            .filter(|&&d| d != vary)
            .map(|&d| format!("{:?}", t.labels(d)))
            .collect();
        if vary != Dimension::Tempo {
            parts.push(format!("{:?}", t.tempo.map(f64::to_bits)));
        }
        if vary != Dimension::Key {
            parts.push(format!("{:?}", t.key));
        }
        parts.join("|")
    };
    let prints: Vec<String> = (0..tracks.len()).map(fingerprint).collect();
    let mut out = Vec::new();
    for a in 0..tracks.len() {
        let mut positive = None;
        let mut negative = None;
        for k in 1..tracks.len() {
            let j = (a + k) % tracks.len();
            if prints[j] != prints[a] {
                continue;
            }
            if crate::similarity::dimension_similar(&tracks[a], &tracks[j], vary)? {
                positive = positive.or(Some(j));
            } else {
                negative = negative.or(Some(j));
            }
        }
        if let (Some(p), Some(n)) = (positive, negative) {
            out.push(EvalTriplet {
                anchor_id: tracks[a].id.clone(),
                positive_id: tracks[p].id.clone(),
                negative_id: tracks[n].id.clone(),
                agreement: None,
            });
        }
    }
    Ok(out)
}

/// Parses `all` or a comma-separated list of dimension names into mask
/// indices of the first `n` dimensions.
pub fn parse_subset(text: &str, n: usize) -> Result<Vec<usize>> {
    if text.trim().eq_ignore_ascii_case("all") {
        return Ok((0..n).collect());
    }
    let mut out = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let d: Dimension = part.parse()?;
        if d.index() >= n {
            return Err(Error::Config(format!("dimension {d} is not part of a {n}-dimension model")));
        }
        if !out.contains(&d.index()) {
            out.push(d.index());
        }
    }
    if out.is_empty() {
        return Err(Error::Domain("empty dimension subset".into()));
    }
    out.sort_unstable();
    Ok(out)
}
