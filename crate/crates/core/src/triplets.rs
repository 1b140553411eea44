//! Conditional triplet sampling with semi-hard negative mining.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::model::DimensionMask;
use crate::similarity::{dimension_similar, Dimension};
use crate::training::cosine_distance;

pub const DEFAULT_POOL_SIZE: usize = 64;
pub const DEFAULT_RETRIES: usize = 10;
pub const MINING_MARGIN: f64 = 0.1;

/// A 3 s segment of a corpus track (track index, segment index).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SegmentRef {
    pub track: usize,
    pub segment: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditionalTriplet {
    pub anchor: SegmentRef,
    pub positive: SegmentRef,
    pub negative: SegmentRef,
    pub dimension: Dimension,
}

/// Similar and dissimilar partners of every track, per dimension.
/// Tracks without data for a dimension appear in neither list.
#[derive(Debug, Clone)]
pub struct SimilarityIndex {
    similar: Vec<Vec<Vec<usize>>>,
    dissimilar: Vec<Vec<Vec<usize>>>,
    members: Vec<bool>,
}

impl SimilarityIndex {
    pub fn build(corpus: &Corpus) -> Result<Self> {
        let tracks = corpus.tracks();
        let mut similar = Vec::new();
        let mut dissimilar = Vec::new();
        for dim in Dimension::ALL {
            let mut sim = vec![Vec::new(); tracks.len()];
            let mut dis = vec![Vec::new(); tracks.len()];
            for i in 0..tracks.len() {
                if !tracks[i].has(dim) {
                    continue;
                }
                for j in 0..tracks.len() {
                    if i == j || !tracks[j].has(dim) {
                        continue;
                    }
                    if dimension_similar(&tracks[i], &tracks[j], dim)? {
                        sim[i].push(j);
                    } else {
                        dis[i].push(j);
                    }
                }
            }
            similar.push(sim);
            dissimilar.push(dis);
        }
        Ok(Self {
            similar,
            dissimilar,
            members: vec![true; tracks.len()],
        })
    }

    /// Sub-index over the tracks with `keep[t]`; other tracks are neither
    /// sampled nor offered as partners.
    pub fn restrict(&self, keep: &[bool]) -> Self {
        let filter = |lists: &Vec<Vec<Vec<usize>>>| -> Vec<Vec<Vec<usize>>> {
            lists
                .iter()
                .map(|per_track| {
                    per_track
                        .iter()
                        .enumerate()
                        .map(|(t, l)| {
                            if keep[t] && self.members[t] {
                                l.iter().copied().filter(|&o| keep[o]).collect()
                            } else {
                                Vec::new()
                            }
                        })
                        .collect()
                })
                .collect()
        };
        Self {
            similar: filter(&self.similar),
            dissimilar: filter(&self.dissimilar),
            members: self
                .members
                .iter()
                .zip(keep)
                .map(|(&m, &k)| m && k)
                .collect(),
        }
    }

    pub fn is_member(&self, track: usize) -> bool {
        self.members[track]
    }

    pub fn similar(&self, dim: Dimension, track: usize) -> &[usize] {
        &self.similar[dim.index()][track]
    }

    pub fn dissimilar(&self, dim: Dimension, track: usize) -> &[usize] {
        &self.dissimilar[dim.index()][track]
    }

    pub fn num_tracks(&self) -> usize {
        self.similar[0].len()
    }
}

/// Draws an anchor with at least one similar partner, then a positive from
/// a different track; segments are uniform over each track.
pub fn sample_anchor_positive(
    index: &SimilarityIndex,
    segments: &[usize],
    dim: Dimension,
    rng: &mut impl Rng,
) -> Result<(SegmentRef, SegmentRef)> {
    let anchors: Vec<usize> = (0..index.num_tracks())
        .filter(|&t| !index.similar(dim, t).is_empty())
        .collect();
    let &a = anchors.choose(rng).ok_or(Error::Exhausted(dim))?;
    let &p = index.similar(dim, a).choose(rng).expect("nonempty");
    Ok((segment_of(a, segments, rng), segment_of(p, segments, rng)))
}

fn segment_of(track: usize, segments: &[usize], rng: &mut impl Rng) -> SegmentRef {
    SegmentRef {
        track,
        segment: rng.gen_range(0..segments[track].max(1)),
    }
}

/// Semi-hard choice among candidate anchor-negative distances: the smallest
/// `d_an` in `(d_ap, d_ap + margin)`, else the smallest `d_an > d_ap`, else the
/// largest `d_an`. Returns the candidate position.
pub fn select_semi_hard(d_ap: f64, d_an: &[f64], margin: f64) -> Result<usize> {
    if d_an.is_empty() {
        return Err(Error::NoNegatives);
    }
    let argmin_where = |pred: &dyn Fn(f64) -> bool| {
        d_an.iter()
            .enumerate()
            .filter(|(_, &d)| pred(d))
            .min_by(|x, y| x.1.total_cmp(y.1))
            .map(|(i, _)| i)
    };
    if let Some(i) = argmin_where(&|d| d > d_ap && d < d_ap + margin) {
        return Ok(i);
    }
    if let Some(i) = argmin_where(&|d| d > d_ap) {
        return Ok(i);
    }
    Ok(d_an
        .iter()
        .enumerate()
        .max_by(|x, y| x.1.total_cmp(y.1))
        .map(|(i, _)| i)
        .unwrap())
}

/// Picks the semi-hard negative among `candidates` using masked cosine
/// distances in the subspace of dimension `s`.
pub fn mine_semi_hard_negative<I: Copy>(
    anchor: &[f64],
    positive: &[f64],
    candidates: &[(I, Vec<f64>)],
    mask: &DimensionMask,
    s: usize,
    margin: f64,
) -> Result<I> {
    let r = mask.range(s);
    let d_ap = cosine_distance(&anchor[r.clone()], &positive[r.clone()]);
    let d_an: Vec<f64> = candidates
        .iter()
        .map(|(_, e)| cosine_distance(&anchor[r.clone()], &e[r.clone()]))
        .collect();
    select_semi_hard(d_ap, &d_an, margin).map(|i| candidates[i].0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchConfig {
    pub batch_size: usize,
    pub pool_size: usize,
    pub retries: usize,
    pub margin: f64,
}

impl Default for BatchConfig {
    fn default() -> Self {
        Self {
            batch_size: 24,
            pool_size: DEFAULT_POOL_SIZE,
            retries: DEFAULT_RETRIES,
            margin: MINING_MARGIN,
        }
    }
}

struct Draft {
    anchor: SegmentRef,
    positive: SegmentRef,
    pool: Vec<SegmentRef>,
    dim_slot: usize,
}

/// Builds a batch with an equal quota of triplets per dimension, emitted
/// round-robin. `embed` maps segments to embeddings under a frozen model and
/// is called once for every distinct segment the batch needs.
pub fn build_batch<F>(
    index: &SimilarityIndex,
    segments: &[usize],
    dims: &[Dimension],
    mask: &DimensionMask,
    config: &BatchConfig,
    rng: &mut impl Rng,
    embed: F,
) -> Result<Vec<ConditionalTriplet>>
where
    F: FnOnce(&[SegmentRef]) -> Result<Vec<Vec<f64>>>,
{
    if dims.is_empty() || config.batch_size % dims.len() != 0 {
        return Err(Error::Batch(format!(
            "batch size {} is not divisible by {} dimensions",
            config.batch_size,
            dims.len()
        )));
    }
    let quota = config.batch_size / dims.len();
    // One independent stream per dimension keeps draws stable if the
    // sampling of one dimension changes.
    let mut streams: Vec<ChaCha8Rng> = dims
        .iter()
        .map(|_| ChaCha8Rng::seed_from_u64(rng.gen()))
        .collect();
    let mut per_dim: Vec<Vec<Draft>> = Vec::with_capacity(dims.len());
    for (slot, (&dim, stream)) in dims.iter().zip(streams.iter_mut()).enumerate() {
        let mut drafts = Vec::with_capacity(quota);
        while drafts.len() < quota {
            let mut last_err = None;
            let mut draft = None;
            for _ in 0..=config.retries {
                match draft_triplet(index, segments, dim, slot, config.pool_size, stream) {
                    Ok(d) => {
                        draft = Some(d);
                        break;
                    }
                    Err(e @ (Error::Exhausted(_) | Error::NoNegatives)) => last_err = Some(e),
                    Err(e) => return Err(e),
                }
            }
            match draft {
                Some(d) => drafts.push(d),
                None => {
                    return Err(Error::Batch(format!(
                        "dimension {dim}: {} after {} retries",
                        last_err.expect("an error was recorded"),
                        config.retries
                    )))
                }
            }
        }
        per_dim.push(drafts);
    }

    let mut needed: Vec<SegmentRef> = per_dim
        .iter()
        .flatten()
        .flat_map(|d| {
            [d.anchor, d.positive]
                .into_iter()
                .chain(d.pool.iter().copied())
        })
        .collect();
    needed.sort_unstable();
    needed.dedup();
    let embeddings = embed(&needed)?;
    if embeddings.len() != needed.len() {
        return Err(Error::Batch(
            "embedder returned the wrong number of vectors".into(),
        ));
    }
    let lookup =
        |s: &SegmentRef| &embeddings[needed.binary_search(s).expect("segment was requested")];

    let mut batch = Vec::with_capacity(config.batch_size);
    for q in 0..quota {
        for drafts in &per_dim {
            let d = &drafts[q];
            let dim = dims[d.dim_slot];
            let candidates: Vec<(SegmentRef, Vec<f64>)> =
                d.pool.iter().map(|s| (*s, lookup(s).clone())).collect();
            let negative = mine_semi_hard_negative(
                lookup(&d.anchor),
                lookup(&d.positive),
                &candidates,
                mask,
                d.dim_slot,
                config.margin,
            )?;
            batch.push(ConditionalTriplet {
                anchor: d.anchor,
                positive: d.positive,
                negative,
                dimension: dim,
            });
        }
    }
    Ok(batch)
}

fn draft_triplet(
    index: &SimilarityIndex,
    segments: &[usize],
    dim: Dimension,
    dim_slot: usize,
    pool_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Draft> {
    let (anchor, positive) = sample_anchor_positive(index, segments, dim, rng)?;
    let dissimilar = index.dissimilar(dim, anchor.track);
    if dissimilar.is_empty() {
        return Err(Error::NoNegatives);
    }
    let pool = dissimilar
        .choose_multiple(rng, pool_size.min(dissimilar.len()))
        .map(|&t| segment_of(t, segments, rng))
        .collect();
    Ok(Draft {
        anchor,
        positive,
        pool,
        dim_slot,
    })
}

/// Checks the similarity invariants of a triplet against the corpus.
pub fn check_triplet(corpus: &Corpus, t: &ConditionalTriplet) -> Result<bool> {
    let tr = corpus.tracks();
    let (a, p, n) = (
        &tr[t.anchor.track],
        &tr[t.positive.track],
        &tr[t.negative.track],
    );
    Ok(t.anchor.track != t.positive.track
        && t.anchor.track != t.negative.track
        && t.positive.track != t.negative.track
        && dimension_similar(a, p, t.dimension)?
        && !dimension_similar(a, n, t.dimension)?)
}
