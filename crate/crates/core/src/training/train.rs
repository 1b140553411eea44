//! Epoch loop: mined batches, masked triplet losses, Adam, plateau schedule,
//! validation split, history CSV and best checkpoint.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::loss::{conditional_triplet_loss, masked_cosine_distance, multi_dim_loss};
use super::optim::{Adam, PlateauSchedule};
use crate::corpus::Corpus;
use crate::dsp::FeatureSet;
use crate::error::{Error, Result};
use crate::model::{save_checkpoint, DimensionMask, Model, ModelConfig, ModelInput};
use crate::similarity::Dimension;
use crate::store::FeatureStore;
use crate::triplets::{build_batch, BatchConfig, ConditionalTriplet, SegmentRef, SimilarityIndex};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub lr_factor: f64,
    pub patience: usize,
    pub lr_min: f64,
    pub margin: f64,
    pub batch_size: usize,
    /// Batches per epoch; `None` takes one batch per `batch_size` training tracks.
    pub batches_per_epoch: Option<usize>,
    pub epochs: usize,
    pub seed: u64,
    pub pool_size: usize,
    pub retries: usize,
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-5,
            lr_factor: 0.2,
            patience: 10,
            lr_min: 1e-10,
            margin: 0.1,
            batch_size: 24,
            batches_per_epoch: None,
            epochs: 100,
            seed: 0,
            pool_size: crate::triplets::DEFAULT_POOL_SIZE,
            retries: crate::triplets::DEFAULT_RETRIES,
            val_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
    pub per_dim: Vec<f64>,
}

pub struct TrainOutcome {
    pub model: Model<f32>,
    pub best: Model<f32>,
    pub history: Vec<EpochRecord>,
}

/// Tracks whose id hashes into the lowest `fraction` of the hash range.
pub fn validation_split(corpus: &Corpus, fraction: f64) -> Vec<bool> {
    corpus
        .tracks()
        .iter()
        .map(|t| {
            let h = Sha256::digest(t.id.as_bytes());
            let v = u64::from_le_bytes(h[..8].try_into().unwrap());
            (v as f64 / u64::MAX as f64) < fraction
        })
        .collect()
}

pub fn embed_features(model: &Model<f32>, fs: &FeatureSet) -> Result<Vec<f64>> {
    let e = model.embed(&ModelInput::from_features(fs))?;
    Ok(e.into_iter().map(f64::from).collect())
}

/// Embeddings of many segments under one frozen model.
pub fn embed_segments(
    model: &Model<f32>,
    store: &FeatureStore,
    segs: &[SegmentRef],
) -> Result<Vec<Vec<f64>>> {
    segs.par_iter()
        .map(|s| embed_features(model, &store.segments(s.track)[s.segment]))
        .collect()
}

pub struct BatchLoss {
    pub total: f64,
    pub per_dim: Vec<f64>,
    /// Embedding gradient of the total loss per segment.
    pub grads: BTreeMap<SegmentRef, Vec<f64>>,
}

/// Multi-dimensional loss of a batch, each dimension averaged over its own
/// triplets, plus per-segment gradients.
pub fn batch_loss(
    batch: &[ConditionalTriplet],
    embeddings: &BTreeMap<SegmentRef, Vec<f64>>,
    dims: &[Dimension],
    mask: &DimensionMask,
    margin: f64,
) -> Result<BatchLoss> {
    let mut sums = vec![0.0; dims.len()];
    let mut counts = vec![0usize; dims.len()];
    for t in batch {
        let slot = dims
            .iter()
            .position(|&d| d == t.dimension)
            .ok_or_else(|| Error::Batch(format!("unexpected dimension {}", t.dimension)))?;
        counts[slot] += 1;
    }
    let mut grads: BTreeMap<SegmentRef, Vec<f64>> = BTreeMap::new();
    let get = |s: &SegmentRef| {
        embeddings
            .get(s)
            .ok_or_else(|| Error::Batch("missing embedding".into()))
    };
    for t in batch {
        let slot = dims.iter().position(|&d| d == t.dimension).unwrap();
        let l = conditional_triplet_loss(
            get(&t.anchor)?,
            get(&t.positive)?,
            get(&t.negative)?,
            mask,
            slot,
            margin,
        );
        sums[slot] += l.value;
        if l.value > 0.0 {
            let w = 1.0 / (dims.len() * counts[slot]) as f64;
            for (seg, g) in [
                (t.anchor, &l.grad_anchor),
                (t.positive, &l.grad_positive),
                (t.negative, &l.grad_negative),
            ] {
                let acc = grads.entry(seg).or_insert_with(|| vec![0.0; g.len()]);
                for (a, b) in acc.iter_mut().zip(g) {
                    *a += w * b;
                }
            }
        }
    }
    let per_dim: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
        .collect();
    Ok(BatchLoss {
        total: multi_dim_loss(&per_dim)?,
        per_dim,
        grads,
    })
}

struct Trainer<'a> {
    store: &'a FeatureStore,
    counts: Vec<usize>,
    dims: &'a [Dimension],
    mask: DimensionMask,
    batch: BatchConfig,
    margin: f64,
}

impl Trainer<'_> {
    /// Builds and mines a batch against `model`, returning the batch and the
    /// embeddings of every segment it touched.
    fn mined_batch(
        &self,
        model: &Model<f32>,
        index: &SimilarityIndex,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Vec<ConditionalTriplet>, BTreeMap<SegmentRef, Vec<f64>>)> {
        let mut snapshot = BTreeMap::new();
        let batch = build_batch(
            index,
            &self.counts,
            self.dims,
            &self.mask,
            &self.batch,
            rng,
            |segs| {
                let e = embed_segments(model, self.store, segs)?;
                snapshot.extend(segs.iter().copied().zip(e.iter().cloned()));
                Ok(e)
            },
        )?;
        Ok((batch, snapshot))
    }

    fn step(
        &self,
        model: &mut Model<f32>,
        adam: &mut Adam,
        lr: f64,
        index: &SimilarityIndex,
        rng: &mut ChaCha8Rng,
    ) -> Result<BatchLoss> {
        let (batch, snapshot) = self.mined_batch(model, index, rng)?;
        let loss = batch_loss(&batch, &snapshot, self.dims, &self.mask, self.margin)?;
        let mut grads = model.zero_grads();
        for (seg, de) in &loss.grads {
            let input = ModelInput::from_features(&self.store.segments(seg.track)[seg.segment]);
            let (_, trace) = model.forward(&input)?;
            let de: Vec<f32> = de.iter().map(|&v| v as f32).collect();
            model.backward(&trace, &de, &mut grads)?;
        }
        adam.step(model.params_mut(), &grads, lr)?;
        Ok(loss)
    }

    fn validation_loss(
        &self,
        model: &Model<f32>,
        index: &SimilarityIndex,
        seed: u64,
    ) -> Result<Option<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match self.mined_batch(model, index, &mut rng) {
            Ok((batch, snapshot)) => Ok(Some(
                batch_loss(&batch, &snapshot, self.dims, &self.mask, self.margin)?.total,
            )),
            Err(Error::Batch(msg)) => {
                log::debug!("validation batch unavailable: {msg}");
                Ok(None)
            }
            Err(e) => Err(e),
        }
    }
}

fn history_header(dims: &[Dimension]) -> Vec<String> {
    let mut h: Vec<String> = ["epoch", "train_loss", "val_loss", "lr"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    h.extend(dims.iter().map(|d| format!("loss_{d}")));
    h
}

pub fn write_history(path: &Path, dims: &[Dimension], history: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(history_header(dims))?;
    for r in history {
        let mut row = vec![
            r.epoch.to_string(),
            format!("{:e}", r.train_loss),
            format!("{:e}", r.val_loss),
            format!("{:e}", r.lr),
        ];
        row.extend(r.per_dim.iter().map(|v| format!("{v:e}")));
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Validation-split loss of `model` as computed at the end of every epoch.
pub fn validation_loss(
    model: &Model<f32>,
    cfg: &TrainConfig,
    corpus: &Corpus,
    store: &FeatureStore,
) -> Result<Option<f64>> {
    let (trainer, _, val_index) = setup(model.config(), cfg, corpus, store)?;
    trainer.validation_loss(model, &val_index, cfg.seed ^ VAL_SEED)
}

const VAL_SEED: u64 = 0x5eed_0f_7a1;

fn setup<'a>(
    model_cfg: &'a ModelConfig,
    cfg: &TrainConfig,
    corpus: &Corpus,
    store: &'a FeatureStore,
) -> Result<(Trainer<'a>, SimilarityIndex, SimilarityIndex)> {
    if store.len() != corpus.len() {
        return Err(Error::Config("feature store does not match corpus".into()));
    }
    let is_val = validation_split(corpus, cfg.val_fraction);
    let full = SimilarityIndex::build(corpus)?;
    let train_index = full.restrict(&is_val.iter().map(|v| !v).collect::<Vec<_>>());
    let val_index = full.restrict(&is_val);
    let trainer = Trainer {
        store,
        counts: store.segment_counts(),
        dims: model_cfg.dimensions(),
        mask: model_cfg.mask(),
        batch: BatchConfig {
            batch_size: cfg.batch_size,
            pool_size: cfg.pool_size,
            retries: cfg.retries,
            margin: crate::triplets::MINING_MARGIN,
        },
        margin: cfg.margin,
    };
    Ok((trainer, train_index, val_index))
}

/// Trains a fresh model. `on_epoch` sees every record and the current model
/// and may stop training by returning `false`. With `out_dir`, the history
/// CSV and best checkpoint are written there after every epoch.
pub fn train_loop(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    corpus: &Corpus,
    store: &FeatureStore,
    out_dir: Option<&Path>,
    mut on_epoch: impl FnMut(&EpochRecord, &Model<f32>) -> bool,
) -> Result<TrainOutcome> {
    let mut model = Model::<f32>::new(model_cfg.clone())?;
    let (trainer, train_index, val_index) = setup(model_cfg, cfg, corpus, store)?;
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
    }
    let train_tracks = (0..corpus.len())
        .filter(|&t| train_index.is_member(t))
        .count();
    let batches = cfg
        .batches_per_epoch
        .unwrap_or_else(|| (train_tracks / cfg.batch_size.max(1)).max(1));
    let mut adam = Adam::new(model.params());
    let mut schedule = PlateauSchedule::new(cfg.lr, cfg.lr_factor, cfg.patience, cfg.lr_min);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut history = Vec::new();
    let mut best = model.clone();
    let mut best_val = f64::INFINITY;
    for epoch in 1..=cfg.epochs {
        let lr = schedule.lr;
        let mut total = 0.0;
        let mut per_dim = vec![0.0; trainer.dims.len()];
        for _ in 0..batches {
            let l = match trainer.step(&mut model, &mut adam, lr, &train_index, &mut rng) {
                Ok(l) => l,
                Err(e) => {
                    if let Some(dir) = out_dir {
                        write_history(&dir.join("history.csv"), trainer.dims, &history)?;
                    }
                    return Err(e);
                }
            };
            total += l.total / batches as f64;
            for (a, b) in per_dim.iter_mut().zip(&l.per_dim) {
                *a += b / batches as f64;
            }
        }
        let val = trainer
            .validation_loss(&model, &val_index, cfg.seed ^ VAL_SEED)?
            .unwrap_or(total);
        schedule.observe(val);
        if val < best_val {
            best_val = val;
            best = model.clone();
            if let Some(dir) = out_dir {
                save_checkpoint(&best, &dir.join("best.ckpt"))?;
            }
        }
        let record = EpochRecord {
            epoch,
            train_loss: total,
            val_loss: val,
            lr,
            per_dim,
        };
        log::info!(
            "epoch {epoch}: train {:.5} val {:.5} lr {:e}",
            record.train_loss,
            record.val_loss,
            record.lr
        );
        history.push(record);
        if let Some(dir) = out_dir {
            write_history(&dir.join("history.csv"), trainer.dims, &history)?;
        }
        if !on_epoch(history.last().unwrap(), &model) {
            break;
        }
    }
    Ok(TrainOutcome {
        model,
        best,
        history,
    })
}

/// Triplets with uniformly drawn (unmined) negatives, for accuracy probes.
pub fn sample_probe_triplets(
    index: &SimilarityIndex,
    counts: &[usize],
    dims: &[Dimension],
    per_dim: usize,
    seed: u64,
) -> Result<Vec<ConditionalTriplet>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for &dim in dims {
        for _ in 0..per_dim {
            let (anchor, positive) =
                crate::triplets::sample_anchor_positive(index, counts, dim, &mut rng)?;
            let &n = index
                .dissimilar(dim, anchor.track)
                .choose(&mut rng)
                .ok_or(Error::NoNegatives)?;
            out.push(ConditionalTriplet {
                anchor,
                positive,
                negative: SegmentRef {
                    track: n,
                    segment: rng.gen_range(0..counts[n].max(1)),
                },
                dimension: dim,
            });
        }
    }
    Ok(out)
}

/// Per-dimension fraction of triplets with `d(a,p) < d(a,n)` under the
/// masked cosine distance.
pub fn triplet_accuracy(
    model: &Model<f32>,
    store: &FeatureStore,
    triplets: &[ConditionalTriplet],
) -> Result<Vec<f64>> {
    let cfg = model.config();
    let dims = cfg.dimensions();
    let mask = cfg.mask();
    let mut segs: Vec<SegmentRef> = triplets
        .iter()
        .flat_map(|t| [t.anchor, t.positive, t.negative])
        .collect();
    segs.sort_unstable();
    segs.dedup();
    let emb = embed_segments(model, store, &segs)?;
    let get = |s: &SegmentRef| &emb[segs.binary_search(s).unwrap()];
    let mut hits = vec![0usize; dims.len()];
    let mut totals = vec![0usize; dims.len()];
    for t in triplets {
        let slot = t.dimension.index();
        let d_ap = masked_cosine_distance(get(&t.anchor), get(&t.positive), &mask, slot);
        let d_an = masked_cosine_distance(get(&t.anchor), get(&t.negative), &mask, slot);
        totals[slot] += 1;
        if d_ap < d_an {
            hits[slot] += 1;
        }
    }
    Ok(hits
        .iter()
        .zip(&totals)
        .map(|(&h, &n)| if n > 0 { h as f64 / n as f64 } else { f64::NAN })
        .collect())
}

/// Index restricted to the training split, for probes and tests.
pub fn training_index(corpus: &Corpus, cfg: &TrainConfig) -> Result<SimilarityIndex> {
    let is_val = validation_split(corpus, cfg.val_fraction);
    Ok(SimilarityIndex::build(corpus)?.restrict(&is_val.iter().map(|v| !v).collect::<Vec<_>>()))
}
