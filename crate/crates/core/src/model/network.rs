//! Single-input and multi-input embedding backbones.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::inception::{Inception, InceptionCache, InceptionKind};
use super::layers::{
    layer_norm, layer_norm_backward, Conv2d, ConvCache, Dense, MaxPool, PoolCache,
};
use super::params::{Gradients, ParamStore};
use super::tensor::{Map, Scalar};
use crate::dsp::{zscore, FeatureSet, TimeFrequencyMap};
use crate::error::{Error, Result};

/// Network inputs as single-channel maps (frequency x frames).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput<T> {
    pub mel: Map<T>,
    pub cyclic: Map<T>,
    pub chroma: Map<T>,
}

fn to_map<T: Scalar>(m: &TimeFrequencyMap) -> Map<T> {
    Map::from_vec(
        1,
        m.bins(),
        m.frames(),
        m.values().iter().map(|&v| T::from_f64(v)).collect(),
    )
}

impl<T: Scalar> ModelInput<T> {
    /// The mel map is used as stored; the cyclic tempogram and CENS are
    /// z-scored per segment.
    pub fn from_features(f: &FeatureSet) -> Self {
        Self {
            mel: to_map(&f.mel),
            cyclic: to_map(&zscore(&f.cyclic_tempogram)),
            chroma: to_map(&zscore(&f.cens)),
        }
    }

    pub fn zeros(cfg: &ModelConfig) -> Self {
        let g = &cfg.input;
        Self {
            mel: Map::zeros(1, g.mel.0, g.mel.1),
            cyclic: Map::zeros(1, g.cyclic.0, g.cyclic.1),
            chroma: Map::zeros(1, g.chroma.0, g.chroma.1),
        }
    }
}

/// Appends zero rows along the frequency axis up to `rows`.
pub fn zero_pad_freq<T: Scalar>(x: &Map<T>, rows: usize) -> Result<Map<T>> {
    if x.h > rows {
        return Err(Error::Shape(format!("cannot pad {} rows to {rows}", x.h)));
    }
    let mut out = Map::zeros(x.c, rows, x.w);
    for c in 0..x.c {
        out.data[c * rows * x.w..(c * rows + x.h) * x.w].copy_from_slice(x.channel(c));
    }
    Ok(out)
}

fn crop_freq<T: Scalar>(x: &Map<T>, rows: usize) -> Map<T> {
    let mut out = Map::zeros(x.c, rows, x.w);
    for c in 0..x.c {
        out.data[c * rows * x.w..(c + 1) * rows * x.w].copy_from_slice(&x.channel(c)[..rows * x.w]);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputKind {
    Mel,
    Cyclic,
    Chroma,
}

/// Stem convolution followed by inception blocks on one input.
#[derive(Debug, Clone)]
struct Branch {
    input: InputKind,
    rows: usize,
    frames: usize,
    pad_rows: usize,
    stem: Conv2d,
    stem_pool: MaxPool,
    blocks: Vec<Inception>,
    extra_pool: Option<MaxPool>,
    out_channels: usize,
}

#[derive(Debug, Clone)]
struct BranchCache<T> {
    stem: ConvCache<T>,
    stem_pool: PoolCache,
    blocks: Vec<InceptionCache<T>>,
    extra_pool: Option<PoolCache>,
}

/// Per-stage pooling factors that shrink `size` to `target` in `stages`
/// steps, halving as early as possible.
fn greedy_factors(size: usize, target: usize, stages: usize) -> Result<Vec<usize>> {
    if target == 0 || size % target != 0 || !(size / target).is_power_of_two() {
        return Err(Error::Config(format!(
            "cannot pool {size} down to {target}"
        )));
    }
    let halvings = (size / target).trailing_zeros() as usize;
    if halvings > stages {
        return Err(Error::Config(format!(
            "pooling {size} to {target} needs {halvings} stages, only {stages} available"
        )));
    }
    Ok((0..stages)
        .map(|i| if i < halvings { 2 } else { 1 })
        .collect())
}

fn block_kind(i: usize) -> InceptionKind {
    if i % 2 == 0 {
        InceptionKind::Naive
    } else {
        InceptionKind::Reduction
    }
}

impl Branch {
    #[allow(clippy::too_many_arguments)]
    fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        input: InputKind,
        (rows, frames): (usize, usize),
        pad_rows: usize,
        stem_width: usize,
        widths: &[usize],
        pools: &[MaxPool],
        extra_pool: Option<MaxPool>,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let stem = Conv2d::new(store, &format!("{name}.stem"), 1, stem_width, 3, true, rng);
        let mut cin = stem_width;
        let mut blocks = Vec::new();
        for (i, (&w, &pool)) in widths.iter().zip(&pools[1..]).enumerate() {
            let block = Inception::new(
                store,
                &format!("{name}.inc{i}"),
                block_kind(i),
                cin,
                w,
                pool,
                rng,
            );
            cin = block.cout;
            blocks.push(block);
        }
        Self {
            input,
            rows,
            frames,
            pad_rows,
            stem,
            stem_pool: pools[0],
            blocks,
            extra_pool,
            out_channels: cin,
        }
    }

    fn forward<T: Scalar>(
        &self,
        p: &ParamStore<T>,
        x: &Map<T>,
    ) -> Result<(Map<T>, BranchCache<T>)> {
        if (x.c, x.h, x.w) != (1, self.rows, self.frames) {
            return Err(Error::Shape(format!(
                "{:?} input must be 1x{}x{}, got {}x{}x{}",
                self.input, self.rows, self.frames, x.c, x.h, x.w
            )));
        }
        let x = if self.pad_rows > self.rows {
            zero_pad_freq(x, self.pad_rows)?
        } else {
            x.clone()
        };
        let (y, stem) = self.stem.forward(p, x)?;
        let (mut y, stem_pool) = self.stem_pool.forward(y)?;
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (next, cache) = b.forward(p, y)?;
            y = next;
            blocks.push(cache);
        }
        let extra_pool = match &self.extra_pool {
            Some(pool) => {
                let (next, cache) = pool.forward(y)?;
                y = next;
                Some(cache)
            }
            None => None,
        };
        Ok((
            y,
            BranchCache {
                stem,
                stem_pool,
                blocks,
                extra_pool,
            },
        ))
    }

    fn backward<T: Scalar>(
        &self,
        p: &ParamStore<T>,
        cache: &BranchCache<T>,
        mut dy: Map<T>,
        grads: &mut Gradients<T>,
    ) -> Map<T> {
        if let (Some(pool), Some(c)) = (&self.extra_pool, &cache.extra_pool) {
            dy = pool.backward(c, dy);
        }
        for (b, c) in self.blocks.iter().zip(&cache.blocks).rev() {
            dy = b.backward(p, c, dy, grads);
        }
        dy = self.stem_pool.backward(&cache.stem_pool, dy);
        let dx = self.stem.backward(p, &cache.stem, dy, grads);
        if self.pad_rows > self.rows {
            crop_freq(&dx, self.rows)
        } else {
            dx
        }
    }

    fn select<'a, T>(&self, input: &'a ModelInput<T>) -> &'a Map<T> {
        match self.input {
            InputKind::Mel => &input.mel,
            InputKind::Cyclic => &input.cyclic,
            InputKind::Chroma => &input.chroma,
        }
    }
}

/// Layer structure; parameters live in a separate [`ParamStore`].
#[derive(Debug, Clone)]
struct Architecture {
    branches: Vec<Branch>,
    shared: Vec<Inception>,
    dense: Dense,
    final_shape: (usize, usize, usize),
}

/// Forward record needed by [`Model::backward`].
#[derive(Debug, Clone)]
pub struct Trace<T> {
    branches: Vec<BranchCache<T>>,
    split: Vec<usize>,
    shared: Vec<InceptionCache<T>>,
    flat: Vec<T>,
    pre_norm: Vec<T>,
}

/// One spatial-shape entry per stage, for documentation and tests.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShapeLedger {
    pub branch_outputs: Vec<(usize, usize, usize)>,
    pub final_map: (usize, usize, usize),
    pub embedding: usize,
}

#[derive(Debug, Clone)]
pub struct Model<T> {
    config: ModelConfig,
    arch: Architecture,
    params: ParamStore<T>,
}

impl<T: Scalar> Model<T> {
    /// Builds the network with seeded He-uniform weights.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let ch = &config.channels;
        let g = &config.input;
        let (arch_branches, shared, final_shape);
        if config.multi_input {
            let stages = 1 + ch.branch.len() + 1;
            let specs = [
                (InputKind::Mel, g.mel, g.mel.0),
                (InputKind::Cyclic, g.cyclic, g.cyclic.0),
                (InputKind::Chroma, g.chroma, g.chroma_pad),
            ];
            let mut branches = Vec::new();
            for (kind, shape, rows) in specs {
                let fh = greedy_factors(rows, g.branch_map.0, stages)?;
                let fw = greedy_factors(shape.1, g.branch_map.1, stages)?;
                let pools: Vec<MaxPool> = fh
                    .iter()
                    .zip(&fw)
                    .map(|(&a, &b)| MaxPool::new(a, b))
                    .collect();
                let name = match kind {
                    InputKind::Mel => "mel",
                    InputKind::Cyclic => "cyclic",
                    InputKind::Chroma => "chroma",
                };
                branches.push(Branch::new(
                    &mut store,
                    name,
                    kind,
                    shape,
                    rows,
                    ch.stem,
                    &ch.branch,
                    &pools[..stages - 1],
                    Some(pools[stages - 1]),
                    &mut rng,
                ));
            }
            let mut cin: usize = branches.iter().map(|b| b.out_channels).sum();
            let mut blocks = Vec::new();
            for (i, &w) in ch.shared.iter().enumerate() {
                let b = Inception::new(
                    &mut store,
                    &format!("shared.inc{i}"),
                    block_kind(i),
                    cin,
                    w,
                    MaxPool::IDENTITY,
                    &mut rng,
                );
                cin = b.cout;
                blocks.push(b);
            }
            arch_branches = branches;
            shared = blocks;
            final_shape = (cin, g.branch_map.0, g.branch_map.1);
        } else {
            // Halve both axes at every stage until a side reaches 1.
            let (mut h, mut w) = g.mel;
            let mut pools = Vec::new();
            for _ in 0..=ch.baseline.len() {
                let ph = if h >= 2 { 2 } else { 1 };
                let pw = if w >= 2 { 2 } else { 1 };
                h /= ph;
                w /= pw;
                pools.push(MaxPool::new(ph, pw));
            }
            let branch = Branch::new(
                &mut store,
                "mel",
                InputKind::Mel,
                g.mel,
                g.mel.0,
                ch.stem,
                &ch.baseline,
                &pools,
                None,
                &mut rng,
            );
            final_shape = (branch.out_channels, h, w);
            arch_branches = vec![branch];
            shared = Vec::new();
        }
        let flat = final_shape.0 * final_shape.1 * final_shape.2;
        let dense = Dense::new(&mut store, "dense", flat, config.embedding_size, &mut rng);
        Ok(Self {
            config,
            arch: Architecture {
                branches: arch_branches,
                shared,
                dense,
                final_shape,
            },
            params: store,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn zero_grads(&self) -> Gradients<T> {
        Gradients::zeros_like(&self.params)
    }

    /// Same architecture with parameters converted to another precision.
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            arch: self.arch.clone(),
            params: self.params.cast(),
        }
    }

    pub fn shape_ledger(&self) -> Result<ShapeLedger> {
        let input = ModelInput::<T>::zeros(&self.config);
        let mut branch_outputs = Vec::new();
        for b in &self.arch.branches {
            let (y, _) = b.forward(&self.params, b.select(&input))?;
            branch_outputs.push(y.shape());
        }
        let (e, _) = self.forward(&input)?;
        Ok(ShapeLedger {
            branch_outputs,
            final_map: self.arch.final_shape,
            embedding: e.len(),
        })
    }

    pub fn embed(&self, input: &ModelInput<T>) -> Result<Vec<T>> {
        self.forward(input).map(|(e, _)| e)
    }

    pub fn forward(&self, input: &ModelInput<T>) -> Result<(Vec<T>, Trace<T>)> {
        let p = &self.params;
        let mut outs = Vec::with_capacity(self.arch.branches.len());
        let mut branches = Vec::with_capacity(self.arch.branches.len());
        for b in &self.arch.branches {
            let (y, c) = b.forward(p, b.select(input))?;
            outs.push(y);
            branches.push(c);
        }
        let split: Vec<usize> = outs.iter().map(|m| m.c).collect();
        let mut y = if outs.len() == 1 {
            outs.pop().unwrap()
        } else {
            Map::concat(&outs)
        };
        let mut shared = Vec::with_capacity(self.arch.shared.len());
        for b in &self.arch.shared {
            let (next, c) = b.forward(p, y)?;
            y = next;
            shared.push(c);
        }
        let flat = y.data;
        let pre_norm = self.arch.dense.forward(p, &flat)?;
        let e = layer_norm(&pre_norm);
        Ok((
            e,
            Trace {
                branches,
                split,
                shared,
                flat,
                pre_norm,
            },
        ))
    }

    /// Accumulates parameter gradients of a loss with embedding gradient `de`.
    pub fn backward(&self, trace: &Trace<T>, de: &[T], grads: &mut Gradients<T>) -> Result<()> {
        if de.len() != self.config.embedding_size {
            return Err(Error::Shape(format!(
                "embedding gradient has length {}, expected {}",
                de.len(),
                self.config.embedding_size
            )));
        }
        let p = &self.params;
        let d_pre = layer_norm_backward(&trace.pre_norm, de);
        let d_flat = self.arch.dense.backward(p, &trace.flat, &d_pre, grads);
        let (c, h, w) = self.arch.final_shape;
        let mut dy = Map::from_vec(c, h, w, d_flat);
        for (b, cache) in self.arch.shared.iter().zip(&trace.shared).rev() {
            dy = b.backward(p, cache, dy, grads);
        }
        let parts = if self.arch.branches.len() == 1 {
            vec![dy]
        } else {
            dy.split(&trace.split)
        };
        for ((b, cache), d) in self.arch.branches.iter().zip(&trace.branches).zip(parts) {
            b.backward(p, cache, d, grads);
        }
        Ok(())
    }
}

/// Seed whose random network has no ReLU or max-pool switch within +-1e-3 of
/// any parameter, so central differences at that step are a valid oracle.
pub const GRADIENT_CHECK_SEED: u64 = 8;

/// Largest relative difference between backpropagated gradients and central
/// differences with step `h`, over every parameter of an f64 copy of the
/// model. The loss is a random linear probe of the embedding.
pub fn max_relative_gradient_error(config: &ModelConfig, seed: u64, h: f64) -> Result<f64> {
    use rand::Rng;
    let mut model = Model::<f64>::new(config.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Nonzero biases keep pre-activations off the ReLU kink at exactly 0.
    for p in model.params_mut().iter_mut() {
        if p.name.ends_with("bias") {
            p.data
                .iter_mut()
                .for_each(|b| *b = rng.gen_range(0.05..0.5));
        }
    }
    let g = &config.input;
    let mut fill = |(rows, frames): (usize, usize)| {
        Map::from_vec(
            1,
            rows,
            frames,
            (0..rows * frames)
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect(),
        )
    };
    let input = ModelInput {
        mel: fill(g.mel),
        cyclic: fill(g.cyclic),
        chroma: fill(g.chroma),
    };
    let r: Vec<f64> = (0..config.embedding_size)
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    let probe = |m: &Model<f64>| -> Result<f64> {
        Ok(m.embed(&input)?.iter().zip(&r).map(|(a, b)| a * b).sum())
    };
    let (_, trace) = model.forward(&input)?;
    let mut grads = model.zero_grads();
    model.backward(&trace, &r, &mut grads)?;
    let mut worst: f64 = 0.0;
    for id in 0..model.params().len() {
        for i in 0..model.params().get(id).len() {
            let orig = model.params().get(id)[i];
            model.params_mut().get_mut(id)[i] = orig + h;
            let fp = probe(&model)?;
            model.params_mut().get_mut(id)[i] = orig - h;
            let fm = probe(&model)?;
            model.params_mut().get_mut(id)[i] = orig;
            let fd = (fp - fm) / (2.0 * h);
            let an = grads.values[id][i];
            let denom = fd.abs().max(an.abs()).max(1e-6);
            let rel = (fd - an).abs() / denom;
            if rel > 1e-4 {
                log::debug!(
                    "{} [{i}]: fd {fd:e} analytic {an:e}",
                    model.params().iter().nth(id).unwrap().name
                );
            }
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

/// Forward/backward session enforcing call order.
#[derive(Debug)]
pub struct Tape<'m, T> {
    model: &'m Model<T>,
    trace: Option<Trace<T>>,
}

impl<'m, T: Scalar> Tape<'m, T> {
    pub fn new(model: &'m Model<T>) -> Self {
        Self { model, trace: None }
    }

    pub fn forward(&mut self, input: &ModelInput<T>) -> Result<Vec<T>> {
        let (e, trace) = self.model.forward(input)?;
        self.trace = Some(trace);
        Ok(e)
    }

    pub fn backward(&self, de: &[T], grads: &mut Gradients<T>) -> Result<()> {
        let trace = self
            .trace
            .as_ref()
            .ok_or_else(|| Error::State("backward called before forward".into()))?;
        self.model.backward(trace, de, grads)
    }
}
