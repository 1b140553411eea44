use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use musicsim::corpus::{generate_synthetic_corpus, load_manifest, Corpus, SynthSpec, Taxonomy};
use musicsim::eval::{
    controlled_triplets, dimension_sweep, emit_report, filter_high_agreement, parse_subset, read_triplets,
    track_embedding, triplet_prediction_score, write_triplets, Embeddings, EvalTriplet,
};
use musicsim::model::{load_checkpoint, save_checkpoint, ChannelSchedule, Model, ModelConfig};
use musicsim::similarity::Dimension;
use musicsim::store::{build_feature_cache, FeatureStore};
use musicsim::training::{train_loop, TrainConfig};
use musicsim::{Error, Result};

/// Multi-dimensional music similarity: synthetic corpora, feature caching,
/// conditional triplet training and subspace evaluation.
#[derive(Parser)]
#[command(name = "musicsim", version)]
struct Cli {
    /// Worker threads for parallel stages (defaults to all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a labelled synthetic corpus (WAVs plus manifest.jsonl).
    Synth(SynthArgs),
    /// Extract and cache segment features for every track of a manifest.
    Features(FeatureArgs),
    /// Train an embedding model; writes best.ckpt, final.ckpt and history.csv.
    Train(TrainArgs),
    /// Score a checkpoint on evaluation triplets within one dimension subset.
    Eval(EvalArgs),
    /// Score every nonempty dimension subset; writes sweep.csv, report.json, radar.svg.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// JSON synth spec; the built-in 2x2x2x2x2x2 grid when omitted.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Corpus seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Also write eval_tempo.csv and eval_key.csv: triplets whose tracks
    /// differ only in tempo or only in key.
    #[arg(long)]
    eval_triplets: bool,
}

#[derive(Args, Clone)]
struct CorpusArgs {
    /// Track manifest (JSON lines).
    #[arg(long)]
    manifest: PathBuf,
    /// Tag taxonomy CSV mapping raw tags to dimensions.
    #[arg(long)]
    taxonomy: Option<PathBuf>,
    /// Feature cache directory; `<manifest dir>/cache` when omitted.
    #[arg(long)]
    cache_dir: Option<PathBuf>,
}

#[derive(Args)]
struct FeatureArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum Channels {
    Default,
    Compact,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Number of similarity dimensions (4 or 6).
    #[arg(long, default_value_t = 6, value_parser = clap::value_parser!(u8).range(4..=6))]
    dims: u8,
    /// Use the three-branch (mel, cyclic tempogram, chroma) network.
    #[arg(long)]
    multi_input: bool,
    /// Embedding size; must be divisible by --dims.
    #[arg(long, default_value_t = 384)]
    embedding_size: usize,
    /// Triplet loss margin.
    #[arg(long, default_value_t = 0.1)]
    margin: f64,
    /// Seed for weight init, batching and mining.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Maximum number of epochs.
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    /// Initial learning rate.
    #[arg(long, default_value_t = 1e-5)]
    lr: f64,
    /// Triplets per batch.
    #[arg(long, default_value_t = 24)]
    batch_size: usize,
    /// Batches per epoch; one per batch-size training tracks when omitted.
    #[arg(long)]
    batches_per_epoch: Option<usize>,
    /// Channel width schedule.
    #[arg(long, value_enum, default_value_t = Channels::Default)]
    channels: Channels,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalInputs {
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Model checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Triplet CSV with header anchor_id,positive_id,negative_id[,agreement].
    #[arg(long)]
    triplets: PathBuf,
    /// Keep only triplets with agreement at or above this rate.
    #[arg(long)]
    agreement: Option<f64>,
    /// Output directory for report files.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    inputs: EvalInputs,
    /// `all` or a comma-separated list of dimension names.
    #[arg(long, default_value = "all")]
    subset: String,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    inputs: EvalInputs,
}

impl CorpusArgs {
    fn load(&self) -> Result<Corpus> {
        let taxonomy = self.taxonomy.as_deref().map(Taxonomy::load).transpose()?;
        load_manifest(&self.manifest, taxonomy.as_ref())
    }

    fn cache_dir(&self) -> PathBuf {
        self.cache_dir.clone().unwrap_or_else(|| {
            self.manifest
                .parent()
                .unwrap_or_else(|| Path::new("."))
                .join("cache")
        })
    }
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let spec = match &a.spec {
        Some(p) => SynthSpec::load(p)?,
        None => SynthSpec::default(),
    };
    let corpus = generate_synthetic_corpus(&spec, a.seed, &a.out)?;
    println!("wrote {} tracks to {}", corpus.len(), a.out.display());
    if a.eval_triplets {
        for (dim, file) in [(Dimension::Tempo, "eval_tempo.csv"), (Dimension::Key, "eval_key.csv")] {
            let ts = controlled_triplets(&corpus, dim)?;
            write_triplets(&a.out.join(file), &ts)?;
            println!("wrote {} {} triplets to {file}", ts.len(), dim.name());
        }
    }
    Ok(())
}

fn cmd_features(a: &FeatureArgs) -> Result<bool> {
    let corpus = a.corpus.load()?;
    let report = build_feature_cache(&corpus, &a.corpus.cache_dir())?;
    println!(
        "features: {} written, {} up to date, {} failed",
        report.written,
        report.skipped,
        report.failed.len()
    );
    for (id, e) in &report.failed {
        eprintln!("{id}: {e}");
    }
    Ok(report.failed.is_empty())
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let mut model_cfg = ModelConfig::new(a.embedding_size, a.dims as usize, a.multi_input)?;
    model_cfg.channels = match a.channels {
        Channels::Default => ChannelSchedule::default(),
        Channels::Compact => ChannelSchedule::compact(),
    };
    model_cfg.margin = a.margin;
    model_cfg.seed = a.seed;
    model_cfg.validate()?;
    let cfg = TrainConfig {
        lr: a.lr,
        margin: a.margin,
        batch_size: a.batch_size,
        batches_per_epoch: a.batches_per_epoch,
        epochs: a.epochs,
        seed: a.seed,
        ..TrainConfig::default()
    };
    let corpus = a.corpus.load()?;
    let store = FeatureStore::cached(&corpus, &a.corpus.cache_dir())?;
    std::fs::create_dir_all(&a.out)?;
    std::fs::write(
        a.out.join("config.json"),
        serde_json::to_string_pretty(&json!({"model": model_cfg, "train": cfg}))? + "\n",
    )?;
    let outcome = train_loop(&model_cfg, &cfg, &corpus, &store, Some(&a.out), |_, _| true)?;
    save_checkpoint(&outcome.model, &a.out.join("final.ckpt"))?;
    if let Some(last) = outcome.history.last() {
        println!(
            "trained {} epochs: train {:.6} val {:.6}",
            last.epoch, last.train_loss, last.val_loss
        );
    }
    Ok(())
}

struct EvalSetup {
    model: Model<f32>,
    triplets: Vec<EvalTriplet>,
    embeddings: Embeddings,
}

fn eval_setup(a: &EvalInputs) -> Result<EvalSetup> {
    let model = load_checkpoint(&a.checkpoint)?;
    let mut triplets = read_triplets(&a.triplets)?;
    if let Some(threshold) = a.agreement {
        if !(0.0..=1.0).contains(&threshold) {
            return Err(Error::Config(format!("agreement {threshold} outside [0, 1]")));
        }
        let before = triplets.len();
        triplets = filter_high_agreement(&triplets, threshold);
        println!("agreement >= {threshold}: kept {} of {before} triplets", triplets.len());
    }
    let corpus = a.corpus.load()?;
    let store = FeatureStore::cached(&corpus, &a.corpus.cache_dir())?;
    let mut embeddings = Embeddings::new();
    for t in &triplets {
        for id in [&t.anchor_id, &t.positive_id, &t.negative_id] {
            if embeddings.contains_key(id) {
                continue;
            }
            let i = corpus
                .position(id)
                .ok_or_else(|| Error::Eval(format!("track {id} not in manifest")))?;
            embeddings.insert(id.clone(), track_embedding(&model, store.segments(i))?);
        }
    }
    Ok(EvalSetup {
        model,
        triplets,
        embeddings,
    })
}

fn eval_config(a: &EvalInputs, model: &Model<f32>) -> serde_json::Value {
    json!({
        "checkpoint": a.checkpoint,
        "triplets": a.triplets,
        "agreement": a.agreement,
        "model": model.config(),
    })
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let s = eval_setup(&a.inputs)?;
    let cfg = s.model.config();
    let dims = cfg.dimensions();
    let subset = parse_subset(&a.subset, dims.len())?;
    let score = triplet_prediction_score(&s.triplets, &s.embeddings, &subset, &cfg.mask())?;
    let names: Vec<&str> = subset.iter().map(|&i| dims[i].name()).collect();
    println!("score {score:.6} on {} triplets (subset {})", s.triplets.len(), names.join(","));
    std::fs::create_dir_all(&a.inputs.out)?;
    let mut doc = eval_config(&a.inputs, &s.model);
    doc["subset"] = json!(names);
    doc["score"] = json!(score);
    doc["n"] = json!(s.triplets.len());
    std::fs::write(a.inputs.out.join("eval.json"), serde_json::to_string_pretty(&doc)? + "\n")?;
    Ok(())
}

fn cmd_sweep(a: &SweepArgs) -> Result<()> {
    let s = eval_setup(&a.inputs)?;
    let report = dimension_sweep(&s.triplets, &s.embeddings, s.model.config().dimensions())?;
    emit_report(&report, &eval_config(&a.inputs, &s.model), &a.inputs.out)?;
    for r in &report.rows {
        let names: Vec<&str> = r.dims.iter().map(|d| d.name()).collect();
        println!("{:.6}  {}", r.score, names.join("+"));
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<bool> {
    match &cli.command {
        Command::Synth(a) => cmd_synth(a).map(|_| true),
        Command::Features(a) => cmd_features(a),
        Command::Train(a) => cmd_train(a).map(|_| true),
        Command::Eval(a) => cmd_eval(a).map(|_| true),
        Command::Sweep(a) => cmd_sweep(a).map(|_| true),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
