//! Batch command-line interface: ingest, stats, train, eval, predict.
//!
//! Every artifact embeds the effective config hash and seed; reruns with the
//! same (config, seed) produce byte-identical files. Exit codes: 0 success,
//! 2 input failure (unreadable/corrupt files), 3 validation failure (bad
//! config or mismatched shapes), 4 numerical failure (divergence).

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use placelm::corpus::{self, FixtureResolver, Post};
use placelm::divergence::{chi_square_all, significant_words, ChiSquareOutcome, LocationCatalog};
use placelm::embeddings::{location_dispersion, random_dispersion, DispersionOutcome, EmbeddingTable};
use placelm::eval::{compare_variants, convergence_log_merge, topk_accuracy, EvalResult};
use placelm::neural::{
    init_params, load_checkpoint, predict_topk, save_checkpoint, train as train_network,
    EpochMetrics, ModelConfig, NeuralError, TrainConfig, Variant,
};
use placelm::ngram::NGramModel;
use placelm::runcfg::{ConfigError, RunConfig};
use placelm::sampler::{
    class_counts, compute_plan, resample, split_dataset, window_examples, TrainingExample,
};
use placelm::vocab::Vocabulary;

const EXIT_INPUT: u8 = 2;
const EXIT_VALIDATION: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;

struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn input(msg: impl Into<String>) -> CliError {
        CliError {
            code: EXIT_INPUT,
            message: msg.into(),
        }
    }
    fn validation(msg: impl Into<String>) -> CliError {
        CliError {
            code: EXIT_VALIDATION,
            message: msg.into(),
        }
    }
    fn numerical(msg: impl Into<String>) -> CliError {
        CliError {
            code: EXIT_NUMERICAL,
            message: msg.into(),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> CliError {
        match e {
            ConfigError::Io { .. } => CliError::input(e.to_string()),
            _ => CliError::validation(e.to_string()),
        }
    }
}

impl From<NeuralError> for CliError {
    fn from(e: NeuralError) -> CliError {
        match e {
            NeuralError::Diverged { .. } | NeuralError::NonFiniteLoss(_) => {
                CliError::numerical(e.to_string())
            }
            NeuralError::Io(_) => CliError::input(e.to_string()),
            NeuralError::Json(_) | NeuralError::Checkpoint(_) => CliError::input(e.to_string()),
            _ => CliError::validation(e.to_string()),
        }
    }
}

fn io_err(context: &str, e: std::io::Error) -> CliError {
    CliError::input(format!("{context}: {e}"))
}

#[derive(Parser)]
#[command(
    name = "placelm",
    about = "Location-conditioned next-word prediction pipeline",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration
    #[arg(long, global = false)]
    config: PathBuf,
    /// Override the config seed
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the model variant (baseline|setup1|setup2|setup3)
    #[arg(long)]
    variant: Option<String>,
    /// Worker threads. Only 1 is currently implemented; higher values are
    /// rejected rather than silently changing the reduction order.
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

impl Common {
    fn load(&self) -> Result<RunConfig, CliError> {
        if self.threads != 1 {
            return Err(CliError::validation(format!(
                "--threads {} unsupported: only single-threaded execution is implemented",
                self.threads
            )));
        }
        let mut cfg = RunConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.paths.out_dir = out.clone();
        }
        if let Some(v) = &self.variant {
            cfg.model.variant = v.clone();
        }
        cfg.variant()?; // fail early on a bad name
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Checkpoint base path holding shared weights to start from
    #[arg(long)]
    pretrained: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    /// Checkpoint base paths (with or without the .json extension)
    #[arg(long = "checkpoint", required = true)]
    checkpoints: Vec<PathBuf>,
    /// Also evaluate the additively smoothed n-gram baseline
    #[arg(long)]
    ngram: bool,
    /// Per-epoch metric CSVs to merge into a long-format convergence table
    #[arg(long = "metrics")]
    metrics: Vec<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    /// Checkpoint base path (with or without the .json extension)
    #[arg(long)]
    checkpoint: PathBuf,
    /// Vocabulary JSON; defaults to vocab.json next to the checkpoint
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Location catalog JSON; defaults to catalog.json next to the checkpoint
    #[arg(long)]
    catalog: Option<PathBuf>,
    /// Context text; the last `window` tokens are used
    #[arg(long)]
    context: String,
    /// Place-type tags of the posting location
    #[arg(long = "place")]
    places: Vec<String>,
    /// Number of ranked words to print
    #[arg(short, default_value_t = 5)]
    k: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Parse, filter, tokenize and place-resolve a raw corpus
    Ingest(Common),
    /// Chi-square divergence, significant words, and embedding dispersion
    Stats(Common),
    /// Train one model variant; writes a checkpoint and a metric log
    Train(TrainArgs),
    /// Evaluate checkpoints on the held-out split
    Eval(EvalArgs),
    /// Rank next-word candidates for a context
    Predict(PredictArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Ingest(c) => cmd_ingest(&c),
        Command::Stats(c) => cmd_stats(&c),
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Predict(a) => cmd_predict(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

fn artifact_header(hash: &str, seed: u64) -> String {
    format!("# config_hash={hash} seed={seed}\n")
}

fn write_artifact(path: &Path, content: &str) -> Result<(), CliError> {
    fs::write(path, content).map_err(|e| io_err(&format!("writing {}", path.display()), e))
}

fn ensure_out_dir(cfg: &RunConfig) -> Result<(), CliError> {
    fs::create_dir_all(&cfg.paths.out_dir)
        .map_err(|e| io_err(&format!("creating {}", cfg.paths.out_dir.display()), e))
}

// ---------------------------------------------------------------- ingest

#[derive(serde::Serialize, serde::Deserialize)]
struct PostsMeta {
    kind: String,
    version: u32,
    config_hash: String,
    seed: u64,
}

fn cmd_ingest(common: &Common) -> Result<(), CliError> {
    let cfg = common.load()?;
    let hash = cfg.hash();
    ensure_out_dir(&cfg)?;

    let corpus_path = cfg.corpus_path()?;
    let file = fs::File::open(corpus_path)
        .map_err(|e| io_err(&format!("opening {}", corpus_path.display()), e))?;
    let parsed = corpus::parse_corpus(BufReader::new(file))
        .map_err(|e| CliError::input(e.to_string()))?;

    let fixture_path = cfg.fixture_path()?;
    let fixture_text = fs::read_to_string(fixture_path)
        .map_err(|e| io_err(&format!("reading {}", fixture_path.display()), e))?;
    let resolver = FixtureResolver::from_json(&fixture_text)
        .map_err(|e| CliError::input(format!("place fixture: {e}")))?;

    let (posts, report) = corpus::ingest(parsed.posts, parsed.skipped_lines, &resolver)
        .map_err(|e| CliError::input(e.to_string()))?;

    let meta = PostsMeta {
        kind: "placelm-posts".to_string(),
        version: 1,
        config_hash: hash.clone(),
        seed: cfg.seed,
    };
    let mut jsonl = serde_json::to_string(&meta).expect("meta serializes");
    jsonl.push('\n');
    for p in &posts {
        jsonl.push_str(&serde_json::to_string(p).expect("post serializes"));
        jsonl.push('\n');
    }
    write_artifact(&cfg.paths.out_dir.join("posts.jsonl"), &jsonl)?;

    #[derive(serde::Serialize)]
    struct ReportFile<'a> {
        config_hash: &'a str,
        seed: u64,
        #[serde(flatten)]
        report: &'a corpus::IngestReport,
    }
    let report_json = serde_json::to_string_pretty(&ReportFile {
        config_hash: &hash,
        seed: cfg.seed,
        report: &report,
    })
    .expect("report serializes");
    write_artifact(&cfg.paths.out_dir.join("ingest_report.json"), &report_json)?;

    println!(
        "ingested {} posts from {} records ({} malformed, {} non-English, {} broad place, {} no place, {} resolver miss, {} too short)",
        report.kept,
        report.input,
        report.malformed_lines,
        report.dropped_non_english,
        report.dropped_broad_place,
        report.dropped_no_place,
        report.dropped_resolver_miss,
        report.dropped_short,
    );
    Ok(())
}

fn read_posts(cfg: &RunConfig) -> Result<Vec<Post>, CliError> {
    let path = cfg.paths.out_dir.join("posts.jsonl");
    let text = fs::read_to_string(&path)
        .map_err(|e| io_err(&format!("reading {} (run ingest first?)", path.display()), e))?;
    let mut posts = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        if i == 0 && serde_json::from_str::<PostsMeta>(line).is_ok() {
            continue;
        }
        let post: Post = serde_json::from_str(line)
            .map_err(|e| CliError::input(format!("{}:{}: {e}", path.display(), i + 1)))?;
        posts.push(post);
    }
    Ok(posts)
}

// ---------------------------------------------------------------- stats

fn cmd_stats(common: &Common) -> Result<(), CliError> {
    let cfg = common.load()?;
    let hash = cfg.hash();
    let posts = read_posts(&cfg)?;
    if posts.is_empty() {
        return Err(CliError::input("enriched corpus is empty"));
    }
    let catalog = LocationCatalog::build(&posts, cfg.stats.frequent_threshold)
        .map_err(|e| CliError::validation(e.to_string()))?;

    let (outcomes, summary) = chi_square_all(&posts, &catalog, cfg.stats.min_support)
        .map_err(|e| CliError::validation(e.to_string()))?;

    let mut scored: Vec<_> = outcomes
        .values()
        .filter_map(|o| match o {
            ChiSquareOutcome::Scored(r) => Some(r),
            ChiSquareOutcome::Dropped { .. } => None,
        })
        .collect();
    scored.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap()
            .then_with(|| a.location.cmp(&b.location))
    });

    let mut chi = artifact_header(&hash, cfg.seed);
    let _ = writeln!(chi, "# min_support={}", cfg.stats.min_support);
    chi.push_str("location,score,qualifying_words\n");
    for r in &scored {
        let _ = writeln!(chi, "{},{},{}", r.location, r.score, r.qualifying_words);
    }
    write_artifact(&cfg.paths.out_dir.join("chi_square.csv"), &chi)?;

    let mut sig = artifact_header(&hash, cfg.seed);
    sig.push_str("location,rank,word,contribution\n");
    for r in &scored {
        for (rank, word) in significant_words(r, 10).iter().enumerate() {
            let _ = writeln!(sig, "{},{},{},{}", r.location, rank + 1, word, r.contributions[word]);
        }
    }
    write_artifact(&cfg.paths.out_dir.join("significant_words.csv"), &sig)?;

    println!(
        "chi-square: {} locations scored, {} dropped, mean score {:.3}",
        summary.scored, summary.dropped, summary.mean_score
    );

    // dispersion needs embeddings; degrade to chi-square only when missing
    let emb_path = match cfg.paths.embeddings.as_deref() {
        Some(p) if p.exists() => p,
        _ => {
            eprintln!("warning: embeddings unavailable, skipping dispersion report");
            return Ok(());
        }
    };
    let file = fs::File::open(emb_path)
        .map_err(|e| io_err(&format!("opening {}", emb_path.display()), e))?;
    let table = EmbeddingTable::load(BufReader::new(file), cfg.model.embed_dim)
        .map_err(|e| CliError::input(e.to_string()))?;

    let mut rows: Vec<(String, f64)> = Vec::new();
    for tag in catalog.frequent_subset() {
        match location_dispersion(&posts, tag, &table, cfg.stats.sample_size, cfg.seed)
            .map_err(|e| CliError::validation(e.to_string()))?
        {
            DispersionOutcome::Scored(r) => rows.push((r.location, r.avg_std)),
            DispersionOutcome::InsufficientSupport {
                location,
                support,
                required,
            } => eprintln!("warning: {location}: support {support} < {required}, skipped"),
        }
    }
    let random = random_dispersion(&posts, &table, cfg.stats.sample_size, cfg.seed.wrapping_add(1))
        .map_err(|e| CliError::validation(e.to_string()))?;
    rows.push(("<random>".to_string(), random));
    rows.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then_with(|| a.0.cmp(&b.0)));

    let mut disp = artifact_header(&hash, cfg.seed);
    let _ = writeln!(disp, "# sample_size={}", cfg.stats.sample_size);
    disp.push_str("location,avg_std\n");
    for (loc, v) in &rows {
        let _ = writeln!(disp, "{loc},{v}");
    }
    write_artifact(&cfg.paths.out_dir.join("dispersion.csv"), &disp)?;
    println!("dispersion: {} rows (incl. random baseline)", rows.len());
    Ok(())
}

// ---------------------------------------------------------------- train

struct Dataset {
    vocab: Vocabulary,
    catalog: LocationCatalog,
    train: Vec<TrainingExample>,
    validation: Vec<TrainingExample>,
}

/// Shared pipeline: vocab + catalog + windowing + split (+ optional
/// resampling on the train side). The catalog matches the variant's place
/// input width.
fn build_dataset(cfg: &RunConfig, options: DatasetOptions) -> Result<Dataset, CliError> {
    let posts = read_posts(cfg)?;
    if posts.is_empty() {
        return Err(CliError::input("enriched corpus is empty"));
    }
    let vocab = Vocabulary::build(&posts, cfg.vocab_k)
        .map_err(|e| CliError::validation(e.to_string()))?;
    let full = LocationCatalog::build(&posts, cfg.stats.frequent_threshold)
        .map_err(|e| CliError::validation(e.to_string()))?;
    let catalog = match options.variant {
        Variant::Baseline | Variant::Setup1 => full,
        Variant::Setup2 | Variant::Setup3 => full.restrict_to_frequent(),
    };
    let mut examples = Vec::new();
    for p in &posts {
        examples.extend(window_examples(p, &vocab, &catalog));
    }
    let (train, validation) = split_dataset(&examples, cfg.train.holdout_fraction, cfg.seed)
        .map_err(|e| CliError::validation(e.to_string()))?;
    let train = if options.resample {
        let counts = class_counts(&train);
        let plan = compute_plan(&counts, cfg.train.oversample_to_mean)
            .map_err(|e| CliError::validation(e.to_string()))?;
        if let Some(path) = options.plan_path {
            let json = serde_json::to_string_pretty(&plan).expect("plan serializes");
            write_artifact(path, &json)?;
        }
        resample(&train, &plan, cfg.seed).map_err(|e| CliError::validation(e.to_string()))?
    } else {
        train
    };
    Ok(Dataset {
        vocab,
        catalog,
        train,
        validation,
    })
}

struct DatasetOptions<'a> {
    variant: Variant,
    resample: bool,
    plan_path: Option<&'a Path>,
}

fn model_config(cfg: &RunConfig, variant: Variant, vocab: &Vocabulary, catalog: &LocationCatalog) -> ModelConfig {
    ModelConfig {
        variant,
        num_classes: vocab.num_classes(),
        embed_dim: cfg.model.embed_dim,
        lstm_cells: cfg.model.lstm_cells,
        lstm_layers: cfg.model.lstm_layers,
        dense_units: cfg.model.dense_units,
        place_input_dim: if variant.uses_place() { catalog.len() } else { 0 },
        place_dense_units: match variant {
            Variant::Setup3 => Some(cfg.model.place_dense_units),
            _ => None,
        },
        window: cfg.model.window,
        embeddings_frozen: cfg.model.embeddings_frozen,
    }
}

fn cmd_train(args: &TrainArgs) -> Result<(), CliError> {
    let cfg = args.common.load()?;
    let hash = cfg.hash();
    let variant = cfg.variant()?;
    ensure_out_dir(&cfg)?;

    let plan_path = cfg.paths.out_dir.join("resample_plan.json");
    let data = build_dataset(
        &cfg,
        DatasetOptions {
            variant,
            resample: cfg.train.resample,
            plan_path: Some(&plan_path),
        },
    )?;

    write_artifact(
        &cfg.paths.out_dir.join("vocab.json"),
        &data.vocab.to_json().map_err(|e| CliError::validation(e.to_string()))?,
    )?;
    write_artifact(
        &cfg.paths.out_dir.join("catalog.json"),
        &serde_json::to_string_pretty(&data.catalog).expect("catalog serializes"),
    )?;

    let emb_path = cfg.embeddings_path()?;
    let file = fs::File::open(emb_path)
        .map_err(|e| io_err(&format!("opening {}", emb_path.display()), e))?;
    let table = EmbeddingTable::load(BufReader::new(file), cfg.model.embed_dim)
        .map_err(|e| CliError::input(e.to_string()))?;

    let model_cfg = model_config(&cfg, variant, &data.vocab, &data.catalog);
    let pretrained_path = args.pretrained.as_ref().or(cfg.train.pretrained.as_ref());
    let pretrained = match pretrained_path {
        Some(p) => Some(load_checkpoint(p)?.0),
        None => None,
    };
    let params = init_params(&model_cfg, &table, &data.vocab, pretrained.as_ref(), cfg.seed)?;

    let train_cfg = TrainConfig {
        epochs: cfg.train.epochs,
        batch_size: cfg.train.batch_size,
        learning_rate: cfg.train.learning_rate,
        seed: cfg.seed,
        ..TrainConfig::default()
    };
    println!(
        "training {} on {} examples ({} validation), {} epochs",
        variant.label(),
        data.train.len(),
        data.validation.len(),
        train_cfg.epochs
    );
    let started = Instant::now();
    let out = train_network(params, &model_cfg, &train_cfg, &data.train, &data.validation)?;

    let ckpt = cfg.paths.out_dir.join(variant.label());
    save_checkpoint(&ckpt, &out.params, &model_cfg, cfg.seed, cfg.train.epochs, &hash)?;

    let mut csv = artifact_header(&hash, cfg.seed);
    csv.push_str("epoch,train_loss,val_top1,val_top5\n");
    for m in &out.log {
        let _ = writeln!(csv, "{},{},{},{}", m.epoch, m.train_loss, m.val_top1, m.val_top5);
    }
    let metrics_path = cfg
        .paths
        .out_dir
        .join(format!("{}_metrics.csv", variant.label()));
    write_artifact(&metrics_path, &csv)?;

    if let Some(last) = out.log.last() {
        println!(
            "done in {:.1}s: val top-1 {:.4}, top-5 {:.4} (checkpoint {})",
            started.elapsed().as_secs_f64(),
            last.val_top1,
            last.val_top5,
            ckpt.display()
        );
    } else {
        println!("done: no epochs run");
    }
    Ok(())
}

// ---------------------------------------------------------------- eval

fn eval_examples_no_unk(
    examples: &[TrainingExample],
    unk_id: usize,
) -> Vec<TrainingExample> {
    examples
        .iter()
        .filter(|e| e.target != unk_id)
        .cloned()
        .collect()
}

fn cmd_eval(args: &EvalArgs) -> Result<(), CliError> {
    let cfg = args.common.load()?;
    let hash = cfg.hash();
    ensure_out_dir(&cfg)?;

    let mut results: Vec<EvalResult> = Vec::new();
    for ckpt_path in &args.checkpoints {
        let (params, meta) = load_checkpoint(ckpt_path)?;
        let variant = meta.config.variant;
        let data = build_dataset(
            &cfg,
            DatasetOptions {
                variant,
                resample: false,
                plan_path: None,
            },
        )?;
        if meta.config.num_classes != data.vocab.num_classes() {
            return Err(CliError::validation(format!(
                "{}: num_classes {} does not match vocabulary ({})",
                ckpt_path.display(),
                meta.config.num_classes,
                data.vocab.num_classes()
            )));
        }
        let expected_place = if variant.uses_place() { data.catalog.len() } else { 0 };
        if meta.config.place_input_dim != expected_place {
            return Err(CliError::validation(format!(
                "{}: place_input_dim {} does not match catalog ({})",
                ckpt_path.display(),
                meta.config.place_input_dim,
                expected_place
            )));
        }
        let predict = |e: &TrainingExample| {
            predict_topk(&params, &meta.config, e, 5).unwrap_or_default()
        };
        let top1 = topk_accuracy(&predict, &data.validation, 1)
            .map_err(|e| CliError::validation(e.to_string()))?;
        let top5 = topk_accuracy(&predict, &data.validation, 5)
            .map_err(|e| CliError::validation(e.to_string()))?;
        let no_unk = eval_examples_no_unk(&data.validation, data.vocab.unk_id());
        let (t1n, t5n) = if no_unk.is_empty() {
            (None, None)
        } else {
            (
                Some(topk_accuracy(&predict, &no_unk, 1).map_err(|e| CliError::validation(e.to_string()))?),
                Some(topk_accuracy(&predict, &no_unk, 5).map_err(|e| CliError::validation(e.to_string()))?),
            )
        };
        results.push(EvalResult {
            variant: variant.label().to_string(),
            top1,
            top5,
            samples: data.validation.len(),
            top1_no_unk: t1n,
            top5_no_unk: t5n,
        });
    }

    if args.ngram {
        let first_variant = results
            .first()
            .and_then(|r| Variant::parse(&r.variant))
            .unwrap_or(Variant::Baseline);
        let data = build_dataset(
            &cfg,
            DatasetOptions {
                variant: first_variant,
                resample: false,
                plan_path: None,
            },
        )?;
        let model = NGramModel::train(
            &data.train,
            data.vocab.num_classes(),
            data.vocab.pad_id(),
            cfg.ngram.smoothing,
        )
        .map_err(|e| CliError::validation(e.to_string()))?;
        let predict = |e: &TrainingExample| model.predict_topk(&e.context, 5);
        let top1 = topk_accuracy(&predict, &data.validation, 1)
            .map_err(|e| CliError::validation(e.to_string()))?;
        let top5 = topk_accuracy(&predict, &data.validation, 5)
            .map_err(|e| CliError::validation(e.to_string()))?;
        let no_unk = eval_examples_no_unk(&data.validation, data.vocab.unk_id());
        let (t1n, t5n) = if no_unk.is_empty() {
            (None, None)
        } else {
            (
                Some(topk_accuracy(&predict, &no_unk, 1).map_err(|e| CliError::validation(e.to_string()))?),
                Some(topk_accuracy(&predict, &no_unk, 5).map_err(|e| CliError::validation(e.to_string()))?),
            )
        };
        results.push(EvalResult {
            variant: "ngram".to_string(),
            top1,
            top5,
            samples: data.validation.len(),
            top1_no_unk: t1n,
            top5_no_unk: t5n,
        });
    }

    let fmt_opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut csv = artifact_header(&hash, cfg.seed);
    csv.push_str("variant,top1,top5,samples,top1_no_unk,top5_no_unk\n");
    for r in &results {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{}",
            r.variant,
            r.top1,
            r.top5,
            r.samples,
            fmt_opt(r.top1_no_unk),
            fmt_opt(r.top5_no_unk)
        );
    }
    write_artifact(&cfg.paths.out_dir.join("results.csv"), &csv)?;
    for r in &results {
        println!("{}: top-1 {:.4}, top-5 {:.4} ({} samples)", r.variant, r.top1, r.top5, r.samples);
    }

    if results.iter().filter(|r| r.variant == "baseline").count() == 1 && results.len() > 1 {
        let deltas = compare_variants(&results).map_err(|e| CliError::validation(e.to_string()))?;
        let mut csv = artifact_header(&hash, cfg.seed);
        csv.push_str("variant,top1,top5,delta_top1_points,delta_top5_points\n");
        for d in &deltas {
            let _ = writeln!(
                csv,
                "{},{},{},{},{}",
                d.variant, d.top1, d.top5, d.delta_top1_points, d.delta_top5_points
            );
        }
        write_artifact(&cfg.paths.out_dir.join("comparison.csv"), &csv)?;
    }

    if !args.metrics.is_empty() {
        let mut logs = Vec::new();
        for path in &args.metrics {
            logs.push((metric_log_label(path), read_metric_csv(path)?));
        }
        let (rows, inconsistent) = convergence_log_merge(&logs);
        if inconsistent {
            eprintln!("warning: metric logs cover different epoch ranges");
        }
        let mut csv = artifact_header(&hash, cfg.seed);
        csv.push_str("epoch,variant,metric,value\n");
        for r in &rows {
            let _ = writeln!(csv, "{},{},{},{}", r.epoch, r.variant, r.metric, r.value);
        }
        write_artifact(&cfg.paths.out_dir.join("convergence.csv"), &csv)?;
    }
    Ok(())
}

fn metric_log_label(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().trim_end_matches("_metrics").to_string())
        .unwrap_or_else(|| path.display().to_string())
}

fn read_metric_csv(path: &Path) -> Result<Vec<EpochMetrics>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| io_err(&format!("reading {}", path.display()), e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("epoch,") {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(CliError::input(format!(
                "{}:{}: expected 4 fields",
                path.display(),
                i + 1
            )));
        }
        let parse = |s: &str| -> Result<f64, CliError> {
            s.parse()
                .map_err(|e| CliError::input(format!("{}:{}: {e}", path.display(), i + 1)))
        };
        out.push(EpochMetrics {
            epoch: parse(fields[0])? as usize,
            train_loss: parse(fields[1])?,
            val_top1: parse(fields[2])?,
            val_top5: parse(fields[3])?,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------- predict

fn cmd_predict(args: &PredictArgs) -> Result<(), CliError> {
    let (params, meta) = load_checkpoint(&args.checkpoint)?;
    let dir = args
        .checkpoint
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let vocab_path = args.vocab.clone().unwrap_or_else(|| dir.join("vocab.json"));
    let catalog_path = args.catalog.clone().unwrap_or_else(|| dir.join("catalog.json"));

    let vocab_text = fs::read_to_string(&vocab_path)
        .map_err(|e| io_err(&format!("reading {}", vocab_path.display()), e))?;
    let vocab = Vocabulary::from_json(&vocab_text)
        .map_err(|e| CliError::input(format!("{}: {e}", vocab_path.display())))?;
    if vocab.num_classes() != meta.config.num_classes {
        return Err(CliError::validation(format!(
            "vocabulary has {} classes but checkpoint expects num_classes {}",
            vocab.num_classes(),
            meta.config.num_classes
        )));
    }
    // k covers the predictable classes: top-K words plus <unk>
    let max_k = vocab.num_classes() - 1;
    if args.k == 0 || args.k > max_k {
        return Err(CliError::validation(format!(
            "k must be in [1, {max_k}]"
        )));
    }

    let place_vector = if meta.config.variant.uses_place() {
        let catalog_text = fs::read_to_string(&catalog_path)
            .map_err(|e| io_err(&format!("reading {}", catalog_path.display()), e))?;
        let catalog: LocationCatalog = serde_json::from_str(&catalog_text)
            .map_err(|e| CliError::input(format!("{}: {e}", catalog_path.display())))?;
        if catalog.len() != meta.config.place_input_dim {
            return Err(CliError::validation(format!(
                "catalog has {} types but checkpoint expects place_input_dim {}",
                catalog.len(),
                meta.config.place_input_dim
            )));
        }
        let mut tags = BTreeSet::new();
        for tag in &args.places {
            if catalog.index_of(tag).is_none() {
                eprintln!("warning: unknown place type {tag:?} ignored");
            } else {
                tags.insert(tag.clone());
            }
        }
        let probe = Post {
            id: String::new(),
            tokens: Vec::new(),
            place_types: tags,
        };
        catalog.multi_hot(&probe)
    } else {
        Vec::new()
    };

    let tokens = corpus::tokenize(&args.context);
    let ids: Vec<usize> = tokens.iter().map(|t| vocab.encode(t)).collect();
    let window = meta.config.window;
    let mut context = vec![vocab.pad_id(); window];
    let tail = ids.len().min(window);
    context[window - tail..].copy_from_slice(&ids[ids.len() - tail..]);
    let context: [usize; 4] = context
        .try_into()
        .map_err(|_| CliError::validation("unsupported window size".to_string()))?;

    let example = TrainingExample {
        context,
        place_vector,
        target: vocab.pad_id(), // unused by prediction
    };
    let probs = placelm::neural::forward(&params, &meta.config, std::slice::from_ref(&example))?;
    let ranked = predict_topk(&params, &meta.config, &example, args.k)?;
    for class in ranked {
        println!("{}\t{}", vocab.decode(class), probs[[0, class]]);
    }
    Ok(())
}
