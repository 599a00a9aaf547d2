//! Command-line entry point. Every artifact-producing subcommand writes a
//! manifest next to its outputs; flags override config-file values;
//! environment variables are never consulted.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::contextual::{load_char_lm, save_char_lm, train_char_lm, CharLm, CharLmConfig, Direction};
use crate::error::{Error, Result};
use crate::experiments::{evaluate_spans, evaluate_tokens, format_report, grid_search, GridSpec};
use crate::manifest::Manifest;
use crate::pipeline::{normalize_turn, read_conll, tokenize, write_conll, Corpus, Split, Turn};
use crate::provider::{ContextualPreset, ContextualProvider, EmbeddingProvider, RandomProvider, StaticProvider};
use crate::redaction::{redact_corpus, PlaceholderMap};
use crate::schema::{spans_to_tags, TagScheme};
use crate::static_embeddings::{load_vectors, save_vectors, train_static, StaticConfig, VectorTable};
use crate::synthgen::{generate_corpus, ConfusionTable, NoiseConfig};
use crate::tagger::checkpoint::{load_checkpoint, save_checkpoint, TaggerCheckpoint};
use crate::tagger::train::{decode_turn, train};
use crate::tagger::TaggerConfig;

/// Structured configuration document; flags override these values.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub tagger: TaggerConfig,
    pub static_embeddings: StaticConfig,
    pub charlm: CharLmConfig,
    pub noise: NoiseConfig,
    pub grid: GridSpec,
    pub placeholders: PlaceholderMap,
}

pub fn load_run_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        None => Ok(RunConfig::default()),
        Some(path) => {
            require_file("config", path)?;
            let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&content).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: e.line(),
                message: e.to_string(),
            })
        }
    }
}

fn require_file(flag: &str, path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::config(
            flag,
            format!("path {} does not exist", path.display()),
        ))
    }
}

#[derive(Debug, Parser)]
#[command(name = "redactor", version, about = "Sequence labeling and redaction for noisy transcripts")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic noisy corpus in CoNLL format.
    GenData(GenDataArgs),
    /// Train static subword vectors or character-level LMs on a corpus.
    TrainEmbeddings(TrainEmbeddingsArgs),
    /// Train the BiLSTM-CRF tagger.
    Train(TrainArgs),
    /// Tag a corpus with a trained model.
    Tag(TagArgs),
    /// Redact a corpus with a trained model (fail-closed).
    Redact(RedactArgs),
    /// Compare a predicted CoNLL file against gold.
    Eval(EvalArgs),
    /// Deterministic parallel hyperparameter grid search.
    GridSearch(GridSearchArgs),
}

#[derive(Debug, Args)]
struct GenDataArgs {
    /// Number of turns to generate.
    #[arg(long)]
    turns: usize,
    /// Overrides the noise-config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Noise configuration JSON; defaults apply when omitted.
    #[arg(long)]
    noise: Option<PathBuf>,
    /// Confusion table TSV; the built-in table applies when omitted.
    #[arg(long)]
    confusions: Option<PathBuf>,
    /// Split label recorded in the output (train, validation, test).
    #[arg(long, default_value = "train")]
    split: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainEmbeddingsArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// "static" for subword skip-gram vectors, "charlm" for both
    /// character-LM directions (written as <out>.forward.json and
    /// <out>.backward.json).
    #[arg(long, default_value = "static")]
    kind: String,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

/// Flags selecting and locating the embedding provider.
#[derive(Debug, Args)]
struct ProviderArgs {
    /// static | random | flair | flair+fasttext | flair-pooled |
    /// flair-pooled+fasttext
    #[arg(long, default_value = "static")]
    preset: String,
    /// Static vector table (static and *+fasttext presets).
    #[arg(long)]
    vectors: Option<PathBuf>,
    /// Forward character LM (flair presets).
    #[arg(long)]
    forward_lm: Option<PathBuf>,
    /// Backward character LM (flair presets).
    #[arg(long)]
    backward_lm: Option<PathBuf>,
    /// Vector width for the random baseline.
    #[arg(long, default_value_t = 50)]
    random_dim: usize,
    /// Seed for the random baseline.
    #[arg(long, default_value_t = 1)]
    random_seed: u64,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    val: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    scheme: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[command(flatten)]
    provider: ProviderArgs,
    #[arg(long)]
    model: PathBuf,
}

#[derive(Debug, Args)]
struct TagArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[command(flatten)]
    provider: ProviderArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct RedactArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    provider: ProviderArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    gold: PathBuf,
    #[arg(long)]
    pred: PathBuf,
    /// Also print strict span-level metrics.
    #[arg(long)]
    spans: bool,
}

#[derive(Debug, Args)]
struct GridSearchArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    val: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[command(flatten)]
    provider: ProviderArgs,
    #[arg(long)]
    out: PathBuf,
}

/// Loaded embedding artifacts, buildable repeatedly (grid workers each get
/// their own provider instance).
enum ProviderSpec {
    Static(VectorTable),
    Random { dim: usize, seed: u64 },
    Contextual {
        forward: CharLm,
        backward: CharLm,
        preset: ContextualPreset,
        table: Option<VectorTable>,
    },
}

impl ProviderSpec {
    fn load(args: &ProviderArgs) -> Result<Self> {
        match args.preset.as_str() {
            "static" => {
                let path = args.vectors.as_ref().ok_or_else(|| {
                    Error::config("vectors", "the static preset needs --vectors")
                })?;
                require_file("vectors", path)?;
                Ok(ProviderSpec::Static(load_vectors(path)?))
            }
            "random" => Ok(ProviderSpec::Random {
                dim: args.random_dim,
                seed: args.random_seed,
            }),
            name => {
                let preset = ContextualPreset::parse(name)?;
                let fwd = args.forward_lm.as_ref().ok_or_else(|| {
                    Error::config("forward-lm", "contextual presets need --forward-lm")
                })?;
                let bwd = args.backward_lm.as_ref().ok_or_else(|| {
                    Error::config("backward-lm", "contextual presets need --backward-lm")
                })?;
                require_file("forward-lm", fwd)?;
                require_file("backward-lm", bwd)?;
                let table = match (&args.vectors, preset.stacked()) {
                    (Some(path), _) => {
                        require_file("vectors", path)?;
                        Some(load_vectors(path)?)
                    }
                    (None, true) => {
                        return Err(Error::config(
                            "vectors",
                            format!("preset `{name}` needs --vectors"),
                        ))
                    }
                    (None, false) => None,
                };
                Ok(ProviderSpec::Contextual {
                    forward: load_char_lm(fwd)?,
                    backward: load_char_lm(bwd)?,
                    preset,
                    table,
                })
            }
        }
    }

    fn build(&self) -> Result<Box<dyn EmbeddingProvider>> {
        match self {
            ProviderSpec::Static(table) => Ok(Box::new(StaticProvider::new(table.clone()))),
            ProviderSpec::Random { dim, seed } => Ok(Box::new(RandomProvider::new(*dim, *seed))),
            ProviderSpec::Contextual {
                forward,
                backward,
                preset,
                table,
            } => Ok(Box::new(ContextualProvider::new(
                forward.clone(),
                backward.clone(),
                *preset,
                table.clone(),
            )?)),
        }
    }

    fn manifest_inputs(args: &ProviderArgs, manifest: &mut Manifest) -> Result<()> {
        for path in [&args.vectors, &args.forward_lm, &args.backward_lm]
            .into_iter()
            .flatten()
        {
            manifest.add_input(path)?;
        }
        Ok(())
    }
}

pub fn run() -> Result<()> {
    let cli = Cli::parse();
    dispatch(cli)
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(args) => gen_data(args),
        Command::TrainEmbeddings(args) => train_embeddings(args),
        Command::Train(args) => train_cmd(args),
        Command::Tag(args) => tag_cmd(args),
        Command::Redact(args) => redact_cmd(args),
        Command::Eval(args) => eval_cmd(args),
        Command::GridSearch(args) => grid_search_cmd(args),
    }
}

/// Applies pipeline normalization to generated raw turns so the emitted
/// CoNLL matches what the tagger will see at decode time. Token indices
/// are unchanged apart from the appended terminal "." token.
fn normalize_corpus(corpus: Corpus, split: Split) -> Result<Corpus> {
    let turns = corpus
        .turns
        .into_iter()
        .map(|t| {
            let normalized = normalize_turn(&t.raw_text)?;
            let tokens = tokenize(&normalized);
            Turn::new(t.speaker, normalized, tokens, t.gold_spans)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Corpus::new(split, turns))
}

fn gen_data(args: GenDataArgs) -> Result<()> {
    let split: Split = args.split.parse()?;
    let mut noise = match &args.noise {
        Some(path) => {
            require_file("noise", path)?;
            let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_str::<NoiseConfig>(&content).map_err(|e| Error::Parse {
                path: path.clone(),
                line: e.line(),
                message: e.to_string(),
            })?
        }
        None => NoiseConfig::default(),
    };
    if let Some(seed) = args.seed {
        noise.seed = seed;
    }
    let table = match &args.confusions {
        Some(path) => {
            require_file("confusions", path)?;
            ConfusionTable::load(path)?
        }
        None => ConfusionTable::builtin(),
    };

    let corpus = normalize_corpus(generate_corpus(args.turns, &noise, &table)?, split)?;
    write_conll(&corpus, &args.out)?;

    let mut manifest = Manifest::new(
        "gen-data",
        noise.seed,
        serde_json::json!({ "turns": args.turns, "noise": noise, "split": split.to_string() }),
    );
    for path in [&args.noise, &args.confusions].into_iter().flatten() {
        manifest.add_input(path)?;
    }
    manifest.add_output(&args.out);
    manifest.write_beside(&args.out)?;
    println!("wrote {} turns to {}", corpus.len(), args.out.display());
    Ok(())
}

fn train_embeddings(args: TrainEmbeddingsArgs) -> Result<()> {
    require_file("corpus", &args.corpus)?;
    let run = load_run_config(args.config.as_deref())?;
    let corpus = read_conll(&args.corpus)?;

    match args.kind.as_str() {
        "static" => {
            let mut config = run.static_embeddings;
            if let Some(seed) = args.seed {
                config.seed = seed;
            }
            if let Some(epochs) = args.epochs {
                config.epochs = epochs;
            }
            if let Some(dim) = args.dim {
                config.dim = dim;
            }
            let sentences: Vec<Vec<String>> =
                corpus.turns.iter().map(|t| t.tokens.clone()).collect();
            let table = train_static(&sentences, &config)?;
            save_vectors(&table, &args.out)?;

            let mut manifest = Manifest::new(
                "train-embeddings",
                config.seed,
                serde_json::json!({ "kind": "static", "config": config }),
            );
            manifest.add_input(&args.corpus)?;
            manifest.add_output(&args.out);
            manifest.write_beside(&args.out)?;
            println!(
                "trained {}-dim vectors for {} words -> {}",
                table.dim,
                table.word_vectors.len(),
                args.out.display()
            );
        }
        "charlm" => {
            let mut config = run.charlm;
            if let Some(seed) = args.seed {
                config.seed = seed;
            }
            if let Some(epochs) = args.epochs {
                config.epochs = epochs;
            }
            let turns: Vec<String> = corpus.turns.iter().map(|t| t.tokens.join(" ")).collect();
            for direction in [Direction::Forward, Direction::Backward] {
                let (model, history) = train_char_lm(&turns, direction, &config)?;
                let suffix = match direction {
                    Direction::Forward => "forward",
                    Direction::Backward => "backward",
                };
                let mut name = args.out.file_name().unwrap_or_default().to_os_string();
                name.push(format!(".{suffix}.json"));
                let path = args.out.with_file_name(name);
                save_char_lm(&model, &path)?;

                let mut manifest = Manifest::new(
                    "train-embeddings",
                    config.seed,
                    serde_json::json!({ "kind": "charlm", "direction": suffix, "config": config }),
                );
                manifest.add_input(&args.corpus)?;
                manifest.add_output(&path);
                manifest.write_beside(&path)?;
                let last = history.last().expect("at least one epoch");
                println!(
                    "{suffix} char LM -> {} (val loss {:.4})",
                    path.display(),
                    last.val_loss
                );
            }
        }
        other => {
            return Err(Error::config(
                "kind",
                format!("unknown embedding kind `{other}` (expected static or charlm)"),
            ))
        }
    }
    Ok(())
}

fn train_cmd(args: TrainArgs) -> Result<()> {
    require_file("train", &args.train)?;
    require_file("val", &args.val)?;
    let run = load_run_config(args.config.as_deref())?;
    let mut config = run.tagger;
    if let Some(scheme) = &args.scheme {
        config.scheme = scheme.parse::<TagScheme>()?;
    }
    if let Some(epochs) = args.epochs {
        config.epochs = epochs;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(layers) = args.layers {
        config.num_bilstm_layers = layers;
    }
    if let Some(dropout) = args.dropout {
        config.dropout_rate = dropout;
    }

    let spec = ProviderSpec::load(&args.provider)?;
    let mut provider = spec.build()?;
    let train_corpus = read_conll(&args.train)?;
    let val_corpus = read_conll(&args.val)?;

    let outcome = train(&config, provider.as_mut(), &train_corpus, &val_corpus)?;
    for record in &outcome.history {
        println!(
            "epoch {:>3}  train loss {:>10.4}  val micro-F1 {:>6.2}  val acc {:>6.2}",
            record.epoch,
            record.train_loss,
            record.val_micro_f1 * 100.0,
            record.val_token_accuracy * 100.0
        );
    }
    println!("best epoch: {}", outcome.best_epoch);

    let checkpoint = TaggerCheckpoint::new(outcome.params, provider.fingerprint());
    save_checkpoint(&checkpoint, &args.model)?;

    let mut manifest = Manifest::new(
        "train",
        config.seed,
        serde_json::to_value(&config).expect("config serializes"),
    );
    manifest.add_input(&args.train)?;
    manifest.add_input(&args.val)?;
    ProviderSpec::manifest_inputs(&args.provider, &mut manifest)?;
    manifest.add_output(&args.model);
    manifest.write_beside(&args.model)?;
    println!("model -> {}", args.model.display());
    Ok(())
}

fn load_model(model: &Path, provider: &dyn EmbeddingProvider) -> Result<crate::tagger::TaggerParams> {
    require_file("model", model)?;
    load_checkpoint(model)?.open(&provider.fingerprint())
}

fn tag_cmd(args: TagArgs) -> Result<()> {
    require_file("corpus", &args.corpus)?;
    let spec = ProviderSpec::load(&args.provider)?;
    let mut provider = spec.build()?;
    let params = load_model(&args.model, provider.as_ref())?;
    let corpus = read_conll(&args.corpus)?;

    provider.reset();
    let mut tagged = Vec::with_capacity(corpus.len());
    for turn in &corpus.turns {
        let vectors = provider.embed_turn(&turn.tokens)?;
        let tags = decode_turn(&params, &vectors)?;
        let spans = crate::schema::tags_to_spans(&tags);
        tagged.push(Turn::new(
            turn.speaker.clone(),
            turn.raw_text.clone(),
            turn.tokens.clone(),
            Some(spans),
        )?);
    }
    let out_corpus = Corpus::new(corpus.split, tagged);
    write_conll(&out_corpus, &args.out)?;

    let mut manifest = Manifest::new(
        "tag",
        params.config.seed,
        serde_json::to_value(&params.config).expect("config serializes"),
    );
    manifest.add_input(&args.model)?;
    manifest.add_input(&args.corpus)?;
    ProviderSpec::manifest_inputs(&args.provider, &mut manifest)?;
    manifest.add_output(&args.out);
    manifest.write_beside(&args.out)?;
    println!("tagged {} turns -> {}", out_corpus.len(), args.out.display());
    Ok(())
}

fn redact_cmd(args: RedactArgs) -> Result<()> {
    require_file("corpus", &args.corpus)?;
    let run = load_run_config(args.config.as_deref())?;
    run.placeholders.validate()?;
    let spec = ProviderSpec::load(&args.provider)?;
    let mut provider = spec.build()?;
    let params = load_model(&args.model, provider.as_ref())?;
    let corpus = read_conll(&args.corpus)?;

    let lines = redact_corpus(&params, provider.as_mut(), &corpus, &run.placeholders);
    let mut out = lines.join("\n");
    out.push('\n');
    fs::write(&args.out, out).map_err(|e| Error::io(&args.out, e))?;

    let mut manifest = Manifest::new(
        "redact",
        params.config.seed,
        serde_json::json!({ "placeholders": run.placeholders }),
    );
    manifest.add_input(&args.model)?;
    manifest.add_input(&args.corpus)?;
    ProviderSpec::manifest_inputs(&args.provider, &mut manifest)?;
    manifest.add_output(&args.out);
    manifest.write_beside(&args.out)?;
    println!("redacted {} turns -> {}", lines.len(), args.out.display());
    Ok(())
}

fn eval_cmd(args: EvalArgs) -> Result<()> {
    require_file("gold", &args.gold)?;
    require_file("pred", &args.pred)?;
    let gold = read_conll(&args.gold)?;
    let pred = read_conll(&args.pred)?;

    let to_tags = |corpus: &Corpus| -> Result<Vec<_>> {
        corpus
            .turns
            .iter()
            .map(|t| {
                spans_to_tags(
                    t.tokens.len(),
                    t.gold_spans.as_deref().unwrap_or(&[]),
                    TagScheme::Bio,
                )
            })
            .collect()
    };
    let gold_tags = to_tags(&gold)?;
    let pred_tags = to_tags(&pred)?;
    let report = evaluate_tokens(&gold_tags, &pred_tags)?;
    print!("{}", format_report(&report));

    if args.spans {
        let gold_spans: Vec<_> = gold
            .turns
            .iter()
            .map(|t| t.gold_spans.clone().unwrap_or_default())
            .collect();
        let pred_spans: Vec<_> = pred
            .turns
            .iter()
            .map(|t| t.gold_spans.clone().unwrap_or_default())
            .collect();
        println!("\nStrict span metrics:");
        for m in evaluate_spans(&gold_spans, &pred_spans) {
            println!(
                "{:<24} {:>9.1} {:>9.1} {:>9.1}",
                m.label,
                m.precision * 100.0,
                m.recall * 100.0,
                m.f1 * 100.0
            );
        }
    }
    Ok(())
}

fn grid_search_cmd(args: GridSearchArgs) -> Result<()> {
    require_file("train", &args.train)?;
    require_file("val", &args.val)?;
    let run = load_run_config(args.config.as_deref())?;
    let spec_grid: GridSpec = run.grid;
    let provider_spec = ProviderSpec::load(&args.provider)?;
    provider_spec.build()?; // validate artifacts before the long run
    let train_corpus = read_conll(&args.train)?;
    let val_corpus = read_conll(&args.val)?;

    let results = grid_search(
        &spec_grid,
        &train_corpus,
        &val_corpus,
        || provider_spec.build().expect("provider artifacts validated"),
        args.workers,
        args.seed,
    )?;

    let json = serde_json::to_string_pretty(&results).expect("results serialize");
    fs::write(&args.out, json).map_err(|e| Error::io(&args.out, e))?;

    let mut manifest = Manifest::new(
        "grid-search",
        args.seed,
        serde_json::json!({ "grid": spec_grid, "workers": args.workers }),
    );
    manifest.add_input(&args.train)?;
    manifest.add_input(&args.val)?;
    ProviderSpec::manifest_inputs(&args.provider, &mut manifest)?;
    manifest.add_output(&args.out);
    manifest.write_beside(&args.out)?;

    for result in results.iter().take(5) {
        match result.val_micro_f1 {
            Some(f1) => println!(
                "{}  micro-F1 {:.2}",
                serde_json::to_string(&result.point).expect("point serializes"),
                f1 * 100.0
            ),
            None => println!(
                "config {} failed: {}",
                result.point.index,
                result.error.as_deref().unwrap_or("unknown")
            ),
        }
    }
    println!("results -> {}", args.out.display());
    Ok(())
}

/// Exit status for an error: 1 for configuration problems, 2 for data
/// problems.
pub fn exit_code(error: &Error) -> i32 {
    match error {
        Error::Config { .. } => 1,
        _ => 2,
    }
}
