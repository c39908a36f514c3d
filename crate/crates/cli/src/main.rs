use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use agff_core::checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
use agff_core::corpus::{
    load_agnews_csv, load_embedding_text, load_newsgroups_dir, stratified_split, Dataset, LoadOptions,
    AG_NEWS_LABELS,
};
use agff_core::inspect::{attention_topk, gate_summary, GateReport};
use agff_core::model::{forward, ForwardOptions, FusionMode, ModelConfig};
use agff_core::text::{StopWords, TextPipeline};
use agff_core::tfidf::VocabFile;
use agff_core::train::{argmax, evaluate, train, EvalReport, TrainConfig};
use agff_core::{autodiff::Rng, Artifacts, Error, FeatureConfig};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser)]
#[command(name = "agff", version, about = "Gated TF-IDF / BiLSTM-attention text classifier")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the TF-IDF vocabulary on a training corpus and write it as JSON.
    BuildVocab(BuildVocabArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a labelled corpus.
    Eval(EvalArgs),
    /// Classify one text.
    Predict(PredictArgs),
    /// Gate statistics of a gated model over a corpus.
    Inspect(InspectArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Agnews,
    Newsgroups,
}

#[derive(Args)]
struct DataArgs {
    /// Corpus location: an AG News CSV file or a directory holding
    /// train.csv/test.csv, or a directory of newsgroup class folders.
    #[arg(long)]
    data_dir: PathBuf,
    #[arg(long, value_enum, default_value = "agnews")]
    format: Format,
}

#[derive(Args)]
struct TextArgs {
    /// Stop-word list, one word per line. Defaults to the bundled English list.
    #[arg(long)]
    stopwords: Option<PathBuf>,
    #[arg(long, default_value_t = 5000)]
    max_terms: usize,
}

#[derive(Args)]
struct BuildVocabArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    text: TextArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    text: TextArgs,
    /// Checkpoint path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "gated", value_parser = parse_mode)]
    mode: FusionMode,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
    #[arg(long, default_value_t = 0.1)]
    val_fraction: f64,
    /// Epochs without improvement before stopping; 0 disables early stopping.
    #[arg(long, default_value_t = 2)]
    patience: usize,
    #[arg(long, default_value_t = ModelConfig::DEFAULT_EMBED_DIM)]
    embed_dim: usize,
    #[arg(long, default_value_t = ModelConfig::DEFAULT_HIDDEN)]
    hidden: usize,
    #[arg(long, default_value_t = ModelConfig::DEFAULT_MAX_SEQ_LEN)]
    max_seq_len: usize,
    #[arg(long, default_value_t = ModelConfig::DEFAULT_DROPOUT)]
    dropout: f64,
    /// Pretrained vectors in `word v1 ... vk` text format; k must equal --embed-dim.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Split each batch into this many gradient shards computed in parallel.
    /// Results depend on this value, not on the machine's core count.
    #[arg(long, default_value_t = 1)]
    grad_shards: usize,
    /// JSON-lines file receiving one object per epoch.
    #[arg(long)]
    metrics_out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    report_out: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    text: String,
    #[arg(long, default_value_t = 5)]
    top_k: usize,
}

#[derive(Args)]
struct InspectArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    report_out: Option<PathBuf>,
    /// Replace the learned gate with this constant (diagnostics).
    #[arg(long)]
    force_gate: Option<f64>,
}

fn parse_mode(s: &str) -> Result<FusionMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Clone, Copy, PartialEq)]
enum Split {
    Train,
    Test,
}

fn load_data(args: &DataArgs, split: Split) -> agff_core::Result<Dataset> {
    let opts = LoadOptions::default();
    match args.format {
        Format::Agnews => {
            let path = if args.data_dir.is_dir() {
                args.data_dir.join(if split == Split::Train { "train.csv" } else { "test.csv" })
            } else {
                args.data_dir.clone()
            };
            load_agnews_csv(&path, &AG_NEWS_LABELS, opts)
        }
        Format::Newsgroups => load_newsgroups_dir(&args.data_dir, opts),
    }
}

fn text_pipeline(args: &TextArgs, format: Format) -> agff_core::Result<TextPipeline> {
    let stopwords = match &args.stopwords {
        Some(p) => StopWords::from_file(p)?,
        None => StopWords::default(),
    };
    Ok(TextPipeline::new(stopwords, matches!(format, Format::Newsgroups)))
}

fn write_json(path: &Path, value: &impl Serialize) -> agff_core::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn print_json(value: &impl Serialize) -> agff_core::Result<()> {
    println!("{}", serde_json::to_string(value)?);
    Ok(())
}

fn build_vocab(args: BuildVocabArgs) -> agff_core::Result<()> {
    let ds = load_data(&args.data, Split::Train)?;
    let features = FeatureConfig {
        max_terms: args.text.max_terms,
        ..FeatureConfig::default()
    };
    let artifacts = Artifacts::fit(&ds, text_pipeline(&args.text, args.data.format)?, &features)?;
    write_json(&args.out, &VocabFile::from(&artifacts.tfidf_vocab))?;
    print_json(&serde_json::json!({
        "documents": ds.len(),
        "terms": artifacts.tfidf_vocab.len(),
        "semantic_tokens": artifacts.semantic_vocab.len(),
    }))
}

fn run_train(args: TrainArgs) -> agff_core::Result<()> {
    let ds = load_data(&args.data, Split::Train)?;
    let (train_ds, val_ds) = stratified_split(&ds, args.val_fraction, args.seed)?;
    let features = FeatureConfig {
        max_terms: args.text.max_terms,
        ..FeatureConfig::default()
    };
    let artifacts = Artifacts::fit(&train_ds, text_pipeline(&args.text, args.data.format)?, &features)?;
    let (train_ex, val_ex) = (artifacts.encode(&train_ds), artifacts.encode(&val_ds));

    let model = ModelConfig {
        vocab_size_semantic: artifacts.semantic_vocab.len(),
        embed_dim: args.embed_dim,
        hidden_per_dir: args.hidden,
        tfidf_dim: artifacts.tfidf_vocab.len(),
        num_classes: ds.num_classes(),
        fusion_mode: args.mode,
        max_seq_len: args.max_seq_len,
        dropout_p: args.dropout,
    };
    let config = TrainConfig {
        lr: args.lr,
        batch_size: args.batch_size,
        max_epochs: args.epochs,
        val_fraction: args.val_fraction,
        patience: (args.patience > 0).then_some(args.patience),
        seed: args.seed,
        model: model.clone(),
        gate_override: None,
        grad_shards: args.grad_shards,
    };
    let pretrained = args
        .embeddings
        .as_deref()
        .map(|p| load_embedding_text(p, artifacts.semantic_vocab.as_map(), args.embed_dim))
        .transpose()?;

    let mut metrics = match &args.metrics_out {
        Some(p) => Some((BufWriter::new(File::create(p).map_err(|e| io_err(p, e))?), p.clone())),
        None => None,
    };
    let outcome = train(&train_ex, Some(&val_ex), &config, pretrained.as_ref(), |m| {
        if let Some((w, p)) = metrics.as_mut() {
            w.write_all(m.to_json_line().as_bytes())
                .and_then(|_| w.flush())
                .map_err(|e| io_err(p, e))?;
        }
        Ok(())
    })?;

    let meta = CheckpointMeta::new(model, ds.label_names().to_vec(), &artifacts);
    save_checkpoint(&outcome.params, &meta, &args.out)?;
    let best = &outcome.history[outcome.best_epoch - 1];
    print_json(&serde_json::json!({
        "checkpoint": args.out,
        "epochs": outcome.history.len(),
        "best_epoch": outcome.best_epoch,
        "val_accuracy": best.val_accuracy,
    }))
}

/// Loads a checkpoint and a corpus whose class names must match it.
fn load_for_eval(model: &Path, data: &DataArgs) -> agff_core::Result<(agff_core::ModelParams, CheckpointMeta, Vec<agff_core::Example>)> {
    let (params, meta) = load_checkpoint(model)?;
    let ds = load_data(data, Split::Test)?;
    if ds.label_names() != meta.label_names.as_slice() {
        return Err(Error::LabelMismatch(format!(
            "corpus has {} classes {:?}, checkpoint has {} classes {:?}",
            ds.num_classes(),
            ds.label_names(),
            meta.label_names.len(),
            meta.label_names
        )));
    }
    let examples = meta.artifacts()?.encode(&ds);
    Ok((params, meta, examples))
}

#[derive(Serialize)]
struct EvalOutput<'a> {
    label_names: &'a [String],
    #[serde(flatten)]
    report: &'a EvalReport,
}

fn run_eval(args: EvalArgs) -> agff_core::Result<()> {
    let (params, meta, examples) = load_for_eval(&args.model, &args.data)?;
    let report = evaluate(&params, &examples)?;
    let out = EvalOutput {
        label_names: &meta.label_names,
        report: &report,
    };
    if let Some(p) = &args.report_out {
        write_json(p, &out)?;
    }
    print_json(&out)
}

#[derive(Serialize)]
struct TokenWeight {
    token: String,
    alpha: f64,
}

#[derive(Serialize)]
struct Prediction {
    label_name: String,
    labels: Vec<String>,
    probs: Vec<f64>,
    top_attention: Vec<TokenWeight>,
}

fn run_predict(args: PredictArgs) -> agff_core::Result<()> {
    if args.top_k == 0 {
        return Err(Error::Config("--top-k must be at least 1".into()));
    }
    let (params, meta) = load_checkpoint(&args.model)?;
    let features = meta.artifacts()?.featurize(&args.text);
    let trace = forward(&params, features.input(), ForwardOptions::inference(), &mut Rng::new(0))?;
    let top_attention = attention_topk(&trace, &features.tokens, args.top_k)
        .into_iter()
        .map(|(token, alpha)| TokenWeight { token, alpha })
        .collect();
    print_json(&Prediction {
        label_name: meta.label_names[argmax(&trace.probs)].clone(),
        labels: meta.label_names,
        probs: trace.probs,
        top_attention,
    })
}

#[derive(Serialize)]
struct InspectOutput<'a> {
    label_names: &'a [String],
    #[serde(flatten)]
    gate: &'a GateReport,
}

fn run_inspect(args: InspectArgs) -> agff_core::Result<()> {
    if let Some(g) = args.force_gate {
        if !(0.0..=1.0).contains(&g) {
            return Err(Error::Config(format!("--force-gate must be in [0,1], got {g}")));
        }
    }
    let (params, meta, examples) = load_for_eval(&args.model, &args.data)?;
    let report = gate_summary(&params, &examples, args.force_gate)?;
    let out = InspectOutput {
        label_names: &meta.label_names,
        gate: &report,
    };
    if let Some(p) = &args.report_out {
        write_json(p, &out)?;
    }
    print_json(&out)
}

fn exit_code(e: &Error) -> u8 {
    if e.is_numerical() {
        EXIT_NUMERICAL
    } else if matches!(e, Error::Config(_)) {
        EXIT_USAGE
    } else {
        EXIT_DATA
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::BuildVocab(a) => build_vocab(a),
        Command::Train(a) => run_train(a),
        Command::Eval(a) => run_eval(a),
        Command::Predict(a) => run_predict(a),
        Command::Inspect(a) => run_inspect(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
