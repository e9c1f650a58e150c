//! `pfcr`: command-line pipeline for fact-checked claim retrieval.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on data errors.

mod commands;
mod manifest;

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
}

impl From<pfcr::Error> for CliError {
    fn from(e: pfcr::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

#[derive(Parser, Debug)]
#[command(name = "pfcr", version, about = "Dense retrieval and evaluation for previously fact-checked claims")]
struct Cli {
    /// Worker threads for retrieval and evaluation (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// JSON object of flag values; flags given on the command line win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Clean posts and fact-checks and write their combined representations.
    Preprocess(PreprocessArgs),
    /// Add EMBX files to an embedding store.
    ImportEmbeddings(ImportArgs),
    /// Rank fact-checks for every embedded post.
    Retrieve(RetrieveArgs),
    /// Train a linear adapter on the gold pairs.
    TrainAdapter(TrainArgs),
    /// Transform a model's stored embeddings with an adapter.
    ApplyAdapter(ApplyArgs),
    /// Combine several models' rankings by weighted voting.
    Fuse(FuseArgs),
    /// Score rankings with Success@K.
    Evaluate(EvaluateArgs),
    /// Print evaluation reports as a table.
    Report(ReportArgs),
    /// Turn evaluation reports into fusion weights.
    BuildProfiles(BuildProfilesArgs),
    /// Generate a synthetic corpus with embeddings.
    Synth(SynthArgs),
    /// Print the top hits for one post.
    Search(SearchArgs),
}

#[derive(Args, Debug, Serialize)]
pub struct CorpusArgs {
    #[arg(long)]
    pub posts: PathBuf,
    #[arg(long)]
    pub factchecks: PathBuf,
    #[arg(long)]
    pub pairs: PathBuf,
}

impl CorpusArgs {
    pub fn paths(&self) -> [&Path; 3] {
        [&self.posts, &self.factchecks, &self.pairs]
    }
}

#[derive(Args, Debug, Serialize)]
pub struct ModelArgs {
    /// Embedding store directory.
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long)]
    pub model: String,
    #[arg(long, default_value = "original", value_parser = ["original", "english"])]
    pub channel: String,
}

#[derive(Args, Debug, Serialize)]
pub struct PreprocessArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub keep_urls: bool,
    #[arg(long)]
    pub keep_hashtags: bool,
    #[arg(long)]
    pub keep_emoji: bool,
    #[arg(long)]
    pub keep_whitespace: bool,
}

#[derive(Args, Debug, Serialize)]
pub struct ImportArgs {
    #[arg(long)]
    pub store: PathBuf,
    /// Overwrite existing entries for the same model, channel and kind.
    #[arg(long)]
    pub replace: bool,
    #[arg(required = true)]
    pub files: Vec<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct RetrieveArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value = "track", value_parser = ["monolingual", "crosslingual", "track"])]
    pub mode: String,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct TrainArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 3e-5)]
    pub lr: f64,
    #[arg(long, default_value_t = 3)]
    pub epochs: usize,
    #[arg(long, default_value_t = 100)]
    pub warmup: usize,
    #[arg(long, default_value_t = 20.0)]
    pub scale: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Multiplier turning the nominal learning rate into the adapter's step size.
    #[arg(long, default_value_t = 1e4)]
    pub lr_scale: f64,
    #[arg(long, default_value = "both", value_parser = ["both", "query", "document"])]
    pub side: String,
    /// Train only on pairs whose adapted-side document is in this language,
    /// and adapt only that language when applying.
    #[arg(long)]
    pub lang: Option<String>,
    /// Held-out gold pairs; S@10 on them is reported after every epoch.
    #[arg(long)]
    pub dev_pairs: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct ApplyArgs {
    #[arg(long)]
    pub adapter: PathBuf,
    #[arg(long)]
    pub store: PathBuf,
    /// Store receiving the adapted matrices (default: --store).
    #[arg(long)]
    pub out_store: Option<PathBuf>,
    #[arg(long, default_value = "original", value_parser = ["original", "english"])]
    pub channel: String,
    /// Model id for the adapted matrices (default: `<model>+adapter`).
    #[arg(long)]
    pub out_model: Option<String>,
    /// Corpus files; required for language-scoped adapters.
    #[arg(long, requires_all = ["factchecks", "pairs"])]
    pub posts: Option<PathBuf>,
    #[arg(long)]
    pub factchecks: Option<PathBuf>,
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    #[arg(long)]
    pub replace: bool,
}

#[derive(Args, Debug, Serialize)]
pub struct FuseArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// `MODEL=PATH` ranking files, one per model.
    #[arg(long = "rankings", required = true)]
    pub rankings: Vec<String>,
    #[arg(long)]
    pub profiles: PathBuf,
    #[arg(long, default_value = "similarity", value_parser = ["similarity", "rank"])]
    pub confidence: String,
    /// Use only each model's first N hits.
    #[arg(long, default_value_t = 10)]
    pub pool_k: usize,
    #[arg(long, default_value_t = 10)]
    pub k_out: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long)]
    pub rankings: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    /// Name shown in reports (default: the rankings file stem).
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct ReportArgs {
    #[arg(required = true)]
    pub reports: Vec<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct BuildProfilesArgs {
    #[arg(required = true)]
    pub reports: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 3)]
    pub langs: usize,
    #[arg(long, default_value_t = 200)]
    pub posts: usize,
    #[arg(long, default_value_t = 1000)]
    pub distractors: usize,
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    #[arg(long, default_value_t = 0.3)]
    pub noise: f64,
    /// Index of the language whose fact-checks are rotated.
    #[arg(long)]
    pub rotate_lang: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct SearchArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Post id to search for.
    #[arg(long)]
    pub id: String,
    #[arg(long, default_value = "track", value_parser = ["monolingual", "crosslingual", "track"])]
    pub mode: String,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
}

const SUBCOMMANDS: [&str; 11] = [
    "preprocess",
    "import-embeddings",
    "retrieve",
    "train-adapter",
    "apply-adapter",
    "fuse",
    "evaluate",
    "report",
    "build-profiles",
    "synth",
    "search",
];

/// Inserts `--flag value` pairs from the `--config` JSON object right after
/// the subcommand for every flag the command line does not already set.
fn apply_config_overlay(argv: Vec<OsString>) -> Result<Vec<OsString>, CliError> {
    let strs: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let Some(at) = strs.iter().position(|a| a == "--config" || a.starts_with("--config=")) else {
        return Ok(argv);
    };
    let path = match strs[at].strip_prefix("--config=") {
        Some(p) => p.to_string(),
        None => strs
            .get(at + 1)
            .cloned()
            .ok_or_else(|| CliError::Usage("--config needs a file".into()))?,
    };
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::Data(format!("{path}: {e}")))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{path}: {e}")))?;
    let serde_json::Value::Object(map) = value else {
        return Err(CliError::Data(format!("{path}: config must be a JSON object")));
    };
    let Some(sub) = strs.iter().position(|a| SUBCOMMANDS.contains(&a.as_str())) else {
        return Ok(argv);
    };
    let given = |flag: &str| {
        strs.iter()
            .any(|a| a == flag || a.strip_prefix(flag).is_some_and(|rest| rest.starts_with('=')))
    };
    let mut extra: Vec<OsString> = Vec::new();
    for (key, v) in map {
        let flag = format!("--{}", key.replace('_', "-"));
        if given(&flag) {
            continue;
        }
        let mut push = |v: &serde_json::Value| -> Result<(), CliError> {
            match v {
                serde_json::Value::Bool(true) => extra.push(flag.clone().into()),
                serde_json::Value::Bool(false) | serde_json::Value::Null => {}
                serde_json::Value::String(s) => extra.extend([flag.clone().into(), s.into()]),
                serde_json::Value::Number(n) => extra.extend([flag.clone().into(), n.to_string().into()]),
                _ => return Err(CliError::Data(format!("{path}: unsupported value for `{key}`"))),
            }
            Ok(())
        };
        match &v {
            serde_json::Value::Array(items) => items.iter().try_for_each(&mut push)?,
            other => push(other)?,
        }
    }
    let mut out = argv;
    let tail = out.split_off(sub + 1);
    out.extend(extra);
    out.extend(tail);
    Ok(out)
}

fn run(argv: Vec<OsString>) -> Result<(), CliError> {
    let argv = apply_config_overlay(argv)?;
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return Ok(());
            }
            return Err(CliError::Usage(e.render().to_string()));
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Data(format!("thread pool: {e}")))?;
    }
    let threads = cli.threads;
    match cli.command {
        Command::Preprocess(a) => commands::preprocess(&a),
        Command::ImportEmbeddings(a) => commands::import_embeddings(&a),
        Command::Retrieve(a) => commands::retrieve(&a, threads),
        Command::TrainAdapter(a) => commands::train_adapter(&a),
        Command::ApplyAdapter(a) => commands::apply_adapter(&a),
        Command::Fuse(a) => commands::fuse(&a),
        Command::Evaluate(a) => commands::evaluate(&a, threads),
        Command::Report(a) => commands::report(&a),
        Command::BuildProfiles(a) => commands::build_profiles(&a),
        Command::Synth(a) => commands::synth(&a),
        Command::Search(a) => commands::search(&a),
    }
}

fn main() -> ExitCode {
    match run(std::env::args_os().collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprint!("{msg}");
            if !msg.ends_with('\n') {
                eprintln!();
            }
            ExitCode::from(1)
        }
        Err(CliError::Data(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
