use std::fmt;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand};

mod commands;
mod config;
mod help_json;

use config::{Backend, FileConfig};

/// Bad invocation: exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser, Debug)]
#[command(name = "supportsim", version, about = "Persona-grounded supportive dialogue synthesis, analysis and evaluation")]
pub struct Cli {
    /// TOML config file; flags override it, it overrides defaults.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Seed for demonstration sampling and negative-persona sampling.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Only print warnings and errors.
    #[arg(long, global = true)]
    pub quiet: bool,
    /// Overwrite existing output files.
    #[arg(long, global = true)]
    pub force: bool,
    /// Print the command-line interface as JSON and exit.
    #[arg(long, global = true)]
    pub help_json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct GatewayArgs {
    /// Where completions come from.
    #[arg(long, value_enum)]
    pub gateway: Option<Backend>,
    /// Transcript to answer from with `--gateway replay`.
    #[arg(long, value_name = "PATH")]
    pub transcript: Option<PathBuf>,
    /// Record every exchange into this transcript (merged with its contents).
    #[arg(long, value_name = "PATH")]
    pub record: Option<PathBuf>,
    /// Model name sent with every request.
    #[arg(long)]
    pub model: Option<String>,
    /// Response cache directory for `--gateway http`.
    #[arg(long, value_name = "DIR")]
    pub cache_dir: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Filter raw scenarios by topic and description length.
    Ingest {
        #[arg(long = "in", value_name = "PATH")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Minimum description length in words (inclusive).
        #[arg(long)]
        min_words: Option<usize>,
        /// Extra blocked topic keywords, added to the defaults.
        #[arg(long, num_args = 1..)]
        block: Vec<String>,
    },
    /// Realize one seeker persona per scenario.
    Personas {
        #[arg(long)]
        scenarios: PathBuf,
        /// Example profile shown to the model; defaults to the built-in one.
        #[arg(long)]
        demo: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        parallel: Option<usize>,
        #[arg(long)]
        max_retries: Option<u32>,
        #[command(flatten)]
        gateway: GatewayArgs,
    },
    /// Generate one dialogue per persona.
    Generate {
        #[arg(long)]
        personas: PathBuf,
        /// Directory of `*.txt` demonstration dialogues.
        #[arg(long)]
        demos: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        parallel: Option<usize>,
        /// Reasoning nodes to request: comma list, `all` or `none`.
        #[arg(long)]
        mask: Option<String>,
        /// Target supporter turns per dialogue.
        #[arg(long)]
        turns: Option<u32>,
        #[arg(long)]
        max_retries: Option<u32>,
        #[command(flatten)]
        gateway: GatewayArgs,
    },
    /// Check a corpus against the quality rules; exits 1 if any dialogue fails.
    Qc {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        personas: PathBuf,
        /// JSON report with per-rule counts and per-dialogue findings.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        mask: Option<String>,
    },
    /// Corpus statistics; topic counts when personas are given.
    Stats {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        personas: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Strategy proportions per dialogue-stage bin (JSON plus CSV).
    Strategies {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Strategy transition matrix and most frequent path (JSON plus CSV).
    Transitions {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        top_k: Option<usize>,
    },
    /// Persona coverage curves against a random other persona (JSON plus CSV).
    Coverage {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        personas: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score model responses against references, one per line.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long = "ref", value_name = "PATH")]
        reference: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        /// Report to normalize against; fills in `navg`.
        #[arg(long)]
        baseline: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write supervised fine-tuning records.
    Export {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_parser = ["plain", "reasoning"], default_value = "plain")]
        mode: String,
        /// Reasoning nodes kept in `reasoning` mode: comma list, `all` or `none`.
        #[arg(long)]
        mask: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Convert crowdsourced-format sessions into a dialogue corpus.
    Import {
        #[arg(long = "in", value_name = "PATH")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the human-evaluation HTTP backend.
    Serve {
        #[arg(long)]
        host: Option<String>,
        #[arg(long)]
        port: Option<u16>,
        /// Directory holding the event log.
        #[arg(long)]
        store: PathBuf,
        /// TOML file listing `[[agent]]` and `[[quality]]` entries.
        #[arg(long)]
        agents: PathBuf,
        /// Extra quality corpus as NAME=PATH.
        #[arg(long, value_name = "NAME=PATH")]
        quality: Vec<String>,
        #[arg(long)]
        min_turns: Option<usize>,
        #[arg(long)]
        cors_origin: Option<String>,
    },
}

fn init_logging(quiet: bool) {
    let level = if quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .format_target(false)
        .init();
}

fn main() -> ExitCode {
    if std::env::args().skip(1).any(|a| a == "--help-json") {
        let v = help_json::describe(Cli::command());
        // A closed pipe (e.g. `| head`) is not an error worth reporting.
        let _ = writeln!(std::io::stdout().lock(), "{}", serde_json::to_string_pretty(&v).expect("json"));
        return ExitCode::SUCCESS;
    }
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            if matches!(e.kind(), ErrorKind::InvalidSubcommand | ErrorKind::MissingSubcommand) {
                eprintln!("\n{}", Cli::command().render_long_help());
            }
            return ExitCode::from(code);
        }
    };
    let file = match &cli.config {
        Some(p) => match FileConfig::load(p) {
            Ok(f) => f,
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(2);
            }
        },
        None => FileConfig::default(),
    };
    init_logging(cli.quiet || file.quiet.unwrap_or(false));
    match commands::run(&cli, &file) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
