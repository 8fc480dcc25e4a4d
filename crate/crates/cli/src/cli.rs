use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Counterfactual demographic-bias measurement and attribution for
/// task-oriented dialogue systems.
#[derive(Debug, Parser)]
#[command(name = "todbias", version, about, propagate_version = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    #[command(flatten)]
    pub shared: Shared,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Default)]
pub enum Format {
    #[default]
    Json,
    Csv,
}

/// Flags accepted by every subcommand.
#[derive(Debug, Args)]
pub struct Shared {
    /// Dialogue corpus (JSON).
    #[arg(long, global = true)]
    pub corpus: Option<PathBuf>,

    /// Demographic lexicon (JSON); the built-in lexicon when omitted.
    #[arg(long, global = true)]
    pub lexicon: Option<PathBuf>,

    /// Lookup-table database (JSON).
    #[arg(long, global = true)]
    pub db: Option<PathBuf>,

    /// Global random seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Output file (or directory for `attribute`); stdout when omitted.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Output format.
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,

    /// Worker threads; all cores by default. Results do not depend on it.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Count demographic words per axis and attribute.
    Stats,
    /// Write a perturbed corpus and its plan sidecar.
    Perturb(PerturbArgs),
    /// Run the system over the corpus and report BLEU, JGA and traces.
    Run(BackendArgs),
    /// Three-step bias attribution per axis.
    Attribute(AttributeArgs),
    /// Serve the reference model server.
    ServeMock(ServeArgs),
}

#[derive(Debug, Args)]
pub struct PairArgs {
    /// Axis to perturb along (repeatable); all axes by default.
    #[arg(long = "axis")]
    pub axes: Vec<String>,

    /// Attribute pair `axis:source:target` (repeatable); all pairs of the
    /// selected axes by default.
    #[arg(long = "pair")]
    pub pairs: Vec<String>,
}

#[derive(Debug, Args)]
pub struct PerturbArgs {
    #[command(flatten)]
    pub pairs: PairArgs,

    /// Plan sidecar path; `<out>.plan.json` by default.
    #[arg(long)]
    pub plan: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BackendArgs {
    /// API-call model: `echo-gold`, `remote`, inline JSON
    /// (`{"kind": "mock_biased", ...}`) or `@file.json`.
    #[arg(long)]
    pub api_backend: Option<String>,

    /// Response model: `echo-gold`, `template`, `remote`, inline JSON or
    /// `@file.json`.
    #[arg(long)]
    pub response_backend: Option<String>,

    /// Model-server endpoint for remote backends.
    #[arg(long, env = "TOD_MODEL_ENDPOINT")]
    pub endpoint: Option<String>,

    /// Per-request timeout for remote backends, in seconds.
    #[arg(long)]
    pub timeout: Option<f64>,

    /// Maximum concurrent requests per remote backend.
    #[arg(long)]
    pub max_in_flight: Option<usize>,
}

#[derive(Debug, Args)]
pub struct AttributeArgs {
    /// TOML run configuration; flags and environment take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,

    #[command(flatten)]
    pub backends: BackendArgs,

    #[command(flatten)]
    pub pairs: PairArgs,

    /// Perturbation repetitions averaged per axis.
    #[arg(long)]
    pub runs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Server mode.
    #[arg(long, env = "TOD_MODEL_MODE", default_value = "echo")]
    pub mode: String,

    /// Listening port.
    #[arg(long, default_value_t = 8080)]
    pub port: u16,

    /// Listening address.
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
}
