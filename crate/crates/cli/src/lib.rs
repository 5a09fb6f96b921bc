//! The `actionhe` command line: ingest, model handling, keys, encrypted inference and comparison.

pub mod commands;
pub mod config;

use std::fmt;
use std::path::PathBuf;

use actionhe_core::backend::BackendError;
use actionhe_core::ckks::CkksError;
use actionhe_core::fastpath::FastError;
use clap::{Args, Parser, Subcommand};

use config::{FileConfig, NetArgs};

pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_CRYPTO: i32 = 3;

/// A key, level or scale problem met outside the core error types.
#[derive(Debug)]
pub struct CryptoFailure(pub String);

impl fmt::Display for CryptoFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for CryptoFailure {}

/// 3 for crypto and level failures anywhere in the chain, 2 otherwise.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<CryptoFailure>() || cause.is::<BackendError>() {
            return EXIT_CRYPTO;
        }
        if let Some(e) = cause.downcast_ref::<CkksError>() {
            return match e {
                CkksError::ParamsMismatch => EXIT_CRYPTO,
                _ => EXIT_VALIDATION,
            };
        }
        if let Some(e) = cause.downcast_ref::<FastError>() {
            return match e {
                FastError::Backend(_) | FastError::Schedule { .. } => EXIT_CRYPTO,
                _ => EXIT_VALIDATION,
            };
        }
    }
    EXIT_VALIDATION
}

#[derive(Debug, Parser)]
#[command(name = "actionhe", version, about = "Encrypted inference for skeleton-action CNNs")]
pub struct Cli {
    /// Worker threads; all available cores by default.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// TOML file of `key = value` defaults (net, mode, strategy, params, backend, seed, threads).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Select frames, normalize and write the input tensor.
    Ingest(IngestArgs),
    #[command(subcommand)]
    Model(ModelCommand),
    #[command(subcommand)]
    Layout(LayoutCommand),
    #[command(subcommand)]
    Plan(PlanCommand),
    /// Predicted and measured operation counts per layer.
    CountOps(CountOpsArgs),
    /// Secret, public, relinearization and rotation keys for a compiled plan.
    Keygen(KeygenArgs),
    /// Encodes a model at its scheduled levels and reports plaintext counts and bytes.
    EncodeModel(EncodeModelArgs),
    /// Encrypts an input tensor.
    Encrypt(EncryptArgs),
    /// Runs the encrypted network.
    Infer(InferArgs),
    /// Decrypts an output ciphertext into logits.
    Decrypt(DecryptArgs),
    /// Runs clear and encrypted inference side by side.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// JSON array of frames, each an array of `[x, y]` pairs.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 32)]
    pub frames: usize,
    #[arg(long, default_value_t = 5.0)]
    pub threshold: f64,
}

#[derive(Debug, Subcommand)]
pub enum ModelCommand {
    /// Prints the shape and per-tensor digests.
    Inspect {
        #[arg(long)]
        model: PathBuf,
    },
    /// Writes a random model for a network.
    Random {
        #[command(flatten)]
        net: NetArgs,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum LayoutCommand {
    /// Per-stage slot layouts and packing parameters.
    Describe {
        #[command(flatten)]
        net: NetArgs,
    },
}

#[derive(Debug, Subcommand)]
pub enum PlanCommand {
    /// Level schedule, rotation set and plaintext inventory.
    Show {
        #[command(flatten)]
        net: NetArgs,
    },
}

#[derive(Debug, Args)]
pub struct CountOpsArgs {
    #[command(flatten)]
    pub net: NetArgs,
    /// json | table
    #[arg(long, default_value = "json")]
    pub format: String,
    /// Skip the simulator run and print predictions only.
    #[arg(long)]
    pub predict_only: bool,
}

#[derive(Debug, Args)]
pub struct KeygenArgs {
    #[command(flatten)]
    pub net: NetArgs,
    /// Full key file, secret included.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional evaluation-only copy without the secret.
    #[arg(long)]
    pub public_out: Option<PathBuf>,
    /// Report path; stdout when absent.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EncodeModelArgs {
    #[command(flatten)]
    pub net: NetArgs,
    #[arg(long)]
    pub model: PathBuf,
    /// Report path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EncryptArgs {
    #[command(flatten)]
    pub net: NetArgs,
    #[arg(long)]
    pub keys: PathBuf,
    /// Input tensor JSON.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[command(flatten)]
    pub net: NetArgs,
    #[arg(long)]
    pub model: PathBuf,
    /// Input tensor JSON, or a ciphertext container for the ckks backend.
    #[arg(long)]
    pub input: PathBuf,
    /// sim | ckks
    #[arg(long)]
    pub backend: Option<String>,
    /// Key file (ckks backend).
    #[arg(long)]
    pub keys: Option<PathBuf>,
    /// Per-layer operation counters as JSON.
    #[arg(long)]
    pub counters: Option<PathBuf>,
    /// Logits JSON, or an output ciphertext when no secret key is available.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DecryptArgs {
    #[command(flatten)]
    pub net: NetArgs,
    #[arg(long)]
    pub keys: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub net: NetArgs,
    #[arg(long)]
    pub model: PathBuf,
    /// Input tensor JSON; random unit-range inputs when absent.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Number of random inputs when `--input` is absent.
    #[arg(long, default_value_t = 1)]
    pub inputs: usize,
    /// sim | ckks
    #[arg(long)]
    pub backend: Option<String>,
    /// Key file (ckks backend); generated in memory when absent.
    #[arg(long)]
    pub keys: Option<PathBuf>,
    /// Fail with exit code 2 when max |delta| exceeds this.
    #[arg(long)]
    pub tolerance: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Runs a parsed command line.
pub fn run(cli: Cli) -> anyhow::Result<()> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let threads = match cli.threads {
        Some(t) => Some(t),
        None => file.get_parsed::<usize>("threads")?,
    };
    if let Some(t) = threads {
        // A second call in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t.max(1)).build_global();
    }
    commands::dispatch(cli.command, &file)
}
