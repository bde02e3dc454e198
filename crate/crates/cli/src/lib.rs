// SPDX-License-Identifier: Apache-2.0

//! The `cfa` command line.
//!
//! Exit status: 0 on success or full acceptance, 1 when the verifier
//! rejects a segment, 2 for usage, input and processing errors, 3 when two
//! artifacts were produced from different graphs.

mod commands;
pub mod demos;
pub mod manifest;

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use commands::run;

pub const EXIT_OK: i32 = 0;
pub const EXIT_REJECTED: i32 = 1;
pub const EXIT_ERROR: i32 = 2;
pub const EXIT_DIGEST: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "cfa", version, about = "Control-flow attestation from performance-counter measurements")]
pub struct Cli {
    /// Output format.
    #[arg(long, value_enum, default_value_t = Format::Text, global = true)]
    pub format: Format,
    /// Report wall-clock times; output is then no longer reproducible.
    #[arg(long, global = true)]
    pub timings: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Enumerate the segment database of a graph.
    Preprocess(PreprocessArgs),
    /// Check a measurement log against a segment database.
    Verify(VerifyArgs),
    /// Replay a block trace into a measurement log.
    Simulate(SimulateArgs),
    /// Generate a random valid block trace.
    Walk(WalkArgs),
    /// Run mutation experiments from one or more manifests.
    AttackEval(AttackArgs),
    /// Replay, explore or drive the tracer/tracee protocol.
    #[command(subcommand)]
    Protocol(ProtocolCommand),
    /// Rank counter subsets by the sparsity of their loop lattice.
    Counters(CountersArgs),
    /// Write the shipped demonstration inputs.
    Demo(DemoArgs),
}

#[derive(Debug, Args)]
pub struct GraphArgs {
    /// Annotated graph document.
    #[arg(long)]
    pub cfg: PathBuf,
    /// Instruction event table; needed when blocks list instructions.
    #[arg(long)]
    pub table: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    #[command(flatten)]
    pub graph: GraphArgs,
    /// Where to write the database.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 100_000)]
    pub budget_paths: usize,
    #[arg(long, default_value_t = 10_000)]
    pub budget_cycles: usize,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub db: PathBuf,
    #[arg(long)]
    pub measurements: PathBuf,
    /// Counter configuration; defaults to the one recorded in the log.
    #[arg(long)]
    pub counters: Option<String>,
    /// Per-segment measurement overhead, comma separated.
    #[arg(long)]
    pub offset: Option<String>,
    #[arg(long)]
    pub no_cache: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub graph: GraphArgs,
    #[arg(long)]
    pub trace: PathBuf,
    /// Counter configuration; defaults to every deterministic counter.
    #[arg(long)]
    pub counters: Option<String>,
    #[arg(long)]
    pub offset: Option<String>,
    /// Where to write the log; standard output if omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct WalkArgs {
    #[arg(long)]
    pub cfg: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub min_segments: usize,
    #[arg(long, default_value_t = 50)]
    pub max_segments: usize,
    #[arg(long, default_value_t = 10)]
    pub max_loop_iterations: u32,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AttackArgs {
    /// Manifest files; each experiment becomes one table row.
    #[arg(long, required = true)]
    pub manifest: Vec<PathBuf>,
    /// Mutants per segment for every kind, overriding the manifests.
    #[arg(long)]
    pub reps: Option<usize>,
    /// Base seed, overriding the manifests.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum ProtocolCommand {
    /// Replay a script of protocol events.
    Run {
        #[arg(long)]
        script: PathBuf,
        #[arg(long, value_enum, default_value_t = Ipc::Eight)]
        ipc: Ipc,
    },
    /// Check the safety properties over every event interleaving.
    Explore {
        #[arg(long, default_value_t = 8)]
        depth: usize,
        #[arg(long, value_enum, default_value_t = Alphabet::Adversarial)]
        alphabet: Alphabet,
        #[arg(long, default_value_t = 2_000_000)]
        budget_states: usize,
        #[arg(long, value_enum, default_value_t = Ipc::Eight)]
        ipc: Ipc,
    },
    /// Drive the protocol with verifier verdicts for a measurement log.
    Attest {
        #[arg(long)]
        db: PathBuf,
        #[arg(long)]
        measurements: PathBuf,
        #[arg(long)]
        counters: Option<String>,
        #[arg(long, value_enum, default_value_t = Ipc::Eight)]
        ipc: Ipc,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Ipc {
    Eight,
    Four,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Alphabet {
    Honest,
    Adversarial,
}

#[derive(Debug, Args)]
pub struct CountersArgs {
    #[arg(long)]
    pub db: PathBuf,
    /// Subset size.
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    #[arg(long, default_value_t = 10)]
    pub top: usize,
}

#[derive(Debug, Args)]
pub struct DemoArgs {
    /// Demo name, or `all`.
    pub name: String,
    #[arg(long)]
    pub out_dir: PathBuf,
}

/// Parses `args` and runs the command, writing reports to `out`.
pub fn main_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
            let _ = write!(err, "{e}");
            return code;
        }
    };
    match run(&cli, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e:#}");
            commands::exit_code(&e)
        }
    }
}
