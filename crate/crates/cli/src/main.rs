use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

/// Packet classification with a tuple-predicting model.
#[derive(Debug, Parser)]
#[command(name = "tang", version)]
pub struct Cli {
    /// Directory for every file a command writes.
    #[arg(long, global = true, env = "TANG_OUT_DIR", default_value = ".")]
    pub out_dir: PathBuf,

    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic ruleset and optionally a trace for it.
    Gen(GenArgs),
    /// Build the tuple index for a ruleset.
    Build(BuildArgs),
    /// Train a tuple predictor.
    Train(TrainArgs),
    /// Evaluate a classifier on a trace.
    Eval(EvalArgs),
    /// Time the pipeline against baselines.
    Bench(BenchArgs),
    /// Replay windows of rule updates.
    UpdateSim(UpdateSimArgs),
    /// Describe an index or model file.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
pub struct SchemaArg {
    /// Field layout: `5tuple` or a list such as `p32,p32,r16,r16,m8`.
    #[arg(long, default_value = "5tuple")]
    pub schema: String,
}

#[derive(Debug, Args)]
pub struct TrafficArgs {
    /// Trace file (one packet per line); generated when absent.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Packets to generate when no trace is given.
    #[arg(long, default_value_t = 10_000)]
    pub packets: usize,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, default_value_t = 1000)]
    pub rules: usize,
    /// Also write a trace with this many packets.
    #[arg(long)]
    pub packets: Option<usize>,
    /// Draw prefix lengths uniformly instead of from the ACL palette.
    #[arg(long)]
    pub uniform_signatures: bool,
    #[arg(long, default_value = "rules.txt")]
    pub rules_file: String,
    #[arg(long, default_value = "trace.txt")]
    pub trace_file: String,
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    pub ruleset: PathBuf,
    #[command(flatten)]
    pub schema: SchemaArg,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long, default_value_t = 64)]
    pub neurons: usize,
    #[arg(long, default_value_t = 2)]
    pub blocks: usize,
    #[arg(long, default_value_t = 100)]
    pub alpha: usize,
    #[arg(long, default_value_t = 0.95)]
    pub beta: f64,
    #[arg(long, default_value_t = 256)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.1)]
    pub lr_decay: f64,
    #[arg(long, default_value_t = 100)]
    pub decay_every: usize,
    #[arg(long, default_value_t = 3)]
    pub max_rounds: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// ClassBench ruleset, or an index file written by `build`.
    pub input: PathBuf,
    #[command(flatten)]
    pub schema: SchemaArg,
    #[command(flatten)]
    pub traffic: TrafficArgs,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct ClassifierArgs {
    /// Index file written by `build` or `train`.
    #[arg(long)]
    pub index: PathBuf,
    /// Model file; required unless a stand-in predictor is chosen.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Use a perfect predictor instead of a model.
    #[arg(long, conflicts_with = "model")]
    pub oracle: bool,
    /// Always predict this tuple instead of using a model.
    #[arg(long, conflicts_with_all = ["model", "oracle"])]
    pub fixed_tuple: Option<usize>,
    /// Verify every in-tuple hit against the other tuples.
    #[arg(long)]
    pub strict: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub classifier: ClassifierArgs,
    #[command(flatten)]
    pub traffic: TrafficArgs,
    /// Ruleset label for the report row.
    #[arg(long, default_value = "ruleset")]
    pub name: String,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub classifier: ClassifierArgs,
    #[command(flatten)]
    pub traffic: TrafficArgs,
    /// Lane counts to time, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "4")]
    pub lanes: Vec<usize>,
    #[arg(long, default_value_t = 8192)]
    pub batch_size: usize,
    /// Baselines to time as well: pstss, linear.
    #[arg(long, value_delimiter = ',')]
    pub baseline: Vec<String>,
}

#[derive(Debug, Args)]
pub struct UpdateSimArgs {
    #[command(flatten)]
    pub classifier: ClassifierArgs,
    /// Update script; without one, random churn windows are generated.
    #[arg(long)]
    pub script: Option<PathBuf>,
    /// Generated windows when no script is given.
    #[arg(long, default_value_t = 5)]
    pub windows: usize,
    /// Deletions and insertions per generated window.
    #[arg(long, default_value_t = 50)]
    pub churn: usize,
    #[arg(long, default_value_t = 10_000)]
    pub packets_per_window: usize,
    /// Immediate updates only.
    #[arg(long)]
    pub no_deferred: bool,
    #[arg(long, default_value_t = 0.05)]
    pub tau: f64,
    /// Mismatch threshold: an integer count, or a fraction of the rule
    /// count when it ends in `%`.
    #[arg(long, default_value = "10000")]
    pub theta: String,
    #[arg(long, default_value_t = 20)]
    pub incremental_epochs: usize,
    #[arg(long, default_value_t = 8000)]
    pub train_packets: usize,
    /// Measure window time on the wall clock instead of the access-cost model.
    #[arg(long)]
    pub wall_clock: bool,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    /// Index or model file.
    pub file: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let name = commands::name(&cli.command);
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let chain: Vec<String> = e.chain().map(|c| c.to_string()).collect();
            eprintln!("error[{name}]: {}", chain.join(": "));
            ExitCode::FAILURE
        }
    }
}
