//! Flag definitions for the subcommands.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "videonav",
    about = "Budget-constrained hierarchical video QA: corpora, trajectories, training, evaluation",
    version
)]
pub struct Cli {
    /// TOML config file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Emit machine-readable error JSON on stderr.
    #[arg(long, global = true)]
    pub json: bool,

    /// Worker threads for parallel sections (default: logical cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Generate a synthetic grounded corpus.
    GenCorpus(GenCorpusArgs),
    /// Generate verified teacher trajectories and emit SFT conversations.
    Datagen(DatagenArgs),
    /// Train the softmax navigation policy with GRPO.
    Train(TrainArgs),
    /// Run one episode and print the transcript with its reward breakdown.
    Run(RunArgs),
    /// Evaluate a policy over a corpus, sweeping round budgets.
    Eval(EvalArgs),
    /// Aggregate evaluation records into a Pareto report.
    Report(ReportArgs),
}

#[derive(Args)]
pub struct GenCorpusArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of videos to generate.
    #[arg(long, default_value_t = 50)]
    pub n_videos: usize,
    /// Fix every video to this duration in seconds.
    #[arg(long)]
    pub duration: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct DatagenArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Where to write escalation-exhausted trajectories.
    #[arg(long)]
    pub quarantine: Option<PathBuf>,
    #[arg(long, default_value = "oracle")]
    pub teacher: String,
    #[arg(long, default_value = "mock")]
    pub backend: String,
    #[arg(long)]
    pub budget: Option<usize>,
    /// Maximum hint escalation level.
    #[arg(long, default_value_t = 2)]
    pub max_hints: usize,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 300)]
    pub steps: usize,
    #[arg(long, default_value_t = 16)]
    pub group_size: usize,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f64,
    /// Training reward weights (defaults to the shaped training recipe).
    #[arg(long)]
    pub w_ans: Option<f64>,
    #[arg(long)]
    pub w_loc: Option<f64>,
    #[arg(long)]
    pub w_repeat: Option<f64>,
    /// Checkpoint output path.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Training log CSV path.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Args)]
pub struct RunArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Task index within the corpus (file order).
    #[arg(long, default_value_t = 0)]
    pub task: usize,
    #[arg(long)]
    pub policy: Option<String>,
    #[arg(long)]
    pub backend: Option<String>,
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long)]
    pub init: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Episode log output (line-delimited JSON).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub policy: Option<String>,
    #[arg(long)]
    pub backend: Option<String>,
    /// Single round budget.
    #[arg(long)]
    pub budget: Option<usize>,
    /// Comma-separated budgets to sweep, e.g. 5,10,30.
    #[arg(long, value_delimiter = ',')]
    pub budgets: Option<Vec<usize>>,
    #[arg(long)]
    pub init: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Pareto report CSV path.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-item records output (line-delimited JSON).
    #[arg(long)]
    pub records: Option<PathBuf>,
    /// Time model: seconds per reasoning round / caption call / QA call.
    #[arg(long, default_value_t = 2.5)]
    pub t1: f64,
    #[arg(long, default_value_t = 7.0)]
    pub t2: f64,
    #[arg(long, default_value_t = 2.7)]
    pub t3: f64,
}

#[derive(Args)]
pub struct ReportArgs {
    /// Record files produced by `eval --records`.
    #[arg(long, num_args = 1.., value_delimiter = ',')]
    pub records: Vec<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 2.5)]
    pub t1: f64,
    #[arg(long, default_value_t = 7.0)]
    pub t2: f64,
    #[arg(long, default_value_t = 2.7)]
    pub t3: f64,
}
