use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use grail::commands::{
    cmd_ensemble, cmd_eval, cmd_split, cmd_train, cmd_verify, EnsembleArgs, EvalArgs, SplitArgs, TrainArgs, VerifyArgs,
};
use grail::error::CliResult;
use grail::runconfig::RunConfig;

fn default_threads() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Inductive relation prediction with enclosing-subgraph graph networks.
#[derive(Parser, Debug)]
#[command(name = "grail", version, after_help = RunConfig::help())]
struct Cli {
    /// Worker threads; 1 gives the serial reference path.
    #[arg(long, global = true, default_value_t = default_threads())]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample a train graph and a disjoint inductive test graph.
    #[command(after_help = RunConfig::help())]
    Split {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides split.seed, train.seed and eval.seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a model; writes OUT, OUT.last and OUT.loss.csv.
    #[command(after_help = RunConfig::help())]
    Train {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        valid: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Continue from an OUT.last checkpoint.
        #[arg(long)]
        from_checkpoint: Option<PathBuf>,
        /// Entity features appended to the structural labels.
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score held-out edges of a graph.
    #[command(after_help = RunConfig::help())]
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Check the rule construction against the path oracle on random graphs.
    #[command(after_help = RunConfig::help())]
    Verify {
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 3)]
        max_rule_len: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fuse per-model scores with weights fitted on validation labels.
    #[command(after_help = RunConfig::help())]
    Ensemble {
        /// Test score files, one per model.
        #[arg(long, num_args = 1.., required = true)]
        scores: Vec<PathBuf>,
        /// Validation score files in the same order.
        #[arg(long, num_args = 1.., required = true)]
        valid_scores: Vec<PathBuf>,
        #[arg(long)]
        valid_labels: PathBuf,
        #[arg(long)]
        test_labels: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    let threads = cli.threads;
    match cli.command {
        Command::Split {
            input,
            out_dir,
            config,
            seed,
        } => cmd_split(&SplitArgs {
            input,
            out_dir,
            config,
            seed,
        }),
        Command::Train {
            train,
            valid,
            config,
            out,
            from_checkpoint,
            features,
            seed,
        } => cmd_train(&TrainArgs {
            train,
            valid,
            config,
            out,
            from_checkpoint,
            features,
            seed,
            threads,
        })
        .map(drop),
        Command::Eval {
            checkpoint,
            graph,
            test,
            config,
            out_dir,
            features,
            seed,
        } => cmd_eval(&EvalArgs {
            checkpoint,
            graph,
            test,
            config,
            out_dir,
            features,
            seed,
            threads,
        })
        .map(drop),
        Command::Verify {
            trials,
            max_rule_len,
            seed,
            out,
        } => cmd_verify(&VerifyArgs {
            trials,
            max_rule_len,
            seed,
            out,
        })
        .map(drop),
        Command::Ensemble {
            scores,
            valid_scores,
            valid_labels,
            test_labels,
            out_dir,
        } => cmd_ensemble(&EnsembleArgs {
            scores,
            valid_scores,
            valid_labels,
            test_labels,
            out_dir,
        })
        .map(drop),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
