use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "weldwatch", version, about = "Open-set fault detection with cluster-assisted few-shot updates")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Experiment configuration (TOML). Flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Master seed for data, initialization and shuffling.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory for artifacts; inputs default to files produced here by
    /// earlier steps.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,
}

/// An inclusive range written `a..b`, or a single value.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Span(pub usize, pub usize);

impl std::str::FromStr for Span {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parse = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("`{t}`: {e}"));
        let span = match s.split_once("..") {
            Some((a, b)) => Span(parse(a)?, parse(b.trim_start_matches('='))?),
            None => {
                let v = parse(s)?;
                Span(v, v)
            }
        };
        if span.0 > span.1 {
            return Err(format!("empty range `{s}`"));
        }
        Ok(span)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic scenario as `dataset.csv`.
    Simulate,
    /// Split the dataset and train the classifier on the known classes.
    /// Writes `train.csv`, `test.csv` and `model.txt`.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Fit the per-class acceptance tests. Writes `bank.txt`.
    FitDetector {
        #[arg(long)]
        model: Option<PathBuf>,
        /// Labeled training samples.
        #[arg(long)]
        data: Option<PathBuf>,
        /// 1-based hidden layer used as the embedding.
        #[arg(long)]
        layer: Option<usize>,
        /// Fixed number of principal components per class.
        #[arg(long)]
        components: Option<usize>,
    },
    /// Decide every sample of a batch. Writes `decisions.csv`, `flagged.csv`
    /// and, for labeled batches, `metrics.json`.
    Detect {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        bank: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Cluster flagged samples by similarity to the known classes. Writes
    /// `cluster_members.csv`, `cluster_summary.csv` and `clusters.json`.
    Cluster {
        #[arg(long)]
        model: Option<PathBuf>,
        /// Samples to cluster.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Labeled known-class samples used as similarity references.
        #[arg(long)]
        known: Option<PathBuf>,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        representatives: Option<usize>,
    },
    /// Add newly labeled classes and fine-tune. Writes `updated-model.txt`
    /// and `updated-bank.txt`.
    Update {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        bank: Option<PathBuf>,
        /// Labeled known-class samples for replay.
        #[arg(long)]
        known: Option<PathBuf>,
        /// Labeled samples of the new classes.
        #[arg(long = "new", value_name = "CSV")]
        new_samples: PathBuf,
        /// Samples used per new class.
        #[arg(long)]
        shots: Option<usize>,
        /// Number of leading layers kept frozen.
        #[arg(long)]
        freeze: Option<usize>,
    },
    /// Few-shot sweep over new-class counts and shots. Writes
    /// `sweep_trials.csv` and `sweep_summary.csv`.
    Sweep {
        #[arg(long)]
        classes: Option<Span>,
        #[arg(long)]
        shots: Option<Span>,
        #[arg(long)]
        repeats: Option<usize>,
    },
    /// Open-set evaluation over consecutive seeds. Writes `eval.csv`.
    Eval {
        #[arg(long, default_value_t = 10)]
        seeds: u64,
    },
    /// Serve the monitoring loop over HTTP.
    Serve {
        /// Revision store; restored from when it holds a revision.
        #[arg(long)]
        state: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: String,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        bank: Option<PathBuf>,
        #[arg(long)]
        known: Option<PathBuf>,
    },
}
