mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use bhns_core::SamplerKind;
use clap::{Args, Parser, Subcommand};

use crate::config::CommaList;

/// Seeded, reproducible runs of the negative-sampling pipeline.
#[derive(Debug, Parser)]
#[command(name = "bhns", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Flat `key = value` file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global seed. Falls back to the config file, then BHNS_SEED, then 0.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct StoreArgs {
    /// Query embeddings, one `id<TAB>v1,v2,...` per line.
    #[arg(long)]
    queries: Option<PathBuf>,
    /// Product embeddings in the same format.
    #[arg(long)]
    products: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate embeddings and annotations and print a summary.
    Ingest {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        store: StoreArgs,
        #[arg(long)]
        annotations: Option<PathBuf>,
        /// Fraction of random zero-label pairs to add.
        #[arg(long)]
        augment_frac: Option<f64>,
        /// Category-to-label mapping: train or eval.
        #[arg(long)]
        label_mode: Option<String>,
        /// Also write the (augmented) corpus as JSON lines.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build training batches with sampled negatives.
    Sample {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        store: StoreArgs,
        #[arg(long)]
        annotations: Option<PathBuf>,
        #[arg(long)]
        sampler: Option<SamplerKind>,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        k: Option<u64>,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        augment_frac: Option<f64>,
        #[arg(long)]
        label_mode: Option<String>,
        /// Minimum label for a pair to count as an in-batch anchor.
        #[arg(long)]
        threshold: Option<f64>,
        /// Directory receiving batches.jsonl and run.json.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Fit the relevance scorer on sampled batches.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        store: StoreArgs,
        #[arg(long)]
        batches: Option<PathBuf>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        l2: Option<f64>,
        /// Checkpoint path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score annotated pairs with a checkpoint and report ranking metrics.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        store: StoreArgs,
        #[arg(long)]
        annotations: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// NDCG cutoffs, comma separated.
        #[arg(long)]
        cutoffs: Option<CommaList<usize>>,
        #[arg(long)]
        augment_frac: Option<f64>,
        #[arg(long)]
        label_mode: Option<String>,
        /// AUROC positive class: a label threshold or `median`.
        #[arg(long)]
        auroc_binarize: Option<String>,
        #[arg(long)]
        mrr_threshold: Option<f64>,
        /// Metrics JSON path; printed to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare samplers on synthetic data with planted false negatives.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        samplers: Option<CommaList<SamplerKind>>,
        /// Number of seeds, counted up from the global seed.
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        seeds: Option<u64>,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        k: Option<u64>,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        n_clusters: Option<usize>,
        #[arg(long)]
        queries_per_cluster: Option<usize>,
        #[arg(long)]
        products_per_cluster: Option<usize>,
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        intra_cos: Option<f64>,
        #[arg(long)]
        inter_cos: Option<f64>,
        #[arg(long)]
        label_noise: Option<f64>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        l2: Option<f64>,
        /// Report path; printed to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-candidate CSV of selections.
        #[arg(long)]
        pairs_csv: Option<PathBuf>,
        /// Write the first seed's synthetic store, training and held-out pairs here.
        #[arg(long)]
        export_dir: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {:#}", failure.error);
            ExitCode::from(failure.code)
        }
    }
}
