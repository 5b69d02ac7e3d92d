//! `hpscan` — honeypot-detection pipeline driver.
//!
//! Every subcommand is a thin wrapper over the library: `ingest` pulls
//! contract data from an explorer API or fixture directory, `synth`
//! generates a labeled synthetic corpus, `featurize` turns a corpus into a
//! feature matrix, `cv`/`loto`/`rank` run the evaluation protocols,
//! `cases` and `query` inspect the fund-flow case catalog, and `report`
//! prints feature importances of a model trained on the full matrix.
//!
//! Exit codes: 0 success, 1 input error, 2 internal error. Failures print
//! one machine-readable JSON line on stderr. All report output is CSV with
//! a leading `#` metadata comment carrying tool version and seed.

mod pipeline;

use clap::{Parser, Subcommand};
use pipeline::{CliError, PipelineConfig, TrainArgs};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "hpscan", version, about = "Honeypot smart-contract detection pipeline")]
struct Cli {
    /// Pipeline config file (JSON); explicit flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Seed for every random choice the run makes.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fetch contract bundles for a list of addresses into a JSONL corpus.
    Ingest {
        /// File with one contract address per line.
        #[arg(long)]
        addresses: PathBuf,
        /// Seed labels CSV (`address,technique`); propagated over
        /// bytecode-identical contracts.
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Directory of per-address fixture JSON files; used instead of
        /// the HTTP API when given.
        #[arg(long)]
        fixtures: Option<PathBuf>,
        /// Explorer API base URL (key read from `ETHERSCAN_API_KEY`).
        #[arg(long)]
        base_url: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a deterministic synthetic corpus (JSONL to --out or stdout).
    Synth {
        /// Generator config (JSON); defaults to the built-in profile.
        #[arg(long = "synth-config")]
        synth_config: Option<PathBuf>,
        #[arg(long)]
        honeypots: Option<usize>,
        #[arg(long)]
        non_honeypots: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dump the 244-entry fund-flow case catalog.
    Cases {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Turn a JSONL corpus (--in or stdin) into a feature-matrix CSV.
    Featurize {
        #[arg(long = "in")]
        input: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Stratified k-fold cross-validation over a feature matrix.
    Cv {
        #[arg(long = "in")]
        input: Option<PathBuf>,
        /// all | transactions | source | fundflow
        #[arg(long)]
        features: Option<String>,
        #[arg(long)]
        k: Option<usize>,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Leave-one-technique-out recall at threshold 0.5.
    Loto {
        #[arg(long = "in")]
        input: Option<PathBuf>,
        /// Held-out technique; default: every technique in the labels.
        #[arg(long)]
        technique: Option<String>,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Ensemble triage ranking by mean predicted probability.
    Rank {
        #[arg(long = "in")]
        input: Option<PathBuf>,
        #[arg(long)]
        k: Option<usize>,
        /// Drop contracts that already carry a honeypot label.
        #[arg(long)]
        unlabeled_only: bool,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sum fund-flow case frequencies matching a partial case predicate.
    Query {
        /// JSONL corpus (--in or stdin).
        #[arg(long = "in")]
        input: Option<PathBuf>,
        /// creator | other
        #[arg(long)]
        sender: Option<String>,
        /// yes | no
        #[arg(long)]
        creation: Option<String>,
        /// yes | no
        #[arg(long)]
        error: Option<String>,
        /// up | unchanged | down
        #[arg(long)]
        balance_creator: Option<String>,
        /// up | unchanged | down
        #[arg(long)]
        balance_contract: Option<String>,
        /// up | unchanged | down | na
        #[arg(long)]
        balance_sender: Option<String>,
        /// yes | no
        #[arg(long)]
        balance_other_positive: Option<String>,
        /// yes | no
        #[arg(long)]
        balance_other_negative: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Feature importances of a model trained on the full matrix.
    Report {
        #[arg(long = "in")]
        input: Option<PathBuf>,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();

    let config = match PipelineConfig::load(cli.config.as_deref()) {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    let explicit_seed = cli.seed.or(config.seed);
    let seed = explicit_seed.unwrap_or(0);

    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            return fail(CliError::Internal(format!("thread pool: {e}")));
        }
    }

    let outcome = match cli.command {
        Command::Ingest { addresses, labels, fixtures, base_url, out } => {
            pipeline::ingest(&config, &addresses, labels.as_deref(), fixtures.as_deref(), base_url, &out)
        }
        Command::Synth { synth_config, honeypots, non_honeypots, out } => {
            pipeline::synth(
                synth_config.as_deref(),
                honeypots,
                non_honeypots,
                explicit_seed,
                out.as_deref(),
            )
        }
        Command::Cases { out } => pipeline::cases(seed, out.as_deref()),
        Command::Featurize { input, out } => {
            pipeline::featurize(input.as_deref(), out.as_deref())
        }
        Command::Cv { input, features, k, train, out } => pipeline::cv(
            &config,
            input.as_deref(),
            features.as_deref(),
            k,
            &train,
            seed,
            out.as_deref(),
        ),
        Command::Loto { input, technique, train, out } => pipeline::loto(
            &config,
            input.as_deref(),
            technique.as_deref(),
            &train,
            seed,
            out.as_deref(),
        ),
        Command::Rank { input, k, unlabeled_only, train, out } => pipeline::rank(
            &config,
            input.as_deref(),
            k,
            unlabeled_only,
            &train,
            seed,
            out.as_deref(),
        ),
        Command::Query {
            input,
            sender,
            creation,
            error,
            balance_creator,
            balance_contract,
            balance_sender,
            balance_other_positive,
            balance_other_negative,
            out,
        } => pipeline::query(
            input.as_deref(),
            pipeline::PredicateArgs {
                sender,
                creation,
                error,
                balance_creator,
                balance_contract,
                balance_sender,
                balance_other_positive,
                balance_other_negative,
            },
            seed,
            out.as_deref(),
        ),
        Command::Report { input, train, out } => {
            pipeline::report(&config, input.as_deref(), &train, seed, out.as_deref())
        }
    };

    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e),
    }
}

fn fail(e: CliError) -> ExitCode {
    eprintln!("{}", e.to_json_line());
    match e {
        CliError::Input(_) => ExitCode::from(1),
        CliError::Internal(_) => ExitCode::from(2),
    }
}
