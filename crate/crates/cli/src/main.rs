//! `ansconf` command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 invalid input data, 3 runtime or
//! training failure.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use ansconf::featurizer::{DEFAULT_K, MAX_K};

const DEFAULT_SEED: u64 = 13;

#[derive(Debug, Parser)]
#[command(
    name = "ansconf",
    version,
    about = "Confidence estimation for extractive QA predictions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build an IDF table from a corpus with one document per line.
    BuildIdf {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Derive correctness labels from a prediction dump.
    Label {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute the feature table for a prediction dump.
    Featurize {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        idf: PathBuf,
        /// Number of top candidates to featurize.
        #[arg(long, default_value_t = DEFAULT_K, value_parser = parse_k)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Keep features whose influence beats a random noise column.
    Select {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        /// Base GBM parameters (JSON); overrides --style.
        #[arg(long)]
        params: Option<PathBuf>,
        /// Preset base parameters when --params is not given.
        #[arg(long, value_enum, default_value_t = Style::Sq2)]
        style: Style,
        /// Number of noise columns; the threshold is the strongest of them.
        #[arg(long, default_value_t = 1)]
        noise_columns: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Grid-search GBM parameters by holdout AUC.
    Tune {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        /// Grid file (TOML or JSON).
        #[arg(long)]
        grid: PathBuf,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        /// Restrict to the features kept by `select`.
        #[arg(long)]
        selection: Option<PathBuf>,
        /// Refuse grids with more points than this.
        #[arg(long, default_value_t = ansconf::selection::DEFAULT_GRID_CAP)]
        max_grid_points: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the confidence model.
    Train {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        /// GBM parameters: a bare parameter object or the output of `tune`.
        #[arg(long)]
        params: PathBuf,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        /// Restrict to the features kept by `select`.
        #[arg(long)]
        selection: Option<PathBuf>,
        /// Train only on the 75% part of the seeded split.
        #[arg(long)]
        split: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a feature table and compare against a baseline score.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        /// Feature columns summed to form the baseline score.
        #[arg(long, default_value = "alpha_b_top1+alpha_e_top1")]
        baseline_score_column: String,
        #[arg(long, default_value_t = ansconf::evaluation::DEFAULT_ROUNDS)]
        rounds: usize,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        /// Evaluate only on the 25% held-out part of the seeded split.
        #[arg(long)]
        split: bool,
        /// Also write the model's ROC curve as CSV.
        #[arg(long)]
        roc_csv: Option<PathBuf>,
        #[arg(long)]
        report: PathBuf,
    },
    /// Render the gradient highlighting view for one example.
    Explain {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        example_id: String,
        /// IDF table used at featurization time.
        #[arg(long)]
        idf: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Html)]
        format: Format,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Style {
    Sq2,
    Nq,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Html,
    Ansi,
}

fn parse_k(s: &str) -> Result<usize, String> {
    let k: usize = s.parse().map_err(|e| format!("{e}"))?;
    if (1..=MAX_K).contains(&k) {
        Ok(k)
    } else {
        Err(format!("k must be in 1..={MAX_K}"))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
