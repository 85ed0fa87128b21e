//! `cmic`: score classifier outputs, train with or without the CMI
//! constraint, attack trained models, and export plot-ready CSV.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use cmic_core::attacks::AttackKind;
use cmic_core::data::Scaling;

#[derive(Parser)]
#[command(
    name = "cmic",
    version,
    about = "Conditional mutual information metrics and CMI-constrained training"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score a probability-matrix CSV (`label,p0,...`).
    Metrics {
        probs: PathBuf,
        /// Print the report as JSON.
        #[arg(long, conflicts_with = "csv")]
        json: bool,
        /// Print the report as a one-row CSV.
        #[arg(long)]
        csv: bool,
        /// Write to this file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a classifier and write its curve, checkpoint and manifest.
    Train {
        /// TOML file with training settings; omitted keys take defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        data: DataArgs,
        /// Evaluation set (dataset CSV); defaults to the training set.
        #[arg(long)]
        eval: Option<PathBuf>,
        /// Feature scaling fitted on the training set.
        #[arg(long, value_enum, default_value_t = ScaleArg::None)]
        scale: ScaleArg,
        /// Run directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Robust accuracy of a checkpoint under FGSM or PGD.
    Attack {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        /// Scaler written by `train`, applied to the data first.
        #[arg(long)]
        scaler: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = AttackArg::Fgsm)]
        attack: AttackArg,
        /// Comma-separated, ascending `∞`-norm budgets.
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "0.05,0.1,0.15,0.2,0.25,0.3,0.35"
        )]
        budgets: Vec<f64>,
        #[arg(long, default_value_t = 5)]
        iterations: usize,
        /// PGD step size; defaults to 2.5 * budget / iterations.
        #[arg(long)]
        step_size: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Start PGD at the clean input.
        #[arg(long)]
        no_random_start: bool,
        /// Write `budget,accuracy` CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Project three classes onto the 2-D simplex as `label,u,v`.
    Simplex {
        /// Probability-matrix CSV; the three columns are renormalized.
        #[arg(required_unless_present = "checkpoint")]
        probs: Option<PathBuf>,
        /// Use a checkpoint's logits with a 3-way softmax instead.
        #[arg(long, requires = "data", conflicts_with = "probs")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        scaler: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', num_args = 1, required = true)]
        classes: Vec<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Consistency and correlation report for the bundled reference table.
    Table1 {
        #[arg(long, required = true)]
        bundled: bool,
        #[arg(long)]
        json: bool,
    },
    /// Write synthetic datasets or test fixtures.
    Gendata {
        #[arg(long, conflicts_with = "fixture")]
        blobs: bool,
        #[arg(long, value_enum, required_unless_present = "blobs")]
        fixture: Option<Fixture>,
        #[arg(long, default_value_t = 3)]
        classes: usize,
        #[arg(long, default_value_t = 100)]
        per_class: usize,
        #[arg(long, default_value_t = 2)]
        dim: usize,
        #[arg(long, default_value_t = 1.0)]
        spread: f64,
        #[arg(long, default_value_t = 2.0)]
        radius: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Dataset CSV (`label,f0,...`).
    #[arg(long, conflicts_with = "idx", required_unless_present = "idx")]
    data: Option<PathBuf>,
    /// IDX image and label files.
    #[arg(long, num_args = 2, value_names = ["IMAGES", "LABELS"])]
    idx: Option<Vec<PathBuf>>,
    /// Class count, when the largest label does not imply it.
    #[arg(long)]
    num_classes: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScaleArg {
    None,
    Standardize,
    Minmax,
}

impl From<ScaleArg> for Scaling {
    fn from(s: ScaleArg) -> Self {
        match s {
            ScaleArg::None => Scaling::None,
            ScaleArg::Standardize => Scaling::Standardize,
            ScaleArg::Minmax => Scaling::MinMax,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum AttackArg {
    Fgsm,
    Pgd,
}

impl From<AttackArg> for AttackKind {
    fn from(a: AttackArg) -> Self {
        match a {
            AttackArg::Fgsm => AttackKind::Fgsm,
            AttackArg::Pgd => AttackKind::Pgd,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Fixture {
    #[value(name = "ln2-cmi")]
    Ln2Cmi,
    #[value(name = "idx-mini")]
    IdxMini,
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
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
