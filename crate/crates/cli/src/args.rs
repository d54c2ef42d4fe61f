use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mortality_core::cohort::{PartitionKind, DEFAULT_AGE_THRESHOLD, DEFAULT_HORIZON};
use mortality_core::estimation::{Variant, WilsonForm, DEFAULT_Z};
use mortality_core::stratify::{DEFAULT_AGE_CUT, DEFAULT_START_DAY, DEFAULT_WINDOW};

#[derive(Debug, Parser)]
#[command(
    name = "mortality",
    version,
    about = "Transfer-corrected mortality for trauma registry cohorts"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Directory receiving every output file
    #[arg(long, global = true, default_value = "out")]
    pub output_dir: PathBuf,

    #[arg(long, global = true, default_value = "niss", value_parser = parse_flag::<PartitionKind>)]
    pub partition: PartitionKind,

    #[arg(long, global = true, default_value = "retarded", value_parser = parse_flag::<Variant>)]
    pub variant: Variant,

    #[arg(long, global = true, default_value_t = DEFAULT_HORIZON)]
    pub horizon: usize,

    /// Normal quantile of the confidence intervals
    #[arg(long, global = true, default_value_t = DEFAULT_Z)]
    pub z: f64,

    /// Seed for every random draw; defaults to the ground truth's own seed
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,

    /// Wilson interval variant for transfer fractions
    #[arg(long, global = true, default_value = "score", value_parser = parse_flag::<WilsonForm>)]
    pub interval_form: WilsonForm,

    /// Age splitting the NISS 1-3 state of the niss-age partition
    #[arg(long, global = true, default_value_t = DEFAULT_AGE_THRESHOLD)]
    pub age_threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Format::Csv => "csv",
            Format::Json => "json",
        })
    }
}

fn parse_flag<T: FromStr<Err = String>>(s: &str) -> Result<T, String> {
    s.parse()
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a cohort from a ground-truth model
    Simulate(SimulateArgs),
    /// Aggregate daily counts and estimate transition coefficients
    Fit(InputArgs),
    /// Corrected first-order mortality and the model comparison table
    Fod(InputArgs),
    /// Project the outcomes of late arrivals and compare with what was observed
    Validate(ValidateArgs),
    /// Weight the death cases of the known-outcome records
    Reweight(InputArgs),
    /// Daily mortality curves, severity-pair tables and age profile
    Stratify(StratifyArgs),
    /// Check the sequential-choice bounds on random schedules
    OracleCheck(OracleArgs),
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Patient records CSV
    #[arg(long)]
    pub input: PathBuf,

    /// Apply Yates' correction to the 2x2 independence tests
    #[arg(long)]
    pub yates: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Ground truth JSON; the built-in calibrated model when omitted
    #[arg(long)]
    pub truth: Option<PathBuf>,

    #[arg(long, default_value_t = 165_559)]
    pub patients: usize,

    /// Also simulate late arrivals, one per transfer of the main cohort, arriving the next day
    #[arg(long)]
    pub inflow: bool,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub input: PathBuf,

    /// Observed survivors among late arrivals, overriding the records
    #[arg(long, requires = "empirical_dead")]
    pub empirical_alive: Option<u64>,

    /// Observed deaths among late arrivals, overriding the records
    #[arg(long, requires = "empirical_alive")]
    pub empirical_dead: Option<u64>,
}

#[derive(Debug, Args)]
pub struct StratifyArgs {
    #[arg(long)]
    pub input: PathBuf,

    /// Severity triples CSV (patient_id,s1,s2,s3)
    #[arg(long)]
    pub triples: PathBuf,

    #[arg(long, default_value_t = DEFAULT_WINDOW)]
    pub window: usize,

    #[arg(long, default_value_t = DEFAULT_START_DAY)]
    pub start_day: usize,

    /// Age splitting the daily mortality curves
    #[arg(long, default_value_t = DEFAULT_AGE_CUT)]
    pub age_cut: f64,

    #[arg(long, default_value_t = 2.0)]
    pub age_bin_width: f64,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[arg(long, default_value_t = 10_000)]
    pub samples: usize,

    /// Largest number of sub-steps per day
    #[arg(long, default_value_t = 6)]
    pub max_steps: usize,
}
