//! Command-line interface for design-based DID estimation and inference.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use staggered_did::cli::{
    run_estimate, run_oracle, run_pretest, run_simulate, EstimateOptions, OracleOptions,
    OutputFormat, SimFormat, SimulateRequest,
};
use staggered_did::error::Error;
use staggered_did::sim::{Design, PiVariant, SimConfig, STUDY_PERIODS};

#[derive(Parser)]
#[command(
    name = "staggered-did",
    version,
    about = "Design-based difference-in-differences with staggered adoption"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    Table,
    Csv,
}

impl From<FormatArg> for OutputFormat {
    fn from(f: FormatArg) -> OutputFormat {
        match f {
            FormatArg::Json => OutputFormat::Json,
            FormatArg::Table => OutputFormat::Table,
            FormatArg::Csv => OutputFormat::Csv,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SimFormatArg {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the DID effect and its variances from a CSV panel.
    Estimate {
        /// Long-format CSV with header `unit,time,outcome,adoption`.
        panel: PathBuf,
        /// Bootstrap replicates per scheme.
        #[arg(long, default_value_t = 1000)]
        boot_reps: usize,
        /// Seed for the bootstrap streams.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "table")]
        format: FormatArg,
        /// Report only the conservative and sandwich variances.
        #[arg(long)]
        skip_bootstrap: bool,
    },
    /// Run the Monte Carlo variance study.
    Simulate {
        /// JSON file with a single simulation configuration.
        #[arg(long, conflicts_with_all = ["all", "design", "pi", "n"])]
        config: Option<PathBuf>,
        /// Run all sixteen study configurations.
        #[arg(long)]
        all: bool,
        /// Outcome design (A, B, C, or D).
        #[arg(long)]
        design: Option<String>,
        /// Share profile (I or II).
        #[arg(long)]
        pi: Option<String>,
        /// Number of units.
        #[arg(long)]
        n: Option<usize>,
        /// Noise scale of the outcome draws.
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        /// Monte Carlo replications.
        #[arg(long, default_value_t = 2000)]
        sims: usize,
        /// Bootstrap replicates within each replication.
        #[arg(long, default_value_t = 1000)]
        boot_reps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "csv")]
        format: SimFormatArg,
    },
    /// Verify the closed-form estimand and variance against exhaustive
    /// enumeration on a small seeded population.
    Oracle {
        /// Number of units (must equal the sum of --counts).
        #[arg(long)]
        n: usize,
        /// Number of periods.
        #[arg(long)]
        t: u32,
        /// Comma-separated counts for adoption dates 1..K (a final entry
        /// beyond date T counts never-adopters).
        #[arg(long)]
        counts: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Noise scale of the synthetic population.
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        /// Constant treatment effect of the synthetic population.
        #[arg(long, default_value_t = 1.0)]
        effect: f64,
    },
    /// Permutation pretest of first-period balance from a CSV panel.
    Pretest {
        panel: PathBuf,
        /// Number of label permutations.
        #[arg(long, default_value_t = 10_000)]
        perms: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "table")]
        format: FormatArg,
    },
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    match cli.command {
        Command::Estimate { panel, boot_reps, seed, format, skip_bootstrap } => {
            let opts = EstimateOptions {
                boot_reps,
                seed,
                skip_bootstrap,
                format: format.into(),
            };
            print!("{}", run_estimate(&panel, &opts)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Simulate {
            config,
            all,
            design,
            pi,
            n,
            sigma,
            sims,
            boot_reps,
            seed,
            format,
        } => {
            let request = if all {
                SimulateRequest::All { seed, n_sims: sims, n_boot: boot_reps }
            } else if let Some(path) = config {
                let text = std::fs::read_to_string(&path).map_err(|e| {
                    Error::Invalid(format!("cannot read {}: {e}", path.display()))
                })?;
                let config: SimConfig = serde_json::from_str(&text)
                    .map_err(|e| Error::Invalid(format!("invalid config: {e}")))?;
                SimulateRequest::One(config)
            } else {
                let design = design
                    .as_deref()
                    .and_then(Design::parse)
                    .ok_or_else(|| Error::Invalid("--design must be one of A, B, C, D".into()))?;
                let pi = pi
                    .as_deref()
                    .and_then(PiVariant::parse)
                    .ok_or_else(|| Error::Invalid("--pi must be I or II".into()))?;
                let n = n.ok_or_else(|| Error::Invalid("--n is required".into()))?;
                SimulateRequest::One(SimConfig {
                    design,
                    pi,
                    n,
                    t: STUDY_PERIODS,
                    sigma,
                    n_sims: sims,
                    n_boot: boot_reps,
                    seed,
                    level: 0.95,
                })
            };
            let sim_format = match format {
                SimFormatArg::Csv => SimFormat::Csv,
                SimFormatArg::Json => SimFormat::Json,
            };
            print!("{}", run_simulate(&request, sim_format)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Oracle { n, t, counts, seed, sigma, effect } => {
            let counts: Vec<usize> = counts
                .split(',')
                .map(|c| {
                    c.trim().parse::<usize>().map_err(|_| {
                        Error::Invalid(format!("count '{c}' is not a nonnegative integer"))
                    })
                })
                .collect::<Result<_, _>>()?;
            let opts = OracleOptions { n, t, counts, seed, sigma, effect };
            let (out, all_pass) = run_oracle(&opts)?;
            print!("{out}");
            Ok(if all_pass { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
        Command::Pretest { panel, perms, seed, format } => {
            print!("{}", run_pretest(&panel, perms, seed, format.into())?);
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
