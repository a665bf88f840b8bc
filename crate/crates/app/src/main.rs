use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};
use duacm_app::bundle::ModelBundle;
use duacm_app::commands::{self, Experiment, Part};
use duacm_app::config::{Preset, RunConfig};
use duacm_app::error::{AppError, Result};
use duacm_app::output::write_atomic;
use duacm_app::service::{self, AppState};
use duacm_core::cohort::load_cohort;
use duacm_core::Cohort;

/// Diagnosis-uncertain risk modelling pipeline.
#[derive(Parser)]
#[command(name = "duacm", version)]
struct Cli {
    /// TOML run configuration; defaults apply to anything it omits.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file, or directory for commands that write several tables.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort file.
    Generate {
        #[arg(long, value_enum)]
        preset: Option<PresetArg>,
        #[arg(long)]
        n_patients: Option<usize>,
    },
    /// Fit the outcome and diagnosis models and write a bundle.
    Train {
        #[arg(long)]
        cohort: PathBuf,
    },
    /// Score a bundle on its test split.
    Evaluate {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        cohort: PathBuf,
    },
    /// Run one of the comparison experiments.
    Experiment {
        #[arg(value_enum)]
        kind: ExperimentArg,
        #[arg(long)]
        cohort: PathBuf,
        /// Needed by du-summary.
        #[arg(long)]
        bundle: Option<PathBuf>,
    },
    /// Per-patient mean, quantiles, delta and explanation.
    Predict {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: PartArg,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long)]
        addr: Option<String>,
        #[arg(long)]
        static_dir: Option<PathBuf>,
    },
    /// Print the resolved configuration with every default filled in.
    Config,
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    Confusable,
    Registry,
    Nonlinear,
    Transferable,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExperimentArg {
    AcmVsSpecific,
    OutOfDiagnosis,
    CrossCorrelation,
    DuSummary,
}

#[derive(Clone, Copy, ValueEnum)]
enum PartArg {
    All,
    Train,
    Valid,
    Test,
}

fn out_path(out: &Option<PathBuf>) -> Result<&Path> {
    out.as_deref().ok_or_else(|| AppError::Usage("--out is required".into()))
}

fn read_cohort_file(path: &Path) -> Result<Cohort> {
    Ok(load_cohort(path)?)
}

fn run(cli: Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    match cli.command {
        Command::Generate { preset, n_patients } => {
            if let Some(p) = preset {
                config.cohort.preset = match p {
                    PresetArg::Confusable => Preset::Confusable,
                    PresetArg::Registry => Preset::Registry,
                    PresetArg::Nonlinear => Preset::Nonlinear,
                    PresetArg::Transferable => Preset::Transferable,
                };
            }
            if let Some(n) = n_patients {
                config.cohort.n_patients = n;
            }
            let bytes = commands::generate(&config)?;
            write_atomic(out_path(&cli.out)?, &bytes)
        }
        Command::Train { cohort } => {
            let out = out_path(&cli.out)?;
            let bundle = commands::train(&config, &read_cohort_file(&cohort)?)?;
            bundle.save(out)
        }
        Command::Evaluate { bundle, cohort } => {
            let out = out_path(&cli.out)?;
            let report = commands::evaluate(&config, &ModelBundle::load(&bundle)?, &read_cohort_file(&cohort)?)?;
            report.write(out)
        }
        Command::Experiment { kind, cohort, bundle } => {
            let out = out_path(&cli.out)?;
            let which = match kind {
                ExperimentArg::AcmVsSpecific => Experiment::AcmVsSpecific,
                ExperimentArg::OutOfDiagnosis => Experiment::OutOfDiagnosis,
                ExperimentArg::CrossCorrelation => Experiment::CrossCorrelation,
                ExperimentArg::DuSummary => Experiment::DuSummary,
            };
            let bundle = bundle.as_deref().map(ModelBundle::load).transpose()?;
            let report = commands::experiment(&config, which, &read_cohort_file(&cohort)?, bundle.as_ref())?;
            report.write(out)
        }
        Command::Predict { bundle, cohort, split } => {
            let out = out_path(&cli.out)?;
            let part = match split {
                PartArg::All => Part::All,
                PartArg::Train => Part::Train,
                PartArg::Valid => Part::Valid,
                PartArg::Test => Part::Test,
            };
            let table = commands::predict(&config, &ModelBundle::load(&bundle)?, &read_cohort_file(&cohort)?, part)?;
            write_atomic(out, table.as_bytes())
        }
        Command::Serve {
            bundle,
            cohort,
            addr,
            static_dir,
        } => {
            let serve = &config.serve;
            let state = AppState::new(
                ModelBundle::load(&bundle)?,
                read_cohort_file(&cohort)?,
                config.evaluate.top_k,
                config.evaluate.driver_threshold,
                Duration::from_secs(serve.idle_timeout_secs),
            )?;
            let addr = addr.unwrap_or_else(|| serve.addr.clone());
            let static_dir = static_dir.or_else(|| serve.static_dir.clone());
            let runtime = tokio::runtime::Runtime::new().map_err(|e| AppError::io("runtime", e))?;
            runtime.block_on(service::serve(Arc::new(state), &addr, static_dir.as_deref()))
        }
        Command::Config => {
            let text = config.to_toml();
            match &cli.out {
                Some(p) => write_atomic(p, text.as_bytes()),
                None => {
                    print!("{text}");
                    Ok(())
                }
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("{}", AppError::Usage(e.to_string().trim_end().to_string()).to_json());
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::FAILURE
        }
    }
}
