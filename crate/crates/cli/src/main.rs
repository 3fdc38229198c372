use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use besvm_cli::commands;
use besvm_cli::config::{parse_override, split_override_args, ExperimentConfig};
use besvm_cli::{configure_threads, CliError, Result};
use clap::{Args, Parser, Subcommand};

/// Basis expanding SVM experiments.
///
/// Any config leaf can be overridden with `--<dotted.path>=<value>`, e.g.
/// `--solver.C=2` or `--basis.per_class=50`. Values are read as JSON when
/// they parse and as strings otherwise.
#[derive(Debug, Parser)]
#[command(name = "besvm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long, short)]
    config: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Debug, Args)]
struct Overrides {
    /// Output directory; shorthand for `--output.dir=<DIR>`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override a config leaf, `KEY=VALUE` with a dotted key.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a model and report training and test accuracy.
    Train(Common),
    /// Evaluate a saved model.
    Eval {
        /// Model file written by `train`.
        #[arg(long, short)]
        model: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Fit the empirical-map embedding and write the embedded data.
    Embed(Common),
    /// Write the selected basis.
    SelectBasis(Common),
    /// Negative-eigenvalue statistics of each measure on the basis.
    Analyze {
        #[command(flatten)]
        common: Common,
        /// CSV `label,<accuracy columns...>` to correlate the statistics with.
        #[arg(long)]
        accuracy: Option<PathBuf>,
    },
    /// Training time of BE-SVM and kernel SVM over growing data sizes.
    Bench(Common),
    /// Cross-validate the configured model on the training split.
    Cv(Common),
    /// Print the canonical form of a config.
    Config(Common),
}

fn collect_overrides(
    o: &Overrides,
    mut dotted: Vec<(String, String)>,
) -> Result<Vec<(String, String)>> {
    for s in &o.set {
        dotted.push(parse_override(s)?);
    }
    if let Some(dir) = &o.out {
        let value = serde_json::to_string(&dir.to_string_lossy())
            .map_err(|e| CliError::Config(e.to_string()))?;
        dotted.push(("output.dir".into(), value));
    }
    Ok(dotted)
}

fn load(common: &Common, dotted: Vec<(String, String)>) -> Result<ExperimentConfig> {
    ExperimentConfig::load(
        &common.config,
        &collect_overrides(&common.overrides, dotted)?,
    )
}

/// Writes to stdout, ignoring a closed pipe (e.g. output piped to `head`).
fn print_line(line: &str) {
    let _ = writeln!(std::io::stdout().lock(), "{line}");
}

fn run(cli: Cli, dotted: Vec<(String, String)>) -> Result<()> {
    let exec = configure_threads(std::env::var("BESVM_THREADS").ok().as_deref())?;
    let written = match &cli.command {
        Command::Train(c) => commands::run_train(&load(c, dotted)?, exec)?,
        Command::Eval { model, overrides } => {
            commands::run_eval(model, &collect_overrides(overrides, dotted)?, exec)?
        }
        Command::Embed(c) => commands::run_embed(&load(c, dotted)?, exec)?,
        Command::SelectBasis(c) => commands::run_select_basis(&load(c, dotted)?, exec)?,
        Command::Analyze { common, accuracy } => {
            commands::run_analyze(&load(common, dotted)?, accuracy.as_deref(), exec)?
        }
        Command::Bench(c) => commands::run_bench(&load(c, dotted)?)?,
        Command::Cv(c) => commands::run_cv(&load(c, dotted)?, exec)?,
        Command::Config(c) => {
            let json = load(c, dotted)?.to_canonical_json()?;
            print_line(&json);
            Vec::new()
        }
    };
    for path in written {
        print_line(&path.display().to_string());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let (args, dotted) = split_override_args(std::env::args().collect());
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli, dotted) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
