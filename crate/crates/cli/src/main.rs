use std::path::{Path, PathBuf};
use std::process::ExitCode;

use blpinn::evaluation::EvalReport;
use blpinn_cli::run::{self, Outcome, Vary};
use blpinn_cli::{preset, CliError, RunConfig};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "blpinn", version, about = "PINNs for steady reaction-advection-diffusion with boundary layers")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct Source {
    /// TOML run configuration.
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    config: Option<PathBuf>,
    /// Named preset instead of a file.
    #[arg(long)]
    preset: Option<String>,
    /// Dotted-path override, e.g. `train.optimizer.epochs=500`. Repeatable.
    #[arg(long = "set", value_name = "PATH=VALUE")]
    overrides: Vec<String>,
    /// Output root (default: $BLPINN_OUTPUT_ROOT or ./runs).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train once and evaluate the configured k values.
    Train(Source),
    /// Evaluate the checkpoint of a finished run.
    Eval {
        /// Directory written by `train`, `preset` or one `sweep` entry.
        run_dir: PathBuf,
        /// Comma-separated k values (default: the run's evaluation plan).
        #[arg(long)]
        k: Option<String>,
        /// Output directory (default: <run_dir>/eval).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Several independent trainings with a combined RMSE table.
    Sweep {
        #[command(flatten)]
        source: Source,
        /// Comma-separated k values; fixed-k configs train once per value.
        #[arg(long)]
        k: Option<String>,
        /// `path=v1,v2,...`: one training per value of a config field.
        #[arg(long)]
        vary: Option<String>,
    },
    /// Run, list, or print a named preset.
    Preset {
        name: Option<String>,
        /// Print the preset names.
        #[arg(long, conflicts_with_all = ["name", "show"])]
        list: bool,
        /// Print the preset configuration instead of running it.
        #[arg(long, requires = "name")]
        show: bool,
        /// Dotted-path override applied to the preset. Repeatable.
        #[arg(long = "set", value_name = "PATH=VALUE")]
        overrides: Vec<String>,
        /// Output root (default: $BLPINN_OUTPUT_ROOT or ./runs).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-run a run directory from its config echo and compare artifacts.
    Replay {
        /// Run directory containing `manifest.json`.
        run_dir: PathBuf,
    },
    /// Check a configuration file without running anything.
    Validate {
        /// TOML run configuration.
        config: PathBuf,
    },
}

fn parse_ks(list: &str) -> Result<Vec<f64>, CliError> {
    let mut ks = Vec::new();
    let mut errors = Vec::new();
    for item in list.split(',').map(str::trim) {
        match item.parse::<f64>() {
            Ok(k) if k > 0.0 && k.is_finite() => ks.push(k),
            _ => errors.push(format!("--k values > 0 (got `{item}`)")),
        }
    }
    if errors.is_empty() {
        Ok(ks)
    } else {
        Err(CliError::Config(errors))
    }
}

fn load(source: &Source) -> Result<RunConfig, CliError> {
    let base = match (&source.config, &source.preset) {
        (Some(path), _) => RunConfig::load(path)?,
        (None, Some(name)) => preset::preset(name)?,
        (None, None) => return Err(CliError::Config(vec!["--config or --preset required".into()])),
    };
    base.with_overrides(&source.overrides)
}

fn root(out: &Option<PathBuf>) -> PathBuf {
    out.clone().unwrap_or_else(run::default_output_root)
}

fn print_reports(reports: &[EvalReport]) {
    println!("{:>10}  {:>12}  {:>12}  note", "k", "rmse", "max_abs_err");
    for r in reports {
        let mut note = r.label.clone();
        if r.extrapolation {
            note.push_str(if note.is_empty() { "extrapolation" } else { " extrapolation" });
        }
        println!("{:>10.3e}  {:>12.4e}  {:>12.4e}  {note}", r.k, r.rmse, r.max_abs_error);
    }
}

fn finish(result: Result<Outcome, CliError>, dir: &Path) -> Result<(), CliError> {
    if let Err(CliError::Config(_)) = &result {
        // Nothing was written; do not leave an empty run directory behind.
        let _ = std::fs::remove_dir(dir);
        return result.map(|_| ());
    }
    println!("run directory: {}", dir.display());
    let outcome = result?;
    print_reports(&outcome.reports);
    Ok(())
}

fn dispatch(cmd: Cmd) -> Result<(), CliError> {
    match cmd {
        Cmd::Train(source) => {
            let config = load(&source)?;
            config.validate()?;
            let dir = run::create_run_dir(&root(&source.out), &config)?;
            finish(run::train(&config, &dir), &dir)
        }
        Cmd::Sweep { source, k, vary } => {
            let config = load(&source)?;
            config.validate()?;
            let ks = k.as_deref().map(parse_ks).transpose()?.unwrap_or_default();
            let vary = vary.as_deref().map(Vary::parse).transpose()?;
            let dir = run::create_run_dir(&root(&source.out), &config)?;
            finish(run::sweep(&config, &ks, vary.as_ref(), &dir), &dir)
        }
        Cmd::Eval { run_dir, k, out } => {
            let ks = k.as_deref().map(parse_ks).transpose()?.unwrap_or_default();
            let out = out.unwrap_or_else(|| run_dir.join("eval"));
            finish(run::eval(&run_dir, &ks, &out), &out)
        }
        Cmd::Preset {
            name,
            list,
            show,
            overrides,
            out,
        } => {
            let Some(name) = name.filter(|_| !list) else {
                for n in preset::NAMES {
                    println!("{n}");
                }
                return Ok(());
            };
            let config = preset::preset(&name)?.with_overrides(&overrides)?;
            if show {
                print!("{}", config.to_toml());
                return Ok(());
            }
            config.validate()?;
            let dir = run::create_run_dir(&root(&out), &config)?;
            finish(run::train(&config, &dir), &dir)
        }
        Cmd::Replay { run_dir } => {
            let files = run::replay(&run_dir)?;
            println!("replay identical: {} files compared in {}", files.len(), run_dir.display());
            Ok(())
        }
        Cmd::Validate { config } => {
            let config = RunConfig::load(&config)?;
            config.validate()?;
            println!("valid");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
