use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use morse_qsd::observables::fit_decay;
use morse_qsd_cli::compare::{self, Table};
use morse_qsd_cli::config::{self, FitModel, FitSection};
use morse_qsd_cli::error::CliError;
use morse_qsd_cli::{manifest, runner, table1};

#[derive(Parser)]
#[command(
    name = "morse-qsd",
    version,
    about = "Quantum state diffusion for a decohering Morse oscillator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a configuration file (or the config recorded in a manifest).
    Run {
        config: Option<PathBuf>,
        /// Re-run the configuration stored in a manifest.json.
        #[arg(long, conflicts_with = "config")]
        manifest: Option<PathBuf>,
        /// Override a config key, e.g. --set ensemble.realizations=100.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Output directory; beats the config and MORSE_QSD_OUT.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads for the ensemble.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Compare a QSD observables CSV against an oracle one.
    Compare {
        qsd: PathBuf,
        oracle: PathBuf,
        /// Comma-separated columns; default χ and every shared P/ζ column.
        #[arg(long, value_delimiter = ',')]
        columns: Vec<String>,
        #[arg(long, default_value_t = runner::COMPARE_SIGMAS)]
        sigmas: f64,
        #[arg(long, default_value_t = runner::COMPARE_MIN_FRACTION)]
        min_fraction: f64,
        /// Write the per-time table here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the coherence-length table.
    Table1,
    /// Fit exponential decay to one column of an observables CSV.
    Fit {
        csv: PathBuf,
        #[arg(long, default_value = "chi")]
        column: String,
        #[arg(long, value_enum, default_value_t = ModelArg::Single)]
        model: ModelArg,
        #[arg(long, default_value_t = 0.0)]
        t_min_fs: f64,
        #[arg(long)]
        t_max_fs: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Single,
    Double,
}

fn read_text(path: &PathBuf) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Input {
        path: path.clone(),
        source: e,
    })
}

fn write_or_print(out: Option<&PathBuf>, text: &str) -> Result<(), CliError> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::Output {
            path: p.clone(),
            source: e,
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run {
            config,
            manifest,
            overrides,
            out,
            workers,
        } => {
            let mut overrides = overrides;
            if let Some(w) = workers {
                overrides.push(format!("ensemble.workers={w}"));
            }
            let cfg = match (config, manifest) {
                (Some(path), None) => config::parse_with_overrides(&read_text(&path)?, &overrides)?,
                (None, Some(path)) => {
                    let base = manifest::config_from_manifest(&path)?;
                    config::parse_with_overrides(&base.to_toml(), &overrides)?
                }
                _ => return Err(CliError::Config("give a config file or --manifest".into())),
            };
            let dir = cfg.output_dir(out);
            let report = runner::execute(&cfg, &dir)?;
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            let line = json!({
                "status": "ok",
                "out_dir": report.out_dir,
                "outputs": report.outputs,
                "compare": report.compare,
            });
            println!("{line}");
            Ok(())
        }
        Command::Compare {
            qsd,
            oracle,
            columns,
            sigmas,
            min_fraction,
            out,
        } => {
            let q = Table::read(&qsd)?;
            let o = Table::read(&oracle)?;
            let cols = if columns.is_empty() {
                compare::default_columns(&q, &o)
            } else {
                columns
            };
            let mut buf = Vec::new();
            let s = compare::compare(&q, &o, &cols, sigmas, min_fraction, &mut buf)?;
            write_or_print(out.as_ref(), &String::from_utf8_lossy(&buf))?;
            eprintln!("{}", serde_json::to_string(&s).expect("summary serializes"));
            if !s.passed {
                return Err(CliError::Threshold(format!(
                    "fewer than {:.0}% of times within {sigmas}σ",
                    100.0 * min_fraction
                )));
            }
            Ok(())
        }
        Command::Table1 => {
            let mut out = std::io::stdout().lock();
            table1::write(&mut out).map_err(|e| CliError::Output {
                path: "stdout".into(),
                source: e,
            })?;
            out.flush().ok();
            Ok(())
        }
        Command::Fit {
            csv,
            column,
            model,
            t_min_fs,
            t_max_fs,
            out,
        } => {
            let table = Table::read(&csv)?;
            let t = table
                .column("t_fs")
                .ok_or_else(|| CliError::Config(format!("{}: no t_fs column", csv.display())))?;
            let y = table.column(&column).ok_or_else(|| {
                CliError::Config(format!("{}: no `{column}` column", csv.display()))
            })?;
            let section = FitSection {
                model: match model {
                    ModelArg::Single => FitModel::Single,
                    ModelArg::Double => FitModel::Double,
                },
                t_min_fs,
                t_max_fs,
            };
            let f = fit_decay(&t, &y, section.model.into(), section.window())?;
            let v = runner::fit_json(&f, &column, &section);
            let text = serde_json::to_string_pretty(&v).expect("fit serializes") + "\n";
            write_or_print(out.as_ref(), &text)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.record());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
