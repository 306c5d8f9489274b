use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use tglab_core::dynamics::{builtin_scenario, builtin_scenarios, Scenario};
use tglab_core::harness::{
    emit_report, report_csv, report_json, run_equivalence, OutputFormat, RunConfig,
};

#[derive(Parser)]
#[command(
    name = "tglab",
    version,
    about = "Orbit-space convergence and multiplicity battery"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Run the equivalence battery on a scenario file or built-in id.
    Run {
        scenario: String,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        step: Option<f64>,
        /// Comma-separated window radii.
        #[arg(long, value_delimiter = ',')]
        windows: Option<Vec<f64>>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
    },
    /// List the built-in scenarios.
    ListScenarios,
    /// Check a scenario's schema and audit its declared facts.
    Validate { scenario: String },
}

fn load(spec: &str) -> Result<Scenario> {
    let path = Path::new(spec);
    if path.exists() {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {spec}"))?;
        return Ok(Scenario::from_json(&text)?);
    }
    match builtin_scenario(spec) {
        Some(sc) => Ok(sc),
        None => bail!("{spec} is neither a file nor a built-in scenario"),
    }
}

fn run(cmd: Command) -> Result<u8> {
    match cmd {
        Command::ListScenarios => {
            for sc in builtin_scenarios() {
                println!("{}\t{}", sc.id, sc.description);
            }
            Ok(0)
        }
        Command::Validate { scenario } => {
            let sc = load(&scenario)?;
            sc.validate()?;
            println!("{}: valid", sc.id);
            for f in &sc.declared_facts {
                println!("  {}: {}", f.fact.name(), f.justification);
            }
            Ok(0)
        }
        Command::Run {
            scenario,
            k,
            step,
            windows,
            out,
            format,
        } => {
            let sc = load(&scenario)?;
            let format = match format {
                Format::Csv => OutputFormat::Csv,
                Format::Json => OutputFormat::Json,
            };
            let cfg = RunConfig {
                step,
                windows,
                out_dir: out.clone(),
                format,
                ..RunConfig::default()
            };
            let report = match run_equivalence(&sc, k, &cfg) {
                Ok(r) => r,
                Err(e) => {
                    eprintln!("fault: {e}");
                    return Ok(3);
                }
            };
            match &out {
                Some(dir) => {
                    let path = emit_report(&report, format, dir)?;
                    eprintln!("wrote {}", path.display());
                }
                None => match format {
                    OutputFormat::Csv => print!("{}", report_csv(&report)),
                    OutputFormat::Json => print!("{}", report_json(&report)?),
                },
            }
            for c in &report.conditions {
                eprintln!("{:?}: {:?} ({})", c.condition, c.verdict, c.summary);
            }
            for f in &report.faults {
                eprintln!("fault: {f}");
            }
            eprintln!("status: {:?}", report.status);
            Ok(report.exit_code() as u8)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            // usage errors must not look like a refuted hypothesis
            return ExitCode::from(if e.use_stderr() { 3 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(3)
        }
    }
}
