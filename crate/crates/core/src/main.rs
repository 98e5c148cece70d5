use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ehfl::experiment::{cell_name, parse_config, ExperimentSpec};
use ehfl::parallel::ExecMode;
use ehfl::report::{emit_metrics, Format};
use ehfl::sweep::{run_experiment, SweepError};
use ehfl::{run_simulation, SimError};

const EXIT_IO: u8 = 1;
const EXIT_CONFIG: u8 = 3;
const EXIT_DIVERGED: u8 = 4;

const EXIT_CODES: &str = "\
Exit codes:
  0  success
  1  I/O failure or internal invariant violation
  2  command-line usage error
  3  invalid configuration or dataset
  4  training diverged (non-finite model)";

/// Energy-harvesting federated learning simulator.
#[derive(Parser)]
#[command(version, about, after_help = EXIT_CODES)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configuration and write its per-epoch metrics.
    Run {
        config: PathBuf,
        /// Output directory (overrides the config's out_dir).
        #[arg(long, env = "EHFL_OUT_DIR")]
        out: Option<PathBuf>,
        /// Replace the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// Run every cell of a sweep and write the energy comparison table.
    Sweep {
        config: PathBuf,
        #[arg(long, env = "EHFL_OUT_DIR")]
        out: Option<PathBuf>,
        /// Run cells one after another on the calling thread.
        #[arg(long)]
        sequential: bool,
    },
    /// Parse and validate a config without running it.
    Validate { config: PathBuf },
}

enum Failure {
    Io(String),
    Config(String),
    Diverged(String),
}

impl Failure {
    fn report(self) -> ExitCode {
        let (code, msg) = match self {
            Failure::Io(m) => (EXIT_IO, m),
            Failure::Config(m) => (EXIT_CONFIG, m),
            Failure::Diverged(m) => (EXIT_DIVERGED, m),
        };
        eprintln!("error: {msg}");
        ExitCode::from(code)
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            e if e.is_divergence() => Failure::Diverged(e.to_string()),
            e @ SimError::Invariant { .. } | e @ SimError::Finished(_) => Failure::Io(e.to_string()),
            e => Failure::Config(e.to_string()),
        }
    }
}

fn load(path: &Path) -> Result<ExperimentSpec, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
    parse_config(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

fn out_dir(flag: Option<PathBuf>, spec: &ExperimentSpec) -> PathBuf {
    flag.or_else(|| spec.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("results"))
}

fn run(config: &Path, out: Option<PathBuf>, seed: Option<u64>, format: Format) -> Result<(), Failure> {
    let mut spec = load(config)?;
    if let Some(seed) = seed {
        spec = spec.with_seed(seed);
    }
    let configs = spec.configs().map_err(|e| Failure::Config(e.to_string()))?;
    let [cfg] = configs.as_slice() else {
        return Err(Failure::Config(format!(
            "`run` needs a single cell, config expands to {}; use `sweep`",
            configs.len()
        )));
    };
    let output = run_simulation(cfg)?;
    let dir = out_dir(out, &spec);
    let path = emit_metrics(&output, cfg, format, &dir, &cell_name(cfg))
        .map_err(|e| Failure::Io(format!("{}: {e}", dir.display())))?;
    println!("{}", path.display());
    Ok(())
}

fn sweep(config: &Path, out: Option<PathBuf>, sequential: bool) -> Result<(), Failure> {
    let spec = load(config)?;
    let dir = out_dir(out, &spec);
    let exec = if sequential {
        ExecMode::Sequential
    } else {
        ExecMode::Parallel
    };
    let outcome = run_experiment(&spec, &dir, exec).map_err(|e| match e {
        SweepError::Experiment(e) => Failure::Config(e.to_string()),
        e => Failure::Io(e.to_string()),
    })?;
    let mut failure = None;
    for cell in &outcome.cells {
        if let Err(e) = &cell.output {
            eprintln!("{}: {e}", cell_name(&cell.config));
            if failure.is_none() {
                failure = Some(if e.is_divergence() {
                    Failure::Diverged(format!("{}: {e}", cell_name(&cell.config)))
                } else {
                    Failure::Config(format!("{}: {e}", cell_name(&cell.config)))
                });
            }
        }
    }
    println!(
        "{} cells, {} files written to {}",
        outcome.cells.len(),
        outcome.files.len(),
        dir.display()
    );
    failure.map_or(Ok(()), Err)
}

fn validate(config: &Path) -> Result<(), Failure> {
    let spec = load(config)?;
    let configs = spec.configs().map_err(|e| Failure::Config(e.to_string()))?;
    println!("ok: {} cell(s)", configs.len());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            out,
            seed,
            format,
        } => run(&config, out, seed, format),
        Command::Sweep {
            config,
            out,
            sequential,
        } => sweep(&config, out, sequential),
        Command::Validate { config } => validate(&config),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => f.report(),
    }
}
