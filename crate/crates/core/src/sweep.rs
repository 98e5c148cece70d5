//! Running many independent cells, each with fully isolated state.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use crate::engine::{run_simulation, RunOutput, SimError};
use crate::experiment::{cell_name, ExperimentError, ExperimentSpec};
use crate::parallel::{self, ExecMode};
use crate::report::{emit_metrics, ComparisonTable, Format};
use crate::types::SimConfig;

pub const TABLE_FILE: &str = "energy_table.csv";

pub struct CellResult {
    pub config: SimConfig,
    pub output: Result<RunOutput, SimError>,
}

/// Runs every config; results come back in input order regardless of `exec`.
pub fn run_cells(configs: &[SimConfig], exec: ExecMode) -> Vec<CellResult> {
    parallel::map(exec, configs, |cfg| CellResult {
        config: cfg.clone(),
        output: run_simulation(cfg),
    })
}

#[derive(Debug, thiserror::Error)]
pub enum SweepError {
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
    #[error("{cell}: {source}")]
    Run {
        cell: String,
        #[source]
        source: SimError,
    },
    #[error("writing results: {0}")]
    Io(#[from] io::Error),
}

pub struct SweepOutcome {
    pub cells: Vec<CellResult>,
    pub files: Vec<PathBuf>,
    pub table: ComparisonTable,
}

/// Runs the whole sweep, writes one CSV and one JSON summary per cell, then
/// the comparison table once every cell has finished. Failed cells are left
/// out of the table, where they show up as missing.
pub fn run_experiment(
    spec: &ExperimentSpec,
    out_dir: &Path,
    exec: ExecMode,
) -> Result<SweepOutcome, SweepError> {
    let configs = spec.configs()?;
    let cells = run_cells(&configs, exec);
    fs::create_dir_all(out_dir)?;
    let mut files = Vec::new();
    for cell in &cells {
        if let Ok(output) = &cell.output {
            let stem = cell_name(&cell.config);
            for format in [Format::Csv, Format::Json] {
                files.push(emit_metrics(output, &cell.config, format, out_dir, &stem)?);
            }
        }
    }
    let table = ComparisonTable::from_runs(cells.iter().filter_map(|c| {
        c.output
            .as_ref()
            .ok()
            .map(|o| (&c.config, o.ledger.consumed_total()))
    }));
    let table_path = out_dir.join(TABLE_FILE);
    fs::write(&table_path, table.to_csv())?;
    files.push(table_path);
    Ok(SweepOutcome { cells, files, table })
}

/// First failure of a sweep, if any.
pub fn first_failure(outcome: SweepOutcome) -> Result<SweepOutcome, SweepError> {
    if let Some(pos) = outcome.cells.iter().position(|c| c.output.is_err()) {
        let mut cells = outcome.cells;
        let cell = cells.swap_remove(pos);
        return Err(SweepError::Run {
            cell: cell_name(&cell.config),
            source: cell.output.expect_err("checked above"),
        });
    }
    Ok(outcome)
}
