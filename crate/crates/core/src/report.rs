//! Metric emission: per-epoch CSV, JSON run summaries and the
//! energy comparison table (schemes and group counts against charge
//! probability).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::engine::{Diagnostics, MetricsLog, RunOutput};
use crate::types::{Scheme, SimConfig};

pub const CSV_HEADER: &str =
    "epoch,accuracy,loss,energy_train,energy_tx,energy_total,harvested,wasted,participants,trainings";

pub const VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum Format {
    #[default]
    Csv,
    Json,
}

pub fn write_metrics_csv<W: Write>(log: &MetricsLog, out: &mut W) -> io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in &log.records {
        let l = &r.ledger;
        writeln!(
            out,
            "{},{:.6},{:.6},{},{},{},{},{},{},{}",
            r.epoch,
            r.accuracy,
            r.loss,
            l.consumed_train,
            l.consumed_tx,
            l.consumed_total(),
            l.harvested,
            l.wasted,
            r.participants,
            r.trainings
        )?;
    }
    Ok(())
}

pub fn metrics_csv(log: &MetricsLog) -> String {
    let mut buf = Vec::new();
    write_metrics_csv(log, &mut buf).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("CSV output is ASCII")
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary<'a> {
    pub version: &'static str,
    pub seed: u64,
    pub epochs: usize,
    pub final_accuracy: f64,
    pub final_loss: f64,
    pub total_energy: u64,
    pub energy_train: u64,
    pub energy_tx: u64,
    pub harvested: u64,
    pub wasted: u64,
    pub diagnostics: Diagnostics,
    pub config: &'a SimConfig,
}

impl<'a> RunSummary<'a> {
    pub fn new(output: &RunOutput, config: &'a SimConfig) -> Self {
        let last = output.log.final_record();
        Self {
            version: VERSION,
            seed: config.seed,
            epochs: output.log.records.len(),
            final_accuracy: last.map_or(0.0, |r| r.accuracy),
            final_loss: last.map_or(0.0, |r| r.loss),
            total_energy: output.ledger.consumed_total(),
            energy_train: output.ledger.consumed_train,
            energy_tx: output.ledger.consumed_tx,
            harvested: output.ledger.harvested,
            wasted: output.ledger.wasted,
            diagnostics: output.diagnostics,
            config,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes") + "\n"
    }
}

/// Writes `<stem>.csv` or `<stem>.json` into `dir` and returns the path.
pub fn emit_metrics(
    output: &RunOutput,
    config: &SimConfig,
    format: Format,
    dir: &Path,
    stem: &str,
) -> io::Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let (path, body) = match format {
        Format::Csv => (dir.join(format!("{stem}.csv")), metrics_csv(&output.log)),
        Format::Json => (
            dir.join(format!("{stem}.json")),
            RunSummary::new(output, config).to_json(),
        ),
    };
    fs::write(&path, body)?;
    Ok(path)
}

/// Row key: FedAvg has no group axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct RowKey {
    pub scheme: Scheme,
    pub groups: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

/// Total consumed energy per (scheme, groups) row and charge-probability
/// column, averaged over all runs that fall in the cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonTable {
    pub rows: Vec<RowKey>,
    pub charge_probs: Vec<f64>,
    cells: BTreeMap<(RowKey, u64), Cell>,
}

fn prob_key(p: f64) -> u64 {
    p.to_bits()
}

impl ComparisonTable {
    pub fn from_runs<'a, I>(runs: I) -> Self
    where
        I: IntoIterator<Item = (&'a SimConfig, u64)>,
    {
        let mut samples: BTreeMap<(RowKey, u64), Vec<f64>> = BTreeMap::new();
        let mut probs: Vec<f64> = Vec::new();
        for (cfg, energy) in runs {
            let key = RowKey {
                scheme: cfg.scheme,
                groups: cfg.scheme.is_grouped().then_some(cfg.n_groups),
            };
            if !probs.iter().any(|p| p.to_bits() == cfg.charge_prob.to_bits()) {
                probs.push(cfg.charge_prob);
            }
            samples
                .entry((key, prob_key(cfg.charge_prob)))
                .or_default()
                .push(energy as f64);
        }
        probs.sort_by(f64::total_cmp);
        let mut rows: Vec<RowKey> = samples.keys().map(|(k, _)| *k).collect();
        rows.sort_by_key(|k| (scheme_rank(k.scheme), k.groups));
        rows.dedup();
        let cells = samples.into_iter().map(|(k, v)| (k, mean_std(&v))).collect();
        Self {
            rows,
            charge_probs: probs,
            cells,
        }
    }

    pub fn cell(&self, row: RowKey, charge_prob: f64) -> Option<Cell> {
        self.cells.get(&(row, prob_key(charge_prob))).copied()
    }

    /// (row, charge_prob) pairs with no completed run.
    pub fn missing(&self) -> Vec<(RowKey, f64)> {
        let mut out = Vec::new();
        for &row in &self.rows {
            for &p in &self.charge_probs {
                if self.cell(row, p).is_none() {
                    out.push((row, p));
                }
            }
        }
        out
    }

    /// CSV rendering; absent cells print as `MISSING`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("scheme,groups");
        for p in &self.charge_probs {
            let _ = write!(s, ",p{p},p{p}_std");
        }
        s.push('\n');
        for &row in &self.rows {
            let groups = row.groups.map_or_else(|| "-".to_string(), |g| g.to_string());
            let _ = write!(s, "{},{}", row.scheme, groups);
            for &p in &self.charge_probs {
                match self.cell(row, p) {
                    Some(c) => {
                        let _ = write!(s, ",{:.1},{:.1}", c.mean, c.std);
                    }
                    None => s.push_str(",MISSING,MISSING"),
                }
            }
            s.push('\n');
        }
        s
    }
}

fn scheme_rank(s: Scheme) -> u8 {
    match s {
        Scheme::FedAvg => 0,
        Scheme::FedSeq => 1,
        Scheme::FedBacys => 2,
    }
}

/// Mean and sample standard deviation (0 for a single sample).
pub fn mean_std(v: &[f64]) -> Cell {
    let n = v.len();
    let mean = v.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Cell { mean, std, n }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::EnergyLedger;
    use crate::engine::EpochRecord;
    use crate::types::ModelParams;

    fn record(epoch: usize, train: u64, tx: u64) -> EpochRecord {
        EpochRecord {
            epoch,
            accuracy: 0.5,
            loss: 1.0 / 3.0,
            ledger: EnergyLedger {
                consumed_tx: tx,
                consumed_train: train,
                harvested: train + tx + 4,
                wasted: 1,
            },
            participants: 2,
            trainings: 1,
        }
    }

    #[test]
    fn csv_has_one_row_per_epoch() {
        let log = MetricsLog {
            records: (0..3).map(|e| record(e, 20 * e as u64, e as u64)).collect(),
        };
        let csv = metrics_csv(&log);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines[3], "2,0.500000,0.333333,40,2,42,46,1,2,1");
    }

    #[test]
    fn json_summary_echoes_config() {
        let cfg = SimConfig::default();
        let out = RunOutput {
            log: MetricsLog {
                records: vec![record(0, 20, 1)],
            },
            final_model: ModelParams::zeros(1),
            ledger: record(0, 20, 1).ledger,
            diagnostics: Diagnostics::default(),
        };
        let v: serde_json::Value = serde_json::from_str(&RunSummary::new(&out, &cfg).to_json()).unwrap();
        assert_eq!(v["total_energy"], 21);
        assert_eq!(v["config"]["n_clients"], 100);
        assert_eq!(v["version"], VERSION);
    }

    fn cfg(scheme: Scheme, g: usize, p: f64) -> SimConfig {
        SimConfig {
            scheme,
            n_groups: g,
            charge_prob: p,
            ..SimConfig::default()
        }
    }

    #[test]
    fn full_sweep_table_has_seven_rows() {
        let mut runs = Vec::new();
        for scheme in Scheme::ALL {
            for g in [2, 5, 10] {
                for p in [0.1, 0.3, 0.5, 1.0] {
                    runs.push((cfg(scheme, g, p), 100));
                }
            }
        }
        let t = ComparisonTable::from_runs(runs.iter().map(|(c, e)| (c, *e)));
        assert_eq!(t.rows.len(), 7);
        assert_eq!(t.charge_probs, vec![0.1, 0.3, 0.5, 1.0]);
        assert!(t.missing().is_empty());
        let csv = t.to_csv();
        assert_eq!(csv.lines().count(), 8);
        assert!(csv.lines().nth(1).unwrap().starts_with("fedavg,-,100.0,0.0"));
    }

    #[test]
    fn single_cell_and_missing_cells() {
        let one = [(cfg(Scheme::FedBacys, 5, 0.5), 10)];
        let t = ComparisonTable::from_runs(one.iter().map(|(c, e)| (c, *e)));
        assert_eq!((t.rows.len(), t.charge_probs.len()), (1, 1));

        let two = [
            (cfg(Scheme::FedBacys, 5, 0.5), 10),
            (cfg(Scheme::FedSeq, 5, 1.0), 10),
        ];
        let t = ComparisonTable::from_runs(two.iter().map(|(c, e)| (c, *e)));
        assert_eq!(t.missing().len(), 2);
        assert!(t.to_csv().contains("MISSING"));
    }

    #[test]
    fn replications_average_with_std() {
        let runs = [
            (cfg(Scheme::FedAvg, 2, 1.0), 10),
            (cfg(Scheme::FedAvg, 5, 1.0), 14),
        ];
        let t = ComparisonTable::from_runs(runs.iter().map(|(c, e)| (c, *e)));
        let c = t
            .cell(
                RowKey {
                    scheme: Scheme::FedAvg,
                    groups: None,
                },
                1.0,
            )
            .unwrap();
        assert_eq!(c.n, 2);
        assert_eq!(c.mean, 12.0);
        assert!((c.std - 8f64.sqrt()).abs() < 1e-12);
    }
}
