//! Experiment documents: a flat TOML key/value file in which the sweep axes
//! (`scheme`, `charge_prob`, `n_groups`, `partition`, `dirichlet_alpha`,
//! `seed`) may be given either as a scalar or as a list.
//!
//! ```toml
//! n_clients = 20
//! n_epochs = 100
//! scheme = ["fedbacys", "fedavg", "fedseq"]
//! charge_prob = [0.1, 0.3, 0.5, 1.0]
//! n_groups = [2, 5, 10]
//! replications = 5
//! ```
//!
//! Omitted keys take the defaults of [`SimConfig::default`], except
//! `battery_cap`, which defaults to `train_cost + 5`.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;
use crate::types::{Aggregation, ConfigError, Partition, Scheme, SimConfig, TaskConfig, Units};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("axis `{0}` is an empty list")]
    EmptyAxis(&'static str),
    #[error("partition = \"dirichlet\" requires dirichlet_alpha")]
    MissingAlpha,
    #[error("replications must be at least 1")]
    NoReplications,
    #[error("cell {cell}: {source}")]
    Invalid {
        cell: String,
        #[source]
        source: ConfigError,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    fn into_vec(self) -> Vec<T> {
        match self {
            OneOrMany::One(v) => vec![v],
            OneOrMany::Many(v) => v,
        }
    }

    fn from_vec(mut v: Vec<T>) -> Self {
        if v.len() == 1 {
            OneOrMany::One(v.remove(0))
        } else {
            OneOrMany::Many(v)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum PartitionKind {
    Iid,
    Dirichlet,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigDocument {
    #[serde(skip_serializing_if = "Option::is_none")]
    n_clients: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    n_epochs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    slots_per_epoch: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    n_groups: Option<OneOrMany<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    train_cost: Option<Units>,
    #[serde(skip_serializing_if = "Option::is_none")]
    charge_prob: Option<OneOrMany<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    battery_cap: Option<Units>,
    #[serde(skip_serializing_if = "Option::is_none")]
    init_battery: Option<Units>,
    #[serde(skip_serializing_if = "Option::is_none")]
    learning_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    n_batches: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    scheme: Option<OneOrMany<Scheme>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    partition: Option<OneOrMany<PartitionKind>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    dirichlet_alpha: Option<OneOrMany<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<OneOrMany<u64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    replications: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    aggregation: Option<Aggregation>,
    #[serde(skip_serializing_if = "Option::is_none")]
    handoff_cost: Option<Units>,
    #[serde(skip_serializing_if = "Option::is_none")]
    out_dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    n_classes: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    feature_dim: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    cluster_spread: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    samples_per_client: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    test_samples: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    batch_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    dataset: Option<PathBuf>,
}

/// A cartesian sweep: `base` holds every non-axis setting, the axis vectors
/// hold the values to cross.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub base: SimConfig,
    pub schemes: Vec<Scheme>,
    pub charge_probs: Vec<f64>,
    pub group_counts: Vec<usize>,
    pub partitions: Vec<Partition>,
    pub seeds: Vec<u64>,
    pub replications: usize,
    pub out_dir: Option<PathBuf>,
}

impl ExperimentSpec {
    /// A one-cell experiment around `config`.
    pub fn single(config: SimConfig) -> Self {
        Self {
            schemes: vec![config.scheme],
            charge_probs: vec![config.charge_prob],
            group_counts: vec![config.n_groups],
            partitions: vec![config.partition],
            seeds: vec![config.seed],
            replications: 1,
            out_dir: None,
            base: config,
        }
    }

    pub fn n_cells(&self) -> usize {
        self.schemes.len()
            * self.partitions.len()
            * self.group_counts.len()
            * self.charge_probs.len()
            * self.seeds.len()
            * self.replications
    }

    /// Seed used by replication `r` of a cell whose seed axis value is `seed`.
    pub fn replication_seed(seed: u64, r: usize) -> u64 {
        if r == 0 {
            seed
        } else {
            rng::derive_seed(seed, rng::Purpose::Grouping, 0x5EED_0000 + r as u64)
        }
    }

    /// Expands the sweep in scheme, partition, groups, charge_prob, seed,
    /// replication order. Every expanded config has been validated.
    pub fn configs(&self) -> Result<Vec<SimConfig>, ExperimentError> {
        let mut out = Vec::with_capacity(self.n_cells());
        for &scheme in &self.schemes {
            for &partition in &self.partitions {
                for &n_groups in &self.group_counts {
                    for &charge_prob in &self.charge_probs {
                        for &seed in &self.seeds {
                            for r in 0..self.replications {
                                let cfg = SimConfig {
                                    scheme,
                                    partition,
                                    n_groups,
                                    charge_prob,
                                    seed: Self::replication_seed(seed, r),
                                    ..self.base.clone()
                                };
                                cfg.validate().map_err(|source| ExperimentError::Invalid {
                                    cell: cell_name(&cfg),
                                    source,
                                })?;
                                out.push(cfg);
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seeds = vec![seed];
        self
    }

    /// Serializes back to the document format accepted by [`parse_config`].
    pub fn to_toml(&self) -> String {
        let b = &self.base;
        let mut kinds = Vec::new();
        let mut alphas = Vec::new();
        for p in &self.partitions {
            match *p {
                Partition::Iid => kinds.push(PartitionKind::Iid),
                Partition::Dirichlet { alpha } => {
                    if !kinds.contains(&PartitionKind::Dirichlet) {
                        kinds.push(PartitionKind::Dirichlet);
                    }
                    alphas.push(alpha);
                }
            }
        }
        let doc = ConfigDocument {
            n_clients: Some(b.n_clients),
            n_epochs: Some(b.n_epochs),
            slots_per_epoch: Some(b.slots_per_epoch),
            n_groups: Some(OneOrMany::from_vec(self.group_counts.clone())),
            train_cost: Some(b.train_cost),
            charge_prob: Some(OneOrMany::from_vec(self.charge_probs.clone())),
            battery_cap: Some(b.battery_cap),
            init_battery: Some(b.init_battery),
            learning_rate: Some(b.learning_rate),
            n_batches: Some(b.n_batches),
            scheme: Some(OneOrMany::from_vec(self.schemes.clone())),
            partition: Some(OneOrMany::from_vec(kinds)),
            dirichlet_alpha: (!alphas.is_empty()).then(|| OneOrMany::from_vec(alphas)),
            seed: Some(OneOrMany::from_vec(self.seeds.clone())),
            replications: Some(self.replications),
            aggregation: Some(b.aggregation),
            handoff_cost: Some(b.handoff_cost),
            out_dir: self.out_dir.clone(),
            n_classes: Some(b.task.n_classes),
            feature_dim: Some(b.task.feature_dim),
            cluster_spread: Some(b.task.cluster_spread),
            samples_per_client: Some(b.task.samples_per_client),
            test_samples: Some(b.task.test_samples),
            batch_size: Some(b.task.batch_size),
            dataset: b.task.dataset.clone(),
        };
        toml::to_string(&doc).expect("config document always serializes")
    }
}

/// Short identifier of one cell, used for file names.
pub fn cell_name(cfg: &SimConfig) -> String {
    format!(
        "{}_g{}_p{}_{}_s{}",
        cfg.scheme, cfg.n_groups, cfg.charge_prob, cfg.partition, cfg.seed
    )
}

fn axis<T: Clone>(
    value: Option<OneOrMany<T>>,
    default: T,
    name: &'static str,
) -> Result<Vec<T>, ExperimentError> {
    let v = value.map_or_else(|| vec![default], OneOrMany::into_vec);
    if v.is_empty() {
        return Err(ExperimentError::EmptyAxis(name));
    }
    Ok(v)
}

pub fn parse_config(text: &str) -> Result<ExperimentSpec, ExperimentError> {
    let doc: ConfigDocument = toml::from_str(text).map_err(|e| ExperimentError::Parse(e.to_string()))?;
    let d = SimConfig::default();
    let dt = TaskConfig::default();
    let train_cost = doc.train_cost.unwrap_or(d.train_cost);

    let schemes = axis(doc.scheme, d.scheme, "scheme")?;
    let charge_probs = axis(doc.charge_prob, d.charge_prob, "charge_prob")?;
    let group_counts = axis(doc.n_groups, d.n_groups, "n_groups")?;
    let seeds = axis(doc.seed, d.seed, "seed")?;
    let kinds = axis(doc.partition, PartitionKind::Iid, "partition")?;
    let mut partitions = Vec::new();
    for kind in kinds {
        match kind {
            PartitionKind::Iid => partitions.push(Partition::Iid),
            PartitionKind::Dirichlet => {
                let alphas = doc
                    .dirichlet_alpha
                    .clone()
                    .ok_or(ExperimentError::MissingAlpha)?
                    .into_vec();
                if alphas.is_empty() {
                    return Err(ExperimentError::EmptyAxis("dirichlet_alpha"));
                }
                partitions.extend(alphas.into_iter().map(|alpha| Partition::Dirichlet { alpha }));
            }
        }
    }
    let replications = doc.replications.unwrap_or(1);
    if replications == 0 {
        return Err(ExperimentError::NoReplications);
    }

    let base = SimConfig {
        n_clients: doc.n_clients.unwrap_or(d.n_clients),
        n_epochs: doc.n_epochs.unwrap_or(d.n_epochs),
        slots_per_epoch: doc.slots_per_epoch.unwrap_or(d.slots_per_epoch),
        n_groups: group_counts[0],
        train_cost,
        charge_prob: charge_probs[0],
        battery_cap: doc.battery_cap.unwrap_or(train_cost + 5),
        init_battery: doc.init_battery.unwrap_or(d.init_battery),
        learning_rate: doc.learning_rate.unwrap_or(d.learning_rate),
        n_batches: doc.n_batches.unwrap_or(d.n_batches),
        scheme: schemes[0],
        partition: partitions[0],
        seed: seeds[0],
        aggregation: doc.aggregation.unwrap_or(d.aggregation),
        handoff_cost: doc.handoff_cost.unwrap_or(d.handoff_cost),
        task: TaskConfig {
            n_classes: doc.n_classes.unwrap_or(dt.n_classes),
            feature_dim: doc.feature_dim.unwrap_or(dt.feature_dim),
            cluster_spread: doc.cluster_spread.unwrap_or(dt.cluster_spread),
            samples_per_client: doc.samples_per_client.unwrap_or(dt.samples_per_client),
            test_samples: doc.test_samples.unwrap_or(dt.test_samples),
            batch_size: doc.batch_size.unwrap_or(dt.batch_size),
            dataset: doc.dataset,
        },
    };
    let spec = ExperimentSpec {
        base,
        schemes,
        charge_probs,
        group_counts,
        partitions,
        seeds,
        replications,
        out_dir: doc.out_dir,
    };
    spec.configs()?;
    Ok(spec)
}
