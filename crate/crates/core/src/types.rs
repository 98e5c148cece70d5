//! Shared vocabulary: configuration, time indexing, client state and the
//! parameter vector every learning operation works on.

use std::fmt;
use std::ops::{Index, IndexMut};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Battery units. One unit pays for one slot of activity.
pub type Units = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    FedBacys,
    FedAvg,
    FedSeq,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::FedBacys, Scheme::FedAvg, Scheme::FedSeq];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::FedBacys => "fedbacys",
            Scheme::FedAvg => "fedavg",
            Scheme::FedSeq => "fedseq",
        }
    }

    /// Whether the scheme organizes clients into cyclic groups.
    pub fn is_grouped(self) -> bool {
        !matches!(self, Scheme::FedAvg)
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Partition {
    Iid,
    Dirichlet { alpha: f64 },
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Partition::Iid => f.write_str("iid"),
            Partition::Dirichlet { alpha } => write!(f, "dir{alpha}"),
        }
    }
}

/// How a hub folds the received deltas into its model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    /// Unweighted sum of all received deltas.
    #[default]
    Sum,
    /// Arithmetic mean of the received deltas.
    Mean,
}

/// Learning-task knobs. The defaults describe a small synthetic
/// Gaussian-cluster classification problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskConfig {
    pub n_classes: usize,
    pub feature_dim: usize,
    pub cluster_spread: f64,
    pub samples_per_client: usize,
    pub test_samples: usize,
    /// Mini-batch size; 0 means every step uses the whole local shard.
    pub batch_size: usize,
    /// Optional CSV dataset replacing the synthetic generator.
    pub dataset: Option<PathBuf>,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            n_classes: 4,
            feature_dim: 8,
            cluster_spread: 0.5,
            samples_per_client: 50,
            test_samples: 1000,
            batch_size: 0,
            dataset: None,
        }
    }
}

impl TaskConfig {
    /// Parameter count of the softmax-regression model (weights and biases).
    pub fn model_dim(&self) -> usize {
        self.n_classes * (self.feature_dim + 1)
    }
}

/// One fully specified simulation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_clients: usize,
    pub n_epochs: usize,
    pub slots_per_epoch: usize,
    pub n_groups: usize,
    pub train_cost: Units,
    pub charge_prob: f64,
    pub battery_cap: Units,
    pub init_battery: Units,
    pub learning_rate: f64,
    pub n_batches: usize,
    pub scheme: Scheme,
    pub partition: Partition,
    pub seed: u64,
    pub aggregation: Aggregation,
    /// Units a hub pays to hand the group model on (multicast or server upload).
    pub handoff_cost: Units,
    pub task: TaskConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_clients: 100,
            n_epochs: 500,
            slots_per_epoch: 30,
            n_groups: 10,
            train_cost: 20,
            charge_prob: 0.5,
            battery_cap: 25,
            init_battery: 0,
            learning_rate: 0.05,
            n_batches: 1,
            scheme: Scheme::FedBacys,
            partition: Partition::Iid,
            seed: 0,
            aggregation: Aggregation::Sum,
            handoff_cost: 0,
            task: TaskConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("{field} must be positive")]
    NonPositive { field: &'static str },
    #[error("charge_prob {0} is outside [0, 1]")]
    ProbabilityOutOfRange(f64),
    #[error("n_groups ({groups}) exceeds slots_per_epoch ({slots})")]
    TooManyGroupsForEpoch { groups: usize, slots: usize },
    #[error("n_groups ({groups}) exceeds n_clients ({clients})")]
    TooManyGroupsForClients { groups: usize, clients: usize },
    #[error("train_cost ({cost}) exceeds battery_cap ({cap}); no client could ever train")]
    TrainCostAboveCap { cost: Units, cap: Units },
    #[error("init_battery ({init}) exceeds battery_cap ({cap})")]
    InitAboveCap { init: Units, cap: Units },
    #[error("dirichlet alpha must be positive and finite, got {0}")]
    BadAlpha(f64),
    #[error("learning_rate must be positive and finite, got {0}")]
    BadLearningRate(f64),
    #[error("cluster_spread must be non-negative and finite, got {0}")]
    BadSpread(f64),
    #[error("n_classes must be at least 2, got {0}")]
    TooFewClasses(usize),
}

impl SimConfig {
    /// Slots in one group round, `floor(S / G)`.
    pub fn group_round(&self) -> usize {
        self.slots_per_epoch / self.n_groups
    }

    pub fn total_slots(&self) -> usize {
        self.slots_per_epoch * self.n_epochs
    }

    /// Groups the active scheme actually uses; FedAvg has a single flat pool.
    pub fn effective_groups(&self) -> usize {
        if self.scheme.is_grouped() {
            self.n_groups
        } else {
            1
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("n_clients", self.n_clients),
            ("n_epochs", self.n_epochs),
            ("slots_per_epoch", self.slots_per_epoch),
            ("n_groups", self.n_groups),
            ("train_cost", self.train_cost as usize),
            ("battery_cap", self.battery_cap as usize),
            ("n_batches", self.n_batches),
            ("feature_dim", self.task.feature_dim),
            ("samples_per_client", self.task.samples_per_client),
            ("test_samples", self.task.test_samples),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(ConfigError::NonPositive { field });
            }
        }
        if !(0.0..=1.0).contains(&self.charge_prob) {
            return Err(ConfigError::ProbabilityOutOfRange(self.charge_prob));
        }
        if self.n_groups > self.slots_per_epoch {
            return Err(ConfigError::TooManyGroupsForEpoch {
                groups: self.n_groups,
                slots: self.slots_per_epoch,
            });
        }
        if self.n_groups > self.n_clients {
            return Err(ConfigError::TooManyGroupsForClients {
                groups: self.n_groups,
                clients: self.n_clients,
            });
        }
        if self.train_cost > self.battery_cap {
            return Err(ConfigError::TrainCostAboveCap {
                cost: self.train_cost,
                cap: self.battery_cap,
            });
        }
        if self.init_battery > self.battery_cap {
            return Err(ConfigError::InitAboveCap {
                init: self.init_battery,
                cap: self.battery_cap,
            });
        }
        if let Partition::Dirichlet { alpha } = self.partition {
            if !(alpha.is_finite() && alpha > 0.0) {
                return Err(ConfigError::BadAlpha(alpha));
            }
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(ConfigError::BadLearningRate(self.learning_rate));
        }
        if !(self.task.cluster_spread.is_finite() && self.task.cluster_spread >= 0.0) {
            return Err(ConfigError::BadSpread(self.task.cluster_spread));
        }
        if self.task.n_classes < 2 {
            return Err(ConfigError::TooFewClasses(self.task.n_classes));
        }
        Ok(())
    }
}

/// What a free client does in a slot. A client mid-training has no action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    Transmit,
    StartTraining,
    Idle,
}

/// Position of a global slot within the epoch/group-round cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimeIndex {
    pub slot: usize,
    pub epoch: usize,
    /// Group whose window contains this slot; slack slots report the last group.
    pub group_in_turn: usize,
}

impl TimeIndex {
    pub fn slot_in_epoch(&self, config: &SimConfig) -> usize {
        self.slot % config.slots_per_epoch
    }

    /// False for the trailing `S - G*R` slack slots of an epoch.
    pub fn window_open(&self, config: &SimConfig) -> bool {
        self.slot_in_epoch(config) < config.n_groups * config.group_round()
    }

    /// The last slot of the open group window, where aggregation fires.
    pub fn is_window_close(&self, config: &SimConfig) -> bool {
        let r = config.group_round();
        self.window_open(config) && self.slot % config.slots_per_epoch % r == r - 1
    }

    pub fn is_epoch_end(&self, config: &SimConfig) -> bool {
        self.slot_in_epoch(config) == config.slots_per_epoch - 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("slot {slot} outside the simulation horizon of {horizon} slots")]
pub struct SlotOutOfRange {
    pub slot: usize,
    pub horizon: usize,
}

pub fn derive_time(slot: usize, config: &SimConfig) -> Result<TimeIndex, SlotOutOfRange> {
    let horizon = config.total_slots();
    if slot >= horizon {
        return Err(SlotOutOfRange { slot, horizon });
    }
    let s = config.slots_per_epoch;
    let r = config.group_round();
    Ok(TimeIndex {
        slot,
        epoch: slot / s,
        group_in_turn: ((slot % s) / r).min(config.n_groups - 1),
    })
}

/// A dense real parameter vector of fixed dimension.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ModelParams(Vec<f64>);

impl ModelParams {
    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &ModelParams) {
        debug_assert_eq!(self.dim(), other.dim());
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += alpha * b;
        }
    }

    /// Element-wise `self - other`.
    pub fn difference(&self, other: &ModelParams) -> ModelParams {
        debug_assert_eq!(self.dim(), other.dim());
        ModelParams(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

impl Index<usize> for ModelParams {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for ModelParams {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

/// A finished local-training result waiting to be uploaded.
#[derive(Debug, Clone, PartialEq)]
pub struct Update {
    /// Start model minus the final SGD iterate.
    pub delta: ModelParams,
    pub produced_epoch: usize,
    pub client_id: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientState {
    pub id: usize,
    pub battery: Units,
    pub group: usize,
    /// First slot at which the client may decide again after starting training.
    pub busy_until: Option<usize>,
    pub pending_update: Option<Update>,
    pub model: ModelParams,
    /// Indices of this client's training samples.
    pub shard: Vec<usize>,
}

impl ClientState {
    pub fn is_busy_at(&self, slot: usize) -> bool {
        self.busy_until.is_some_and(|until| slot < until)
    }
}

/// Fixed client-to-group membership plus the current epoch's hubs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupAssignment {
    membership: Vec<usize>,
    groups: Vec<Vec<usize>>,
    pub hubs: Vec<usize>,
}

impl GroupAssignment {
    /// Builds an assignment from explicit member lists. Hubs default to the
    /// first member of each group until [`crate::scheduling::elect_hubs`] runs.
    pub fn from_groups(groups: Vec<Vec<usize>>) -> Self {
        let n = groups.iter().map(Vec::len).sum();
        let mut membership = vec![usize::MAX; n];
        for (g, members) in groups.iter().enumerate() {
            for &c in members {
                membership[c] = g;
            }
        }
        let hubs = groups.iter().map(|m| m[0]).collect();
        Self {
            membership,
            groups,
            hubs,
        }
    }

    pub fn group_of(&self, client: usize) -> usize {
        self.membership[client]
    }

    pub fn members(&self, group: usize) -> &[usize] {
        &self.groups[group]
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn n_clients(&self) -> usize {
        self.membership.len()
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        self.groups.iter().map(Vec::len).collect()
    }
}
