//! Slot-level simulator for energy-harvesting federated learning.
//!
//! Clients harvest one battery unit per slot with a fixed probability and
//! spend it on uploads (one unit) or local training (`train_cost` units and
//! slots). Three scheduling schemes are provided: battery-aware cyclic
//! scheduling ([`Scheme::FedBacys`]), flat FedAvg, and grouped sequential
//! aggregation with greedy training ([`Scheme::FedSeq`]).

pub mod energy;
pub mod engine;
pub mod experiment;
pub mod learning;
pub mod parallel;
pub mod report;
pub mod rng;
pub mod scheduling;
pub mod sweep;
pub mod types;

pub use engine::{run_simulation, RunOutput, SimError, Simulation};
pub use experiment::{parse_config, ExperimentSpec};
pub use types::{Action, Aggregation, Partition, Scheme, SimConfig, TaskConfig};
