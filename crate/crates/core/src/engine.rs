//! The slot loop.
//!
//! Each slot runs, in order: hub election (first slot of an epoch), policy
//! decisions for every free client against the slot-start state, action
//! costs, training progress, Bernoulli charging, and finally the group
//! window close (or, for FedAvg, the epoch-end server round). Every random
//! draw comes from a dedicated derived stream, so a run replays bit-exactly.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use serde::Serialize;
use thiserror::Error;

use crate::energy::{self, EnergyLedger};
use crate::learning::{
    self, aggregate, evaluate, partition_dirichlet, partition_iid, ClusterSpec, Dataset, LearningError,
    SgdParams, SoftmaxRegression, Task, TrainingJob,
};
use crate::parallel::{self, ExecMode};
use crate::rng::{job_index, stream, Purpose, Stream};
use crate::scheduling::{assign_groups, elect_hubs, GroupingError, Policy};
use crate::types::{
    derive_time, Action, ClientState, ConfigError, GroupAssignment, ModelParams, Partition, SimConfig,
    TimeIndex, Update,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Grouping(#[from] GroupingError),
    #[error("client {client}: {source}")]
    Training {
        client: usize,
        #[source]
        source: LearningError,
    },
    #[error(transparent)]
    Learning(#[from] LearningError),
    #[error("simulation already finished after {0} slots")]
    Finished(usize),
    #[error("invariant violated at slot {slot}: {message}")]
    Invariant { slot: usize, message: String },
}

impl SimError {
    /// Whether the run failed because training diverged rather than because
    /// the configuration or data was unusable.
    pub fn is_divergence(&self) -> bool {
        matches!(
            self,
            SimError::Training {
                source: LearningError::Diverged { .. },
                ..
            }
        )
    }
}

/// Training data, test data and the per-client split.
pub struct Workload {
    pub task: Box<dyn Task>,
    pub train: Dataset,
    pub test: Dataset,
    pub shards: Vec<Vec<usize>>,
}

impl Workload {
    pub fn from_config(config: &SimConfig) -> Result<Self, SimError> {
        let tc = &config.task;
        let mut data_rng = stream(config.seed, Purpose::Dataset, 0);
        let (train, test) = match &tc.dataset {
            None => {
                let spec = ClusterSpec {
                    n_classes: tc.n_classes,
                    n_features: tc.feature_dim,
                    cluster_spread: tc.cluster_spread,
                    n_train: config.n_clients * tc.samples_per_client,
                    n_test: tc.test_samples,
                };
                let data = learning::generate_clusters(&spec, &mut data_rng);
                (data.train, data.test)
            }
            Some(path) => {
                let all = Dataset::from_csv(path, tc.n_classes)?;
                if all.n_features() != tc.feature_dim {
                    return Err(LearningError::MalformedDataset(format!(
                        "{} has {} features but feature_dim = {}",
                        path.display(),
                        all.n_features(),
                        tc.feature_dim
                    ))
                    .into());
                }
                let mut order: Vec<usize> = (0..all.len()).collect();
                rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut data_rng);
                if order.len() <= tc.test_samples {
                    return Err(LearningError::InsufficientData {
                        needed: tc.test_samples + 1,
                        available: order.len(),
                    }
                    .into());
                }
                let (test_idx, train_idx) = order.split_at(tc.test_samples);
                (all.select(train_idx), all.select(test_idx))
            }
        };
        let mut part_rng = stream(config.seed, Purpose::Partition, 0);
        let partition = match config.partition {
            Partition::Iid => partition_iid(
                train.len(),
                config.n_clients,
                tc.samples_per_client,
                &mut part_rng,
            )?,
            Partition::Dirichlet { alpha } => partition_dirichlet(
                train.labels(),
                tc.n_classes,
                config.n_clients,
                alpha,
                &mut part_rng,
            )?,
        };
        Ok(Self {
            task: Box::new(SoftmaxRegression::new(tc.n_classes, tc.feature_dim)),
            train,
            test,
            shards: partition.shards,
        })
    }
}

/// Network-wide counters for approximations the model has to make.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Diagnostics {
    /// Hand-offs performed by a hub that could not pay for them.
    pub free_handoffs: u64,
    /// Energy-consuming actions a client chose but could not afford.
    pub declined_actions: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub accuracy: f64,
    pub loss: f64,
    /// Cumulative ledger at the end of the epoch.
    pub ledger: EnergyLedger,
    /// Clients whose update reached a hub (or the server) during the epoch.
    pub participants: usize,
    /// Training sessions started during the epoch.
    pub trainings: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MetricsLog {
    pub records: Vec<EpochRecord>,
}

impl MetricsLog {
    pub fn final_record(&self) -> Option<&EpochRecord> {
        self.records.last()
    }
}

/// What happened during one slot, for external checking.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotReport {
    pub time: TimeIndex,
    /// `None` for clients that were mid-training.
    pub actions: Vec<Option<Action>>,
    /// `(client, start_slot)` of trainings that finished this slot.
    pub completed: Vec<(usize, usize)>,
    /// Group whose window closed at the end of the slot.
    pub closed_group: Option<usize>,
    pub epoch_record: Option<EpochRecord>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub log: MetricsLog,
    pub final_model: ModelParams,
    pub ledger: EnergyLedger,
    pub diagnostics: Diagnostics,
}

struct Node {
    state: ClientState,
    job: Option<TrainingJob>,
    charging: Stream,
}

pub struct Simulation {
    config: SimConfig,
    policy: Policy,
    workload: Workload,
    exec: ExecMode,
    slot: usize,
    nodes: Vec<Node>,
    assignment: GroupAssignment,
    server_model: ModelParams,
    staged_model: ModelParams,
    inbox: Vec<ModelParams>,
    ledger: EnergyLedger,
    diagnostics: Diagnostics,
    metrics: MetricsLog,
    epoch_participants: usize,
    epoch_trainings: usize,
}

impl Simulation {
    pub fn new(config: SimConfig) -> Result<Self, SimError> {
        config.validate()?;
        let workload = Workload::from_config(&config)?;
        Self::with_workload(config, workload)
    }

    pub fn with_workload(config: SimConfig, workload: Workload) -> Result<Self, SimError> {
        config.validate()?;
        let dim = workload.task.dim();
        if workload.shards.len() != config.n_clients {
            return Err(SimError::Invariant {
                slot: 0,
                message: format!(
                    "{} shards for {} clients",
                    workload.shards.len(),
                    config.n_clients
                ),
            });
        }
        let mut group_rng = stream(config.seed, Purpose::Grouping, 0);
        let assignment = assign_groups(config.n_clients, config.effective_groups(), &mut group_rng)?;
        let nodes = workload
            .shards
            .iter()
            .enumerate()
            .map(|(id, shard)| Node {
                state: ClientState {
                    id,
                    battery: config.init_battery,
                    group: assignment.group_of(id),
                    busy_until: None,
                    pending_update: None,
                    model: ModelParams::zeros(dim),
                    shard: shard.clone(),
                },
                job: None,
                charging: stream(config.seed, Purpose::Charging, id as u64),
            })
            .collect();
        Ok(Self {
            policy: Policy::new(&config),
            workload,
            exec: ExecMode::Sequential,
            slot: 0,
            nodes,
            assignment,
            server_model: ModelParams::zeros(dim),
            staged_model: ModelParams::zeros(dim),
            inbox: Vec::new(),
            ledger: EnergyLedger::default(),
            diagnostics: Diagnostics::default(),
            metrics: MetricsLog::default(),
            epoch_participants: 0,
            epoch_trainings: 0,
            config,
        })
    }

    /// Runs per-client training progress on the rayon pool when parallel.
    pub fn with_exec(mut self, exec: ExecMode) -> Self {
        self.exec = exec;
        self
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn slot(&self) -> usize {
        self.slot
    }

    pub fn is_finished(&self) -> bool {
        self.slot >= self.config.total_slots()
    }

    pub fn client(&self, id: usize) -> &ClientState {
        &self.nodes[id].state
    }

    pub fn clients(&self) -> impl Iterator<Item = &ClientState> {
        self.nodes.iter().map(|n| &n.state)
    }

    pub fn assignment(&self) -> &GroupAssignment {
        &self.assignment
    }

    pub fn server_model(&self) -> &ModelParams {
        &self.server_model
    }

    pub fn staged_model(&self) -> &ModelParams {
        &self.staged_model
    }

    pub fn ledger(&self) -> &EnergyLedger {
        &self.ledger
    }

    pub fn diagnostics(&self) -> &Diagnostics {
        &self.diagnostics
    }

    pub fn metrics(&self) -> &MetricsLog {
        &self.metrics
    }

    pub fn workload(&self) -> &Workload {
        &self.workload
    }

    /// Sum of all battery levels.
    pub fn stored_energy(&self) -> u64 {
        self.nodes.iter().map(|n| n.state.battery as u64).sum()
    }

    /// Digest of the complete mutable state, including RNG stream positions.
    pub fn fingerprint(&self) -> u64 {
        fn hash_model(m: &ModelParams, h: &mut DefaultHasher) {
            for v in m.as_slice() {
                v.to_bits().hash(h);
            }
        }
        let mut h = DefaultHasher::new();
        self.slot.hash(&mut h);
        for n in &self.nodes {
            let s = &n.state;
            (s.battery, s.group, s.busy_until).hash(&mut h);
            hash_model(&s.model, &mut h);
            if let Some(u) = &s.pending_update {
                (u.produced_epoch, u.client_id).hash(&mut h);
                hash_model(&u.delta, &mut h);
            }
            if let Some(job) = &n.job {
                (job.start_slot, job.batches_done()).hash(&mut h);
                hash_model(job.iterate(), &mut h);
            }
            n.charging.get_word_pos().hash(&mut h);
        }
        self.assignment.hubs.hash(&mut h);
        hash_model(&self.server_model, &mut h);
        hash_model(&self.staged_model, &mut h);
        for d in &self.inbox {
            hash_model(d, &mut h);
        }
        let l = &self.ledger;
        (l.consumed_tx, l.consumed_train, l.harvested, l.wasted).hash(&mut h);
        h.finish()
    }

    pub fn step(&mut self) -> Result<SlotReport, SimError> {
        let time = derive_time(self.slot, &self.config).map_err(|_| SimError::Finished(self.slot))?;
        let cfg = &self.config;

        if time.slot_in_epoch(cfg) == 0 {
            if cfg.scheme.is_grouped() {
                self.assignment.hubs = elect_hubs(&self.assignment, time.epoch, cfg.seed);
            }
            self.epoch_participants = 0;
            self.epoch_trainings = 0;
        }

        // (a) decisions against the slot-start snapshot
        let actions: Vec<Option<Action>> = self
            .nodes
            .iter()
            .map(|n| (!n.state.is_busy_at(time.slot)).then(|| self.policy.decide(&n.state, &time, cfg)))
            .collect();

        // (b) action costs
        for (node, action) in self.nodes.iter_mut().zip(&actions) {
            let state = &mut node.state;
            match action {
                Some(Action::Transmit) => match energy::apply_transmit(state.battery) {
                    Ok(b) => {
                        state.battery = b;
                        self.ledger.consumed_tx += 1;
                        if let Some(update) = state.pending_update.take() {
                            self.inbox.push(update.delta);
                            self.epoch_participants += 1;
                        }
                    }
                    Err(_) => self.diagnostics.declined_actions += 1,
                },
                Some(Action::StartTraining) => match energy::start_training(state.battery, cfg.train_cost) {
                    Ok(b) => {
                        state.battery = b;
                        self.ledger.consumed_train += cfg.train_cost as u64;
                        state.busy_until = Some(time.slot + cfg.train_cost as usize);
                        node.job = Some(TrainingJob::new(
                            state.id,
                            time.slot,
                            state.model.clone(),
                            stream(cfg.seed, Purpose::BatchOrder, job_index(state.id, time.slot)),
                        ));
                        self.epoch_trainings += 1;
                    }
                    Err(_) => self.diagnostics.declined_actions += 1,
                },
                Some(Action::Idle) => state.battery = energy::apply_idle(state.battery),
                None => {}
            }
        }

        // (c) training progress; jobs finishing this slot become pending updates
        let task = self.workload.task.as_ref();
        let data = &self.workload.train;
        let sgd = SgdParams {
            learning_rate: cfg.learning_rate,
            n_batches: cfg.n_batches,
            batch_size: cfg.task.batch_size,
        };
        let kappa = cfg.train_cost as usize;
        parallel::try_for_each_mut(self.exec, &mut self.nodes, |node| {
            let Some(job) = node.job.as_mut() else {
                return Ok::<(), SimError>(());
            };
            let elapsed = time.slot + 1 - job.start_slot;
            let target = (sgd.n_batches * elapsed).div_ceil(kappa);
            job.advance_to(target, task, data, &node.state.shard, &sgd)
                .map_err(|source| SimError::Training {
                    client: node.state.id,
                    source,
                })?;
            if elapsed == kappa {
                let job = node.job.take().expect("job present");
                node.state.pending_update = Some(Update {
                    client_id: node.state.id,
                    produced_epoch: time.epoch,
                    delta: job.finish(),
                });
            }
            Ok(())
        })?;
        let completed: Vec<(usize, usize)> = self
            .nodes
            .iter()
            .filter(|n| n.job.is_none() && n.state.busy_until == Some(time.slot + 1))
            .map(|n| (n.state.id, time.slot + 1 - kappa))
            .collect();

        // (d) harvesting
        for node in &mut self.nodes {
            let charged = energy::sample_charge(&mut node.charging, cfg.charge_prob);
            node.state.battery =
                energy::apply_charge(node.state.battery, cfg.battery_cap, charged, &mut self.ledger);
        }

        // (e) aggregation
        let mut closed_group = None;
        if cfg.scheme.is_grouped() {
            if time.is_window_close(cfg) {
                self.close_group_window(time.group_in_turn)?;
                closed_group = Some(time.group_in_turn);
            }
        } else if time.is_epoch_end(cfg) {
            self.server_round()?;
        }

        let epoch_record = if time.is_epoch_end(&self.config) {
            let eval = evaluate(
                &self.server_model,
                &self.workload.test,
                self.workload.task.as_ref(),
            );
            let record = EpochRecord {
                epoch: time.epoch,
                accuracy: eval.accuracy,
                loss: eval.loss,
                ledger: self.ledger,
                participants: self.epoch_participants,
                trainings: self.epoch_trainings,
            };
            self.metrics.records.push(record.clone());
            Some(record)
        } else {
            None
        };

        self.check_invariants()?;
        self.slot += 1;
        Ok(SlotReport {
            time,
            actions,
            completed,
            closed_group,
            epoch_record,
        })
    }

    /// The hub of `group` folds its inbox into its model and hands the result
    /// to the next group, or to the server after the last group. The server
    /// forwards its new model to group 0 within the same slot.
    pub fn close_group_window(&mut self, group: usize) -> Result<(), SimError> {
        let hub = self.assignment.hubs[group];
        let merged = aggregate(&self.nodes[hub].state.model, &self.inbox, self.config.aggregation)?;
        self.inbox.clear();

        let cost = self.config.handoff_cost;
        if cost > 0 {
            let hub_state = &mut self.nodes[hub].state;
            if hub_state.battery >= cost {
                hub_state.battery -= cost;
                self.ledger.consumed_tx += cost as u64;
            } else {
                self.diagnostics.free_handoffs += 1;
            }
        }

        let next = if group + 1 < self.assignment.n_groups() {
            group + 1
        } else {
            self.server_model = merged.clone();
            0
        };
        for &member in self.assignment.members(next) {
            self.nodes[member].state.model = merged.clone();
        }
        self.staged_model = merged;
        Ok(())
    }

    /// FedAvg epoch end: the server folds every received update into the
    /// global model and broadcasts it to all clients.
    fn server_round(&mut self) -> Result<(), SimError> {
        self.server_model = aggregate(&self.server_model, &self.inbox, self.config.aggregation)?;
        self.inbox.clear();
        for node in &mut self.nodes {
            node.state.model = self.server_model.clone();
        }
        self.staged_model = self.server_model.clone();
        Ok(())
    }

    fn check_invariants(&self) -> Result<(), SimError> {
        let cap = self.config.battery_cap;
        if let Some(n) = self.nodes.iter().find(|n| n.state.battery > cap) {
            return Err(SimError::Invariant {
                slot: self.slot,
                message: format!(
                    "client {} battery {} above cap {cap}",
                    n.state.id, n.state.battery
                ),
            });
        }
        let expected = self
            .ledger
            .expected_stored(self.config.n_clients, self.config.init_battery);
        if expected != self.stored_energy() as i128 {
            return Err(SimError::Invariant {
                slot: self.slot,
                message: format!(
                    "stored energy {} but ledger implies {expected}",
                    self.stored_energy()
                ),
            });
        }
        Ok(())
    }

    pub fn run(mut self) -> Result<RunOutput, SimError> {
        while !self.is_finished() {
            self.step()?;
        }
        Ok(self.into_output())
    }

    pub fn into_output(self) -> RunOutput {
        RunOutput {
            log: self.metrics,
            final_model: self.server_model,
            ledger: self.ledger,
            diagnostics: self.diagnostics,
        }
    }
}

pub fn run_simulation(config: &SimConfig) -> Result<RunOutput, SimError> {
    Simulation::new(config.clone())?.run()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Scheme;

    fn small(scheme: Scheme) -> SimConfig {
        SimConfig {
            n_clients: 4,
            n_groups: 2,
            n_epochs: 3,
            slots_per_epoch: 10,
            train_cost: 4,
            battery_cap: 9,
            charge_prob: 1.0,
            learning_rate: 0.05,
            scheme,
            seed: 3,
            task: crate::types::TaskConfig {
                samples_per_client: 10,
                test_samples: 40,
                ..Default::default()
            },
            ..SimConfig::default()
        }
    }

    #[test]
    fn structural_run_emits_one_record_per_epoch() {
        for scheme in Scheme::ALL {
            let out = run_simulation(&small(scheme)).unwrap();
            assert_eq!(out.log.records.len(), 3);
            assert_eq!(
                out.log.records.iter().map(|r| r.epoch).collect::<Vec<_>>(),
                vec![0, 1, 2]
            );
        }
    }

    #[test]
    fn starvation_means_no_actions() {
        let cfg = SimConfig {
            charge_prob: 0.0,
            n_epochs: 20,
            handoff_cost: 1,
            ..small(Scheme::FedBacys)
        };
        let mut sim = Simulation::new(cfg).unwrap();
        while !sim.is_finished() {
            let r = sim.step().unwrap();
            assert!(r.actions.iter().all(|a| *a == Some(Action::Idle)));
            assert!(sim.clients().all(|c| c.battery == 0));
        }
        assert_eq!(sim.ledger().consumed_total(), 0);
        assert_eq!(sim.diagnostics().free_handoffs, 20 * 2);
    }

    #[test]
    fn single_client_hand_trace() {
        // N=1, G=1, S=4, k=2, cap=7, p=1.
        let cfg = SimConfig {
            n_clients: 1,
            n_groups: 1,
            slots_per_epoch: 4,
            n_epochs: 3,
            train_cost: 2,
            battery_cap: 7,
            charge_prob: 1.0,
            handoff_cost: 0,
            ..small(Scheme::FedBacys)
        };
        let mut sim = Simulation::new(cfg).unwrap();
        let mut timeline = Vec::new();
        while !sim.is_finished() {
            let r = sim.step().unwrap();
            timeline.push((r.actions[0], sim.client(0).battery));
        }
        use Action::*;
        let expected = vec![
            (Some(Idle), 1),
            (Some(Idle), 2),
            (Some(StartTraining), 1),
            (None, 2),
            (Some(Idle), 3),
            (Some(Idle), 4),
            (Some(Idle), 5),
            (Some(Transmit), 5),
            (Some(StartTraining), 4),
            (None, 5),
            (Some(Idle), 6),
            (Some(Transmit), 6),
        ];
        assert_eq!(timeline, expected);
    }

    #[test]
    fn fingerprints_replay() {
        let cfg = small(Scheme::FedSeq);
        let mut a = Simulation::new(cfg.clone()).unwrap();
        let mut b = Simulation::new(cfg).unwrap().with_exec(ExecMode::Parallel);
        while !a.is_finished() {
            a.step().unwrap();
            b.step().unwrap();
            assert_eq!(a.fingerprint(), b.fingerprint());
        }
        assert!(matches!(a.step(), Err(SimError::Finished(30))));
    }

    #[test]
    fn empty_window_still_hands_off() {
        let cfg = small(Scheme::FedBacys);
        let mut sim = Simulation::new(cfg).unwrap();
        let before = sim.server_model().clone();
        sim.close_group_window(1).unwrap();
        assert_eq!(sim.server_model(), &before);
        for &m in sim.assignment().members(0).to_vec().iter() {
            assert_eq!(&sim.client(m).model, &before);
        }
    }

    #[test]
    fn divergence_surfaces_as_error() {
        let cfg = SimConfig {
            learning_rate: 1e308,
            n_batches: 50,
            ..small(Scheme::FedAvg)
        };
        let err = run_simulation(&cfg).unwrap_err();
        assert!(err.is_divergence(), "{err}");
    }
}
