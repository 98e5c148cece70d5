//! Per-slot decision policies and group/hub assignment.
//!
//! All three policies are pure functions of the client's own state, the time
//! index and the configuration. Ineligible energy-consuming actions degrade
//! to [`Action::Idle`], and a client holding an update at its upload slot
//! always transmits rather than starting a new training session.

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::rng::{stream, Purpose};
use crate::types::{Action, ClientState, GroupAssignment, Scheme, SimConfig, TimeIndex};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GroupingError {
    #[error("cannot split {clients} clients into {groups} non-empty groups")]
    InvalidSizes { clients: usize, groups: usize },
}

/// Decision rule for one scheme together with the constants it needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Policy {
    pub scheme: Scheme,
    group_round: usize,
    train_cost: u32,
}

impl Policy {
    pub fn new(config: &SimConfig) -> Self {
        Self {
            scheme: config.scheme,
            group_round: config.group_round(),
            train_cost: config.train_cost,
        }
    }

    /// Decide for a client that is not mid-training.
    pub fn decide(&self, client: &ClientState, time: &TimeIndex, config: &SimConfig) -> Action {
        debug_assert_eq!(self.group_round, config.group_round());
        debug_assert_eq!(self.train_cost, config.train_cost);
        match self.scheme {
            Scheme::FedBacys => fedbacys_decide(client, time, config),
            Scheme::FedAvg => fedavg_decide(client, time, config),
            Scheme::FedSeq => fedseq_decide(client, time, config),
        }
    }
}

/// True iff training started at `slot` ends inside `group`'s active period:
/// `g*R <= (slot + k) mod S < (g+1)*R - 1`.
pub fn in_deadline_window(slot: usize, group: usize, config: &SimConfig) -> bool {
    let r = config.group_round();
    let finish = (slot + config.train_cost as usize) % config.slots_per_epoch;
    group * r <= finish && finish + 1 < (group + 1) * r
}

fn is_upload_slot(client: &ClientState, time: &TimeIndex, config: &SimConfig) -> bool {
    time.is_window_close(config) && time.group_in_turn == client.group
}

pub fn fedbacys_decide(client: &ClientState, time: &TimeIndex, config: &SimConfig) -> Action {
    let has_update = client.pending_update.is_some();
    if has_update && client.battery >= 1 && is_upload_slot(client, time, config) {
        return Action::Transmit;
    }
    if client.battery >= config.train_cost
        && !has_update
        && in_deadline_window(time.slot, client.group, config)
    {
        return Action::StartTraining;
    }
    Action::Idle
}

/// Flat FedAvg: upload at the last slot of every epoch, otherwise train
/// whenever the battery allows. A fresh delta replaces an older pending one.
pub fn fedavg_decide(client: &ClientState, time: &TimeIndex, config: &SimConfig) -> Action {
    if client.pending_update.is_some() && client.battery >= 1 && time.is_epoch_end(config) {
        return Action::Transmit;
    }
    if client.battery >= config.train_cost {
        return Action::StartTraining;
    }
    Action::Idle
}

/// Grouped sequential aggregation with greedy training: uploads use the
/// group window, training needs only energy and the absence of an update
/// already produced in the current epoch.
pub fn fedseq_decide(client: &ClientState, time: &TimeIndex, config: &SimConfig) -> Action {
    let pending = client.pending_update.as_ref();
    if pending.is_some() && client.battery >= 1 && is_upload_slot(client, time, config) {
        return Action::Transmit;
    }
    let fresh = pending.is_some_and(|u| u.produced_epoch == time.epoch);
    if client.battery >= config.train_cost && !fresh {
        return Action::StartTraining;
    }
    Action::Idle
}

/// Uniformly random balanced partition of `0..n_clients` into `n_groups`
/// groups; the first `n_clients % n_groups` groups get the extra member.
pub fn assign_groups<R: Rng + ?Sized>(
    n_clients: usize,
    n_groups: usize,
    rng: &mut R,
) -> Result<GroupAssignment, GroupingError> {
    if n_groups == 0 || n_groups > n_clients {
        return Err(GroupingError::InvalidSizes {
            clients: n_clients,
            groups: n_groups,
        });
    }
    let mut order: Vec<usize> = (0..n_clients).collect();
    order.shuffle(rng);
    let base = n_clients / n_groups;
    let extra = n_clients % n_groups;
    let mut groups = Vec::with_capacity(n_groups);
    let mut rest = order.as_slice();
    for g in 0..n_groups {
        let size = base + usize::from(g < extra);
        let (head, tail) = rest.split_at(size);
        groups.push(head.to_vec());
        rest = tail;
    }
    Ok(GroupAssignment::from_groups(groups))
}

/// Draws one hub per group, uniformly over its members, from the stream
/// dedicated to `epoch`.
pub fn elect_hubs(assignment: &GroupAssignment, epoch: usize, seed: u64) -> Vec<usize> {
    let mut rng = stream(seed, Purpose::HubElection, epoch as u64);
    (0..assignment.n_groups())
        .map(|g| {
            let members = assignment.members(g);
            members[rng.random_range(0..members.len())]
        })
        .collect()
}
