//! Battery dynamics: Bernoulli harvesting, transmit and training costs, and
//! the capacity limit.
//!
//! Within a slot the engine first applies the cost of the chosen action and
//! then the charge, so a transmitting client ends the slot at
//! `max(E - 1, 0) + 1{charge}` and a client that started training reaches
//! `max(E - k, 0) + sum of charges` once its `k` busy slots are over.

use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::types::Units;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("insufficient energy: need {needed} units, have {available}")]
pub struct InsufficientEnergy {
    pub needed: Units,
    pub available: Units,
}

/// Network-wide cumulative energy counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct EnergyLedger {
    pub consumed_tx: u64,
    pub consumed_train: u64,
    /// Charge events that raised a battery level.
    pub harvested: u64,
    /// Charge events that arrived at a full battery and were lost.
    pub wasted: u64,
}

impl EnergyLedger {
    pub fn consumed_total(&self) -> u64 {
        self.consumed_tx + self.consumed_train
    }

    /// Total energy that must currently sit in the batteries of `n_clients`
    /// clients that all started at `init_battery`.
    pub fn expected_stored(&self, n_clients: usize, init_battery: Units) -> i128 {
        n_clients as i128 * init_battery as i128 + self.harvested as i128 - self.consumed_total() as i128
    }
}

/// One Bernoulli(`charge_prob`) draw. Always consumes exactly one `f64` from
/// the stream, including for the degenerate probabilities 0 and 1.
pub fn sample_charge<R: Rng + ?Sized>(rng: &mut R, charge_prob: f64) -> bool {
    let u: f64 = rng.random();
    u < charge_prob
}

pub fn apply_charge(battery: Units, cap: Units, charged: bool, ledger: &mut EnergyLedger) -> Units {
    debug_assert!(battery <= cap);
    if !charged {
        return battery;
    }
    if battery < cap {
        ledger.harvested += 1;
        battery + 1
    } else {
        ledger.wasted += 1;
        cap
    }
}

pub fn apply_transmit(battery: Units) -> Result<Units, InsufficientEnergy> {
    battery.checked_sub(1).ok_or(InsufficientEnergy {
        needed: 1,
        available: battery,
    })
}

/// Deducts the whole training cost up front; the client must be able to pay
/// for every busy slot before it starts.
pub fn start_training(battery: Units, train_cost: Units) -> Result<Units, InsufficientEnergy> {
    battery.checked_sub(train_cost).ok_or(InsufficientEnergy {
        needed: train_cost,
        available: battery,
    })
}

pub fn apply_idle(battery: Units) -> Units {
    battery
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn degenerate_bernoulli() {
        let mut rng = stream(1, Purpose::Charging, 0);
        assert!((0..1000).all(|_| !sample_charge(&mut rng, 0.0)));
        assert!((0..1000).all(|_| sample_charge(&mut rng, 1.0)));
    }

    #[test]
    fn bernoulli_mean_matches_probability() {
        let mut rng = stream(99, Purpose::Charging, 0);
        let n = 100_000;
        let hits = (0..n).filter(|_| sample_charge(&mut rng, 0.3)).count();
        let mean = hits as f64 / n as f64;
        assert!((mean - 0.3).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn one_draw_per_sample() {
        // Both probabilities must leave the stream at the same position.
        let mut a = stream(5, Purpose::Charging, 0);
        let mut b = stream(5, Purpose::Charging, 0);
        sample_charge(&mut a, 0.0);
        sample_charge(&mut b, 1.0);
        assert_eq!(a.random::<u64>(), b.random::<u64>());
    }

    #[test]
    fn charge_examples() {
        let mut ledger = EnergyLedger::default();
        assert_eq!(apply_charge(24, 25, true, &mut ledger), 25);
        assert_eq!((ledger.harvested, ledger.wasted), (1, 0));
        assert_eq!(apply_charge(25, 25, true, &mut ledger), 25);
        assert_eq!((ledger.harvested, ledger.wasted), (1, 1));
        assert_eq!(apply_charge(7, 25, false, &mut ledger), 7);
        assert_eq!((ledger.harvested, ledger.wasted), (1, 1));
    }

    #[test]
    fn transmit_examples() {
        assert_eq!(apply_transmit(5), Ok(4));
        assert_eq!(apply_transmit(1), Ok(0));
        assert_eq!(
            apply_transmit(0),
            Err(InsufficientEnergy {
                needed: 1,
                available: 0
            })
        );
    }

    #[test]
    fn training_examples() {
        assert_eq!(start_training(20, 20), Ok(0));
        assert_eq!(start_training(25, 20), Ok(5));
        assert!(start_training(19, 20).is_err());
    }

    #[test]
    fn idle_examples() {
        assert_eq!(apply_idle(0), 0);
        assert_eq!(apply_idle(25), 25);
        assert_eq!(apply_idle(12), 12);
    }

    #[test]
    fn idle_ramp_reaches_train_cost() {
        let (k, cap) = (20, 25);
        let mut ledger = EnergyLedger::default();
        let mut battery = 0;
        for _ in 0..k {
            battery = apply_charge(apply_idle(battery), cap, true, &mut ledger);
        }
        assert_eq!(battery, k);
    }

    proptest! {
        #[test]
        fn transmit_then_charge_matches_closed_form(battery in 1u32..=25, charged: bool) {
            let mut ledger = EnergyLedger::default();
            let next = apply_charge(apply_transmit(battery).unwrap(), 25, charged, &mut ledger);
            let closed = battery.saturating_sub(1) + u32::from(charged);
            prop_assert_eq!(next, closed);
        }

        #[test]
        fn training_window_matches_closed_form(
            battery in 20u32..=25,
            charges in proptest::collection::vec(any::<bool>(), 20),
        ) {
            let (k, cap) = (20, 25);
            let mut ledger = EnergyLedger::default();
            let mut b = start_training(battery, k).unwrap();
            for &c in &charges {
                b = apply_charge(b, cap, c, &mut ledger);
            }
            let closed = battery.saturating_sub(k) + charges.iter().filter(|&&c| c).count() as u32;
            prop_assert_eq!(b, closed.min(cap));
        }

        #[test]
        fn ledger_conserves(events in proptest::collection::vec((0u8..3, any::<bool>()), 0..400)) {
            let (k, cap) = (4, 9);
            let mut ledger = EnergyLedger::default();
            let mut b: Units = 2;
            for (action, charged) in events {
                match action {
                    0 => if let Ok(v) = apply_transmit(b) { b = v; ledger.consumed_tx += 1; },
                    1 => if let Ok(v) = start_training(b, k) { b = v; ledger.consumed_train += k as u64; },
                    _ => b = apply_idle(b),
                }
                b = apply_charge(b, cap, charged, &mut ledger);
                prop_assert!(b <= cap);
                prop_assert_eq!(ledger.expected_stored(1, 2), b as i128);
            }
        }
    }
}
