//! Splitting a training set into per-client shards.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma};

use super::LearningError;

/// Disjoint per-client index lists into the training set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataPartition {
    pub shards: Vec<Vec<usize>>,
}

impl DataPartition {
    pub fn n_clients(&self) -> usize {
        self.shards.len()
    }

    pub fn assigned(&self) -> usize {
        self.shards.iter().map(Vec::len).sum()
    }
}

/// Equal random shards of `samples_per_client`; leftover samples stay unused.
pub fn partition_iid<R: Rng + ?Sized>(
    n_samples: usize,
    n_clients: usize,
    samples_per_client: usize,
    rng: &mut R,
) -> Result<DataPartition, LearningError> {
    let needed = n_clients * samples_per_client;
    if needed > n_samples {
        return Err(LearningError::InsufficientData {
            needed,
            available: n_samples,
        });
    }
    let mut order: Vec<usize> = (0..n_samples).collect();
    order.shuffle(rng);
    let shards = order
        .chunks(samples_per_client)
        .take(n_clients)
        .map(|c| c.to_vec())
        .collect();
    Ok(DataPartition { shards })
}

const MAX_DIRICHLET_REDRAWS: usize = 100;

/// Label-skewed split: for every class, client proportions come from a
/// symmetric Dirichlet(`alpha`) and that class's samples are dealt out
/// accordingly. Draws that leave a client empty are redrawn; if that keeps
/// failing, each empty client takes one sample from the largest shard.
pub fn partition_dirichlet<R: Rng + ?Sized>(
    labels: &[usize],
    n_classes: usize,
    n_clients: usize,
    alpha: f64,
    rng: &mut R,
) -> Result<DataPartition, LearningError> {
    if labels.len() < n_clients {
        return Err(LearningError::InsufficientData {
            needed: n_clients,
            available: labels.len(),
        });
    }
    let gamma = Gamma::new(alpha, 1.0).map_err(|_| LearningError::BadAlpha(alpha))?;
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }

    let mut shards = Vec::new();
    for _ in 0..MAX_DIRICHLET_REDRAWS {
        shards = vec![Vec::new(); n_clients];
        for members in &by_class {
            let mut members = members.clone();
            members.shuffle(rng);
            let weights = dirichlet_weights(&gamma, n_clients, rng);
            let n = members.len();
            let mut cum = 0.0;
            let mut start = 0;
            for (client, w) in weights.iter().enumerate() {
                cum += w;
                let end = if client + 1 == n_clients {
                    n
                } else {
                    ((cum * n as f64).round() as usize).clamp(start, n)
                };
                shards[client].extend_from_slice(&members[start..end]);
                start = end;
            }
        }
        if shards.iter().all(|s| !s.is_empty()) {
            break;
        }
    }
    while let Some(empty) = shards.iter().position(Vec::is_empty) {
        let donor = (0..n_clients).max_by_key(|&c| shards[c].len()).unwrap_or(0);
        let moved = shards[donor].pop().expect("donor shard has at least two samples");
        shards[empty].push(moved);
    }
    for s in &mut shards {
        s.sort_unstable();
    }
    Ok(DataPartition { shards })
}

fn dirichlet_weights<R: Rng + ?Sized>(gamma: &Gamma<f64>, n: usize, rng: &mut R) -> Vec<f64> {
    let mut w: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
    let sum: f64 = w.iter().sum();
    if sum > 0.0 && sum.is_finite() {
        w.iter_mut().for_each(|v| *v /= sum);
    } else {
        // Every gamma draw underflowed; put the whole class on one client.
        w.iter_mut().for_each(|v| *v = 0.0);
        w[rng.random_range(0..n)] = 1.0;
    }
    w
}

/// Shannon entropy (nats) of the label histogram of one shard.
pub fn label_entropy(shard: &[usize], labels: &[usize], n_classes: usize) -> f64 {
    let mut hist = vec![0usize; n_classes];
    for &i in shard {
        hist[labels[i]] += 1;
    }
    let n = shard.len() as f64;
    hist.iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};

    fn balanced_labels(n: usize, k: usize) -> Vec<usize> {
        (0..n).map(|i| i % k).collect()
    }

    fn assert_disjoint(p: &DataPartition, n: usize) {
        let mut seen = vec![false; n];
        for s in &p.shards {
            for &i in s {
                assert!(!seen[i], "sample {i} assigned twice");
                seen[i] = true;
            }
        }
    }

    #[test]
    fn iid_leaves_surplus_unused() {
        let mut rng = stream(1, Purpose::Partition, 0);
        let p = partition_iid(1000, 10, 50, &mut rng).unwrap();
        assert_eq!(p.n_clients(), 10);
        assert!(p.shards.iter().all(|s| s.len() == 50));
        assert_eq!(p.assigned(), 500);
        assert_disjoint(&p, 1000);
    }

    #[test]
    fn iid_exact_cover() {
        let mut rng = stream(1, Purpose::Partition, 0);
        let p = partition_iid(500, 10, 50, &mut rng).unwrap();
        let mut all: Vec<usize> = p.shards.concat();
        all.sort();
        assert_eq!(all, (0..500).collect::<Vec<_>>());
    }

    #[test]
    fn iid_insufficient_data() {
        let mut rng = stream(1, Purpose::Partition, 0);
        assert_eq!(
            partition_iid(499, 10, 50, &mut rng),
            Err(LearningError::InsufficientData {
                needed: 500,
                available: 499
            })
        );
    }

    #[test]
    fn iid_label_histograms_follow_hypergeometric() {
        // 2000 samples, 4 balanced classes, shards of 50: each class count in
        // a shard is hypergeometric with mean 12.5 and variance
        // 50 * 0.25 * 0.75 * (1950 / 1999).
        let labels = balanced_labels(2000, 4);
        let mut rng = stream(3, Purpose::Partition, 0);
        let p = partition_iid(2000, 40, 50, &mut rng).unwrap();
        let sd = (50.0 * 0.25 * 0.75 * (1950.0 / 1999.0_f64)).sqrt();
        for s in &p.shards {
            let mut hist = [0usize; 4];
            for &i in s {
                hist[labels[i]] += 1;
            }
            for c in hist {
                assert!((c as f64 - 12.5).abs() <= 3.0 * sd + 0.5, "count {c}");
            }
        }
    }

    #[test]
    fn dirichlet_covers_every_sample_once_and_no_empty_client() {
        let labels = balanced_labels(400, 4);
        for seed in 0..10 {
            let mut rng = stream(seed, Purpose::Partition, 0);
            let p = partition_dirichlet(&labels, 4, 20, 0.05, &mut rng).unwrap();
            assert_eq!(p.assigned(), 400);
            assert_disjoint(&p, 400);
            assert!(p.shards.iter().all(|s| !s.is_empty()));
        }
    }

    #[test]
    fn dirichlet_replays() {
        let labels = balanced_labels(400, 4);
        let a = partition_dirichlet(&labels, 4, 20, 0.5, &mut stream(9, Purpose::Partition, 0)).unwrap();
        let b = partition_dirichlet(&labels, 4, 20, 0.5, &mut stream(9, Purpose::Partition, 0)).unwrap();
        assert_eq!(a, b);
    }

    fn mean_entropy(p: &DataPartition, labels: &[usize]) -> f64 {
        p.shards.iter().map(|s| label_entropy(s, labels, 4)).sum::<f64>() / p.n_clients() as f64
    }

    #[test]
    fn dirichlet_skew_grows_as_alpha_shrinks() {
        let labels = balanced_labels(1000, 4);
        let avg = |alpha: f64| {
            (0..20)
                .map(|seed| {
                    let mut rng = stream(seed, Purpose::Partition, 0);
                    mean_entropy(
                        &partition_dirichlet(&labels, 4, 20, alpha, &mut rng).unwrap(),
                        &labels,
                    )
                })
                .sum::<f64>()
                / 20.0
        };
        let (low, mid, high) = (avg(0.1), avg(10.0), avg(100.0));
        assert!(low < mid, "alpha 0.1: {low}, alpha 10: {mid}");

        let iid = {
            let mut rng = stream(0, Purpose::Partition, 0);
            mean_entropy(&partition_iid(1000, 20, 50, &mut rng).unwrap(), &labels)
        };
        assert!((high - iid).abs() < 0.05, "alpha 100: {high}, iid: {iid}");
        assert!(high <= 4f64.ln() + 1e-12);
    }
}
