//! Local training, aggregation, evaluation and data preparation.
//!
//! The learning problem is abstracted behind [`Task`]; the shipped
//! implementation is softmax regression over [`Dataset`] rows.

mod data;
mod partition;
mod softmax;

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

pub use data::{generate_clusters, ClusterSpec, Dataset, SyntheticData};
pub use partition::{label_entropy, partition_dirichlet, partition_iid, DataPartition};
pub use softmax::SoftmaxRegression;

use crate::rng::Stream;
use crate::types::{Aggregation, ModelParams};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LearningError {
    #[error("non-finite gradient at step {step} (learning rate too large?)")]
    Diverged { step: usize },
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("need {needed} training samples, only {available} available")]
    InsufficientData { needed: usize, available: usize },
    #[error("invalid Dirichlet concentration {0}")]
    BadAlpha(f64),
    #[error("empty shard")]
    EmptyShard,
    #[error("malformed dataset: {0}")]
    MalformedDataset(String),
}

/// A differentiable per-sample loss averaged over a batch of row indices.
pub trait Task: Send + Sync {
    fn dim(&self) -> usize;
    fn loss(&self, params: &ModelParams, data: &Dataset, batch: &[usize]) -> f64;
    fn gradient(&self, params: &ModelParams, data: &Dataset, batch: &[usize]) -> ModelParams;
    fn predict(&self, params: &ModelParams, features: &[f64]) -> usize;

    fn accuracy(&self, params: &ModelParams, data: &Dataset, batch: &[usize]) -> f64 {
        if batch.is_empty() {
            return 0.0;
        }
        let correct = batch
            .iter()
            .filter(|&&i| self.predict(params, data.row(i)) == data.label(i))
            .count();
        correct as f64 / batch.len() as f64
    }
}

/// Hyper-parameters of one LocalTrain call.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdParams {
    pub learning_rate: f64,
    pub n_batches: usize,
    /// 0 or anything at least the shard size means full-shard steps.
    pub batch_size: usize,
}

/// An in-progress LocalTrain run: `n_batches` plain SGD steps from a frozen
/// start model. Steps can be taken incrementally, so the engine can spread
/// them across the busy slots.
#[derive(Debug, Clone)]
pub struct TrainingJob {
    pub client_id: usize,
    pub start_slot: usize,
    start_model: ModelParams,
    iterate: ModelParams,
    batches_done: usize,
    order: Vec<usize>,
    cursor: usize,
    rng: Stream,
}

impl TrainingJob {
    pub fn new(client_id: usize, start_slot: usize, start_model: ModelParams, rng: Stream) -> Self {
        Self {
            client_id,
            start_slot,
            iterate: start_model.clone(),
            start_model,
            batches_done: 0,
            order: Vec::new(),
            cursor: 0,
            rng,
        }
    }

    pub fn batches_done(&self) -> usize {
        self.batches_done
    }

    pub fn iterate(&self) -> &ModelParams {
        &self.iterate
    }

    fn next_batch(&mut self, shard: &[usize], batch_size: usize) -> Vec<usize> {
        if batch_size == 0 || batch_size >= shard.len() {
            return shard.to_vec();
        }
        if self.cursor + batch_size > self.order.len() {
            self.order = shard.to_vec();
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let batch = self.order[self.cursor..self.cursor + batch_size].to_vec();
        self.cursor += batch_size;
        batch
    }

    /// Runs SGD steps until `target` batches (capped at `n_batches`) are done.
    pub fn advance_to(
        &mut self,
        target: usize,
        task: &dyn Task,
        data: &Dataset,
        shard: &[usize],
        sgd: &SgdParams,
    ) -> Result<(), LearningError> {
        if shard.is_empty() {
            return Err(LearningError::EmptyShard);
        }
        let target = target.min(sgd.n_batches);
        while self.batches_done < target {
            let batch = self.next_batch(shard, sgd.batch_size);
            let grad = task.gradient(&self.iterate, data, &batch);
            if !grad.is_finite() {
                return Err(LearningError::Diverged {
                    step: self.batches_done,
                });
            }
            self.iterate.axpy(-sgd.learning_rate, &grad);
            self.batches_done += 1;
        }
        Ok(())
    }

    /// Delta of the finished job: start model minus final iterate.
    pub fn finish(self) -> ModelParams {
        self.start_model.difference(&self.iterate)
    }
}

/// Runs all `n_batches` steps from `start_model` and returns the delta
/// `start_model - y_B`.
pub fn local_train(
    start_model: &ModelParams,
    task: &dyn Task,
    data: &Dataset,
    shard: &[usize],
    sgd: &SgdParams,
    rng: Stream,
) -> Result<ModelParams, LearningError> {
    if start_model.dim() != task.dim() {
        return Err(LearningError::DimensionMismatch {
            expected: task.dim(),
            found: start_model.dim(),
        });
    }
    let mut job = TrainingJob::new(0, 0, start_model.clone(), rng);
    job.advance_to(sgd.n_batches, task, data, shard, sgd)?;
    Ok(job.finish())
}

/// Folds received deltas into the hub's model. Deltas point from the trained
/// iterate back to its start, so they are subtracted: `hub - sum(deltas)`,
/// or `hub - mean(deltas)` in [`Aggregation::Mean`] mode.
pub fn aggregate<'a, I>(
    hub_model: &ModelParams,
    deltas: I,
    mode: Aggregation,
) -> Result<ModelParams, LearningError>
where
    I: IntoIterator<Item = &'a ModelParams>,
{
    let mut sum = ModelParams::zeros(hub_model.dim());
    let mut count = 0usize;
    for d in deltas {
        if d.dim() != hub_model.dim() {
            return Err(LearningError::DimensionMismatch {
                expected: hub_model.dim(),
                found: d.dim(),
            });
        }
        sum.axpy(1.0, d);
        count += 1;
    }
    let mut out = hub_model.clone();
    if count == 0 {
        return Ok(out);
    }
    let scale = match mode {
        Aggregation::Sum => 1.0,
        Aggregation::Mean => 1.0 / count as f64,
    };
    out.axpy(-scale, &sum);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub loss: f64,
}

pub fn evaluate(model: &ModelParams, test: &Dataset, task: &dyn Task) -> Evaluation {
    let all: Vec<usize> = (0..test.len()).collect();
    Evaluation {
        accuracy: task.accuracy(model, test, &all),
        loss: task.loss(model, test, &all),
    }
}

/// The federated objective: unweighted mean of the clients' local losses.
pub fn global_objective(model: &ModelParams, data: &Dataset, shards: &[Vec<usize>], task: &dyn Task) -> f64 {
    shards.iter().map(|s| task.loss(model, data, s)).sum::<f64>() / shards.len() as f64
}

/// Synthetic softmax-regression workload: the task, its training pool and a
/// held-out test set.
pub struct SyntheticTask {
    pub task: SoftmaxRegression,
    pub data: SyntheticData,
}

pub fn make_synthetic_task<R: Rng + ?Sized>(spec: &ClusterSpec, rng: &mut R) -> SyntheticTask {
    SyntheticTask {
        task: SoftmaxRegression::new(spec.n_classes, spec.n_features),
        data: generate_clusters(spec, rng),
    }
}
