use std::collections::HashMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::data::{build_vocab, prepare_all, Dataset, Prepared};
use super::eval::{evaluate, ModelPredictor};
use super::model::Model;
use super::{HarnessError, Result};
use crate::layers::Fwd;
use crate::numerics::{adam_step_with, AdamConfig, AdamState, Tape, Tensor};
use crate::schema::SchemaGraph;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Epochs,
    TargetReached,
    TimeLimit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub exact_match: Option<f64>,
    pub elapsed_secs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean batch loss at every optimizer step.
    pub losses: Vec<f64>,
    pub epochs: Vec<EpochRecord>,
    /// Mean loss over the training set before the first update.
    pub initial_loss: f64,
    pub best_exact_match: Option<f64>,
    pub best_epoch: Option<usize>,
    pub stop: StopReason,
    /// Training examples dropped because their query is outside the grammar.
    pub skipped: usize,
    pub elapsed_secs: f64,
}

impl TrainReport {
    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.mean_loss)
    }
}

/// Builds the vocabulary and model from `data` and trains it.
pub fn train(config: &RunConfig, data: &Dataset) -> Result<(Model, TrainReport)> {
    let vocab = build_vocab(data, config.hash_buckets);
    let mut model = Model::new(config, vocab);
    let train_set = prepare_all(&data.train, data, &model.vocab)?;
    let eval_set = if config.eval_on_train {
        train_set.clone()
    } else {
        prepare_all(&data.dev, data, &model.vocab)?
    };
    let report = train_model(&mut model, &train_set, &eval_set, &data.schemas)?;
    Ok((model, report))
}

fn step_seed(seed: u64, epoch: usize, step: usize, idx: usize) -> u64 {
    let mut h = seed ^ 0x9e37_79b9_7f4a_7c15;
    for x in [epoch as u64, step as u64, idx as u64] {
        h = (h ^ x).wrapping_mul(0x0100_0000_01b3).rotate_left(17);
    }
    h
}

/// Loss and gradients of one example.
fn example_grads(model: &Model, ex: &Prepared, graph: &SchemaGraph, seed: u64) -> Result<(f64, Vec<(usize, Tensor)>)> {
    let tape = Tape::with_seed(seed);
    let fwd = Fwd::new(&tape, &model.store, true);
    let loss = model.loss(&fwd, ex, graph)?;
    let value = loss.total.item();
    let grads = tape.backward(loss.total);
    Ok((value, grads.params().map(|(id, g)| (id.index(), g.clone())).collect()))
}

fn mean_loss(model: &Model, examples: &[&Prepared], schemas: &HashMap<String, SchemaGraph>) -> Result<f64> {
    let losses = examples
        .par_iter()
        .map(|ex| {
            let tape = Tape::new();
            let fwd = Fwd::new(&tape, &model.store, false);
            let graph = &schemas[&ex.example.db_id];
            Ok(model.loss(&fwd, ex, graph)?.total.item())
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Mini-batch Adam on the examples with gold actions. Per-example gradients
/// are summed in batch order, so results do not depend on thread count. The
/// model ends with the parameters of the best-scoring epoch when evaluation
/// runs, otherwise with the last ones.
pub fn train_model(
    model: &mut Model,
    train_set: &[Prepared],
    eval_set: &[Prepared],
    schemas: &HashMap<String, SchemaGraph>,
) -> Result<TrainReport> {
    let config = model.config.clone();
    let usable: Vec<&Prepared> = train_set.iter().filter(|e| e.gold.is_some()).collect();
    if usable.is_empty() {
        return Err(HarnessError::EmptyCorpus("train on"));
    }
    for ex in &usable {
        if !schemas.contains_key(&ex.example.db_id) {
            return Err(HarnessError::UnknownDatabase(ex.example.db_id.clone()));
        }
    }
    let start = Instant::now();
    let adam = AdamConfig {
        lr: config.lr,
        ..AdamConfig::default()
    };
    let mut state = AdamState::new();
    let initial_loss = mean_loss(model, &usable, schemas)?;
    let mut losses = Vec::new();
    let mut epochs = Vec::new();
    let mut best: Option<(f64, usize, crate::numerics::ParamStore)> = None;
    let mut stop = StopReason::Epochs;
    let out_of_time = |start: &Instant| config.time_limit_secs.is_some_and(|t| start.elapsed().as_secs_f64() >= t);

    'epochs: for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..usable.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(step_seed(config.seed, epoch, usize::MAX, 0)));
        let mut epoch_loss = 0.0;
        for (step, batch) in order.chunks(config.batch_size).enumerate() {
            let results = batch
                .par_iter()
                .enumerate()
                .map(|(k, &i)| {
                    let ex = usable[i];
                    example_grads(model, ex, &schemas[&ex.example.db_id], step_seed(config.seed, epoch, step, k))
                })
                .collect::<Result<Vec<_>>>()?;
            let scale = 1.0 / batch.len() as f64;
            let mut sum: Vec<Option<Tensor>> = vec![None; model.store.len()];
            let mut batch_loss = 0.0;
            for (loss, grads) in results {
                batch_loss += loss;
                for (idx, g) in grads {
                    match &mut sum[idx] {
                        Some(acc) => acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, b)| *a += b),
                        slot => *slot = Some(g),
                    }
                }
            }
            let pairs: Vec<_> = model
                .store
                .ids()
                .zip(sum)
                .filter_map(|(id, g)| g.map(|g| (id, g.map(|x| x * scale))))
                .collect();
            adam_step_with(&mut model.store, &pairs, &mut state, &adam)?;
            losses.push(batch_loss * scale);
            epoch_loss += batch_loss;
            if out_of_time(&start) {
                stop = StopReason::TimeLimit;
            }
            if stop == StopReason::TimeLimit {
                break;
            }
        }

        let exact_match = if eval_set.is_empty() {
            None
        } else {
            Some(evaluate(eval_set, schemas, &ModelPredictor(model), config.value_sensitive)?.exact_match)
        };
        epochs.push(EpochRecord {
            epoch,
            mean_loss: epoch_loss / usable.len() as f64,
            exact_match,
            elapsed_secs: start.elapsed().as_secs_f64(),
        });
        if let Some(em) = exact_match {
            if best.as_ref().is_none_or(|b| em > b.0) {
                best = Some((em, epoch, model.store.clone()));
            }
            if config.target_train_exact_match.is_some_and(|t| em >= t) {
                stop = StopReason::TargetReached;
                break 'epochs;
            }
        }
        if stop == StopReason::TimeLimit || out_of_time(&start) {
            stop = StopReason::TimeLimit;
            break;
        }
    }

    let (best_exact_match, best_epoch) = match best {
        Some((em, epoch, store)) => {
            model.store = store;
            (Some(em), Some(epoch))
        }
        None => (None, None),
    };
    Ok(TrainReport {
        losses,
        epochs,
        initial_loss,
        best_exact_match,
        best_epoch,
        stop,
        skipped: train_set.len() - usable.len(),
        elapsed_secs: start.elapsed().as_secs_f64(),
    })
}
