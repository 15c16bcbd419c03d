use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{total_loss, BatchSimilarities, NegativePolicy, TrainingConfig};
use crate::autograd::Tape;
use crate::error::{Error, Result};
use crate::eval::{evaluate, MetricsReport};
use crate::io::Dataset;
use crate::model::{PipelineVariant, UemModel};
use crate::params::ModelParams;
use crate::tensor::Tensor;

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &ModelParams) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Applies one update; `grads` is in parameter order.
    pub fn step(&mut self, params: &mut ModelParams, grads: &[Tensor], lr: f64) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (i, id) in params.ids().enumerate() {
            let g = grads[i].data();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let w = params.get_mut(id).data_mut();
            for j in 0..w.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                w[j] -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + self.eps);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    pub steps: usize,
    pub mean_loss: f64,
    pub learning_rate: f64,
    pub hard_negatives: bool,
    pub validation: Option<MetricsReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochLog>,
    pub steps: usize,
}

/// Splits shuffled (text, video) pairs into batches. A trailing batch whose
/// pairs all share one video has no negatives and is folded into the
/// previous batch.
fn batches(order: &[usize], dataset: &Dataset, size: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = order.chunks(size).map(<[usize]>::to_vec).collect();
    if out.len() > 1 {
        let last = out.last().expect("non-empty");
        let first_video = &dataset.texts[last[0]].video_id;
        if last.iter().all(|&t| &dataset.texts[t].video_id == first_video) {
            let tail = out.pop().expect("non-empty");
            out.last_mut().expect("non-empty").extend(tail);
        }
    }
    out
}

/// Trains `model` in place.
///
/// Each epoch shuffles every (text, video) pair and walks it in batches.
/// Negatives are random for the first `hard_negative_start_epoch` epochs
/// and hardest afterwards. With a validation set, the learning rate is
/// multiplied by `lr_decay_factor` after `lr_decay_patience` epochs without
/// a SumR improvement. `on_epoch` sees every epoch's log as it completes.
pub fn train(
    model: &mut UemModel,
    dataset: &Dataset,
    validation: Option<&Dataset>,
    cfg: &TrainingConfig,
    seed: u64,
    mut on_epoch: impl FnMut(&EpochLog) -> Result<()>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if dataset.texts.is_empty() {
        return Err(Error::Eval("training set has no texts".into()));
    }
    let video_index: std::collections::HashMap<&str, usize> = dataset
        .videos
        .iter()
        .enumerate()
        .map(|(i, v)| (v.video_id.as_str(), i))
        .collect();
    if video_index.len() < 2 {
        return Err(Error::NoNegatives { pair: 0 });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut adam = Adam::new(&model.params);
    let mut lr = cfg.learning_rate;
    let mut best_sumr = f64::NEG_INFINITY;
    let mut stale = 0;
    let mut step = 0;
    let mut logs = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..dataset.texts.len()).collect();

    for epoch in 1..=cfg.epochs {
        let hard = epoch > cfg.hard_negative_start_epoch;
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut epoch_steps = 0;
        for batch in batches(&order, dataset, cfg.batch_size) {
            step += 1;
            let diverged = |e: Error| match e {
                Error::NonFinite { .. } => Error::TrainingDiverged { epoch, step },
                other => other,
            };
            let mut rows: Vec<usize> = Vec::new();
            let mut positives = Vec::with_capacity(batch.len());
            for &t in &batch {
                let v = video_index[dataset.texts[t].video_id.as_str()];
                let row = rows.iter().position(|&r| r == v).unwrap_or_else(|| {
                    rows.push(v);
                    rows.len() - 1
                });
                positives.push(row);
            }
            let videos: Vec<&Tensor> = rows.iter().map(|&v| &dataset.videos[v].features).collect();
            let texts: Vec<&Tensor> = batch.iter().map(|&t| &dataset.texts[t].embeddings).collect();

            let mut tape = Tape::new();
            let bound = model.params.bind(&mut tape, true);
            let scores = model.similarity_matrix(&mut tape, &bound, &videos, &texts).map_err(diverged)?;
            let sims = BatchSimilarities::new(&tape, scores, positives)?;
            let policy = if hard {
                NegativePolicy::Hardest
            } else {
                NegativePolicy::Random(&mut rng)
            };
            let loss = total_loss(&mut tape, &sims, cfg, policy).map_err(diverged)?;
            let value = tape.value(loss.total).item();
            if !value.is_finite() {
                return Err(Error::TrainingDiverged { epoch, step });
            }
            let grads = tape.backward(loss.total).map_err(diverged)?;
            let grads: Vec<Tensor> = bound
                .vars()
                .iter()
                .map(|&v| grads.get(v).expect("parameters require grad"))
                .collect();
            if grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::TrainingDiverged { epoch, step });
            }
            adam.step(&mut model.params, &grads, lr);
            loss_sum += value;
            epoch_steps += 1;
        }

        let validation_report = match validation {
            Some(val) => Some(evaluate(model, val, &PipelineVariant::full(&model.config))?.report),
            None => None,
        };
        let log = EpochLog {
            epoch,
            steps: epoch_steps,
            mean_loss: loss_sum / epoch_steps as f64,
            learning_rate: lr,
            hard_negatives: hard,
            validation: validation_report,
        };
        on_epoch(&log)?;
        logs.push(log);

        if let Some(report) = validation_report {
            if report.sumr > best_sumr {
                best_sumr = report.sumr;
                stale = 0;
            } else {
                stale += 1;
                if stale >= cfg.lr_decay_patience {
                    lr *= cfg.lr_decay_factor;
                    stale = 0;
                }
            }
        }
    }
    Ok(TrainReport { epochs: logs, steps: step })
}
