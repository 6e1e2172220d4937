//! BCE training with deterministic batching and dev-tuned thresholding.

mod adam;

pub use adam::{adam_step, AdamState};

use serde::{Deserialize, Serialize};

use crate::corpus::{IgnKeys, PreparedCorpus};
use crate::eval::{evaluate_f1, score_corpus, select_threshold, EvalReport, PredictionRecord};
use crate::exec::{map_ordered, Execution};
use crate::layers::Mode;
use crate::model::HinModel;
use crate::rng::{substream, Stream};
use crate::tensor::ParamSet;
use crate::{HinError, Result};

/// Optimization hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Probability of keeping each all-negative pair per epoch; 1 keeps
    /// the full enumeration.
    pub negative_keep: f64,
    /// Global gradient-norm clip, off by default.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 12,
            epochs: 10,
            seed: 7,
            negative_keep: 1.0,
            clip_norm: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |msg: String| Err(HinError::invalid("train config", msg));
        if !(self.learning_rate >= 0.0) {
            return err("learning rate must be nonnegative".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return err(format!("betas ({}, {}) outside [0, 1)", self.beta1, self.beta2));
        }
        if self.batch_size == 0 {
            return err("batch size must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.negative_keep) || self.negative_keep == 0.0 {
            return err(format!("negative_keep {} outside (0, 1]", self.negative_keep));
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub ign_f1: f64,
    /// Dev-tuned threshold; `None` encodes +∞.
    pub delta: Option<f64>,
}

impl EpochLog {
    pub fn render(&self) -> String {
        let delta = match self.delta {
            Some(d) => format!("{d:.9}"),
            None => "inf".into(),
        };
        format!(
            "epoch={} loss={:.6} P={:.6} R={:.6} F1={:.6} IgnF1={:.6} delta={}",
            self.epoch, self.mean_loss, self.precision, self.recall, self.f1, self.ign_f1, delta
        )
    }
}

/// Result of a training run: the best-dev-F1 checkpoint plus the log.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ParamSet,
    pub best_epoch: Option<usize>,
    /// Threshold tuned at the best epoch (+∞ if nothing was predicted).
    pub delta: f64,
    pub logs: Vec<EpochLog>,
    /// Dev records scored at the best epoch.
    pub dev_records: Vec<PredictionRecord>,
    pub best_report: Option<EvalReport>,
}

/// Gradients for one batch: pairs grouped per document, one tape per
/// document, losses averaged over the batch. Work fans out over the
/// executor and merges in group order, so the result is bit-identical for
/// both executors. Returns the summed per-pair loss and per-parameter
/// gradient contributions.
pub fn batch_gradients(
    model: &HinModel,
    corpus: &PreparedCorpus,
    batch: &[(usize, usize)],
    epoch: usize,
    batch_idx: usize,
    seed: u64,
    exec: Execution,
) -> Result<(f64, Vec<Option<Vec<f64>>>)> {
    // Group pairs by document, keeping first-occurrence order.
    let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
    for &(di, pi) in batch {
        match groups.iter_mut().find(|(d, _)| *d == di) {
            Some((_, pairs)) => pairs.push(pi),
            None => groups.push((di, vec![pi])),
        }
    }
    let batch_len = batch.len();
    let indexed: Vec<(usize, (usize, Vec<usize>))> = groups.into_iter().enumerate().collect();

    let results = map_ordered(exec, &indexed, |(slot, (di, pair_ids))| {
        let doc = &corpus.docs[*di];
        let salt = (batch_idx as u64) * 100_003 + *slot as u64;
        let mut rng = substream(seed, Stream::Dropout, epoch as u64, salt);
        let mut df = model.begin_doc(doc, Mode::Train, &mut rng)?;
        let mut losses = Vec::with_capacity(pair_ids.len());
        for &pi in pair_ids {
            let pair = &doc.pairs[pi];
            let pf = df.forward_pair(pair, &mut rng)?;
            losses.push(df.pair_loss(&pf, &pair.labels)?);
        }
        let sum = df.sum_losses(&losses)?;
        let loss_sum = df.loss_value(sum);
        let scaled = df.scale(sum, 1.0 / batch_len as f64)?;
        df.backward(scaled)?;
        Ok((loss_sum, df.collect_grads(&model.params)))
    })?;

    let mut total_loss = 0.0;
    let mut merged: Vec<Option<Vec<f64>>> = vec![None; model.params.len()];
    for (loss_sum, grads) in results {
        total_loss += loss_sum;
        for (slot, g) in merged.iter_mut().zip(grads) {
            match (slot.as_mut(), g) {
                (Some(acc), Some(g)) => {
                    for (a, v) in acc.iter_mut().zip(&g) {
                        *a += v;
                    }
                }
                (None, Some(g)) => *slot = Some(g),
                _ => {}
            }
        }
    }
    Ok((total_loss, merged))
}

/// The epoch-shuffled, optionally negative-subsampled example order.
fn epoch_order(corpus: &PreparedCorpus, cfg: &TrainConfig, epoch: usize) -> Vec<(usize, usize)> {
    use rand::Rng;
    let mut order: Vec<(usize, usize)> = if cfg.negative_keep < 1.0 {
        let mut rng = substream(cfg.seed, Stream::NegSample, epoch as u64, 0);
        corpus
            .pair_index
            .iter()
            .copied()
            .filter(|&(di, pi)| {
                corpus.docs[di].pairs[pi].positive || rng.gen::<f64>() < cfg.negative_keep
            })
            .collect()
    } else {
        corpus.pair_index.clone()
    };
    let mut rng = substream(cfg.seed, Stream::Shuffle, epoch as u64, 0);
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    order
}

/// Train with per-epoch shuffling, batched Adam updates and dev-tuned
/// threshold selection; keeps the checkpoint with the best dev F1. With
/// zero epochs the initial parameters come back with an empty log.
pub fn train_loop(
    model: &mut HinModel,
    train: &PreparedCorpus,
    dev: &PreparedCorpus,
    ign: &IgnKeys,
    cfg: &TrainConfig,
    exec: Execution,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.pair_index.is_empty() {
        return Err(HinError::EmptyInput { op: "train_loop" });
    }
    let mut state = AdamState::new(&model.params);
    let mut outcome = TrainOutcome {
        params: model.params.clone(),
        best_epoch: None,
        delta: f64::INFINITY,
        logs: Vec::new(),
        dev_records: Vec::new(),
        best_report: None,
    };
    let mut best_f1 = f64::NEG_INFINITY;

    for epoch in 0..cfg.epochs {
        let order = epoch_order(train, cfg, epoch);
        let mut loss_sum = 0.0;
        let mut pair_count = 0usize;
        for (batch_idx, batch) in order.chunks(cfg.batch_size).enumerate() {
            let (batch_loss, grads) =
                batch_gradients(model, train, batch, epoch, batch_idx, cfg.seed, exec)?;
            if !batch_loss.is_finite() {
                let pairs = batch
                    .iter()
                    .map(|&(di, pi)| {
                        let d = &train.docs[di];
                        let p = &d.pairs[pi];
                        format!("{}:{}->{}", d.id, p.head, p.tail)
                    })
                    .collect();
                return Err(HinError::Divergence { batch: batch_idx, pairs });
            }
            model.params.accumulate(&grads);
            adam_step(&mut model.params, &mut state, cfg)?;
            model.params.zero_grads();
            loss_sum += batch_loss;
            pair_count += batch.len();
        }
        let mean_loss = loss_sum / pair_count as f64;

        let records = score_corpus(model, dev, exec)?;
        let choice = select_threshold(&records, &dev.gold);
        let report = evaluate_f1(&records, &dev.gold, choice.delta, ign, dev);
        outcome.logs.push(EpochLog {
            epoch,
            mean_loss,
            precision: report.precision,
            recall: report.recall,
            f1: report.f1,
            ign_f1: report.ign_f1,
            delta: report.delta,
        });
        if report.f1 > best_f1 {
            best_f1 = report.f1;
            outcome.params = model.params.clone();
            outcome.best_epoch = Some(epoch);
            outcome.delta = choice.delta;
            outcome.dev_records = records;
            outcome.best_report = Some(report);
        }
    }
    Ok(outcome)
}
