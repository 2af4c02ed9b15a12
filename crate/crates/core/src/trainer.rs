//! Training loop.
//!
//! A step draws one random stream per batch member from `(seed, step, k)`,
//! builds one tape per sample, and averages the per-sample gradients. The
//! epoch order comes from `(seed, epoch)`. The global step counter therefore
//! fixes every random choice, and a run resumed from a checkpoint replays
//! the uninterrupted run exactly.

use log::{debug, info};
use rand::seq::SliceRandom;

use crate::checkpoint::Checkpoint;
use crate::config::Config;
use crate::data::batch::{pad_batch, truncate};
use crate::data::AnnotatedSample;
use crate::error::{Error, Result};
use crate::loss::{compute_loss, LossBreakdown};
use crate::metrics::{evaluate, MetricsReport};
use crate::model::{read_predictions, MhDetr, PredictionSet};
use crate::nn::Ctx;
use crate::optim::{clip_grad_norm, AdamW};
use crate::rng::stream;

const STREAM_STEP: u64 = 1;
const STREAM_EPOCH: u64 = 2;
const STREAM_RANK: u64 = 3;
const STREAM_SPLIT: u64 = 4;

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub step: u64,
    pub train_loss: f64,
    pub val: Option<MetricsReport>,
}

#[derive(Clone, Debug)]
pub struct FitReport {
    /// Mean batch loss of every step taken in this call.
    pub losses: Vec<LossBreakdown>,
    pub epochs: Vec<EpochLog>,
    pub best_epoch: Option<usize>,
    pub best_map_avg: f64,
    /// State at the best validation epoch (or the final state without a validation set).
    pub best: Option<Checkpoint>,
}

pub struct Trainer {
    pub cfg: Config,
    pub model: MhDetr,
    pub opt: AdamW,
    pub step: u64,
}

/// Deterministic `(train, val)` index split.
pub fn split_indices(n: usize, val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream(seed, &[STREAM_SPLIT]));
    let n_val = ((n as f64) * val_fraction).round() as usize;
    let n_val = n_val.min(n.saturating_sub(1));
    let val = idx.split_off(n - n_val);
    (idx, val)
}

pub fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream(seed, &[STREAM_EPOCH, epoch as u64]));
    idx
}

/// Eval-mode predictions with text truncated to the model limit.
pub fn predict_all(model: &MhDetr, samples: &[AnnotatedSample]) -> Result<Vec<PredictionSet>> {
    samples
        .iter()
        .map(|s| {
            let text = truncate(&s.text, model.config.max_text_len)?;
            model.predict(&s.video, &text)
        })
        .collect()
}

pub fn evaluate_model(model: &MhDetr, samples: &[AnnotatedSample]) -> Result<MetricsReport> {
    let preds = predict_all(model, samples)?;
    let targets: Vec<_> = samples.iter().map(AnnotatedSample::eval_target).collect();
    Ok(evaluate(&preds, &targets))
}

impl Trainer {
    pub fn new(cfg: Config) -> Result<Self> {
        cfg.validate()?;
        if !(cfg.loss.use_bce || cfg.loss.use_rank || cfg.loss.any_moment_loss()) {
            return Err(Error::config("every loss term is disabled"));
        }
        let model = MhDetr::new(&cfg.model)?;
        let opt = AdamW::new(&model.params, &cfg.train);
        Ok(Trainer { cfg, model, opt, step: 0 })
    }

    /// Continues from `ck`; `cfg` must describe the same architecture.
    pub fn resume(cfg: Config, ck: &Checkpoint) -> Result<Self> {
        if ck.arch_hash() != cfg.model.arch_hash() {
            return Err(Error::config("checkpoint was written for a different architecture"));
        }
        let mut t = Trainer::new(cfg)?;
        ck.restore_params(&mut t.model)?;
        ck.restore_optimizer(&mut t.opt)?;
        t.step = ck.step;
        Ok(t)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::capture(&self.cfg, &self.model, &self.opt, self.step)
    }

    pub fn lr_at(&self, step: u64) -> f64 {
        let w = self.cfg.train.warmup_steps;
        if w == 0 {
            self.cfg.train.lr
        } else {
            self.cfg.train.lr * ((step + 1) as f64 / w as f64).min(1.0)
        }
    }

    /// Mean loss and mean gradient (indexed by parameter id) over `batch`,
    /// using the random streams of `step`.
    pub fn batch_gradients(&self, batch: &[&AnnotatedSample], step: u64) -> Result<(LossBreakdown, Vec<Vec<f64>>)> {
        if batch.is_empty() {
            return Err(Error::Contract("empty batch".into()));
        }
        let padded = pad_batch(batch, self.cfg.model.max_text_len)?;
        let mut grads: Vec<Vec<f64>> = self.model.params.iter().map(|(_, _, t)| vec![0.0; t.len()]).collect();
        let mut mean = LossBreakdown::default();
        let k = 1.0 / batch.len() as f64;
        let seed = self.cfg.train.seed;
        for (i, (s, p)) in batch.iter().zip(&padded).enumerate() {
            let mut ctx = Ctx::train(&self.model.params, stream(seed, &[STREAM_STEP, step, i as u64]));
            let out = self.model.forward(&mut ctx, &p.video, &p.text)?;
            let mut rank_rng = stream(seed, &[STREAM_RANK, step, i as u64]);
            let (loss, bd, _) = compute_loss(&mut ctx, &out, &s.gt, &self.cfg.loss, &mut rank_rng)
                .map_err(|e| match e {
                    Error::NonFinite(m) => Error::NonFinite(format!("step {step}, qid {}: {m}", s.qid())),
                    e => e,
                })?;
            ctx.backward(loss)?;
            for (id, g) in ctx.param_grads() {
                grads[id.index()].iter_mut().zip(&g).for_each(|(a, b)| *a += k * b);
            }
            mean.add_scaled(&bd, k);
        }
        Ok((mean, grads))
    }

    pub fn train_step(&mut self, batch: &[&AnnotatedSample]) -> Result<LossBreakdown> {
        let (bd, mut grads) = self.batch_gradients(batch, self.step)?;
        if let Some(max) = self.cfg.train.clip_grad_norm {
            clip_grad_norm(&mut grads, max);
        }
        if grads.iter().flatten().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("non-finite gradient at step {}; loss {bd:?}", self.step)));
        }
        let lr = self.lr_at(self.step);
        self.opt.step(&mut self.model.params, &grads, lr)?;
        self.step += 1;
        Ok(bd)
    }

    fn batches_per_epoch(&self, n: usize) -> u64 {
        n.div_ceil(self.cfg.train.batch_size) as u64
    }

    fn done(&self, n: usize) -> bool {
        let total = self.batches_per_epoch(n).saturating_mul(self.cfg.train.epochs as u64);
        let cap = self.cfg.train.max_steps.unwrap_or(u64::MAX);
        self.step >= total.min(cap)
    }

    /// Trains until the epoch budget or `max_steps` is exhausted, evaluating
    /// on `val` after every completed epoch.
    pub fn fit(&mut self, train: &[AnnotatedSample], val: &[AnnotatedSample], on_epoch: &mut dyn FnMut(&EpochLog)) -> Result<FitReport> {
        if train.is_empty() {
            return Err(Error::data("empty training set"));
        }
        let bpe = self.batches_per_epoch(train.len());
        let bs = self.cfg.train.batch_size;
        let mut report = FitReport {
            losses: Vec::new(),
            epochs: Vec::new(),
            best_epoch: None,
            best_map_avg: f64::NEG_INFINITY,
            best: None,
        };
        while !self.done(train.len()) {
            let epoch = (self.step / bpe) as usize;
            let order = epoch_order(self.cfg.train.seed, epoch, train.len());
            let mut epoch_loss = 0.0;
            let mut epoch_steps = 0usize;
            let mut finished = true;
            for b in (self.step % bpe) as usize..bpe as usize {
                if self.done(train.len()) {
                    finished = false;
                    break;
                }
                let batch: Vec<&AnnotatedSample> = order[b * bs..((b + 1) * bs).min(train.len())].iter().map(|&i| &train[i]).collect();
                let bd = self.train_step(&batch)?;
                debug!("step {} loss {:.6}", self.step, bd.total);
                epoch_loss += bd.total;
                epoch_steps += 1;
                report.losses.push(bd);
            }
            if !finished {
                break;
            }
            let val_report = if val.is_empty() { None } else { Some(evaluate_model(&self.model, val)?) };
            let log = EpochLog {
                epoch,
                step: self.step,
                train_loss: epoch_loss / epoch_steps.max(1) as f64,
                val: val_report,
            };
            info!(
                "epoch {epoch} step {} loss {:.5}{}",
                self.step,
                log.train_loss,
                log.val.as_ref().map(|v| format!(" val mAP_avg {:.4}", v.map_avg)).unwrap_or_default()
            );
            if let Some(v) = &log.val {
                if v.map_avg > report.best_map_avg {
                    report.best_map_avg = v.map_avg;
                    report.best_epoch = Some(epoch);
                    report.best = Some(self.checkpoint());
                }
            }
            on_epoch(&log);
            report.epochs.push(log);
        }
        if report.best.is_none() {
            report.best = Some(self.checkpoint());
        }
        Ok(report)
    }
}

/// Per-sample eval-mode outputs, for inspecting padding behaviour.
pub fn padded_predictions(model: &MhDetr, batch: &[&AnnotatedSample]) -> Result<Vec<PredictionSet>> {
    let padded = pad_batch(batch, model.config.max_text_len)?;
    padded
        .iter()
        .map(|p| {
            let mut ctx = Ctx::eval(&model.params);
            let out = model.forward(&mut ctx, &p.video, &p.text)?;
            Ok(read_predictions(&ctx, &out))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic::{generate, SyntheticSpec};

    fn tiny_cfg() -> Config {
        let mut c = Config::default();
        c.model.video_dim = 8;
        c.model.text_dim = 8;
        c.model.hidden = 8;
        c.model.heads = 2;
        c.model.dec_layers = 1;
        c.model.num_queries = 3;
        c.model.max_video_len = 12;
        c.train.batch_size = 2;
        c.train.lr = 1e-3;
        c
    }

    fn tiny_data(n: usize) -> Vec<AnnotatedSample> {
        generate(&SyntheticSpec {
            n_samples: n,
            video_len: 10,
            text_len: 3,
            video_dim: 8,
            text_dim: 8,
            code_dim: 4,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn split_is_disjoint_and_complete() {
        let (a, b) = split_indices(20, 0.15, 1);
        assert_eq!(b.len(), 3);
        let mut all: Vec<usize> = a.iter().chain(&b).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..20).collect::<Vec<_>>());
    }

    #[test]
    fn same_seed_same_curve() {
        let data = tiny_data(4);
        let mut cfg = tiny_cfg();
        cfg.train.max_steps = Some(4);
        let run = || {
            let mut t = Trainer::new(cfg.clone()).unwrap();
            t.fit(&data, &[], &mut |_| {}).unwrap().losses.iter().map(|l| l.total).collect::<Vec<_>>()
        };
        let a = run();
        assert_eq!(a.len(), 4);
        assert_eq!(a, run());
    }

    #[test]
    fn zero_lr_step_keeps_weights() {
        let data = tiny_data(2);
        let mut cfg = tiny_cfg();
        cfg.train.lr = 1e-3;
        let mut t = Trainer::new(cfg).unwrap();
        t.cfg.train.lr = 0.0;
        let before = t.model.params.clone();
        t.train_step(&[&data[0], &data[1]]).unwrap();
        for ((_, _, a), (_, _, b)) in before.iter().zip(t.model.params.iter()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn weight_decay_does_not_touch_gradients() {
        let data = tiny_data(2);
        let mut cfg = tiny_cfg();
        cfg.train.weight_decay = 0.0;
        let a = Trainer::new(cfg.clone()).unwrap();
        cfg.train.weight_decay = 0.5;
        let b = Trainer::new(cfg).unwrap();
        let batch = [&data[0], &data[1]];
        let (_, ga) = a.batch_gradients(&batch, 0).unwrap();
        let (_, gb) = b.batch_gradients(&batch, 0).unwrap();
        assert_eq!(ga, gb);
    }
}
