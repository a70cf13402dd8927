//! Training loop and evaluation.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::checkpoint;
use super::dataset::{Dataset, Sample};
use super::optim::Adam;
use crate::config::{Config, TrainConfig};
use crate::error::{Error, Result};
use crate::model::Etris;
use crate::ndgrad::{Graph, ParamId};
use crate::objective::{finalize_mask, MetricAccumulator, MetricReport, DEFAULT_THRESHOLD};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub oiou: f64,
    pub lr: f64,
    pub bridger_lr: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub log: Vec<EpochLog>,
    pub best_oiou: f64,
    pub final_checkpoint: Option<PathBuf>,
    pub best_checkpoint: Option<PathBuf>,
}

/// Learning rates in effect during `epoch` (0-based).
pub fn learning_rates(cfg: &TrainConfig, epoch: usize) -> (f64, f64) {
    let f = if epoch >= cfg.decay_epoch { 0.1 } else { 1.0 };
    (cfg.lr * f, cfg.bridger_lr * f)
}

/// Loss and parameter gradients for one sample.
pub fn sample_gradients(model: &Etris, s: &Sample) -> Result<(f64, Vec<(ParamId, Vec<f64>)>)> {
    let mut g = Graph::new();
    let (loss, _) = model.loss_with(&mut g, &model.store, &s.image, &s.tokens, &s.mask)?;
    let value = g.value(loss)[0];
    if model.store.trainable_ids().is_empty() {
        return Ok((value, Vec::new()));
    }
    Ok((value, g.backward(loss)?.into_params()))
}

/// One optimizer step on `batch`; returns the mean loss. Per-sample
/// gradients are computed in parallel and summed in batch order.
pub fn train_step(model: &mut Etris, opt: &mut Adam, batch: &[&Sample], lr: (f64, f64)) -> Result<f64> {
    let results: Vec<Result<(f64, Vec<(ParamId, Vec<f64>)>)>> =
        batch.par_iter().map(|s| sample_gradients(model, s)).collect();
    let n = batch.len() as f64;
    let mut total = 0.0;
    let mut sum: BTreeMap<ParamId, Vec<f64>> = BTreeMap::new();
    for r in results {
        let (loss, grads) = r?;
        total += loss;
        for (id, g) in grads {
            match sum.get_mut(&id) {
                Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
                None => {
                    sum.insert(id, g);
                }
            }
        }
    }
    let mut sum: Vec<(ParamId, Vec<f64>)> = sum.into_iter().collect();
    for (_, g) in sum.iter_mut() {
        g.iter_mut().for_each(|x| *x /= n);
    }
    if !sum.is_empty() {
        opt.step(&mut model.store, &sum, |name| if name.starts_with("bridger.") { lr.1 } else { lr.0 })?;
    }
    Ok(total / n)
}

/// Binary masks at full resolution for every sample, in order.
pub fn predict_masks(model: &Etris, data: &Dataset) -> Result<Vec<Vec<bool>>> {
    let h = model.image_size();
    if data.manifest.image_size != h {
        return Err(Error::input(format!(
            "dataset images are {0}×{0} but the model expects {h}×{h}",
            data.manifest.image_size
        )));
    }
    let q = model.logit_size();
    data.samples
        .par_iter()
        .map(|s| Ok(finalize_mask(&model.predict(&s.image, &s.tokens)?, q, q, h, h, DEFAULT_THRESHOLD)))
        .collect()
}

pub fn evaluate(model: &Etris, data: &Dataset) -> Result<MetricReport> {
    let preds = predict_masks(model, data)?;
    let mut acc = MetricAccumulator::default();
    for (p, s) in preds.iter().zip(&data.samples) {
        acc.add(p, &s.mask)?;
    }
    acc.report()
}

/// Trains `model` on `train`, scoring each epoch on `eval` (or on `train`
/// when no held-out set is given). With `out`, writes `train_log.jsonl`,
/// `final.ckpt` and `best.ckpt` there.
pub fn train(
    model: &mut Etris,
    config: &Config,
    train: &Dataset,
    eval: Option<&Dataset>,
    out: Option<&Path>,
) -> Result<TrainOutcome> {
    let cfg = &config.train;
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::input("training set is empty"));
    }
    if train.manifest.image_size != model.image_size() {
        return Err(Error::input(format!(
            "dataset images are {} pixels but the model expects {}",
            train.manifest.image_size,
            model.image_size()
        )));
    }
    let eval = eval.unwrap_or(train);
    let mut log_file = match out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            Some(std::fs::File::create(dir.join("train_log.jsonl"))?)
        }
        None => None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(model.config.seed);
    rng.set_stream(9);
    let mut opt = Adam::default();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut outcome = TrainOutcome { log: Vec::new(), best_oiou: f64::NEG_INFINITY, final_checkpoint: None, best_checkpoint: None };
    let mut batch_index = 0usize;
    for epoch in 0..cfg.epochs {
        let lr = learning_rates(cfg, epoch);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &train.samples[i]).collect();
            let loss = train_step(model, &mut opt, &batch, lr).map_err(|e| match e {
                Error::Numerical(m) => Error::Numerical(format!("batch {batch_index}: {m}")),
                other => other,
            })?;
            if !loss.is_finite() {
                return Err(Error::numerical(format!("batch {batch_index}: non-finite loss")));
            }
            total += loss * chunk.len() as f64;
            batch_index += 1;
        }
        let report = evaluate(model, eval)?;
        let entry = EpochLog { epoch: epoch + 1, loss: total / train.len() as f64, oiou: report.oiou, lr: lr.0, bridger_lr: lr.1 };
        if let Some(f) = log_file.as_mut() {
            writeln!(f, "{}", serde_json::to_string(&entry)?)?;
        }
        if report.oiou > outcome.best_oiou {
            outcome.best_oiou = report.oiou;
            if let Some(dir) = out {
                let p = dir.join("best.ckpt");
                checkpoint::save(&p, model, config)?;
                outcome.best_checkpoint = Some(p);
            }
        }
        outcome.log.push(entry);
    }
    if let Some(dir) = out {
        let p = dir.join("final.ckpt");
        checkpoint::save(&p, model, config)?;
        outcome.final_checkpoint = Some(p);
    }
    Ok(outcome)
}
