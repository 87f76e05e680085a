//! Mini-batch Adam training with a best-validation snapshot.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{entropy_bound, GnnModel};
use crate::error::{Error, Result};
use crate::featurize::BipartiteGraph;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Rescale the batch gradient to at most this global norm.
    pub clip_norm: Option<f64>,
    pub edge_features: bool,
    pub hidden: usize,
    /// See [`super::Dims::aggregate_norm`].
    pub aggregate_norm: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.003,
            batch_size: 8,
            epochs: 100,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            clip_norm: None,
            edge_features: true,
            hidden: 64,
            aggregate_norm: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::invalid("learning rate must be finite and non-negative"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        if self.hidden == 0 {
            return Err(Error::invalid("hidden width must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-instance loss over the epoch's mini-batches.
    pub train_loss: f64,
    pub valid_loss: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub config: TrainConfig,
    pub best_epoch: usize,
    pub best_loss: f64,
    pub train_instances: usize,
    pub valid_instances: usize,
    /// Mean of `Σ_d H(p_d)` over the training targets.
    pub train_entropy_bound: f64,
}

pub struct TrainOutcome {
    pub model: GnnModel,
    pub history: Vec<EpochRecord>,
    pub meta: TrainMeta,
}

impl TrainOutcome {
    pub fn write_history_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["epoch", "train_loss", "valid_loss"]).map_err(csv_err)?;
        for r in &self.history {
            let valid = r.valid_loss.map(|v| v.to_string()).unwrap_or_default();
            w.write_record([r.epoch.to_string(), r.train_loss.to_string(), valid]).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Mean loss and mean gradient over a batch. Per-instance work runs in
/// parallel; the reduction order is fixed, so results are reproducible.
pub fn batch_gradient(model: &GnnModel, batch: &[(&BipartiteGraph, &[f64])]) -> Result<(f64, Vec<f64>)> {
    let parts: Vec<(f64, Vec<f64>)> =
        batch.par_iter().map(|(g, t)| model.loss_and_gradient(g, t)).collect::<Result<_>>()?;
    let scale = 1.0 / batch.len().max(1) as f64;
    let mut grad = vec![0.0; model.params.len()];
    let mut loss = 0.0;
    for (l, g) in parts {
        loss += l;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    grad.iter_mut().for_each(|v| *v *= scale);
    Ok((loss * scale, grad))
}

fn mean_loss(model: &GnnModel, data: &[(BipartiteGraph, Vec<f64>)]) -> Result<f64> {
    let losses: Vec<f64> = data.par_iter().map(|(g, t)| model.loss(g, t)).collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn step(&mut self, cfg: &TrainConfig, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * grad[i];
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
            params[i] -= cfg.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + cfg.adam_eps);
        }
    }
}

/// Trains from a fresh model. With an empty `valid` set the snapshot
/// follows the training loss instead.
pub fn train(
    train_set: &[(BipartiteGraph, Vec<f64>)],
    valid: &[(BipartiteGraph, Vec<f64>)],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    for (g, t) in train_set.iter().chain(valid) {
        if g.q != t.len() {
            return Err(Error::Dimension { expected: g.q, got: t.len() });
        }
    }
    let dims = super::Dims { hidden: cfg.hidden, aggregate_norm: cfg.aggregate_norm, ..super::Dims::default() };
    let mut model = GnnModel::new(dims, cfg.seed).with_edge_features(cfg.edge_features);
    let mut adam = Adam { m: vec![0.0; model.params.len()], v: vec![0.0; model.params.len()], t: 0 };
    // separate stream from the one used for initialization
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best = (0, f64::INFINITY, model.params.clone());

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<(&BipartiteGraph, &[f64])> =
                chunk.iter().map(|&i| (&train_set[i].0, train_set[i].1.as_slice())).collect();
            let (loss, mut grad) = batch_gradient(&model, &batch)?;
            total += loss * chunk.len() as f64;
            if let Some(max) = cfg.clip_norm {
                let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                if norm > max {
                    grad.iter_mut().for_each(|g| *g *= max / norm);
                }
            }
            adam.step(cfg, &mut model.params, &grad);
        }
        let train_loss = total / train_set.len() as f64;
        let valid_loss = if valid.is_empty() { None } else { Some(mean_loss(&model, valid)?) };
        let score = valid_loss.unwrap_or(train_loss);
        log::info!("epoch {epoch}: train {train_loss:.6} valid {valid_loss:?}");
        if score < best.1 {
            best = (epoch, score, model.params.clone());
        }
        history.push(EpochRecord { epoch, train_loss, valid_loss });
    }

    if cfg.epochs > 0 {
        model.params = best.2;
    }
    let bound = train_set.iter().map(|(_, t)| entropy_bound(t)).sum::<f64>() / train_set.len() as f64;
    let meta = TrainMeta {
        config: cfg.clone(),
        best_epoch: best.0,
        best_loss: best.1,
        train_instances: train_set.len(),
        valid_instances: valid.len(),
        train_entropy_bound: bound,
    };
    Ok(TrainOutcome { model, history, meta })
}
