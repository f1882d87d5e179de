//! Minibatch training on per-token normalized edit NLL.

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::checkpoint::{self, Manifest};
use super::graph::StepData;
use super::EditModel;
use crate::error::{Error, Result};
use crate::metrics::StepScore;
use crate::tensor::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Adam,
    Momentum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    /// Training units (chain windows) per update.
    pub batch_size: usize,
    pub lr: f64,
    pub warmup: usize,
    pub optimizer: Optimizer,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; 0 disables.
    pub grad_clip: f64,
    /// Maximum scored steps per unit. Earlier steps of the chain are replayed
    /// as unscored context so history crosses window boundaries.
    pub window: usize,
    pub seed: u64,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2000,
            batch_size: 16,
            lr: 1e-3,
            warmup: 100,
            optimizer: Optimizer::Adam,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            grad_clip: 1.0,
            window: 8,
            seed: 0,
            log_every: 100,
        }
    }
}

/// Where and how to write per-epoch checkpoints.
#[derive(Debug, Clone)]
pub struct CheckpointSink {
    pub dir: PathBuf,
    pub vocab_hash: Option<String>,
    pub run_config: serde_json::Value,
}

impl CheckpointSink {
    fn write(&self, model: &EditModel, name: &str, step: usize) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.dir)
            .map_err(|e| Error::io(format!("creating {}", self.dir.display()), e))?;
        let path = self.dir.join(name);
        let manifest = Manifest {
            config: model.config.clone(),
            vocab_hash: self.vocab_hash.clone(),
            step: step as u64,
            run_config: self.run_config.clone(),
        };
        checkpoint::save(&path, model, &manifest)?;
        Ok(path)
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainReport {
    /// Batch loss before each update.
    pub losses: Vec<f64>,
    pub epochs: usize,
    pub checkpoints: Vec<PathBuf>,
}

#[derive(Debug, Clone, Copy)]
struct Unit {
    chain: usize,
    context_from: usize,
    score_from: usize,
    end: usize,
}

fn units(chains: &[Vec<StepData>], window: usize, order_n: usize) -> Vec<Unit> {
    let window = window.max(1);
    let mut out = Vec::new();
    for (c, steps) in chains.iter().enumerate() {
        let mut start = 0;
        while start < steps.len() {
            let end = (start + window).min(steps.len());
            out.push(Unit {
                chain: c,
                context_from: start.saturating_sub(order_n.saturating_sub(1)),
                score_from: start,
                end,
            });
            start = end;
        }
    }
    out
}

struct OptState {
    m: Vec<Mat>,
    v: Vec<Mat>,
    t: usize,
}

pub struct Trainer<'m> {
    pub model: &'m mut EditModel,
    pub config: TrainConfig,
    pub sink: Option<CheckpointSink>,
}

impl<'m> Trainer<'m> {
    pub fn new(model: &'m mut EditModel, config: TrainConfig) -> Self {
        Trainer {
            model,
            config,
            sink: None,
        }
    }

    pub fn with_checkpoints(mut self, sink: CheckpointSink) -> Self {
        self.sink = Some(sink);
        self
    }

    /// Gradient of the mean per-step normalized loss over `batch`.
    fn batch_gradient(&self, chains: &[Vec<StepData>], batch: &[Unit]) -> Result<(f64, Vec<Mat>)> {
        let model = &*self.model;
        let results: Vec<Result<(f64, Vec<StepScore>, Vec<Option<Mat>>)>> = batch
            .par_iter()
            .map(|u| {
                let steps = &chains[u.chain][u.context_from..u.end];
                model.chain_gradients(steps, u.score_from - u.context_from)
            })
            .collect();
        let mut total_loss = 0.0;
        let mut n_steps = 0usize;
        let mut grads: Vec<Mat> = model.params.mats.iter().map(|m| Mat::zeros(m.rows, m.cols)).collect();
        for r in results {
            let (loss, scores, g) = r?;
            total_loss += loss;
            n_steps += scores.len();
            for (acc, g) in grads.iter_mut().zip(g) {
                if let Some(g) = g {
                    acc.add_assign(&g);
                }
            }
        }
        let inv = 1.0 / n_steps.max(1) as f64;
        grads.iter_mut().for_each(|g| g.scale(inv));
        Ok((total_loss * inv, grads))
    }

    fn update(&mut self, state: &mut OptState, grads: &mut [Mat]) {
        let c = &self.config;
        if c.grad_clip > 0.0 {
            let norm = grads
                .iter()
                .flat_map(|g| g.data.iter())
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt();
            if norm > c.grad_clip {
                let s = c.grad_clip / norm;
                grads.iter_mut().for_each(|g| g.scale(s));
            }
        }
        state.t += 1;
        let lr = if c.warmup > 0 && state.t <= c.warmup {
            c.lr * state.t as f64 / c.warmup as f64
        } else {
            c.lr
        };
        let t = state.t as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        for (i, g) in grads.iter().enumerate() {
            let p = &mut self.model.params.mats[i];
            let (m, v) = (&mut state.m[i], &mut state.v[i]);
            match c.optimizer {
                Optimizer::Adam => {
                    for j in 0..g.data.len() {
                        let gj = g.data[j];
                        m.data[j] = c.beta1 * m.data[j] + (1.0 - c.beta1) * gj;
                        v.data[j] = c.beta2 * v.data[j] + (1.0 - c.beta2) * gj * gj;
                        let mh = m.data[j] / bc1;
                        let vh = v.data[j] / bc2;
                        p.data[j] -= lr * mh / (vh.sqrt() + c.eps);
                    }
                }
                Optimizer::Momentum => {
                    for j in 0..g.data.len() {
                        m.data[j] = c.beta1 * m.data[j] + g.data[j];
                        p.data[j] -= lr * m.data[j];
                    }
                }
            }
        }
    }

    fn diverged(&self, step: usize, msg: String) -> Error {
        if let Some(sink) = &self.sink {
            match sink.write(self.model, "diverged.ckpt", step) {
                Ok(p) => log::error!("wrote diagnostic checkpoint {}", p.display()),
                Err(e) => log::error!("could not write diagnostic checkpoint: {e}"),
            }
        }
        Error::Diverged { step, msg }
    }

    /// Train on `chains` (each a list of consecutive gold steps).
    pub fn run(mut self, chains: &[Vec<StepData>]) -> Result<TrainReport> {
        let all_units = units(chains, self.config.window, self.model.config.order_n);
        if all_units.is_empty() {
            return Err(Error::Corpus("no training steps".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        let mut order: Vec<usize> = (0..all_units.len()).collect();
        order.shuffle(&mut rng);
        let mut cursor = 0;
        let mut state = OptState {
            m: self.model.params.mats.iter().map(|m| Mat::zeros(m.rows, m.cols)).collect(),
            v: self.model.params.mats.iter().map(|m| Mat::zeros(m.rows, m.cols)).collect(),
            t: 0,
        };
        let mut report = TrainReport::default();
        let batch_size = self.config.batch_size.max(1);

        for step in 0..self.config.steps {
            let mut batch = Vec::with_capacity(batch_size);
            while batch.len() < batch_size {
                if cursor == order.len() {
                    report.epochs += 1;
                    if let Some(sink) = &self.sink {
                        let path = sink.write(self.model, &format!("epoch-{}.ckpt", report.epochs), step)?;
                        report.checkpoints.push(path);
                    }
                    order.shuffle(&mut rng);
                    cursor = 0;
                }
                batch.push(all_units[order[cursor]]);
                cursor += 1;
            }
            let (loss, mut grads) = self.batch_gradient(chains, &batch)?;
            if !loss.is_finite() {
                return Err(self.diverged(step, format!("loss is {loss}")));
            }
            if grads.iter().any(|g| !g.is_finite()) {
                return Err(self.diverged(step, "non-finite gradient".into()));
            }
            report.losses.push(loss);
            self.update(&mut state, &mut grads);
            if !self.model.params.all_finite() {
                return Err(self.diverged(step, "non-finite parameters after update".into()));
            }
            if self.config.log_every > 0 && (step + 1) % self.config.log_every == 0 {
                log::info!("step {} loss {:.5}", step + 1, loss);
            }
        }
        if let Some(sink) = &self.sink {
            report.checkpoints.push(sink.write(self.model, "last.ckpt", self.config.steps)?);
        }
        Ok(report)
    }
}

/// Train with default hooks; see [`Trainer`].
pub fn train(model: &mut EditModel, chains: &[Vec<StepData>], config: &TrainConfig) -> Result<TrainReport> {
    Trainer::new(model, config.clone()).run(chains)
}

/// Per-step scores over whole chains, evaluated in parallel.
pub fn evaluate(model: &EditModel, chains: &[Vec<StepData>]) -> Result<Vec<StepScore>> {
    let per_chain: Vec<Result<Vec<StepScore>>> = chains.par_iter().map(|c| model.chain_scores(c)).collect();
    let mut out = Vec::new();
    for r in per_chain {
        out.extend(r?);
    }
    Ok(out)
}
