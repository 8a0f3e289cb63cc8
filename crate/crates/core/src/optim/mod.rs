//! Minibatch training with SGD or Adam, per-epoch bookkeeping, and the
//! adaptive-rank controller.

mod adaptive;
mod history;

pub use adaptive::{adaptive_rank_train, holdout, lr_factor_probe, ProbeOutcome};
pub use history::{EpochRecord, ProbeLog, RankEvent, TrainHistory, HISTORY_HEADER};

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{metrics, Dataset, Metric, Metrics, SplitDataset};
use crate::error::{Error, Result};
use crate::grad::{backward_batch, forward_batch, Gradients};
use crate::matlin::Flops;
use crate::net::{Layer, Network};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub const ADAM: Optimizer = Optimizer::Adam {
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
    };

    /// `"sgd"` or `"adam"` with the standard moment constants.
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(Optimizer::Sgd),
            "adam" => Ok(Optimizer::ADAM),
            _ => Err(Error::Param(format!("unknown optimizer '{s}'"))),
        }
    }
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::ADAM
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaptiveConfig {
    pub val_fraction: f64,
    /// Trailing epochs compared against the current validation error.
    pub plateau_window: usize,
    /// Relative improvement below which the window counts as a plateau.
    pub plateau_tol: f64,
    pub max_rank: usize,
    pub lr_factors: Vec<f64>,
    pub probe_epochs: usize,
}

impl Default for AdaptiveConfig {
    fn default() -> Self {
        Self {
            val_fraction: 0.1,
            plateau_window: 5,
            plateau_tol: 0.01,
            max_rank: 4,
            lr_factors: vec![0.25, 0.63, 1.26, 2.0],
            probe_epochs: 10,
        }
    }
}

impl AdaptiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::Param(format!(
                "val_fraction must lie in (0,1), got {}",
                self.val_fraction
            )));
        }
        if self.plateau_window == 0 {
            return Err(Error::Param("plateau window must be at least one epoch".into()));
        }
        if self.plateau_tol.is_nan() || self.plateau_tol < 0.0 {
            return Err(Error::Param(format!(
                "plateau tolerance must be ≥ 0, got {}",
                self.plateau_tol
            )));
        }
        if self.lr_factors.is_empty() || self.lr_factors.iter().any(|&f| !(f > 0.0 && f.is_finite())) {
            return Err(Error::Param(
                "learning-rate factors must be non-empty and positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub eta: f64,
    pub lambda: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: Optimizer,
    pub seed: u64,
    pub shuffle: bool,
    /// Metric reported as `test_error`.
    pub metric: Metric,
    pub adaptive: Option<AdaptiveConfig>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            eta: 1e-3,
            lambda: 0.0,
            epochs: 20,
            batch_size: 100,
            optimizer: Optimizer::default(),
            seed: 0,
            shuffle: true,
            metric: Metric::default(),
            adaptive: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::Param(format!(
                "learning rate must be positive, got {}",
                self.eta
            )));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Param(format!("regularization must be ≥ 0, got {}", self.lambda)));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Param("epochs and batch size must be at least 1".into()));
        }
        if let Optimizer::Adam { beta1, beta2, eps } = self.optimizer {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || eps.is_nan() || eps <= 0.0 {
                return Err(Error::Param("Adam needs β₁, β₂ in [0,1) and ε > 0".into()));
            }
        }
        if let Some(a) = &self.adaptive {
            a.validate()?;
        }
        Ok(())
    }
}

/// Row-major network outputs for every sample.
pub fn predict(net: &Network, ds: &Dataset) -> Result<Vec<f64>> {
    let mut flops = Flops::new();
    let mut out = Vec::with_capacity(ds.len() * net.output_len());
    for i in 0..ds.len() {
        out.extend_from_slice(net.forward_slice(ds.x(i), &mut flops)?.as_slice());
    }
    Ok(out)
}

pub fn evaluate(net: &Network, ds: &Dataset) -> Result<Metrics> {
    check_dims(net, ds)?;
    metrics(&predict(net, ds)?, ds.targets(), ds.n_out())
}

fn check_dims(net: &Network, ds: &Dataset) -> Result<()> {
    if ds.n_in() != net.input_len() || ds.n_out() != net.output_len() {
        return Err(Error::shape(
            "dataset vs network (inputs, targets)",
            (ds.n_in(), ds.n_out()),
            (net.input_len(), net.output_len()),
        ));
    }
    Ok(())
}

#[derive(Debug, Clone)]
enum OptState {
    Sgd,
    Adam { m: Gradients, v: Gradients, t: i32 },
}

/// Everything that evolves during training; cloned wholesale for probes.
#[derive(Debug, Clone)]
pub(crate) struct Trainer {
    pub(crate) net: Network,
    opt: OptState,
    rng: ChaCha8Rng,
    pub(crate) eta: f64,
    pub(crate) epoch: usize,
}

impl Trainer {
    pub(crate) fn new(net: Network, config: &TrainConfig) -> Self {
        let mut t = Self {
            net,
            opt: OptState::Sgd,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            eta: config.eta,
            epoch: 0,
        };
        t.reset_optimizer(config);
        t
    }

    /// Fresh moment estimates matching the current parameter structure.
    pub(crate) fn reset_optimizer(&mut self, config: &TrainConfig) {
        self.opt = match config.optimizer {
            Optimizer::Sgd => OptState::Sgd,
            Optimizer::Adam { .. } => OptState::Adam {
                m: Gradients::zeros(&self.net),
                v: Gradients::zeros(&self.net),
                t: 0,
            },
        };
    }

    fn step(&mut self, grads: &Gradients, config: &TrainConfig) {
        let (eta, lambda) = (self.eta, config.lambda);
        let params = self.net.layers.iter_mut().flat_map(Layer::params_mut);
        match (&mut self.opt, config.optimizer) {
            (OptState::Adam { m, v, t }, Optimizer::Adam { beta1, beta2, eps }) => {
                *t += 1;
                let c1 = 1.0 - beta1.powi(*t);
                let c2 = 1.0 - beta2.powi(*t);
                for (((p, g), m), v) in params.zip(grads.matrices()).zip(m.matrices_mut()).zip(v.matrices_mut()) {
                    let it = p
                        .as_mut_slice()
                        .iter_mut()
                        .zip(g.as_slice())
                        .zip(m.as_mut_slice())
                        .zip(v.as_mut_slice());
                    for (((x, &d), mi), vi) in it {
                        *mi = beta1 * *mi + (1.0 - beta1) * d;
                        *vi = beta2 * *vi + (1.0 - beta2) * d * d;
                        let upd = (*mi / c1) / ((*vi / c2).sqrt() + eps);
                        *x = *x - eta * upd - eta * lambda * *x;
                    }
                }
            }
            _ => {
                for (p, g) in params.zip(grads.matrices()) {
                    for (x, &d) in p.as_mut_slice().iter_mut().zip(g.as_slice()) {
                        *x = *x - eta * d - eta * lambda * *x;
                    }
                }
            }
        }
    }

    /// One pass over `train`; returns the mean per-sample data loss and the
    /// forward and backward wall-clock seconds.
    pub(crate) fn run_epoch(&mut self, train: &Dataset, config: &TrainConfig) -> Result<(f64, f64, f64)> {
        self.epoch += 1;
        let epoch = self.epoch;
        let mut order: Vec<usize> = (0..train.len()).collect();
        if config.shuffle {
            order.shuffle(&mut self.rng);
        }
        let (mut fwd_s, mut bwd_s, mut total) = (0.0, 0.0, 0.0);
        let mut flops = Flops::new();
        let mut grads = Gradients::zeros(&self.net);
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<_> = chunk.iter().map(|&i| train.sample(i)).collect();
            let diverged = |e: Error| {
                if e.is_numeric() {
                    Error::Diverged { epoch, batch: b }
                } else {
                    e
                }
            };

            let t0 = Instant::now();
            let fwd = forward_batch(&self.net, &batch, &mut flops).map_err(diverged)?;
            fwd_s += t0.elapsed().as_secs_f64();

            let t1 = Instant::now();
            grads.fill(0.0);
            let loss = backward_batch(&self.net, &fwd, &batch, &mut grads, &mut flops).map_err(diverged)?;
            if !loss.is_finite() || !grads.is_finite() {
                return Err(Error::Diverged { epoch, batch: b });
            }
            self.step(&grads, config);
            bwd_s += t1.elapsed().as_secs_f64();
            total += loss;
        }
        Ok((total / train.len() as f64, fwd_s, bwd_s))
    }

    /// Runs one epoch and evaluates it into a history record.
    pub(crate) fn epoch_record(&mut self, data: &SplitDataset, config: &TrainConfig) -> Result<EpochRecord> {
        let (train_loss, fwd_s, bwd_s) = self.run_epoch(&data.train, config)?;
        let val_loss = match &data.val {
            Some(v) if !v.is_empty() => Some(evaluate(&self.net, v)?.mse),
            _ => None,
        };
        let test_error = if data.test.is_empty() {
            None
        } else {
            Some(config.metric.pick(&evaluate(&self.net, &data.test)?))
        };
        Ok(EpochRecord {
            epoch: self.epoch,
            train_loss,
            val_loss,
            test_error,
            fwd_s,
            bwd_s,
            ranks: self.net.ranks(),
        })
    }
}

/// Trains `net` in place on `data.train`, recording validation MSE (when a
/// validation part exists) and the configured test metric after each epoch.
/// On failure `net` holds the parameters reached before the error.
pub fn train(net: &mut Network, data: &SplitDataset, config: &TrainConfig) -> Result<TrainHistory> {
    config.validate()?;
    check_dims(net, &data.train)?;
    if data.train.is_empty() {
        return Err(Error::Param("training set is empty".into()));
    }
    let mut trainer = Trainer::new(net.clone(), config);
    let mut history = TrainHistory::default();
    let mut result = Ok(());
    for _ in 0..config.epochs {
        match trainer.epoch_record(data, config) {
            Ok(r) => history.records.push(r),
            Err(e) => {
                result = Err(e);
                break;
            }
        }
    }
    *net = trainer.net;
    result.map(|_| history)
}
