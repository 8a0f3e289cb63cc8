//! Regularized least-squares loss, hand-derived gradients for every layer
//! family, and a central-difference gradient oracle.

mod backprop;

pub use backprop::{kdl_backprop, kml_backprop};

use crate::error::{Error, Result};
use crate::matlin::{self, Flops, Matrix};
use crate::net::{Cache, Layer, Network};

/// One training pair as flat slices; the input is reshaped to the network's
/// input node and the target to its output node, both column-major.
#[derive(Debug, Clone, Copy)]
pub struct Sample<'a> {
    pub x: &'a [f64],
    pub y: &'a [f64],
}

/// Loss split into its data and regularization terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    /// `½ Σₘ ‖Ŷₘ − Yₘ‖²`
    pub data_loss: f64,
    /// `(λ/2) Σ ‖θ‖_F²` over every weight and bias.
    pub reg_loss: f64,
    pub total: f64,
}

impl LossReport {
    fn new(data_loss: f64, reg_loss: f64) -> Self {
        Self {
            data_loss,
            reg_loss,
            total: data_loss + reg_loss,
        }
    }
}

/// Parameter-shaped gradient accumulator mirroring a network's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

impl Gradients {
    pub fn zeros(net: &Network) -> Self {
        Self {
            layers: net.layers.iter().map(Layer::zeros_like).collect(),
        }
    }

    pub fn matrices(&self) -> Vec<&Matrix> {
        self.layers.iter().flat_map(Layer::params).collect()
    }

    pub fn matrices_mut(&mut self) -> Vec<&mut Matrix> {
        self.layers.iter_mut().flat_map(Layer::params_mut).collect()
    }

    pub fn flat(&self) -> Vec<f64> {
        self.matrices()
            .into_iter()
            .flat_map(|m| m.as_slice().iter().copied())
            .collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.matrices().iter().map(|m| m.max_abs()).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.matrices().iter().all(|m| m.is_finite())
    }

    pub fn fill(&mut self, v: f64) {
        for m in self.matrices_mut() {
            m.fill(v);
        }
    }

    /// `self += alpha · θ` for the parameters `θ` of `net`.
    pub fn add_scaled_params(&mut self, net: &Network, alpha: f64) -> Result<()> {
        let params: Vec<&Matrix> = net.layers.iter().flat_map(Layer::params).collect();
        let mut mine = self.matrices_mut();
        if params.len() != mine.len() {
            return Err(Error::State("gradient structure does not match network".into()));
        }
        for (g, p) in mine.iter_mut().zip(params) {
            if g.shape() != p.shape() {
                return Err(Error::shape("gradient vs parameter", g.shape(), p.shape()));
            }
            g.axpy(alpha, p);
        }
        Ok(())
    }
}

/// `Σ ‖θ‖_F²` over every parameter matrix.
pub fn param_sq_norm(net: &Network) -> f64 {
    net.layers.iter().flat_map(Layer::params).map(Matrix::frob_sq).sum()
}

/// Output and intermediates of one sample's forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    pub output: Matrix,
    pub caches: Vec<Cache>,
}

/// Forward passes for every sample of a batch, in order.
pub fn forward_batch(net: &Network, batch: &[Sample<'_>], flops: &mut Flops) -> Result<Vec<Forward>> {
    batch
        .iter()
        .enumerate()
        .map(|(m, s)| {
            let (r, c) = net.input_shape();
            if s.x.len() != r * c {
                return Err(Error::shape(format!("input of sample {m}"), (s.x.len(), 1), (r, c)));
            }
            let (output, caches) = net.forward_cached(&matlin::mat(s.x, r, c)?, flops)?;
            if !output.is_finite() {
                return Err(Error::NonFinite(format!("network output for sample {m}")));
            }
            Ok(Forward { output, caches })
        })
        .collect()
}

/// `Ŷ − Y` with the target reshaped to the output node.
pub fn residual(net: &Network, output: &Matrix, y: &[f64]) -> Result<Matrix> {
    let (r, c) = net.output_shape();
    if y.len() != r * c {
        return Err(Error::shape("target", (y.len(), 1), (r, c)));
    }
    output.sub(&matlin::mat(y, r, c)?)
}

/// Reverse pass of one sample given `Γ = ∂ℒ/∂Ŷ`, accumulating into `grads`.
pub fn backprop_sample(
    net: &Network,
    caches: &[Cache],
    gamma: Matrix,
    grads: &mut Gradients,
    flops: &mut Flops,
) -> Result<()> {
    if caches.len() != net.layers.len() || grads.layers.len() != net.layers.len() {
        return Err(Error::State(format!(
            "{} caches and {} gradient layers for a {}-layer network",
            caches.len(),
            grads.layers.len(),
            net.layers.len()
        )));
    }
    let mut gamma = gamma;
    for l in (0..net.layers.len()).rev() {
        let next = backprop::layer_backward(
            &net.layers[l],
            &caches[l],
            &gamma,
            net.outer_activation(l),
            net.acts.phi2,
            net.combine,
            &mut grads.layers[l],
            l > 0,
            flops,
        )?;
        if let Some(g) = next {
            gamma = g;
        }
    }
    Ok(())
}

/// Reverse passes for a batch in sample order; returns the data loss.
pub fn backward_batch(
    net: &Network,
    forwards: &[Forward],
    batch: &[Sample<'_>],
    grads: &mut Gradients,
    flops: &mut Flops,
) -> Result<f64> {
    if forwards.len() != batch.len() {
        return Err(Error::State("forward results do not match batch".into()));
    }
    let mut data_loss = 0.0;
    for (f, s) in forwards.iter().zip(batch) {
        let gamma = residual(net, &f.output, s.y)?;
        data_loss += 0.5 * gamma.frob_sq();
        backprop_sample(net, &f.caches, gamma, grads, flops)?;
    }
    Ok(data_loss)
}

/// Dense-network reverse pass for one sample with residual `Ŷ − Y`.
pub fn fnn_backprop(net: &Network, caches: &[Cache], residual: &Matrix) -> Result<Gradients> {
    let mut grads = Gradients::zeros(net);
    backprop_sample(net, caches, residual.clone(), &mut grads, &mut Flops::new())?;
    Ok(grads)
}

/// Loss of `net` on a batch.
pub fn loss(net: &Network, batch: &[Sample<'_>], lambda: f64) -> Result<LossReport> {
    let mut data = 0.0;
    let mut flops = Flops::new();
    for (m, s) in batch.iter().enumerate() {
        let out = net.forward_slice(s.x, &mut flops)?;
        if !out.is_finite() {
            return Err(Error::NonFinite(format!("network output for sample {m}")));
        }
        data += 0.5 * residual(net, &out, s.y)?.frob_sq();
    }
    Ok(LossReport::new(data, 0.5 * lambda * param_sq_norm(net)))
}

/// Loss and its full gradient (data term plus `λ·θ`).
pub fn loss_and_grad(net: &Network, batch: &[Sample<'_>], lambda: f64) -> Result<(LossReport, Gradients)> {
    let mut flops = Flops::new();
    let fwd = forward_batch(net, batch, &mut flops)?;
    let mut grads = Gradients::zeros(net);
    let data = backward_batch(net, &fwd, batch, &mut grads, &mut flops)?;
    if lambda != 0.0 {
        grads.add_scaled_params(net, lambda)?;
    }
    Ok((LossReport::new(data, 0.5 * lambda * param_sq_norm(net)), grads))
}

/// Central differences of the total loss with per-scalar step
/// `h · max(1, |θ|)`.
pub fn finite_diff_grad(net: &Network, batch: &[Sample<'_>], lambda: f64, h: f64) -> Result<Gradients> {
    if h <= 0.0 || !h.is_finite() {
        return Err(Error::Param(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    let mut work = net.clone();
    let mut grads = Gradients::zeros(net);
    for l in 0..net.layers.len() {
        let count = net.layers[l].params().len();
        for mi in 0..count {
            let len = net.layers[l].params()[mi].len();
            for e in 0..len {
                let theta = net.layers[l].params()[mi].as_slice()[e];
                let step = h * theta.abs().max(1.0);
                work.layers[l].params_mut()[mi].as_mut_slice()[e] = theta + step;
                let plus = loss(&work, batch, lambda)?.total;
                work.layers[l].params_mut()[mi].as_mut_slice()[e] = theta - step;
                let minus = loss(&work, batch, lambda)?.total;
                work.layers[l].params_mut()[mi].as_mut_slice()[e] = theta;
                grads.layers[l].params_mut()[mi].as_mut_slice()[e] = (plus - minus) / (2.0 * step);
            }
        }
    }
    Ok(grads)
}

/// Largest entrywise relative discrepancy between two gradients:
/// `|a − b| / max(|a|, |b|, 10⁻³·‖a‖∞)`, so entries far below the gradient's
/// overall scale are judged against that scale rather than against zero.
pub fn max_relative_error(a: &Gradients, b: &Gradients) -> f64 {
    let (fa, fb) = (a.flat(), b.flat());
    assert_eq!(fa.len(), fb.len(), "gradient structures differ");
    let scale = 1e-3 * fa.iter().chain(&fb).fold(0.0f64, |m, v| m.max(v.abs()));
    fa.iter()
        .zip(&fb)
        .map(|(&x, &y)| {
            let denom = x.abs().max(y.abs()).max(scale);
            if denom == 0.0 {
                0.0
            } else {
                (x - y).abs() / denom
            }
        })
        .fold(0.0, f64::max)
}
