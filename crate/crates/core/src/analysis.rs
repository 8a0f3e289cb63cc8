//! Truncation error analysis for dense-to-KDL embeddings: the κ seminorm,
//! the layerwise error bound, and rank sweeps.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::data::{Dataset, Metric};
use crate::error::{Error, Result};
use crate::kpd::{epsilon_trunc, KpShape};
use crate::matlin::{self, Flops, Matrix};
use crate::net::{embed_factors, fnn_factors, Activation, ArchKind, KdlLayer, Layer, Network};
use crate::optim::evaluate;

/// `Σ_q ‖W_L^{(q)}‖_F · ‖W_R^{(q)}‖_F`, the squared κ seminorm of a layer.
pub fn kappa_norm(layer: &KdlLayer) -> f64 {
    layer
        .summands
        .iter()
        .map(|s| matlin::frob(&s.w_l) * matlin::frob(&s.w_r))
        .sum()
}

/// `Σ_ℓ ε_ℓ · (Π_{j>ℓ} κ_j) · Σ_{m≤ℓ} c1^{n+1−m} ‖f_m(0)‖` over weight layers
/// `ℓ = 1..n`, where `f0[0] = ‖X‖` and `f0[m]` is layer `m`'s output at
/// zero input. `eps` and `kappa` have one entry per weight layer; `f0` needs
/// at least `n` entries.
pub fn bound_from_parts(eps: &[f64], kappa: &[f64], f0: &[f64], c1: f64) -> f64 {
    let n = eps.len();
    assert!(
        kappa.len() == n && f0.len() >= n,
        "one ε and κ per layer, f0 through layer n−1"
    );
    (0..n)
        .map(|l| {
            let tail: f64 = kappa[l + 1..].iter().product();
            let inner: f64 = (0..=l).map(|m| c1.powi((n - m) as i32) * f0[m]).sum();
            eps[l] * tail * inner
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub k: usize,
    pub c1: f64,
    /// Per weight layer, the tail `ε(k')` for `k' = 0..=max rank`.
    pub epsilon: Vec<Vec<f64>>,
    /// Rank actually embedded per layer (`k` clamped to the layer's maximum).
    pub ranks: Vec<usize>,
    /// Per weight layer, κ of the embedded layer.
    pub kappa: Vec<f64>,
    /// `‖X‖` followed by `‖f_m(0)‖` for every weight layer.
    pub f_zero_norms: Vec<f64>,
    pub total_bound: f64,
    /// `‖Y_dense(X) − Y_kdl(X)‖_F` for the supplied input.
    pub discrepancy: f64,
}

impl BoundReport {
    /// `layer,k,epsilon,kappa,f0norm` rows, then `total,k,,,bound` and
    /// `discrepancy,k,,,value`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("layer,k,epsilon,kappa,f0norm\n");
        for (l, eps) in self.epsilon.iter().enumerate() {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                l + 1,
                self.ranks[l],
                eps[self.ranks[l]],
                self.kappa[l],
                self.f_zero_norms[l]
            );
        }
        let _ = writeln!(s, "total,{},,,{}", self.k, self.total_bound);
        let _ = writeln!(s, "discrepancy,{},,,{}", self.k, self.discrepancy);
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// `‖f_ℓ(0)‖_F` for every layer: its forward map applied to zeros.
pub fn zero_input_norms(net: &Network) -> Result<Vec<f64>> {
    let mut flops = Flops::new();
    (0..net.layers.len())
        .map(|l| {
            let (r, c) = net.layers[l].input_shape();
            Ok(matlin::frob(&net.layer_forward(l, &Matrix::zeros(r, c), &mut flops)?.0))
        })
        .collect()
}

/// Evaluates the truncation bound for embedding `fnn` at rank `k` (with
/// linear inner activation) on input `x`, and measures the actual output
/// discrepancy alongside it.
pub fn theorem_bound(fnn: &Network, shapes: &[KpShape], k: usize, c1: f64, x: &Matrix) -> Result<BoundReport> {
    if !(c1 > 0.0 && c1.is_finite()) {
        return Err(Error::Param(format!("Lipschitz constant must be positive, got {c1}")));
    }
    let full = fnn_factors(fnn, shapes)?;
    let emb = embed_factors(fnn, &full, k, Activation::Linear)?;
    let x = fnn.prepare_input(x)?;

    let ranks = emb.net.ranks();
    let epsilon: Vec<Vec<f64>> = full
        .iter()
        .map(|f| (0..=f.sigma.len()).map(|j| epsilon_trunc(&f.sigma, j)).collect())
        .collect();
    let kappa: Vec<f64> = emb
        .net
        .layers
        .iter()
        .map(|l| match l {
            Layer::Kdl(k) => kappa_norm(k),
            _ => unreachable!("embeddings hold KDL layers"),
        })
        .collect();
    let mut f_zero_norms = vec![matlin::frob(&x)];
    f_zero_norms.extend(zero_input_norms(fnn)?);
    let eps_k: Vec<f64> = epsilon.iter().zip(&ranks).map(|(e, &r)| e[r]).collect();
    let total_bound = bound_from_parts(&eps_k, &kappa, &f_zero_norms, c1);

    let mut flops = Flops::new();
    let y_dense = fnn.forward(&x, &mut flops)?;
    let (r, c) = emb.net.input_shape();
    let y_kdl = emb.net.forward(&x.clone().reshape(r, c)?, &mut flops)?;
    let discrepancy = (0..y_dense.len())
        .map(|i| (y_dense.as_slice()[i] - y_kdl.as_slice()[i]).powi(2))
        .sum::<f64>()
        .sqrt();

    Ok(BoundReport {
        k,
        c1,
        epsilon,
        ranks,
        kappa,
        f_zero_norms,
        total_bound,
        discrepancy,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankSweep {
    pub metric: String,
    pub ks: Vec<usize>,
    pub errors: Vec<f64>,
    /// Test error of the dense network itself.
    pub reference: f64,
    /// Largest rank any layer admits.
    pub full_rank: usize,
}

impl RankSweep {
    /// `k,test_error` rows followed by `reference,<dense error>`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("k,test_error\n");
        for (k, e) in self.ks.iter().zip(&self.errors) {
            let _ = writeln!(s, "{k},{e}");
        }
        let _ = writeln!(s, "reference,{}", self.reference);
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Test error of the rank-`k` embedding of `fnn` for each `k` in `ks`
/// (default `1..=full rank`), without retraining.
pub fn rank_sweep(
    fnn: &Network,
    shapes: &[KpShape],
    test: &Dataset,
    phi2: Activation,
    ks: Option<&[usize]>,
    metric: Metric,
) -> Result<RankSweep> {
    if fnn.kind() != ArchKind::Dense {
        return Err(Error::Param("rank sweep needs a dense network".into()));
    }
    let full = fnn_factors(fnn, shapes)?;
    let full_rank = full.iter().map(|f| f.rank()).max().unwrap_or(0);
    let ks: Vec<usize> = match ks {
        Some(ks) => ks.to_vec(),
        None => (1..=full_rank).collect(),
    };
    let reference = metric.pick(&evaluate(fnn, test)?);
    let errors = ks
        .iter()
        .map(|&k| {
            let emb = embed_factors(fnn, &full, k, phi2)?;
            Ok(metric.pick(&evaluate(&emb.net, test)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RankSweep {
        metric: metric.to_string(),
        ks,
        errors,
        reference,
        full_rank,
    })
}
