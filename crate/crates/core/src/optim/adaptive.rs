//! Rank growth on validation plateaus followed by a learning-rate probe.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{check_dims, evaluate, predict, EpochRecord, ProbeLog, RankEvent, TrainConfig, TrainHistory, Trainer};
use crate::data::{split, SplitDataset};
use crate::error::{Error, Result};
use crate::net::{ArchKind, Network};

/// Result of training one clone at `η·factor`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeOutcome {
    pub factor: f64,
    /// Validation MSE after the probe epochs; `None` when it diverged.
    pub val_error: Option<f64>,
    pub history: TrainHistory,
    pub failure: Option<String>,
}

/// Moves `val_fraction` of the training rows into a validation part.
pub fn holdout(data: &SplitDataset, val_fraction: f64, seed: u64) -> Result<SplitDataset> {
    let s = split(&data.train, 0.0, val_fraction, seed)?;
    Ok(SplitDataset {
        train: s.train,
        test: data.test.clone(),
        val: s.val,
    })
}

/// True when the best value of `window` improved on by `current` by less
/// than `tol` relative.
fn is_plateau(window: &[f64], current: f64, tol: f64) -> bool {
    let best = window.iter().copied().fold(f64::INFINITY, f64::min);
    if best <= 0.0 {
        return true;
    }
    (best - current) / best < tol
}

fn val_error(t: &Trainer, data: &SplitDataset) -> Result<f64> {
    let val = data
        .val
        .as_ref()
        .ok_or_else(|| Error::Param("probe needs a validation set".into()))?;
    Ok(evaluate(&t.net, val)?.mse)
}

/// Trains a clone of `base` per factor; returns the winning trainer (with its
/// epochs) and all outcomes in factor order.
fn probe(
    base: &Trainer,
    data: &SplitDataset,
    config: &TrainConfig,
    factors: &[f64],
    epochs: usize,
) -> Result<(Trainer, f64, Vec<EpochRecord>, Vec<ProbeOutcome>)> {
    if factors.is_empty() {
        return Err(Error::Param("learning-rate factors must be non-empty".into()));
    }
    let mut outcomes = Vec::with_capacity(factors.len());
    let mut best: Option<(f64, f64, Trainer)> = None;
    for &f in factors {
        let mut t = base.clone();
        t.eta = base.eta * f;
        let mut history = TrainHistory::default();
        let mut run = || -> Result<f64> {
            for _ in 0..epochs {
                history.records.push(t.epoch_record(data, config)?);
            }
            let v = val_error(&t, data)?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::NonFinite("validation error".into()))
            }
        };
        match run() {
            Ok(v) => {
                let better = match &best {
                    None => true,
                    Some((bv, bf, _)) => v < *bv || (v == *bv && f < *bf),
                };
                outcomes.push(ProbeOutcome {
                    factor: f,
                    val_error: Some(v),
                    history,
                    failure: None,
                });
                if better {
                    best = Some((v, f, t));
                }
            }
            Err(e) if e.is_numeric() => outcomes.push(ProbeOutcome {
                factor: f,
                val_error: None,
                history,
                failure: Some(e.to_string()),
            }),
            Err(e) => return Err(e),
        }
    }
    match best {
        Some((_, f, t)) => {
            let records = outcomes
                .iter()
                .find(|o| o.factor == f && o.failure.is_none())
                .map(|o| o.history.records.clone())
                .unwrap_or_default();
            Ok((t, f, records, outcomes))
        }
        None => {
            let summary: Vec<String> = outcomes
                .iter()
                .map(|o| format!("×{}: {}", o.factor, o.failure.as_deref().unwrap_or("?")))
                .collect();
            Err(Error::AllProbesDiverged(summary.join("; ")))
        }
    }
}

/// Trains independent clones of `net` from identical state for
/// `probe_epochs` at `eta·f` for each factor and returns the factor with the
/// lowest validation MSE, ties going to the smaller factor. `data` must carry
/// a validation part.
pub fn lr_factor_probe(
    net: &Network,
    data: &SplitDataset,
    config: &TrainConfig,
    eta: f64,
    factors: &[f64],
    probe_epochs: usize,
) -> Result<(f64, Vec<ProbeOutcome>)> {
    config.validate()?;
    check_dims(net, &data.train)?;
    let mut base = Trainer::new(net.clone(), config);
    base.eta = eta;
    let (_, f, _, outcomes) = probe(&base, data, config, factors, probe_epochs)?;
    Ok((f, outcomes))
}

/// Largest per-sample relative change between two row-major predictions.
fn max_relative_change(before: &[f64], after: &[f64], n_out: usize) -> f64 {
    before
        .chunks(n_out)
        .zip(after.chunks(n_out))
        .map(|(b, a)| {
            let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
            let norm: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            if diff == 0.0 {
                0.0
            } else {
                diff / norm.max(f64::MIN_POSITIVE)
            }
        })
        .fold(0.0, f64::max)
}

/// Like [`train`](super::train), but holds out a validation part (unless
/// `data` already has one) and grows the Kronecker rank of every layer on
/// validation plateaus. Each insertion is followed by a learning-rate probe
/// whose winning clone continues; its epochs count toward `config.epochs`.
pub fn adaptive_rank_train(net: &mut Network, data: &SplitDataset, config: &TrainConfig) -> Result<TrainHistory> {
    config.validate()?;
    let ac = config
        .adaptive
        .clone()
        .ok_or_else(|| Error::Param("adaptive training needs an adaptive config".into()))?;
    if net.kind() != ArchKind::Kdl {
        return Err(Error::Param("adaptive rank training needs a KDL network".into()));
    }
    check_dims(net, &data.train)?;
    let data = match data.val {
        Some(_) => data.clone(),
        None => holdout(data, ac.val_fraction, config.seed)?,
    };
    let val = data.val.as_ref().expect("validation part present");

    let mut trainer = Trainer::new(net.clone(), config);
    let mut history = TrainHistory::default();
    let mut window: Vec<f64> = Vec::new();
    let mut insertions = 0u64;
    let result = (|| -> Result<()> {
        while trainer.epoch < config.epochs {
            let rec = trainer.epoch_record(&data, config)?;
            let current = rec.val_loss.expect("validation part present");
            history.records.push(rec);
            let rank = trainer.net.ranks().into_iter().max().unwrap_or(0);
            let plateau = window.len() >= ac.plateau_window
                && is_plateau(&window[window.len() - ac.plateau_window..], current, ac.plateau_tol);
            window.push(current);
            if !plateau || rank >= ac.max_rank || trainer.epoch >= config.epochs {
                continue;
            }

            let before = predict(&trainer.net, val)?;
            insertions += 1;
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ insertions.wrapping_mul(0x9E37_79B9_7F4A_7C15));
            trainer.net.add_kdl_summand(&mut rng, f64::EPSILON)?;
            trainer.reset_optimizer(config);
            let after = predict(&trainer.net, val)?;
            let perturbation = max_relative_change(&before, &after, val.n_out());
            let epoch = trainer.epoch;

            let budget = (config.epochs - trainer.epoch).min(ac.probe_epochs);
            let factor = if budget > 0 {
                let (winner, f, records, outcomes) = probe(&trainer, &data, config, &ac.lr_factors, budget)?;
                trainer = winner;
                history.records.extend(records);
                history.probes.push(ProbeLog { epoch, outcomes });
                Some(f)
            } else {
                None
            };
            history.events.push(RankEvent {
                epoch,
                ranks: trainer.net.ranks(),
                perturbation,
                factor,
                eta: trainer.eta,
            });
            window.clear();
        }
        Ok(())
    })();
    *net = trainer.net;
    result.map(|_| history)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plateau_rule() {
        assert!(is_plateau(&[1.0, 0.9, 0.8], 0.799, 0.01));
        assert!(!is_plateau(&[1.0, 0.9, 0.8], 0.7, 0.01));
        assert!(is_plateau(&[0.5], 0.6, 0.01));
        assert!(is_plateau(&[0.0], 0.0, 0.01));
    }

    #[test]
    fn relative_change() {
        assert_eq!(
            max_relative_change(&[1.0, 0.0, 2.0, 0.0], &[1.0, 0.0, 2.0, 0.0], 2),
            0.0
        );
        assert!((max_relative_change(&[3.0, 4.0], &[3.0, 4.5], 2) - 0.1).abs() < 1e-15);
    }
}
