use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

pub const HISTORY_HEADER: &str = "epoch,train_loss,val_loss,test_error,fwd_s,bwd_s,ranks";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    /// 1-based count of completed epochs, probe epochs included.
    pub epoch: usize,
    /// Mean per-sample `½‖ŷ − y‖²` over the epoch's minibatches.
    pub train_loss: f64,
    /// Validation MSE after the epoch.
    pub val_loss: Option<f64>,
    pub test_error: Option<f64>,
    pub fwd_s: f64,
    pub bwd_s: f64,
    pub ranks: Vec<usize>,
}

/// A summand insertion by the adaptive controller.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankEvent {
    /// Epoch after which the insertion happened.
    pub epoch: usize,
    pub ranks: Vec<usize>,
    /// Largest `‖Ŷ_after − Ŷ_before‖ / ‖Ŷ_before‖` over validation samples.
    pub perturbation: f64,
    /// Learning-rate factor adopted by the probe that followed, if it ran.
    pub factor: Option<f64>,
    /// Learning rate in effect afterwards.
    pub eta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeLog {
    pub epoch: usize,
    pub outcomes: Vec<super::ProbeOutcome>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    pub events: Vec<RankEvent>,
    pub probes: Vec<ProbeLog>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl TrainHistory {
    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.train_loss).collect()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    pub fn total_fwd_s(&self) -> f64 {
        self.records.iter().map(|r| r.fwd_s).sum()
    }

    pub fn total_bwd_s(&self) -> f64 {
        self.records.iter().map(|r| r.bwd_s).sum()
    }

    /// CSV with one row per epoch; ranks are `;`-separated per layer.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(HISTORY_HEADER);
        s.push('\n');
        for r in &self.records {
            let ranks: Vec<String> = r.ranks.iter().map(usize::to_string).collect();
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                r.epoch,
                r.train_loss,
                opt(r.val_loss),
                opt(r.test_error),
                r.fwd_s,
                r.bwd_s,
                ranks.join(";")
            );
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    /// Parses [`to_csv`](Self::to_csv) output back into epoch records.
    pub fn parse_csv(text: &str) -> Result<Vec<EpochRecord>> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == HISTORY_HEADER => {}
            _ => {
                return Err(Error::Csv {
                    path: "<history>".into(),
                    line: 1,
                    detail: format!("expected header '{HISTORY_HEADER}'"),
                })
            }
        }
        lines
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, line)| {
                let bad = |what: &str| Error::Csv {
                    path: "<history>".into(),
                    line: i as u64 + 1,
                    detail: format!("bad {what}"),
                };
                let f: Vec<&str> = line.split(',').collect();
                if f.len() != 7 {
                    return Err(bad("field count"));
                }
                let num = |s: &str, what: &str| s.parse::<f64>().map_err(|_| bad(what));
                let opt_num = |s: &str, what: &str| {
                    if s.is_empty() {
                        Ok(None)
                    } else {
                        num(s, what).map(Some)
                    }
                };
                let ranks = if f[6].is_empty() {
                    Vec::new()
                } else {
                    f[6].split(';')
                        .map(|r| r.parse().map_err(|_| bad("ranks")))
                        .collect::<Result<_>>()?
                };
                Ok(EpochRecord {
                    epoch: f[0].parse().map_err(|_| bad("epoch"))?,
                    train_loss: num(f[1], "train_loss")?,
                    val_loss: opt_num(f[2], "val_loss")?,
                    test_error: opt_num(f[3], "test_error")?,
                    fwd_s: num(f[4], "fwd_s")?,
                    bwd_s: num(f[5], "bwd_s")?,
                    ranks,
                })
            })
            .collect()
    }
}
