//! Datasets: the synthetic benchmark function, CSV and IDX ingestion,
//! splitting, input normalization, and error metrics.

mod idx;
mod tabular;

pub use idx::{load_idx, read_idx_images, read_idx_labels, write_idx_images, write_idx_labels};
pub use tabular::{load_csv, write_csv};

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grad::Sample;
use crate::matlin::Matrix;

/// `M` samples stored row-major: row `i` of the inputs is
/// `inputs[i·n_in .. (i+1)·n_in]`, likewise for targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Vec<f64>,
    targets: Vec<f64>,
    n_in: usize,
    n_out: usize,
    /// Input column labels followed by target column labels, when known.
    pub names: Option<Vec<String>>,
}

impl Dataset {
    pub fn new(inputs: Vec<f64>, targets: Vec<f64>, n_in: usize, n_out: usize) -> Result<Self> {
        if n_in == 0 || n_out == 0 {
            return Err(Error::Param(
                "datasets need at least one input and one target column".into(),
            ));
        }
        if inputs.len() % n_in != 0 || targets.len() % n_out != 0 || inputs.len() / n_in != targets.len() / n_out {
            return Err(Error::shape(
                "dataset rows",
                (inputs.len() / n_in, n_in),
                (targets.len() / n_out, n_out),
            ));
        }
        if let Some(i) = inputs.iter().chain(&targets).position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("dataset entry {i}")));
        }
        Ok(Self {
            inputs,
            targets,
            n_in,
            n_out,
            names: None,
        })
    }

    /// Builds from per-row vectors.
    pub fn from_rows(xs: &[Vec<f64>], ys: &[Vec<f64>]) -> Result<Self> {
        let n_in = xs.first().map_or(0, Vec::len);
        let n_out = ys.first().map_or(0, Vec::len);
        if xs.iter().any(|r| r.len() != n_in) || ys.iter().any(|r| r.len() != n_out) {
            return Err(Error::Param("ragged rows".into()));
        }
        Self::new(xs.concat(), ys.concat(), n_in, n_out)
    }

    pub fn with_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.n_in + self.n_out {
            return Err(Error::Param(format!(
                "{} column names for {} columns",
                names.len(),
                self.n_in + self.n_out
            )));
        }
        self.names = Some(names);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.inputs.len() / self.n_in
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn n_in(&self) -> usize {
        self.n_in
    }

    pub fn n_out(&self) -> usize {
        self.n_out
    }

    pub fn x(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.n_in..(i + 1) * self.n_in]
    }

    pub fn y(&self, i: usize) -> &[f64] {
        &self.targets[i * self.n_out..(i + 1) * self.n_out]
    }

    pub fn sample(&self, i: usize) -> Sample<'_> {
        Sample {
            x: self.x(i),
            y: self.y(i),
        }
    }

    pub fn samples(&self) -> Vec<Sample<'_>> {
        (0..self.len()).map(|i| self.sample(i)).collect()
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    /// `M × n_in` input matrix.
    pub fn x_matrix(&self) -> Matrix {
        Matrix::from_fn(self.len(), self.n_in, |i, j| self.inputs[i * self.n_in + j])
    }

    /// `M × n_out` target matrix.
    pub fn y_matrix(&self) -> Matrix {
        Matrix::from_fn(self.len(), self.n_out, |i, j| self.targets[i * self.n_out + j])
    }

    /// Rows at `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> Self {
        let mut inputs = Vec::with_capacity(idx.len() * self.n_in);
        let mut targets = Vec::with_capacity(idx.len() * self.n_out);
        for &i in idx {
            inputs.extend_from_slice(self.x(i));
            targets.extend_from_slice(self.y(i));
        }
        Self {
            inputs,
            targets,
            n_in: self.n_in,
            n_out: self.n_out,
            names: self.names.clone(),
        }
    }

    /// Rows `range.start..range.end`.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Self {
        let idx: Vec<usize> = range.collect();
        self.subset(&idx)
    }
}

/// Train/test partition with an optional validation part.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitDataset {
    pub train: Dataset,
    pub test: Dataset,
    pub val: Option<Dataset>,
}

/// Permutes the rows with `seed`, then takes the test rows, the validation
/// rows, and leaves the rest for training. Part sizes are rounded from the
/// fractions.
pub fn split(ds: &Dataset, test_fraction: f64, val_fraction: f64, seed: u64) -> Result<SplitDataset> {
    let ok = |f: f64| (0.0..1.0).contains(&f);
    if !ok(test_fraction) || !ok(val_fraction) || test_fraction + val_fraction >= 1.0 {
        return Err(Error::Param(format!(
            "split fractions must lie in [0,1) with sum < 1, got {test_fraction} and {val_fraction}"
        )));
    }
    let m = ds.len();
    let n_test = (m as f64 * test_fraction).round() as usize;
    let n_val = (m as f64 * val_fraction).round() as usize;
    let empty = |f: f64, n: usize| f > 0.0 && n == 0;
    if empty(test_fraction, n_test) || empty(val_fraction, n_val) || n_test + n_val >= m {
        return Err(Error::Param(format!(
            "fractions {test_fraction}/{val_fraction} leave an empty split of {m} rows"
        )));
    }
    let mut perm: Vec<usize> = (0..m).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = ds.subset(&perm[..n_test]);
    let val = (val_fraction > 0.0).then(|| ds.subset(&perm[n_test..n_test + n_val]));
    let train = ds.subset(&perm[n_test + n_val..]);
    Ok(SplitDataset { train, test, val })
}

/// Synthetic target
/// `(Π_{k≤⌈n/2⌉} (1 + 4ᵏ xₖ²) / Π_{k>⌈n/2⌉} (100 + 5 xₖ))^{1/n}`,
/// evaluated in log space so wide inputs do not overflow.
pub fn synthetic_target(x: &[f64]) -> f64 {
    let n = x.len();
    let half = n.div_ceil(2);
    let ln4 = 4f64.ln();
    let mut log = 0.0;
    for (i, &xk) in x.iter().enumerate() {
        let k = (i + 1) as f64;
        if i < half {
            // ln(1 + e^t) with t = ln(4ᵏ xₖ²)
            let t = k * ln4 + 2.0 * xk.abs().ln();
            log += if t > 30.0 {
                t + (-t).exp().ln_1p()
            } else {
                t.exp().ln_1p()
            };
        } else {
            log -= (100.0 + 5.0 * xk).ln();
        }
    }
    (log / n as f64).exp()
}

/// `m` samples of [`synthetic_target`] with inputs uniform on `(−1, 1)`.
pub fn gen_synthetic(n1: usize, m: usize, seed: u64) -> Result<Dataset> {
    if n1 < 2 {
        return Err(Error::Param(format!(
            "synthetic input width must be at least 2, got {n1}"
        )));
    }
    if m == 0 {
        return Err(Error::Param("sample count must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inputs = Vec::with_capacity(n1 * m);
    let mut targets = Vec::with_capacity(m);
    for _ in 0..m {
        let start = inputs.len();
        for _ in 0..n1 {
            let v = loop {
                let v: f64 = rng.random_range(-1.0..1.0);
                if v != -1.0 {
                    break v;
                }
            };
            inputs.push(v);
        }
        targets.push(synthetic_target(&inputs[start..]));
    }
    Dataset::new(inputs, targets, n1, 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NormMethod {
    #[default]
    None,
    MinMax,
    ZScore,
}

impl fmt::Display for NormMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NormMethod::None => "none",
            NormMethod::MinMax => "minmax",
            NormMethod::ZScore => "zscore",
        })
    }
}

impl FromStr for NormMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(NormMethod::None),
            "minmax" => Ok(NormMethod::MinMax),
            "zscore" => Ok(NormMethod::ZScore),
            _ => Err(Error::Param(format!("unknown normalization '{s}'"))),
        }
    }
}

/// Per-input-column affine map `x ↦ (x − shift) / scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub method: NormMethod,
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl NormStats {
    /// Fits on `ds`'s inputs. Constant columns get unit scale.
    pub fn fit(ds: &Dataset, method: NormMethod) -> Result<Self> {
        let (m, n) = (ds.len(), ds.n_in());
        if m == 0 {
            return Err(Error::Param("cannot fit normalization on an empty dataset".into()));
        }
        let col = |j: usize| (0..m).map(move |i| ds.inputs[i * n + j]);
        let (shift, scale): (Vec<f64>, Vec<f64>) = (0..n)
            .map(|j| match method {
                NormMethod::None => (0.0, 1.0),
                NormMethod::MinMax => {
                    let lo = col(j).fold(f64::INFINITY, f64::min);
                    let hi = col(j).fold(f64::NEG_INFINITY, f64::max);
                    (lo, if hi > lo { hi - lo } else { 1.0 })
                }
                NormMethod::ZScore => {
                    let mean = col(j).sum::<f64>() / m as f64;
                    let var = col(j).map(|v| (v - mean) * (v - mean)).sum::<f64>() / m as f64;
                    (mean, if var > 0.0 { var.sqrt() } else { 1.0 })
                }
            })
            .unzip();
        Ok(Self { method, shift, scale })
    }

    pub fn apply(&self, ds: &Dataset) -> Result<Dataset> {
        self.map(ds, |v, s, c| (v - s) / c)
    }

    pub fn invert(&self, ds: &Dataset) -> Result<Dataset> {
        self.map(ds, |v, s, c| v * c + s)
    }

    fn map(&self, ds: &Dataset, f: impl Fn(f64, f64, f64) -> f64) -> Result<Dataset> {
        let n = ds.n_in();
        if n != self.shift.len() {
            return Err(Error::shape("normalization columns", (1, self.shift.len()), (1, n)));
        }
        let mut out = ds.clone();
        for (i, v) in out.inputs.iter_mut().enumerate() {
            let j = i % n;
            *v = f(*v, self.shift[j], self.scale[j]);
        }
        Ok(out)
    }
}

/// Fits input statistics on `ds` and applies them.
pub fn normalize(ds: &Dataset, method: NormMethod) -> Result<(Dataset, NormStats)> {
    let stats = NormStats::fit(ds, method)?;
    Ok((stats.apply(ds)?, stats))
}

/// Fits on the training part and applies to every part.
pub fn normalize_split(data: &SplitDataset, method: NormMethod) -> Result<(SplitDataset, NormStats)> {
    let stats = NormStats::fit(&data.train, method)?;
    let val = match &data.val {
        Some(v) => Some(stats.apply(v)?),
        None => None,
    };
    Ok((
        SplitDataset {
            train: stats.apply(&data.train)?,
            test: stats.apply(&data.test)?,
            val,
        },
        stats,
    ))
}

/// Regression and classification errors of row-major predictions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    /// `(1/M) Σ ‖ŷ − y‖²`
    pub mse: f64,
    /// `100 · ‖Ŷ − Y‖_F / ‖Y‖_F`
    pub rel_l2_pct: f64,
    /// Percentage of rows whose arg-max differs.
    pub class_err_pct: f64,
}

/// Which [`Metrics`] field to report as the test error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Mse,
    #[default]
    RelL2Pct,
    ClassErrPct,
}

impl Metric {
    pub fn pick(self, m: &Metrics) -> f64 {
        match self {
            Metric::Mse => m.mse,
            Metric::RelL2Pct => m.rel_l2_pct,
            Metric::ClassErrPct => m.class_err_pct,
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Mse => "mse",
            Metric::RelL2Pct => "rel_l2_pct",
            Metric::ClassErrPct => "class_err_pct",
        })
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mse" => Ok(Metric::Mse),
            "rel_l2_pct" | "rel-l2" | "rel_l2" => Ok(Metric::RelL2Pct),
            "class_err_pct" | "class-err" | "class_err" => Ok(Metric::ClassErrPct),
            _ => Err(Error::Param(format!("unknown metric '{s}'"))),
        }
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Metrics of `pred` against `target`, both row-major with `n_out` columns.
pub fn metrics(pred: &[f64], target: &[f64], n_out: usize) -> Result<Metrics> {
    if n_out == 0 || pred.len() != target.len() || pred.len() % n_out != 0 {
        return Err(Error::shape(
            "metrics",
            (pred.len() / n_out.max(1), n_out),
            (target.len() / n_out.max(1), n_out),
        ));
    }
    let m = pred.len() / n_out;
    if m == 0 {
        return Ok(Metrics {
            mse: 0.0,
            rel_l2_pct: 0.0,
            class_err_pct: 0.0,
        });
    }
    let diff_sq: f64 = pred.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum();
    let y_sq: f64 = target.iter().map(|v| v * v).sum();
    let rel = if diff_sq == 0.0 {
        0.0
    } else if y_sq == 0.0 {
        f64::INFINITY
    } else {
        100.0 * (diff_sq / y_sq).sqrt()
    };
    let wrong = pred
        .chunks(n_out)
        .zip(target.chunks(n_out))
        .filter(|(p, t)| argmax(p) != argmax(t))
        .count();
    Ok(Metrics {
        mse: diff_sq / m as f64,
        rel_l2_pct: rel,
        class_err_pct: 100.0 * wrong as f64 / m as f64,
    })
}

#[cfg(test)]
mod tests;
