//! Architecture comparison runs: timed training, exact flop tallies,
//! parameter counts, and CSV/JSON/markdown reports.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{gen_synthetic, load_csv, load_idx, normalize_split, split, NormMethod, SplitDataset};
use crate::error::{Error, Result};
use crate::grad::{backprop_sample, Gradients};
use crate::matlin::{Flops, Matrix};
use crate::net::{Activation, Activations, ArchSpec, Combine, Convention, Network};
use crate::optim::{train, TrainConfig};

/// Flops of one sample's forward pass and of its reverse pass (parameter
/// gradients plus input sensitivities of every layer but the first).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct FlopProfile {
    pub fwd: u64,
    pub bwd: u64,
}

impl FlopProfile {
    pub fn total(&self) -> u64 {
        self.fwd + self.bwd
    }
}

pub fn flop_profile(spec: &ArchSpec, acts: Activations, combine: Combine) -> Result<FlopProfile> {
    let net = Network::zeros(spec, acts, combine)?;
    let (r, c) = net.input_shape();
    let mut fwd = Flops::new();
    let (out, caches) = net.forward_cached(&Matrix::zeros(r, c), &mut fwd)?;
    let mut bwd = Flops::new();
    let mut grads = Gradients::zeros(&net);
    backprop_sample(
        &net,
        &caches,
        Matrix::zeros(out.rows(), out.cols()),
        &mut grads,
        &mut bwd,
    )?;
    Ok(FlopProfile {
        fwd: fwd.get(),
        bwd: bwd.get(),
    })
}

/// Where a benchmark's data comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DatasetSpec {
    /// `train + test` synthetic samples; the first `train` rows train.
    Synthetic {
        n1: usize,
        train: usize,
        test: usize,
        #[serde(default)]
        seed: u64,
    },
    Csv {
        path: PathBuf,
        target_cols: Vec<usize>,
        #[serde(default)]
        skip_header: bool,
        test_fraction: f64,
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        normalize: Option<String>,
    },
    /// IDX image/label pairs, optionally truncated to their first rows.
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        #[serde(default)]
        train_limit: Option<usize>,
        #[serde(default)]
        test_limit: Option<usize>,
    },
}

impl DatasetSpec {
    /// Resolves relative paths against `base`.
    pub fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match self {
            DatasetSpec::Synthetic { .. } => {}
            DatasetSpec::Csv { path, .. } => fix(path),
            DatasetSpec::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
                ..
            } => {
                for p in [train_images, train_labels, test_images, test_labels] {
                    fix(p);
                }
            }
        }
    }

    pub fn load(&self) -> Result<SplitDataset> {
        match self {
            DatasetSpec::Synthetic { n1, train, test, seed } => {
                let ds = gen_synthetic(*n1, train + test, *seed)?;
                Ok(SplitDataset {
                    train: ds.slice(0..*train),
                    test: ds.slice(*train..train + test),
                    val: None,
                })
            }
            DatasetSpec::Csv {
                path,
                target_cols,
                skip_header,
                test_fraction,
                seed,
                normalize,
            } => {
                let ds = load_csv(path, target_cols, *skip_header)?;
                let data = split(&ds, *test_fraction, 0.0, *seed)?;
                match normalize {
                    Some(m) => Ok(normalize_split(&data, NormMethod::from_str(m)?)?.0),
                    None => Ok(data),
                }
            }
            DatasetSpec::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
                train_limit,
                test_limit,
            } => {
                let take = |ds: crate::data::Dataset, n: &Option<usize>| match n {
                    Some(n) if *n < ds.len() => ds.slice(0..*n),
                    _ => ds,
                };
                Ok(SplitDataset {
                    train: take(load_idx(train_images, train_labels)?, train_limit),
                    test: take(load_idx(test_images, test_labels)?, test_limit),
                    val: None,
                })
            }
        }
    }
}

/// One architecture to benchmark. With `extended`, the dense network with
/// the KDL spec's node counts is run instead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchArch {
    pub network: String,
    pub arch: String,
    #[serde(default)]
    pub extended: bool,
}

impl BenchArch {
    pub fn spec(&self) -> Result<ArchSpec> {
        let spec = ArchSpec::parse(&self.arch)?;
        if self.extended {
            spec.extended_fnn()
        } else {
            Ok(spec)
        }
    }
}

fn default_reps() -> usize {
    1
}

fn default_phi() -> String {
    "tanh".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_reps")]
    pub repetitions: usize,
    #[serde(default = "default_phi")]
    pub phi1: String,
    #[serde(default = "default_phi")]
    pub phi2: String,
    #[serde(default)]
    pub phi_out: Option<String>,
    #[serde(default)]
    pub combine: Option<String>,
    #[serde(rename = "arch")]
    pub archs: Vec<BenchArch>,
}

impl BenchConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Format {
            offset: e.span().map_or(0, |s| s.start as u64),
            detail: e.message().to_string(),
        })
    }

    /// Reads a TOML file; relative dataset paths resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(dir) = path.parent() {
            cfg.dataset.rebase(dir);
        }
        Ok(cfg)
    }

    pub fn activations(&self) -> Result<(Activations, Combine)> {
        let mut acts = Activations::new(self.phi1.parse()?, self.phi2.parse()?);
        if let Some(o) = &self.phi_out {
            acts = acts.with_output(o.parse::<Activation>()?);
        }
        let combine = match &self.combine {
            Some(c) => c.parse()?,
            None => Combine::default(),
        };
        Ok((acts, combine))
    }

    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 {
            return Err(Error::Param("repetitions must be at least 1".into()));
        }
        if self.archs.is_empty() {
            return Err(Error::Param("no architectures to benchmark".into()));
        }
        self.train.validate()?;
        self.activations()?;
        for a in &self.archs {
            a.spec()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub network: String,
    pub architecture: String,
    pub params_unique: u64,
    pub params_connections: u64,
    pub fwd_s: f64,
    pub bwd_s: f64,
    pub total_s: f64,
    /// Final-epoch test error, averaged over repetitions.
    pub test_metric: Option<f64>,
    /// Flops over all training samples and epochs.
    pub fwd_flops: u64,
    pub bwd_flops: u64,
    /// Per-epoch training losses of the first repetition.
    pub losses: Vec<f64>,
    /// Set when training failed.
    pub failure: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct BenchReport {
    pub metric: String,
    pub rows: Vec<BenchRow>,
}

pub const REPORT_COLUMNS: [&str; 10] = [
    "network",
    "architecture",
    "params_unique",
    "params_connections",
    "fwd_s",
    "bwd_s",
    "total_s",
    "test_metric",
    "fwd_flops",
    "bwd_flops",
];

/// Trains every architecture on the same data with the same seeds and
/// records timing, flops, counts, and the final test metric. A failing
/// architecture yields a row with `failure` set.
pub fn run_bench(config: &BenchConfig) -> Result<BenchReport> {
    config.validate()?;
    let data = config.dataset.load()?;
    run_bench_on(config, &data)
}

/// [`run_bench`] on already-loaded data.
pub fn run_bench_on(config: &BenchConfig, data: &SplitDataset) -> Result<BenchReport> {
    config.validate()?;
    let (acts, combine) = config.activations()?;
    let mut report = BenchReport {
        metric: config.train.metric.to_string(),
        rows: Vec::new(),
    };
    for a in &config.archs {
        let spec = a.spec()?;
        let profile = flop_profile(&spec, acts, combine)?;
        let work = (data.train.len() * config.train.epochs) as u64;
        let mut row = BenchRow {
            network: a.network.clone(),
            architecture: spec.to_string(),
            params_unique: spec.count_params(Convention::UniqueScalars),
            params_connections: spec.count_params(Convention::Connections),
            fwd_s: 0.0,
            bwd_s: 0.0,
            total_s: 0.0,
            test_metric: None,
            fwd_flops: profile.fwd * work,
            bwd_flops: profile.bwd * work,
            losses: Vec::new(),
            failure: None,
        };
        let mut metric_sum = 0.0;
        for rep in 0..config.repetitions {
            let mut net = Network::init(&spec, acts, combine, config.train.seed)?;
            let t0 = Instant::now();
            let result = train(&mut net, data, &config.train);
            let elapsed = t0.elapsed().as_secs_f64();
            match result {
                Ok(h) => {
                    row.fwd_s += h.total_fwd_s();
                    row.bwd_s += h.total_bwd_s();
                    row.total_s += elapsed;
                    metric_sum += h.last().and_then(|r| r.test_error).unwrap_or(f64::NAN);
                    if rep == 0 {
                        row.losses = h.losses();
                    }
                }
                Err(e) if e.is_numeric() => {
                    row.failure = Some(e.to_string());
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        if row.failure.is_none() {
            let n = config.repetitions as f64;
            row.fwd_s /= n;
            row.bwd_s /= n;
            row.total_s /= n;
            row.test_metric = Some(metric_sum / n);
        }
        report.rows.push(row);
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
    Markdown,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            "md" | "markdown" => Ok(ReportFormat::Markdown),
            _ => Err(Error::Param(format!("unknown report format '{s}'"))),
        }
    }
}

impl ReportFormat {
    /// Guesses from a file extension.
    pub fn from_path(path: &Path) -> Option<Self> {
        path.extension()?.to_str()?.parse().ok()
    }
}

fn cells(r: &BenchRow) -> [String; 10] {
    [
        r.network.clone(),
        r.architecture.clone(),
        r.params_unique.to_string(),
        r.params_connections.to_string(),
        r.fwd_s.to_string(),
        r.bwd_s.to_string(),
        r.total_s.to_string(),
        r.test_metric.map(|v| v.to_string()).unwrap_or_default(),
        r.fwd_flops.to_string(),
        r.bwd_flops.to_string(),
    ]
}

pub fn render_report(report: &BenchReport, format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            let fail = |e: csv::Error| Error::Param(format!("report serialization: {e}"));
            w.write_record(REPORT_COLUMNS).map_err(fail)?;
            for r in &report.rows {
                w.write_record(cells(r)).map_err(fail)?;
            }
            let bytes = w
                .into_inner()
                .map_err(|e| Error::Param(format!("report serialization: {e}")))?;
            Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
        }
        ReportFormat::Json => {
            serde_json::to_string_pretty(report).map_err(|e| Error::Param(format!("report serialization: {e}")))
        }
        ReportFormat::Markdown => {
            let mut s = format!("| {} |\n|", REPORT_COLUMNS.join(" | "));
            s.push_str(&"---|".repeat(REPORT_COLUMNS.len()));
            s.push('\n');
            for r in &report.rows {
                let mut c = cells(r);
                // Pipes inside a cell end it, even within a code span.
                c[1] = format!("`{}`", c[1].replace('|', "\\|"));
                for cell in &mut c[4..=7] {
                    if let Ok(v) = cell.parse::<f64>() {
                        *cell = format!("{v:.3}");
                    }
                }
                if let Some(f) = &r.failure {
                    c[7] = format!("failed: {f}");
                }
                let _ = writeln!(s, "| {} |", c.join(" | "));
            }
            Ok(s)
        }
    }
}

pub fn emit_report(report: &BenchReport, format: ReportFormat, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, render_report(report, format)?).map_err(|e| Error::io(path, e))
}
