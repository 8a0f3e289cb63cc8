use std::fs;
use std::path::Path;

use kdlnet_core::analysis::{rank_sweep, theorem_bound};
use kdlnet_core::bench::{emit_report, render_report, run_bench, BenchConfig, ReportFormat};
use kdlnet_core::data::{gen_synthetic, load_csv, load_idx, normalize_split, split, write_csv, NormMethod};
use kdlnet_core::kpd::{epsilon_trunc, kpd_full};
use kdlnet_core::net::checkpoint;
use kdlnet_core::net::{Layer, Node};
use kdlnet_core::optim::{adaptive_rank_train, train, AdaptiveConfig, Optimizer, TrainHistory};
use kdlnet_core::{
    matlin, Activation, Activations, ArchSpec, Combine, Convention, Dataset, Error, KpShape, Matrix, Metric, Network,
    Result, SplitDataset, TrainConfig,
};

use crate::args::*;

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| io_err(p, e)),
        None => {
            put!("{text}");
            Ok(())
        }
    }
}

pub fn gen_data(a: &GenDataArgs) -> Result<()> {
    let ds = gen_synthetic(a.n1, a.samples, a.seed)?;
    write_csv(&ds, &a.out)?;
    say!(
        "wrote {} samples with {} inputs to {}",
        ds.len(),
        ds.n_in(),
        a.out.display()
    );
    Ok(())
}

fn load_table(path: &Path, labels: Option<&Path>, target_cols: &[usize], skip_header: bool) -> Result<Dataset> {
    if let Some(labels) = labels {
        return load_idx(path, labels);
    }
    if target_cols.is_empty() {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let lines = text.lines().filter(|l| !l.trim().is_empty());
        let width = lines
            .clone()
            .nth(usize::from(skip_header))
            .map_or(0, |l| l.split(',').count());
        if width < 2 {
            return Err(Error::Csv {
                path: path.display().to_string(),
                line: 1,
                detail: "need at least two columns".into(),
            });
        }
        return load_csv(path, &[width - 1], skip_header);
    }
    load_csv(path, target_cols, skip_header)
}

/// Loads training and test data as the flags describe; all shuffling uses
/// `seed`.
pub fn load_data(a: &DataArgs, seed: u64) -> Result<SplitDataset> {
    let mut ds = load_table(&a.data, a.labels.as_deref(), &a.target_cols, a.skip_header)?;
    if let Some(n) = a.limit {
        if n < ds.len() {
            ds = ds.slice(0..n);
        }
    }
    let data = match &a.test_data {
        Some(t) => SplitDataset {
            train: ds,
            test: load_table(t, a.test_labels.as_deref(), &a.target_cols, a.skip_header)?,
            val: None,
        },
        None => split(&ds, a.test_fraction, 0.0, seed)?,
    };
    let method: NormMethod = a.normalize.parse()?;
    Ok(match method {
        NormMethod::None => data,
        m => normalize_split(&data, m)?.0,
    })
}

pub fn activations(phi1: &str, phi2: &str, phi_out: Option<&str>) -> Result<Activations> {
    let mut acts = Activations::new(phi1.parse()?, phi2.parse()?);
    if let Some(o) = phi_out {
        acts = acts.with_output(o.parse::<Activation>()?);
    }
    Ok(acts)
}

pub fn train_config(a: &TrainArgs) -> Result<TrainConfig> {
    Ok(TrainConfig {
        eta: a.eta,
        lambda: a.lambda,
        epochs: a.epochs,
        batch_size: a.batch,
        optimizer: Optimizer::parse(&a.optimizer)?,
        seed: a.seed,
        shuffle: !a.no_shuffle,
        metric: a.metric.parse()?,
        adaptive: None,
    })
}

fn build_network(a: &TrainArgs) -> Result<Network> {
    let spec = ArchSpec::parse(&a.arch)?;
    let acts = activations(&a.phi1, &a.phi2, a.phi_out.as_deref())?;
    let combine: Combine = a.combine.parse()?;
    Network::init(&spec, acts, combine, a.seed)
}

fn banner(net: &Network) {
    let spec = &net.spec;
    say!(
        "kdlnet {} [{:?}] parameters: {} unique, {} connections",
        spec,
        spec.kind(),
        spec.count_params(Convention::UniqueScalars),
        spec.count_params(Convention::Connections)
    );
}

fn report(net: &Network, history: &TrainHistory, a: &TrainArgs) -> Result<()> {
    for r in &history.records {
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.6e}"));
        say!(
            "epoch {:>3}  train_loss {:.6e}  val_loss {}  test_error {}  fwd {:.3}s  bwd {:.3}s  ranks {:?}",
            r.epoch,
            r.train_loss,
            opt(r.val_loss),
            opt(r.test_error),
            r.fwd_s,
            r.bwd_s,
            r.ranks
        );
    }
    for e in &history.events {
        say!(
            "rank growth after epoch {}: ranks {:?}, output change {:.3e}, lr factor {:?}, eta {}",
            e.epoch,
            e.ranks,
            e.perturbation,
            e.factor,
            e.eta
        );
    }
    if let Some(p) = &a.out_history {
        history.write_csv(p)?;
    }
    if let Some(p) = &a.out_model {
        checkpoint::save(net, p)?;
    }
    Ok(())
}

pub fn train_cmd(a: &TrainArgs) -> Result<()> {
    let config = train_config(a)?;
    let mut net = build_network(a)?;
    banner(&net);
    let data = load_data(&a.data, a.seed)?;
    let history = train(&mut net, &data, &config)?;
    report(&net, &history, a)
}

pub fn adaptive_config(a: &AdaptiveArgs) -> Result<TrainConfig> {
    let mut config = train_config(&a.train)?;
    config.adaptive = Some(AdaptiveConfig {
        val_fraction: a.val_fraction,
        plateau_window: a.plateau_window,
        plateau_tol: a.plateau_tol,
        max_rank: a.max_rank,
        lr_factors: a.lr_factors.clone(),
        probe_epochs: a.probe_epochs,
    });
    Ok(config)
}

pub fn train_adaptive_cmd(a: &AdaptiveArgs) -> Result<()> {
    let config = adaptive_config(a)?;
    let mut net = build_network(&a.train)?;
    banner(&net);
    let data = load_data(&a.train.data, a.train.seed)?;
    let history = adaptive_rank_train(&mut net, &data, &config)?;
    report(&net, &history, &a.train)
}

fn parse_quad(s: &str) -> Result<KpShape> {
    let v: Vec<usize> = s
        .split(',')
        .map(|t| t.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Param(format!("factor shape '{s}' is not m1,n1,m2,n2")))?;
    match v[..] {
        [m1, n1, m2, n2] => KpShape::new(m1, n1, m2, n2),
        _ => Err(Error::Param(format!("factor shape '{s}' needs four sizes"))),
    }
}

/// Factor shapes from a KDL architecture string or `m1,n1,m2,n2;...`.
pub fn parse_shapes(s: &str) -> Result<Vec<KpShape>> {
    if s.trim_start().starts_with('(') {
        return ArchSpec::parse(s)?.kp_shapes();
    }
    s.split(';').filter(|t| !t.trim().is_empty()).map(parse_quad).collect()
}

pub fn decompose_cmd(a: &DecomposeArgs) -> Result<()> {
    let net = checkpoint::load(&a.model)?;
    let shape = parse_quad(&a.shape)?;
    let layer = net
        .layers
        .get(a.layer)
        .ok_or_else(|| Error::Param(format!("layer {} out of range ({} layers)", a.layer, net.layers.len())))?;
    let Layer::Dense(d) = layer else {
        return Err(Error::Param("decompose works on dense layers".into()));
    };
    let full = kpd_full(&d.w, shape)?;
    if a.rank == 0 || a.rank > full.rank() {
        return Err(Error::Param(format!("rank {} outside 1..={}", a.rank, full.rank())));
    }
    let approx = full.truncate(a.rank)?;
    let err = matlin::frob(&d.w.sub(&approx.reconstruct())?);
    let mut text = String::from("index,sigma,tail\n");
    for (i, s) in full.sigma.iter().enumerate() {
        text.push_str(&format!("{},{},{}\n", i + 1, s, epsilon_trunc(&full.sigma, i + 1)));
    }
    say!(
        "layer {} {}x{} as ({}x{}) ⊗ ({}x{}): rank {} truncation error {:.6e} (relative {:.6e})",
        a.layer,
        d.w.rows(),
        d.w.cols(),
        shape.m1,
        shape.n1,
        shape.m2,
        shape.n2,
        a.rank,
        err,
        err / matlin::frob(&d.w).max(f64::MIN_POSITIVE)
    );
    write_or_print(a.out.as_deref(), &text)
}

/// First row of a CSV file that parses as numbers.
fn read_input_row(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let row: std::result::Result<Vec<f64>, _> = line.split(',').map(|t| t.trim().parse::<f64>()).collect();
        if let Ok(row) = row {
            return Ok(row);
        }
    }
    Err(Error::Csv {
        path: path.display().to_string(),
        line: 1,
        detail: "no numeric row".into(),
    })
}

pub fn bound_cmd(a: &BoundArgs) -> Result<()> {
    let net = checkpoint::load(&a.model)?;
    let shapes = parse_shapes(&a.shapes)?;
    let row = read_input_row(&a.input)?;
    let x = match net.spec.input {
        Node::Vector(n) if n == row.len() => Matrix::from_col_major(n, 1, row)?,
        _ => {
            return Err(Error::shape("bound input", (row.len(), 1), net.input_shape()));
        }
    };
    let r = theorem_bound(&net, &shapes, a.rank, a.c1, &x)?;
    say!("bound {:.6e} measured discrepancy {:.6e}", r.total_bound, r.discrepancy);
    write_or_print(a.out.as_deref(), &r.to_csv())
}

pub fn rank_sweep_cmd(a: &RankSweepArgs) -> Result<()> {
    let net = checkpoint::load(&a.model)?;
    let shapes = parse_shapes(&a.shapes)?;
    let test = load_table(&a.test_data, a.test_labels.as_deref(), &a.target_cols, a.skip_header)?;
    let metric: Metric = a.metric.parse()?;
    let ks = (!a.ks.is_empty()).then_some(&a.ks[..]);
    let s = rank_sweep(&net, &shapes, &test, a.phi2.parse()?, ks, metric)?;
    write_or_print(a.out.as_deref(), &s.to_csv())
}

pub fn bench_cmd(a: &BenchArgs) -> Result<()> {
    let cfg = BenchConfig::load(&a.config)?;
    let report = run_bench(&cfg)?;
    let format = match (&a.format, &a.out) {
        (Some(f), _) => f.parse()?,
        (None, Some(p)) => ReportFormat::from_path(p).unwrap_or(ReportFormat::Csv),
        (None, None) => ReportFormat::Markdown,
    };
    match &a.out {
        Some(p) => emit_report(&report, format, p),
        None => {
            put!("{}", render_report(&report, format)?);
            Ok(())
        }
    }
}
