use std::path::Path;
use std::process::{Command, Output};

use kdlnet_core::data::{gen_synthetic, load_csv, split, write_csv};
use kdlnet_core::net::checkpoint;
use kdlnet_core::optim::{adaptive_rank_train, train, AdaptiveConfig, Optimizer, TrainHistory};
use kdlnet_core::{Activation, Activations, ArchSpec, Combine, Network, TrainConfig};

fn kdlnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kdlnet"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn synthetic_csv(dir: &Path, n1: usize, m: usize, seed: u64) -> String {
    let path = dir.join("syn.csv");
    write_csv(&gen_synthetic(n1, m, seed).unwrap(), &path).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn no_arguments_is_a_usage_error() {
    let o = kdlnet(&[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
}

#[test]
fn help_and_version_succeed() {
    assert_eq!(kdlnet(&["--help"]).status.code(), Some(0));
    assert_eq!(kdlnet(&["--version"]).status.code(), Some(0));
    assert_eq!(kdlnet(&["train", "--help"]).status.code(), Some(0));
}

#[test]
fn bad_architecture_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let csv = synthetic_csv(dir.path(), 4, 50, 0);
    let o = kdlnet(&["train", "--arch", "4|x|1", "--data", &csv, "--skip-header"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn missing_data_file_exits_two() {
    let o = kdlnet(&["train", "--arch", "4|3|1", "--data", "/nonexistent/data.csv"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn divergence_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let csv = synthetic_csv(dir.path(), 8, 200, 0);
    let o = kdlnet(&[
        "train",
        "--arch",
        "8|4|1",
        "--data",
        &csv,
        "--skip-header",
        "--phi1",
        "linear",
        "--optimizer",
        "sgd",
        "--eta",
        "1e9",
        "--epochs",
        "3",
    ]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn train_writes_one_history_row_per_epoch() {
    let dir = tempfile::tempdir().unwrap();
    let csv = synthetic_csv(dir.path(), 8, 1000, 3);
    let hist = dir.path().join("h.csv");
    let o = kdlnet(&[
        "train",
        "--arch",
        "8|64|64|1",
        "--data",
        &csv,
        "--skip-header",
        "--epochs",
        "20",
        "--out-history",
        hist.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let records = TrainHistory::parse_csv(&std::fs::read_to_string(&hist).unwrap()).unwrap();
    assert_eq!(records.len(), 20);
    for (i, r) in records.iter().enumerate() {
        assert_eq!(r.epoch, i + 1);
        assert!(r.train_loss.is_finite());
        assert!(r.test_error.unwrap().is_finite());
    }
}

#[test]
fn banner_reports_parameter_counts() {
    let dir = tempfile::tempdir().unwrap();
    let csv = synthetic_csv(dir.path(), 8, 100, 0);
    let o = kdlnet(&[
        "train",
        "--arch",
        "(2,4)|(8,8)|(8,8)|(1,1)",
        "--data",
        &csv,
        "--skip-header",
        "--epochs",
        "1",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let first = stdout(&o).lines().next().unwrap().to_string();
    assert!(first.contains("409 unique"), "{first}");
}

#[test]
fn gen_data_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("g.csv");
    let o = kdlnet(&[
        "gen-data",
        "--n1",
        "6",
        "--samples",
        "40",
        "--seed",
        "9",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let from_cli = load_csv(&out, &[6], true).unwrap();
    let lib = gen_synthetic(6, 40, 9).unwrap();
    assert_eq!(from_cli.inputs(), lib.inputs());
    assert_eq!(from_cli.targets(), lib.targets());
}

fn lib_run(csv: &str, arch: &str, acts: Activations, config: &TrainConfig) -> (Network, TrainHistory) {
    let ds = load_csv(Path::new(csv), &[8], true).unwrap();
    let data = split(&ds, 0.1, 0.0, config.seed).unwrap();
    let mut net = Network::init(
        &ArchSpec::parse(arch).unwrap(),
        acts,
        Combine::ActivateEach,
        config.seed,
    )
    .unwrap();
    let h = if config.adaptive.is_some() {
        adaptive_rank_train(&mut net, &data, config).unwrap()
    } else {
        train(&mut net, &data, config).unwrap()
    };
    (net, h)
}

fn assert_same(cli_hist: &Path, cli_model: &Path, net: &Network, h: &TrainHistory) {
    let records = TrainHistory::parse_csv(&std::fs::read_to_string(cli_hist).unwrap()).unwrap();
    assert_eq!(records.len(), h.records.len());
    for (a, b) in records.iter().zip(&h.records) {
        assert_eq!(a.epoch, b.epoch);
        assert_eq!(a.train_loss, b.train_loss);
        assert_eq!(a.test_error, b.test_error);
        assert_eq!(a.val_loss, b.val_loss);
        assert_eq!(a.ranks, b.ranks);
    }
    let loaded = checkpoint::load(cli_model).unwrap();
    assert_eq!(checkpoint::to_string(&loaded), checkpoint::to_string(net));
}

#[test]
fn cli_training_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let csv = synthetic_csv(dir.path(), 8, 300, 5);
    let hist = dir.path().join("h.csv");
    let model = dir.path().join("m.json");
    let arch = "(2,4)|^2(4,4)|(1,1)";
    let o = kdlnet(&[
        "train",
        "--arch",
        arch,
        "--data",
        &csv,
        "--skip-header",
        "--epochs",
        "4",
        "--eta",
        "0.01",
        "--batch",
        "16",
        "--optimizer",
        "sgd",
        "--seed",
        "11",
        "--phi-out",
        "linear",
        "--out-history",
        hist.to_str().unwrap(),
        "--out-model",
        model.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let config = TrainConfig {
        eta: 0.01,
        epochs: 4,
        batch_size: 16,
        optimizer: Optimizer::Sgd,
        seed: 11,
        ..TrainConfig::default()
    };
    let acts = Activations::new(Activation::Tanh, Activation::Tanh).with_output(Activation::Linear);
    let (net, h) = lib_run(&csv, arch, acts, &config);
    assert_same(&hist, &model, &net, &h);
}

#[test]
fn cli_adaptive_training_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let csv = synthetic_csv(dir.path(), 8, 300, 6);
    let hist = dir.path().join("h.csv");
    let model = dir.path().join("m.json");
    let arch = "(2,4)|(4,4)|(1,1)";
    let o = kdlnet(&[
        "train-adaptive",
        "--arch",
        arch,
        "--data",
        &csv,
        "--skip-header",
        "--epochs",
        "12",
        "--eta",
        "0.01",
        "--seed",
        "2",
        "--plateau-window",
        "2",
        "--plateau-tol",
        "0.5",
        "--probe-epochs",
        "1",
        "--max-rank",
        "3",
        "--out-history",
        hist.to_str().unwrap(),
        "--out-model",
        model.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let config = TrainConfig {
        eta: 0.01,
        epochs: 12,
        seed: 2,
        adaptive: Some(AdaptiveConfig {
            plateau_window: 2,
            plateau_tol: 0.5,
            probe_epochs: 1,
            max_rank: 3,
            ..AdaptiveConfig::default()
        }),
        ..TrainConfig::default()
    };
    let (net, h) = lib_run(&csv, arch, Activations::default(), &config);
    assert!(!h.events.is_empty());
    assert_same(&hist, &model, &net, &h);
}

#[test]
fn decompose_bound_and_sweep_run_on_a_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let csv = synthetic_csv(dir.path(), 8, 200, 1);
    let model = dir.path().join("fnn.json");
    let o = kdlnet(&[
        "train",
        "--arch",
        "8|16|1",
        "--data",
        &csv,
        "--skip-header",
        "--epochs",
        "2",
        "--out-model",
        model.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let m = model.to_str().unwrap();

    let o = kdlnet(&[
        "decompose",
        "--model",
        m,
        "--shape",
        "4,2,4,4",
        "--rank",
        "2",
        "--layer",
        "0",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("index,sigma,tail"));

    let input = dir.path().join("x.csv");
    std::fs::write(&input, "0.1,-0.2,0.3,0.4,-0.5,0.6,0.7,-0.8\n").unwrap();
    let o = kdlnet(&[
        "bound",
        "--model",
        m,
        "--shapes",
        "4,2,4,4;1,4,1,4",
        "--rank",
        "1",
        "--input",
        input.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("total,1"));

    let o = kdlnet(&[
        "rank-sweep",
        "--model",
        m,
        "--shapes",
        "(2,4)|(4,4)|(1,1)",
        "--test-data",
        &csv,
        "--skip-header",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let full = text.lines().find(|l| l.starts_with("8,")).unwrap();
    let reference = text.lines().find(|l| l.starts_with("reference,")).unwrap();
    let e: f64 = full.split(',').nth(1).unwrap().parse().unwrap();
    let r: f64 = reference.split(',').nth(1).unwrap().parse().unwrap();
    assert!((e - r).abs() <= 1e-9 * r.max(1.0));
}

#[test]
fn bench_writes_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bench.toml");
    std::fs::write(
        &cfg,
        r#"
repetitions = 1

[dataset]
kind = "synthetic"
n1 = 4
train = 60
test = 20
seed = 0

[train]
epochs = 2
batch_size = 20
eta = 0.01

[[arch]]
network = "KDL"
arch = "(2,2)|(2,2)|(1,1)"

[[arch]]
network = "FNN"
arch = "4|4|1"
"#,
    )
    .unwrap();
    let out = dir.path().join("report.csv");
    let o = kdlnet(&[
        "bench",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 3, "{text}");
}
