use super::*;
use proptest::prelude::*;

/// Direct product form of the synthetic target.
fn target_oracle(x: &[f64]) -> f64 {
    let n = x.len();
    let half = n.div_ceil(2);
    let num: f64 = (0..half).map(|i| 1.0 + 4f64.powi(i as i32 + 1) * x[i] * x[i]).product();
    let den: f64 = (half..n).map(|i| 100.0 + 5.0 * x[i]).product();
    (num / den).powf(1.0 / n as f64)
}

#[test]
fn synthetic_at_origin() {
    assert!((synthetic_target(&[0.0; 8]) - 0.1).abs() < 1e-15);
}

#[test]
fn synthetic_matches_transcription() {
    let ds = gen_synthetic(8, 200, 4).unwrap();
    for i in 0..ds.len() {
        let want = target_oracle(ds.x(i));
        assert!(
            (ds.y(i)[0] - want).abs() <= 1e-14 * want.max(1.0),
            "{} vs {want}",
            ds.y(i)[0]
        );
    }
    let ds = gen_synthetic(14, 50, 5).unwrap();
    for i in 0..ds.len() {
        assert!((ds.y(i)[0] - target_oracle(ds.x(i))).abs() < 1e-14);
    }
}

#[test]
fn synthetic_is_reproducible_and_in_domain() {
    let a = gen_synthetic(8, 100, 9).unwrap();
    let b = gen_synthetic(8, 100, 9).unwrap();
    let c = gen_synthetic(8, 100, 10).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert!(a.inputs().iter().all(|&v| v > -1.0 && v < 1.0));
    assert!(a.targets().iter().all(|&v| v > 0.0 && v.is_finite()));
    let wide = gen_synthetic(280, 5, 1).unwrap();
    assert!(wide.targets().iter().all(|&v| v > 0.0 && v.is_finite()));
    assert!(gen_synthetic(1, 5, 1).is_err());
}

#[test]
fn csv_reads_targets_and_header() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("a.csv");
    std::fs::write(&p, "1,2,3\n4,5,6\n7,8,9\n").unwrap();
    let ds = load_csv(&p, &[2], false).unwrap();
    assert_eq!((ds.len(), ds.n_in(), ds.n_out()), (3, 2, 1));
    assert_eq!(ds.x(1), &[4.0, 5.0]);
    assert_eq!(ds.y(2), &[9.0]);

    std::fs::write(&p, "a,b,c\n1,2,3\n").unwrap();
    let ds = load_csv(&p, &[0], true).unwrap();
    assert_eq!(ds.len(), 1);
    assert_eq!(ds.x(0), &[2.0, 3.0]);
    assert_eq!(
        ds.names.as_deref(),
        Some(&["b".to_string(), "c".into(), "a".into()][..])
    );
}

#[test]
fn csv_errors_carry_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.csv");
    std::fs::write(&p, "1,2\n3,x\n").unwrap();
    match load_csv(&p, &[1], false) {
        Err(Error::Csv { line: 2, .. }) => {}
        other => panic!("{other:?}"),
    }
    std::fs::write(&p, "1,2\n3,4,5\n").unwrap();
    match load_csv(&p, &[1], false) {
        Err(Error::Csv { line: 2, .. }) => {}
        other => panic!("{other:?}"),
    }
    assert!(matches!(
        load_csv(dir.path().join("missing.csv"), &[0], false),
        Err(Error::Io { .. })
    ));
}

proptest! {
    #[test]
    fn csv_round_trip_is_exact(rows in prop::collection::vec(prop::collection::vec(-1e6f64..1e6, 4), 1..20)) {
        let xs: Vec<Vec<f64>> = rows.iter().map(|r| r[..3].to_vec()).collect();
        let ys: Vec<Vec<f64>> = rows.iter().map(|r| r[3..].to_vec()).collect();
        let ds = Dataset::from_rows(&xs, &ys).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rt.csv");
        write_csv(&ds, &p).unwrap();
        let back = load_csv(&p, &[3], true).unwrap();
        prop_assert_eq!(back.inputs(), ds.inputs());
        prop_assert_eq!(back.targets(), ds.targets());
    }

    #[test]
    fn idx_round_trip(n in 1usize..6, r in 1usize..5, c in 1usize..5, seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let pixels: Vec<u8> = (0..n * r * c).map(|_| rng.random()).collect();
        let labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..10)).collect();
        let dir = tempfile::tempdir().unwrap();
        let (pi, pl) = (dir.path().join("i"), dir.path().join("l"));
        std::fs::write(&pi, write_idx_images(r, c, &pixels)).unwrap();
        std::fs::write(&pl, write_idx_labels(&labels)).unwrap();
        let ds = load_idx(&pi, &pl).unwrap();
        prop_assert_eq!(ds.n_in(), r * c);
        for (a, &b) in ds.inputs().iter().zip(&pixels) {
            prop_assert_eq!((a * 255.0).round() as u8, b);
        }
        for (i, &l) in labels.iter().enumerate() {
            prop_assert_eq!(argmax(ds.y(i)), l as usize);
            prop_assert_eq!(ds.y(i).iter().sum::<f64>(), 1.0);
        }
    }

    #[test]
    fn split_partitions_rows(m in 10usize..200, seed in any::<u64>()) {
        let xs: Vec<Vec<f64>> = (0..m).map(|i| vec![i as f64]).collect();
        let ys = xs.clone();
        let ds = Dataset::from_rows(&xs, &ys).unwrap();
        let s = split(&ds, 0.2, 0.1, seed).unwrap();
        let mut all: Vec<f64> = s.train.inputs().iter()
            .chain(s.test.inputs())
            .chain(s.val.as_ref().unwrap().inputs())
            .copied()
            .collect();
        all.sort_by(f64::total_cmp);
        prop_assert_eq!(all, (0..m).map(|i| i as f64).collect::<Vec<_>>());
    }

    #[test]
    fn normalization_inverts(rows in prop::collection::vec(prop::collection::vec(-50f64..50.0, 3), 2..30)) {
        let ys: Vec<Vec<f64>> = rows.iter().map(|_| vec![0.0]).collect();
        let ds = Dataset::from_rows(&rows, &ys).unwrap();
        for method in [NormMethod::MinMax, NormMethod::ZScore] {
            let (n, stats) = normalize(&ds, method).unwrap();
            let back = stats.invert(&n).unwrap();
            for (a, b) in back.inputs().iter().zip(ds.inputs()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn idx_single_zero_image() {
    let dir = tempfile::tempdir().unwrap();
    let (pi, pl) = (dir.path().join("i"), dir.path().join("l"));
    std::fs::write(&pi, write_idx_images(28, 28, &[0; 784])).unwrap();
    std::fs::write(&pl, write_idx_labels(&[3])).unwrap();
    let ds = load_idx(&pi, &pl).unwrap();
    assert_eq!(ds.x(0), &[0.0; 784][..]);
    let mut e3 = [0.0; 10];
    e3[3] = 1.0;
    assert_eq!(ds.y(0), &e3);

    let mut px = vec![0u8; 784];
    px[5] = 255;
    std::fs::write(&pi, write_idx_images(28, 28, &px)).unwrap();
    assert_eq!(load_idx(&pi, &pl).unwrap().x(0)[5], 1.0);
}

#[test]
fn idx_rejects_bad_magic_and_truncation() {
    let mut img = write_idx_images(2, 2, &[1, 2, 3, 4]);
    img[3] = 0x01;
    assert!(matches!(read_idx_images(&img), Err(Error::Format { offset: 0, .. })));
    let img = write_idx_images(2, 2, &[1, 2, 3, 4]);
    assert!(matches!(
        read_idx_images(&img[..18]),
        Err(Error::Format { offset: 18, .. })
    ));
    assert!(matches!(
        read_idx_images(&img[..6]),
        Err(Error::Format { offset: 4, .. })
    ));
    assert!(matches!(
        read_idx_labels(&write_idx_labels(&[11])),
        Err(Error::Format { offset: 8, .. })
    ));
}

#[test]
fn split_sizes() {
    let xs: Vec<Vec<f64>> = (0..100).map(|i| vec![i as f64]).collect();
    let ds = Dataset::from_rows(&xs, &xs).unwrap();
    let s = split(&ds, 0.2, 0.1, 0).unwrap();
    assert_eq!(
        (s.train.len(), s.test.len(), s.val.as_ref().unwrap().len()),
        (70, 20, 10)
    );
    assert_eq!(split(&ds, 0.2, 0.1, 0).unwrap(), s);
    assert!(split(&ds, 0.6, 0.5, 0).is_err());
    let tiny = ds.slice(0..2);
    assert!(split(&tiny, 0.1, 0.0, 0).is_err());
}

#[test]
fn normalization_statistics() {
    let xs: Vec<Vec<f64>> = (0..50).map(|i| vec![i as f64, (i * i) as f64, 3.0]).collect();
    let ys: Vec<Vec<f64>> = (0..50).map(|_| vec![1.0]).collect();
    let ds = Dataset::from_rows(&xs, &ys).unwrap();
    let (z, _) = normalize(&ds, NormMethod::ZScore).unwrap();
    let zm = z.x_matrix();
    for j in 0..2 {
        let col: Vec<f64> = (0..50).map(|i| zm.get(i, j)).collect();
        let mean = col.iter().sum::<f64>() / 50.0;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 50.0;
        assert!(mean.abs() < 1e-12 && (var.sqrt() - 1.0).abs() < 1e-12);
    }
    let (mm, _) = normalize(&ds, NormMethod::MinMax).unwrap();
    assert!(mm.inputs().iter().all(|&v| (0.0..=1.0).contains(&v)));

    let data = split(&ds, 0.2, 0.0, 1).unwrap();
    let (n, stats) = normalize_split(&data, NormMethod::ZScore).unwrap();
    assert_eq!(stats, NormStats::fit(&data.train, NormMethod::ZScore).unwrap());
    assert_eq!(n.test, stats.apply(&data.test).unwrap());
}

#[test]
fn metric_values() {
    let y = [1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0];
    let m = metrics(&y, &y, 2).unwrap();
    assert_eq!((m.mse, m.rel_l2_pct, m.class_err_pct), (0.0, 0.0, 0.0));
    let m = metrics(&[0.0; 8], &y, 2).unwrap();
    assert_eq!(m.rel_l2_pct, 100.0);
    let mut p = y;
    p.swap(0, 1);
    let m = metrics(&p, &y, 2).unwrap();
    assert_eq!(m.class_err_pct, 25.0);
    assert_eq!(m.mse, 0.5);
    // tie resolves to the first index
    let m = metrics(&[0.5, 0.5], &[1.0, 0.0], 2).unwrap();
    assert_eq!(m.class_err_pct, 0.0);
    assert!(metrics(&[0.0; 3], &[0.0; 4], 2).is_err());
}

#[test]
fn dataset_validation() {
    assert!(Dataset::new(vec![1.0, 2.0], vec![1.0], 2, 1).is_ok());
    assert!(Dataset::new(vec![1.0, 2.0], vec![1.0, 2.0], 2, 1).is_err());
    assert!(matches!(
        Dataset::new(vec![f64::NAN], vec![1.0], 1, 1),
        Err(Error::NonFinite(_))
    ));
}
