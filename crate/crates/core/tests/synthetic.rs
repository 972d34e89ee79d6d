use fgssa::data::window;
use fgssa::synthetic::*;

#[test]
fn deterministic_for_same_seed() {
    let spec = SyntheticSpec::bit_coded(2, 3, 5, 16, 9);
    let a = generate_synthetic(&spec).unwrap();
    let b = generate_synthetic(&spec).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.table.to_csv("label").unwrap(), b.table.to_csv("label").unwrap());
    let c = generate_synthetic(&SyntheticSpec { seed: 10, ..spec }).unwrap();
    assert_ne!(a.table.values, c.table.values);
}

#[test]
fn layout_and_ground_truth() {
    let spec = SyntheticSpec::bit_coded(3, 5, 4, 24, 1);
    let d = generate_synthetic(&spec).unwrap();
    assert_eq!(d.table.n_signals(), 8);
    assert_eq!(d.table.n_rows(), 8 * 4 * 24);
    assert_eq!(d.informative_indices().len(), 3);
    assert!(d.metadata.informative.iter().all(|n| !d.metadata.noise.contains(n)));
    let (ds, stats) = window(&d.table, 24, 24).unwrap();
    assert_eq!(ds.len(), 32);
    assert_eq!(stats.dropped_ties, 0);
    assert_eq!(ds.class_counts(), vec![4; 8]);
}

#[test]
fn rejects_degenerate_specs() {
    let spec = SyntheticSpec::bit_coded(1, 1, 0, 8, 0);
    assert!(generate_synthetic(&spec).is_err());
    let mut dup = SyntheticSpec::bit_coded(1, 1, 2, 8, 0);
    dup.noise[0].name = "info0".into();
    assert!(generate_synthetic(&dup).is_err());
}

#[test]
fn noise_signals_ignore_the_label() {
    let spec = SyntheticSpec::bit_coded(1, 1, 400, 16, 4);
    let d = generate_synthetic(&spec).unwrap();
    let col = d.table.signal_names.iter().position(|n| n == "noise0").unwrap();
    let mut sums = [0.0f64; 2];
    let mut counts = [0usize; 2];
    for r in 0..d.table.n_rows() {
        let c = (d.table.labels[r] == "class1") as usize;
        sums[c] += d.table.row(r)[col];
        counts[c] += 1;
    }
    for c in 0..2 {
        assert!((sums[c] / counts[c] as f64).abs() < 0.05);
    }
}
