use fgssa::attribution::*;
use fgssa::data::Role;
use fgssa::data::WindowedDataset;
use fgssa::model::Hyperparams;
use fgssa::model::{CnnModel, FeatureGradientBundle, GradientTarget};
use fgssa::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn bundle(features: Vec<f64>, gradients: Vec<f64>, shape: [usize; 3]) -> FeatureGradientBundle {
    FeatureGradientBundle {
        features: Tensor::new(shape.to_vec(), features).unwrap(),
        gradients: Tensor::new(shape.to_vec(), gradients).unwrap(),
        estimated_class: 0,
        output: vec![1.0],
        target: GradientTarget::Softmax,
    }
}

fn random_bundle(seed: u64, shape: [usize; 3]) -> FeatureGradientBundle {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    bundle(
        (0..n).map(|_| rng.gen_range(0.0..2.0)).collect(),
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        shape,
    )
}

#[test]
fn alpha_zero_and_constant() {
    let b = bundle(vec![1.0; 12], vec![0.0; 12], [3, 2, 2]);
    assert!(compute_alpha(&b).values.iter().all(|v| *v == 0.0));
    let b = bundle(vec![1.0; 12], vec![0.25; 12], [3, 2, 2]);
    assert!(compute_alpha(&b).values.iter().all(|v| (*v - 0.25).abs() < 1e-15));
}

#[test]
fn alpha_matches_elementwise_mean() {
    let b = random_bundle(3, [5, 3, 2]);
    let a = compute_alpha(&b);
    for s in 0..3 {
        for k in 0..2 {
            let g = b.gradient_map(s, k);
            let mean = g.iter().sum::<f64>() / g.len() as f64;
            assert!((a.get(s, k) - mean).abs() < 1e-14);
        }
    }
}

#[test]
fn gradcam_cases() {
    let b = bundle(vec![3.0; 12], vec![0.0; 12], [3, 2, 2]);
    assert!(compute_gradcam(&b).maps.iter().flatten().all(|v| *v == 0.0));
    // n_f = 1, alpha = 1 (constant gradient), f = [-1, 2] -> Z = [0, 2]
    let b = bundle(vec![-1.0, 2.0], vec![1.0, 1.0], [2, 1, 1]);
    assert_eq!(compute_gradcam(&b).maps, vec![vec![0.0, 2.0]]);
}

#[test]
fn gradcam_matches_direct_formula() {
    let b = random_bundle(8, [6, 3, 4]);
    let cam = compute_gradcam(&b);
    for s in 0..3 {
        let alphas: Vec<f64> = (0..4).map(|k| b.gradient_map(s, k).iter().sum::<f64>() / 6.0).collect();
        for j in 0..6 {
            let z: f64 = (0..4).map(|k| alphas[k] * b.feature_map(s, k)[j]).sum::<f64>() / 4.0;
            assert!((cam.maps[s][j] - z.max(0.0)).abs() <= 1e-12);
        }
    }
}

#[test]
fn class_importance_hand_cases() {
    let neg = AlphaMap::new(2, 2, vec![-0.1, -0.3, -2.0, -0.5]).unwrap();
    assert_eq!(importance_from_alphas(&[neg.clone(), neg]).unwrap(), vec![0.0, 0.0]);
    let one = AlphaMap::new(1, 1, vec![0.4]).unwrap();
    assert_eq!(importance_from_alphas(&[one]).unwrap(), vec![0.4]);
    assert!(importance_from_alphas(&[]).is_none());
    // Three windows, 2 signals x 2 filters.
    // g per window = mean_k max(alpha, 0):
    //   w1: s0 (0.2 + 0)/2 = 0.1,  s1 (0.6 + 0.2)/2 = 0.4
    //   w2: s0 (0 + 0.4)/2 = 0.2,  s1 (0 + 0)/2     = 0.0
    //   w3: s0 (0.3 + 0.3)/2 = 0.3, s1 (1.0 + 0)/2  = 0.5
    // L = (0.6/3, 0.9/3) = (0.2, 0.3)
    let ws = [
        AlphaMap::new(2, 2, vec![0.2, -0.5, 0.6, 0.2]).unwrap(),
        AlphaMap::new(2, 2, vec![-0.1, 0.4, -0.3, -0.2]).unwrap(),
        AlphaMap::new(2, 2, vec![0.3, 0.3, 1.0, -1.0]).unwrap(),
    ];
    let l = importance_from_alphas(&ws).unwrap();
    assert!((l[0] - 0.2).abs() < 1e-15 && (l[1] - 0.3).abs() < 1e-15, "{l:?}");
}

fn sim_fixture(values: Vec<Vec<f64>>, counts: Vec<usize>) -> ImportanceMatrix {
    let ns = values.len();
    let nc = counts.len();
    ImportanceMatrix {
        signal_names: (0..ns).map(|s| format!("s{s}")).collect(),
        class_names: (0..nc).map(|c| format!("c{c}")).collect(),
        values,
        counts,
    }
}

#[test]
fn siv_weighted_forms() {
    let sim = sim_fixture(vec![vec![0.2, 0.4, 0.0], vec![1.0, 0.1, 0.3]], vec![3, 2, 5]);
    let plain = build_siv(&sim, None).unwrap();
    let uniform = build_siv(&sim, Some(&[1.0 / 3.0; 3])).unwrap();
    for (u, p) in uniform.values.iter().zip(&plain.values) {
        assert!((u - p / 3.0).abs() <= 1e-12);
    }
    let sel = build_siv(&sim, Some(&[0.0, 1.0, 0.0])).unwrap();
    assert!((sel.values[0] - 0.4 / 3.0).abs() < 1e-15);
    assert!((sel.values[1] - 0.1 / 3.0).abs() < 1e-15);
    assert!(build_siv(&sim, Some(&[0.5, 0.5])).is_err());
    assert!(build_siv(&sim, Some(&[0.5, 0.6, 0.0])).is_err());
    assert!(build_siv(&sim, Some(&[1.5, -0.5, 0.0])).is_err());
}

#[test]
fn siv_absent_classes_keep_divisor() {
    let sim = sim_fixture(vec![vec![0.6, 9.0]], vec![4, 0]);
    assert_eq!(build_siv(&sim, None).unwrap().values, vec![0.3]);
}

#[test]
fn siv_row_means_on_15x10_fixture() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let values: Vec<Vec<f64>> = (0..15)
        .map(|_| (0..10).map(|_| rng.gen_range(0.0..1.0)).collect())
        .collect();
    let sim = sim_fixture(values.clone(), vec![1; 10]);
    let siv = build_siv(&sim, None).unwrap();
    for s in 0..15 {
        let mut acc = 0.0;
        for c in 0..10 {
            acc += values[s][c];
        }
        assert!((siv.values[s] - acc / 10.0).abs() < 1e-15);
    }
}

#[test]
fn min_max_cases() {
    assert_eq!(min_max_signals(&[3.0, 1.0, 2.0]).unwrap(), (1, 0));
    assert_eq!(min_max_signals(&[2.0; 4]).unwrap(), (0, 0));
    assert!(min_max_signals(&[]).is_err());
}

#[test]
fn standardize_cases() {
    assert_eq!(standardize_column(&[0.0, 5.0, 10.0]), vec![0.0, 0.5, 1.0]);
    assert_eq!(standardize_column(&[2.0, 2.0]), vec![0.5, 0.5]);
    let sim = sim_fixture(vec![vec![1.0, 0.0], vec![3.0, 0.0]], vec![1, 0]);
    let d = column_standardize(&sim);
    assert_eq!(d, vec![vec![Some(0.0), None], vec![Some(1.0), None]]);
}

fn tiny_model_and_data() -> (CnnModel, WindowedDataset) {
    let hp = Hyperparams {
        conv_size: 2,
        n_filters: 2,
        n_conv: 3,
        dense_widths: vec![5, 4, 3],
        window_len: 8,
        n_signals: 2,
        n_classes: 3,
    };
    let model = CnnModel::build(hp, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 12;
    let ds = WindowedDataset::new(
        Tensor::new(vec![n, 8, 2], (0..n * 16).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap(),
        (0..n).map(|i| i % 3).collect(),
        vec!["a".into(), "b".into(), "c".into()],
        vec!["x".into(), "y".into()],
        Role::Valid,
    )
    .unwrap();
    (model, ds)
}

#[test]
fn sim_matches_per_class_importance() {
    let (model, ds) = tiny_model_and_data();
    let sim = build_sim(&model, &ds, &AttributionConfig::default()).unwrap();
    assert_eq!(sim.counts.iter().sum::<usize>(), ds.len());
    for c in 0..3 {
        let windows: Vec<Tensor> = (0..ds.len())
            .map(|i| ds.window(i))
            .filter(|w| model.feature_gradients(w).unwrap().estimated_class == c)
            .collect();
        let l = signal_class_importance(&model, &windows, GradientTarget::Softmax).unwrap();
        match l {
            None => assert!(!sim.is_present(c)),
            Some(l) => {
                for s in 0..2 {
                    assert!((sim.get(s, c).unwrap() - l[s]).abs() < 1e-15);
                }
            }
        }
    }
    let by_label = build_sim(
        &model,
        &ds,
        &AttributionConfig {
            partition: PartitionKey::TrueLabel,
            ..AttributionConfig::default()
        },
    )
    .unwrap();
    assert_eq!(by_label.counts, vec![4, 4, 4]);
}

#[test]
fn degenerate_partition_marks_absent_columns() {
    let (model, ds) = tiny_model_and_data();
    // Keep only windows the model assigns to its most frequent class.
    let preds: Vec<usize> = (0..ds.len())
        .map(|i| model.feature_gradients(&ds.window(i)).unwrap().estimated_class)
        .collect();
    let keep: Vec<usize> = (0..ds.len()).filter(|&i| preds[i] == preds[0]).collect();
    let sub = ds.subset(&keep, Role::Valid);
    let sim = build_sim(&model, &sub, &AttributionConfig::default()).unwrap();
    for c in 0..3 {
        assert_eq!(sim.is_present(c), c == preds[0]);
    }
}

#[test]
fn csv_and_json_exports() {
    let sim = sim_fixture(vec![vec![0.2, 0.0], vec![0.4, 0.0]], vec![2, 0]);
    let siv = build_siv(&sim, None).unwrap();
    let raw = importance_csv(&sim, &siv, false).unwrap();
    assert_eq!(raw.lines().next().unwrap(), "signal,c0,c1,All classes");
    assert_eq!(raw.lines().nth(1).unwrap(), "s0,0.2,,0.1");
    let disp = importance_csv(&sim, &siv, true).unwrap();
    assert_eq!(disp.lines().nth(2).unwrap(), "s1,1,,1");
    let js: serde_json::Value = serde_json::from_str(&importance_json(&sim, &siv).unwrap()).unwrap();
    assert!(js["sim"][0][1].is_null());
    let cam = GradCam {
        estimated_class: 1,
        maps: vec![vec![0.0, 1.0], vec![2.0, 0.0]],
    };
    let g = gradcam_json(&[(7, cam)], &sim.signal_names, &sim.class_names).unwrap();
    let js: serde_json::Value = serde_json::from_str(&g).unwrap();
    assert_eq!(js[0]["gradcam"]["s1"][0], 2.0);
    assert_eq!(js[0]["window"], 7);
}

proptest! {
    #[test]
    fn positive_gradient_scaling_preserves_ranking(seed in any::<u64>(), scale in 0.01f64..100.0) {
        let b = random_bundle(seed, [4, 5, 3]);
        let scaled = FeatureGradientBundle {
            gradients: Tensor::new(
                b.gradients.shape().to_vec(),
                b.gradients.data().iter().map(|g| g * scale).collect(),
            ).unwrap(),
            ..b.clone()
        };
        let l1 = importance_from_alphas(&[compute_alpha(&b)]).unwrap();
        let l2 = importance_from_alphas(&[compute_alpha(&scaled)]).unwrap();
        for (a, c) in l1.iter().zip(&l2) {
            prop_assert!((a * scale - c).abs() <= 1e-12 * (1.0 + c.abs()));
        }
        prop_assert_eq!(min_max_signals(&l1).unwrap(), min_max_signals(&l2).unwrap());
    }

    #[test]
    fn standardize_preserves_strict_order(col in proptest::collection::vec(-1e3f64..1e3, 2..20)) {
        let z = standardize_column(&col);
        for i in 0..col.len() {
            prop_assert!((0.0..=1.0).contains(&z[i]));
            for j in 0..col.len() {
                if col[i] < col[j] {
                    prop_assert!(z[i] < z[j]);
                }
            }
        }
    }

    #[test]
    fn min_max_agrees_with_sort(values in proptest::collection::vec(0.0f64..10.0, 1..30)) {
        let (lo, hi) = min_max_signals(&values).unwrap();
        let mut idx: Vec<usize> = (0..values.len()).collect();
        idx.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap().then(a.cmp(&b)));
        prop_assert_eq!(lo, idx[0]);
        let mut idx_desc: Vec<usize> = (0..values.len()).collect();
        idx_desc.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap().then(a.cmp(&b)));
        prop_assert_eq!(hi, idx_desc[0]);
    }
}
