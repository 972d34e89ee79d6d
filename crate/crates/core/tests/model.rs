use fgssa::gradcheck::{central_differences, finite_difference_check, max_relative_error};
use fgssa::model::*;
use fgssa::{Error, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_hp() -> Hyperparams {
    Hyperparams {
        conv_size: 3,
        n_filters: 2,
        n_conv: 3,
        dense_widths: vec![6, 5, 4],
        window_len: 14,
        n_signals: 3,
        n_classes: 4,
    }
}

fn rand_window(seed: u64, hp: &Hyperparams) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = hp.window_len * hp.n_signals;
    Tensor::new(
        vec![hp.window_len, hp.n_signals],
        (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect(),
    )
    .unwrap()
}

#[test]
fn feature_len_formula() {
    let mut hp = Hyperparams::new(60, 15, 10);
    assert_eq!(CnnModel::build(hp.clone(), 0).unwrap().feature_len(), 33);
    hp.conv_size = 15;
    assert_eq!(hp.feature_len(), Some(18));
    hp.window_len = 10;
    hp.conv_size = 10;
    assert!(matches!(CnnModel::build(hp, 0), Err(Error::InfeasibleShape(_))));
}

#[test]
fn default_architecture_has_nine_layers() {
    let m = CnnModel::build(Hyperparams::new(60, 15, 10), 1).unwrap();
    assert_eq!(m.hyperparams().layer_count(), 9);
    assert_eq!(m.flatten_width(), 15 * 10 * 33);
    assert_eq!(m.dense_layers().len(), 4);
    assert_eq!(m.dense_layers().last().unwrap().bias.len(), 10);
}

#[test]
fn forward_is_a_distribution_and_deterministic() {
    let hp = small_hp();
    let m = CnnModel::build(hp.clone(), 3).unwrap();
    let x = rand_window(4, &hp);
    let a = m.forward(&x).unwrap();
    let b = m.forward(&x).unwrap();
    assert!((a.probs.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    assert_eq!(a, b);
    assert_eq!(a.features.shape(), &[8, 3, 2]);
    assert!(m.forward(&Tensor::zeros(vec![14, 2])).is_err());
}

#[test]
fn zero_input_is_signal_permutation_invariant() {
    let hp = small_hp();
    let m = CnnModel::build(hp, 3).unwrap();
    let zero = Tensor::zeros(vec![14, 3]);
    // A permuted all-zero window is the same all-zero window.
    let permuted = Tensor::new(vec![14, 3], vec![0.0; 42]).unwrap();
    assert_eq!(m.forward(&zero).unwrap().probs, m.forward(&permuted).unwrap().probs);
}

#[test]
fn predict_class_ties_and_errors() {
    assert_eq!(predict_class(&[0.1, 0.7, 0.2]).unwrap(), 1);
    assert_eq!(predict_class(&[0.25; 4]).unwrap(), 0);
    assert!(predict_class(&[]).is_err());
}

#[test]
fn feature_gradients_match_finite_differences() {
    let hp = small_hp();
    let m = CnnModel::build(hp.clone(), 8).unwrap();
    for seed in 0..5 {
        let x = rand_window(100 + seed, &hp);
        for target in [GradientTarget::Softmax, GradientTarget::Logit] {
            let bundle = m.feature_gradients_with(&x, target).unwrap();
            let c = bundle.estimated_class;
            let err = finite_difference_check(
                |f| {
                    let (z, p) = m.forward_from_features(f)?;
                    Ok(match target {
                        GradientTarget::Softmax => p[c],
                        GradientTarget::Logit => z[c],
                    })
                },
                &bundle.features,
                &bundle.gradients,
            )
            .unwrap();
            assert!(err <= 1e-5, "{target:?}: {err}");
        }
    }
}

#[test]
fn softmax_jacobian_columns_sum_to_zero() {
    let hp = small_hp();
    let m = CnnModel::build(hp.clone(), 8).unwrap();
    let x = rand_window(7, &hp);
    let out = m.forward(&x).unwrap();
    // Sum over classes of dy_c/df for every feature entry, via finite differences
    // of sum_c y_c (identically 1).
    let fd = central_differences(|f| Ok(m.forward_from_features(f)?.1.iter().sum()), &out.features).unwrap();
    assert!(fd.max_abs() < 1e-9);
}

#[test]
fn feature_gradients_leave_model_untouched() {
    let hp = small_hp();
    let m = CnnModel::build(hp.clone(), 2).unwrap();
    let before = m.clone();
    let x = rand_window(1, &hp);
    let a = m.feature_gradients(&x).unwrap();
    let b = m.feature_gradients(&x).unwrap();
    assert_eq!(m, before);
    assert_eq!(a, b);
}

#[test]
fn parameter_gradients_match_finite_differences() {
    let hp = small_hp();
    let m = CnnModel::build(hp.clone(), 21).unwrap();
    let x = rand_window(22, &hp);
    let weights = [0.5, 1.5, 1.0, 2.0];
    let (_, grads) = m.backward_params(&x, 2, &weights).unwrap();
    for (i, p) in m.parameters().into_iter().enumerate() {
        assert_eq!(p.shape(), grads[i].shape());
        let err =
            finite_difference_check(|v| m.with_parameter(i, v.clone())?.loss(&x, 2, &weights), p, &grads[i]).unwrap();
        assert!(err <= 1e-5, "param {i}: {err}");
    }
}

#[test]
fn zero_class_weight_gives_zero_gradients() {
    let hp = small_hp();
    let m = CnnModel::build(hp.clone(), 5).unwrap();
    let x = rand_window(6, &hp);
    let (_, grads) = m.backward_params(&x, 1, &[1.0, 0.0, 1.0, 1.0]).unwrap();
    assert!(grads.iter().all(|g| g.max_abs() == 0.0));
}

#[test]
fn conv_stack_isolates_signals() {
    let hp = small_hp();
    let m = CnnModel::build(hp.clone(), 5).unwrap();
    let x = rand_window(9, &hp);
    let mut perturbed = x.data().to_vec();
    for t in 0..hp.window_len {
        perturbed[t * hp.n_signals + 1] += 0.37;
    }
    let y = Tensor::new(x.shape().to_vec(), perturbed).unwrap();
    let a = m.forward(&x).unwrap().features;
    let b = m.forward(&y).unwrap().features;
    for j in 0..m.feature_len() {
        for s in [0, 2] {
            for k in 0..hp.n_filters {
                let i = (j * hp.n_signals + s) * hp.n_filters + k;
                assert_eq!(a.data()[i].to_bits(), b.data()[i].to_bits());
            }
        }
    }
}

#[test]
fn argmax_invariant_under_monotone_logit_transform() {
    let hp = small_hp();
    let m = CnnModel::build(hp.clone(), 5).unwrap();
    let out = m.forward(&rand_window(3, &hp)).unwrap();
    let shifted: Vec<f64> = out.logits.iter().map(|z| 3.0 * z + 1.0).collect();
    let c1 = predict_class(&out.probs).unwrap();
    let c2 = predict_class(&fgssa::kernels::softmax(&shifted).unwrap()).unwrap();
    assert_eq!(c1, c2);
}

#[test]
fn checkpoint_round_trip_is_byte_identical() {
    let m = CnnModel::build(small_hp(), 77).unwrap();
    let s1 = m.to_json().unwrap();
    let back = CnnModel::from_json(&s1).unwrap();
    assert_eq!(back, m);
    assert_eq!(back.to_json().unwrap(), s1);
    let tampered = s1.replacen("\"version\": 1", "\"version\": 9", 1);
    assert!(CnnModel::from_json(&tampered).is_err());
}

#[test]
fn relative_error_helper() {
    assert_eq!(max_relative_error(&[2.0], &[1.0]), 0.5);
}
