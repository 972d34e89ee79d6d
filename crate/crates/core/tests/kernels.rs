use fgssa::gradcheck::{central_differences, finite_difference_check};
use fgssa::kernels::*;
use fgssa::{Error, Result, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Independent nested-loop convolution written straight from the definition.
fn naive_conv(input: &Tensor, kernels: &Tensor, bias: &Tensor) -> Vec<f64> {
    let [t, s, cin] = [input.shape()[0], input.shape()[1], input.shape()[2]];
    let [sc, _, _, cout] = [
        kernels.shape()[0],
        kernels.shape()[1],
        kernels.shape()[2],
        kernels.shape()[3],
    ];
    let at = |tt: usize, ss: usize, c: usize| input.data()[tt * s * cin + ss * cin + c];
    let kt = |tau: usize, c: usize, k: usize| kernels.data()[tau * cin * cout + c * cout + k];
    let mut out = Vec::new();
    for tt in 0..=(t - sc) {
        for ss in 0..s {
            for k in 0..cout {
                let mut acc = bias.data()[k];
                for tau in 0..sc {
                    for c in 0..cin {
                        acc += at(tt + tau, ss, c) * kt(tau, c, k);
                    }
                }
                out.push(acc);
            }
        }
    }
    out
}

#[test]
fn conv_zero_input_gives_bias() {
    let input = Tensor::zeros(vec![6, 3, 2]);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let kernels = rand_tensor(&mut rng, vec![3, 1, 2, 4]);
    let bias = Tensor::from_vec(vec![0.5, -1.0, 2.0, 0.25]).unwrap();
    let out = conv_time_forward(&input, &kernels, &bias).unwrap();
    assert_eq!(out.shape(), &[4, 3, 4]);
    for (i, v) in out.data().iter().enumerate() {
        assert_eq!(*v, bias.data()[i % 4]);
    }
}

#[test]
fn conv_sum_kernel() {
    let input = Tensor::new(vec![3, 1, 1], vec![1.0, 2.0, 3.0]).unwrap();
    let kernels = Tensor::new(vec![3, 1, 1, 1], vec![1.0, 1.0, 1.0]).unwrap();
    let bias = Tensor::from_vec(vec![0.0]).unwrap();
    let out = conv_time_forward(&input, &kernels, &bias).unwrap();
    assert_eq!(out.shape(), &[1, 1, 1]);
    assert_eq!(out.data(), &[6.0]);
}

#[test]
fn conv_matches_naive_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let input = rand_tensor(&mut rng, vec![8, 2, 1]);
    let kernels = rand_tensor(&mut rng, vec![3, 1, 1, 2]);
    let bias = rand_tensor(&mut rng, vec![2]);
    let out = conv_time_forward(&input, &kernels, &bias).unwrap();
    let oracle = naive_conv(&input, &kernels, &bias);
    assert_eq!(out.len(), oracle.len());
    for (a, b) in out.data().iter().zip(&oracle) {
        assert!((a - b).abs() <= 1e-12);
    }
}

#[test]
fn conv_shape_errors_name_dimension() {
    let input = Tensor::zeros(vec![5, 2, 3]);
    let kernels = Tensor::zeros(vec![2, 1, 2, 4]);
    let bias = Tensor::zeros(vec![4]);
    match conv_time_forward(&input, &kernels, &bias) {
        Err(Error::Shape { dimension, .. }) => assert!(dimension.contains("channels_in")),
        other => panic!("unexpected {other:?}"),
    }
    let wide = Tensor::zeros(vec![2, 2, 3, 4]);
    assert!(conv_time_forward(&input, &wide, &bias).is_err());
    let bad_bias = Tensor::zeros(vec![3]);
    let kernels = Tensor::zeros(vec![2, 1, 3, 4]);
    assert!(conv_time_forward(&input, &kernels, &bad_bias).is_err());
    let long = Tensor::zeros(vec![6, 1, 3, 4]);
    assert!(conv_time_forward(&input, &long, &bias).is_err());
}

#[test]
fn conv_backward_zero_upstream() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let input = rand_tensor(&mut rng, vec![5, 2, 2]);
    let kernels = rand_tensor(&mut rng, vec![2, 1, 2, 3]);
    let g = conv_time_backward(&input, &kernels, &Tensor::zeros(vec![4, 2, 3])).unwrap();
    assert!(g.params.iter().all(|p| p.data().iter().all(|v| *v == 0.0)));
    assert!(g.input.data().iter().all(|v| *v == 0.0));
}

#[test]
fn conv_backward_hand_derived() {
    // y_t = k0 x_t + k1 x_{t+1} + b, t = 0, 1, with upstream g_t.
    let x = [1.0, 2.0, 3.0];
    let k = [0.5, -1.5];
    let g = [2.0, -1.0];
    let input = Tensor::new(vec![3, 1, 1], x.to_vec()).unwrap();
    let kernels = Tensor::new(vec![2, 1, 1, 1], k.to_vec()).unwrap();
    let up = Tensor::new(vec![2, 1, 1], g.to_vec()).unwrap();
    let grads = conv_time_backward(&input, &kernels, &up).unwrap();
    // dk0 = g0 x0 + g1 x1, dk1 = g0 x1 + g1 x2, db = g0 + g1
    assert_eq!(grads.params[0].data(), &[2.0 - 2.0, 4.0 - 3.0]);
    assert_eq!(grads.params[1].data(), &[1.0]);
    // dx0 = g0 k0, dx1 = g0 k1 + g1 k0, dx2 = g1 k1
    assert_eq!(grads.input.data(), &[1.0, -3.0 - 0.5, 1.5]);
}

#[test]
fn conv_backward_upstream_shape_checked() {
    let input = Tensor::zeros(vec![5, 2, 2]);
    let kernels = Tensor::zeros(vec![2, 1, 2, 3]);
    assert!(conv_time_backward(&input, &kernels, &Tensor::zeros(vec![5, 2, 3])).is_err());
}

#[test]
fn dense_identity_and_zero_input() {
    let x = Tensor::from_vec(vec![1.0, -2.0, 3.0]).unwrap();
    let eye = Tensor::new(vec![3, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
    let zero_b = Tensor::zeros(vec![3]);
    assert_eq!(dense_forward(&x, &eye, &zero_b).unwrap().data(), x.data());
    let b = Tensor::from_vec(vec![0.1, 0.2, 0.3]).unwrap();
    let out = dense_forward(&Tensor::zeros(vec![3]), &eye, &b).unwrap();
    assert_eq!(out.data(), b.data());
    assert!(dense_forward(&Tensor::zeros(vec![2]), &eye, &b).is_err());
}

#[test]
fn dense_backward_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = rand_tensor(&mut rng, vec![5]);
    let w = rand_tensor(&mut rng, vec![3, 5]);
    let b = rand_tensor(&mut rng, vec![3]);
    let probe = rand_tensor(&mut rng, vec![3]);
    let loss = |x: &Tensor, w: &Tensor, b: &Tensor| -> f64 {
        let y = dense_forward(x, w, b).unwrap();
        y.data().iter().zip(probe.data()).map(|(a, c)| a * c).sum()
    };
    let grads = dense_backward(&x, &w, &probe).unwrap();
    let ew = finite_difference_check(|p| Ok(loss(&x, p, &b)), &w, &grads.params[0]).unwrap();
    let eb = finite_difference_check(|p| Ok(loss(&x, &w, p)), &b, &grads.params[1]).unwrap();
    let ex = finite_difference_check(|p| Ok(loss(p, &w, &b)), &x, &grads.input).unwrap();
    assert!(ew <= 1e-6 && eb <= 1e-6 && ex <= 1e-6, "{ew} {eb} {ex}");
}

#[test]
fn softmax_cases() {
    let p = softmax(&[0.0, 0.0, 0.0]).unwrap();
    for v in &p {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
    let p = softmax(&[1000.0, 0.0]).unwrap();
    assert_eq!(p, vec![1.0, 0.0]);
    assert!(softmax(&[f64::NAN]).is_err());
    assert!(softmax(&[]).is_err());
}

#[test]
fn softmax_jacobian_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let z = rand_tensor(&mut rng, vec![6]);
    let p = softmax(z.data()).unwrap();
    for i in 0..6 {
        // row i of the Jacobian: dp_i/dz_j = p_i (delta_ij - p_j)
        let analytic: Vec<f64> = (0..6).map(|j| p[i] * (if i == j { 1.0 } else { 0.0 } - p[j])).collect();
        let analytic = Tensor::from_vec(analytic).unwrap();
        let err = finite_difference_check(|t| Ok(softmax(t.data())?[i]), &z, &analytic).unwrap();
        assert!(err <= 1e-6, "row {i}: {err}");
    }
}

#[test]
fn relu_tie_at_zero_has_zero_gradient() {
    let x = Tensor::from_vec(vec![-1.0, 0.0, 2.0]).unwrap();
    let g = Tensor::from_vec(vec![5.0, 5.0, 5.0]).unwrap();
    assert_eq!(relu_backward(&x, &g).unwrap().data(), &[0.0, 0.0, 5.0]);
    assert_eq!(relu_forward(&x).data(), &[0.0, 0.0, 2.0]);
}

#[test]
fn cross_entropy_cases() {
    let (loss, grad) = weighted_cross_entropy(&[0.0, 1.0, 0.0], 1, &[1.0; 3]).unwrap();
    assert!(loss.abs() < 1e-11);
    assert!(grad.iter().all(|g| g.abs() < 1e-15));
    let probs = vec![0.1; 10];
    let (loss, _) = weighted_cross_entropy(&probs, 3, &[1.0; 10]).unwrap();
    assert!((loss - 10f64.ln()).abs() < 1e-10);
    assert!(matches!(
        weighted_cross_entropy(&probs, 10, &[1.0; 10]),
        Err(Error::InvalidClass { index: 10, .. })
    ));
    assert!(weighted_cross_entropy(&probs, 0, &[1.0; 9]).is_err());
}

#[test]
fn cross_entropy_logit_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let z = rand_tensor(&mut rng, vec![4]);
    let weights = [0.7, 1.3, 2.0, 0.4];
    let p = softmax(z.data()).unwrap();
    let (_, grad) = weighted_cross_entropy(&p, 2, &weights).unwrap();
    let analytic = Tensor::from_vec(grad).unwrap();
    let err = finite_difference_check(
        |t| Ok(weighted_cross_entropy(&softmax(t.data())?, 2, &weights)?.0),
        &z,
        &analytic,
    )
    .unwrap();
    assert!(err <= 1e-6, "{err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn softmax_is_a_distribution(logits in proptest::collection::vec(-50.0f64..50.0, 1..12)) {
        let p = softmax(&logits).unwrap();
        prop_assert!(p.iter().all(|v| *v >= 0.0));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn conv_backward_agrees_with_finite_differences(
        seed in any::<u64>(),
        time in 3usize..9,
        signals in 1usize..4,
        cin in 1usize..3,
        cout in 1usize..4,
        sc in 1usize..4,
    ) {
        prop_assume!(time >= sc);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let input = rand_tensor(&mut rng, vec![time, signals, cin]);
        let kernels = rand_tensor(&mut rng, vec![sc, 1, cin, cout]);
        let bias = rand_tensor(&mut rng, vec![cout]);
        let probe = rand_tensor(&mut rng, vec![time + 1 - sc, signals, cout]);
        let loss = |x: &Tensor, k: &Tensor, b: &Tensor| -> Result<f64> {
            let y = conv_time_forward(x, k, b)?;
            Ok(y.data().iter().zip(probe.data()).map(|(a, c)| a * c).sum())
        };
        let g = conv_time_backward(&input, &kernels, &probe).unwrap();
        let ek = finite_difference_check(|p| loss(&input, p, &bias), &kernels, &g.params[0]).unwrap();
        let eb = finite_difference_check(|p| loss(&input, &kernels, p), &bias, &g.params[1]).unwrap();
        let ei = finite_difference_check(|p| loss(p, &kernels, &bias), &input, &g.input).unwrap();
        prop_assert!(ek <= 1e-5 && eb <= 1e-5 && ei <= 1e-5);
    }

    #[test]
    fn dense_relu_chain_agrees_with_finite_differences(seed in any::<u64>(), n_in in 1usize..7, n_out in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = rand_tensor(&mut rng, vec![n_in]);
        let w = rand_tensor(&mut rng, vec![n_out, n_in]);
        let b = rand_tensor(&mut rng, vec![n_out]);
        let probe = rand_tensor(&mut rng, vec![n_out]);
        let f = |x: &Tensor| -> Result<f64> {
            let y = relu_forward(&dense_forward(x, &w, &b)?);
            Ok(y.data().iter().zip(probe.data()).map(|(a, c)| a * c).sum())
        };
        let pre = dense_forward(&x, &w, &b).unwrap();
        let up = relu_backward(&pre, &probe).unwrap();
        let g = dense_backward(&x, &w, &up).unwrap();
        let fd = central_differences(f, &x).unwrap();
        let err = fgssa::gradcheck::max_relative_error(fd.data(), g.input.data());
        prop_assert!(err <= 1e-5);
    }

    #[test]
    fn conv_never_mixes_signal_columns(seed in any::<u64>(), zeroed in 0usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let input = rand_tensor(&mut rng, vec![7, 3, 2]);
        let kernels = rand_tensor(&mut rng, vec![3, 1, 2, 2]);
        let bias = rand_tensor(&mut rng, vec![2]);
        let mut data = input.data().to_vec();
        for t in 0..7 {
            for c in 0..2 {
                data[(t * 3 + zeroed) * 2 + c] = 0.0;
            }
        }
        let masked = Tensor::new(vec![7, 3, 2], data).unwrap();
        let a = conv_time_forward(&input, &kernels, &bias).unwrap();
        let b = conv_time_forward(&masked, &kernels, &bias).unwrap();
        for t in 0..5 {
            for s in (0..3).filter(|s| *s != zeroed) {
                for k in 0..2 {
                    let i = (t * 3 + s) * 2 + k;
                    prop_assert_eq!(a.data()[i].to_bits(), b.data()[i].to_bits());
                }
            }
        }
    }
}
