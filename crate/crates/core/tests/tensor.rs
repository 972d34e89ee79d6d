use fgssa::tensor::*;
use fgssa::Error;

#[test]
fn rejects_length_mismatch() {
    let err = Tensor::new(vec![2, 3], vec![0.0; 5]).unwrap_err();
    assert!(matches!(
        err,
        Error::Shape {
            expected: 6,
            actual: 5,
            ..
        }
    ));
}

#[test]
fn rejects_nan_and_inf() {
    assert!(matches!(
        Tensor::new(vec![2], vec![1.0, f64::NAN]),
        Err(Error::NonFinite { index: 1, .. })
    ));
    assert!(Tensor::new(vec![1], vec![f64::INFINITY]).is_err());
}

#[test]
fn json_round_trip_validates() {
    let t = Tensor::new(vec![2, 2], vec![1.0, -2.5, 0.1, 3.0]).unwrap();
    let s = serde_json::to_string(&t).unwrap();
    let back: Tensor = serde_json::from_str(&s).unwrap();
    assert_eq!(t, back);
    assert!(serde_json::from_str::<Tensor>(r#"{"shape":[3],"data":[1.0]}"#).is_err());
}
