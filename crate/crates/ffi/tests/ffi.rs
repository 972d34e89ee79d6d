use std::ffi::{CStr, CString};
use std::ptr;

use fgssa::data::window;
use fgssa::model::Hyperparams;
use fgssa::selection::{SelectionConfig, SelectionTrace};
use fgssa::synthetic::{generate_synthetic, SyntheticSpec};
use fgssa::trainer::TrainConfig;
use fgssa_ffi::*;

fn last_error() -> String {
    let p = fg_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_owned()
}

fn new_model(seed: u64) -> *mut FgModel {
    let mut m = ptr::null_mut();
    let st = unsafe { fg_model_new(12, 2, 3, 3, 2, seed, &mut m) };
    assert_eq!(st, FgStatus::Ok);
    m
}

#[test]
fn predict_and_gradcam_round_trip() {
    let m = new_model(1);
    let (mut w, mut ns, mut nc, mut sf) = (0, 0, 0, 0);
    assert_eq!(
        unsafe { fg_model_shape(m, &mut w, &mut ns, &mut nc, &mut sf) },
        FgStatus::Ok
    );
    assert_eq!((w, ns, nc, sf), (12, 2, 3, 6));

    let x: Vec<f64> = (0..24).map(|i| (i as f64 * 0.37).sin()).collect();
    let mut probs = [0.0; 3];
    let mut class = usize::MAX;
    let st = unsafe { fg_model_predict(m, x.as_ptr(), x.len(), probs.as_mut_ptr(), 3, &mut class) };
    assert_eq!(st, FgStatus::Ok);
    assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!(class < 3);

    let mut cam = vec![-1.0; 12];
    let mut cam_class = usize::MAX;
    let st = unsafe { fg_model_gradcam(m, x.as_ptr(), x.len(), cam.as_mut_ptr(), cam.len(), &mut cam_class) };
    assert_eq!(st, FgStatus::Ok);
    assert_eq!(cam_class, class);
    assert!(cam.iter().all(|v| *v >= 0.0));

    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("m.json").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { fg_model_save(m, path.as_ptr()) }, FgStatus::Ok);
    let mut back = ptr::null_mut();
    assert_eq!(unsafe { fg_model_load(path.as_ptr(), &mut back) }, FgStatus::Ok);
    let mut probs2 = [0.0; 3];
    let st = unsafe { fg_model_predict(back, x.as_ptr(), x.len(), probs2.as_mut_ptr(), 3, ptr::null_mut()) };
    assert_eq!(st, FgStatus::Ok);
    assert_eq!(probs, probs2);
    unsafe {
        fg_model_free(m);
        fg_model_free(back);
    }
}

#[test]
fn errors_are_reported_not_panicked() {
    let m = new_model(2);
    let x = [0.0; 5];
    let mut probs = [0.0; 3];
    let st = unsafe { fg_model_predict(m, x.as_ptr(), x.len(), probs.as_mut_ptr(), 3, ptr::null_mut()) };
    assert_eq!(st, FgStatus::Shape);
    assert!(last_error().contains("buffer length"));

    let st = unsafe { fg_model_predict(ptr::null(), x.as_ptr(), 5, probs.as_mut_ptr(), 3, ptr::null_mut()) };
    assert_eq!(st, FgStatus::NullPointer);

    let nan = [f64::NAN; 24];
    let st = unsafe { fg_model_predict(m, nan.as_ptr(), 24, probs.as_mut_ptr(), 3, ptr::null_mut()) };
    assert_eq!(st, FgStatus::NonFinite);

    let mut out = ptr::null_mut();
    let st = unsafe { fg_model_new(5, 2, 3, 3, 2, 0, &mut out) };
    assert_eq!(st, FgStatus::InvalidArgument);
    assert!(out.is_null());

    let missing = CString::new("/nonexistent/model.json").unwrap();
    assert_eq!(unsafe { fg_model_load(missing.as_ptr(), &mut out) }, FgStatus::Io);
    unsafe {
        fg_model_free(m);
        fg_model_free(ptr::null_mut());
        fg_dataset_free(ptr::null_mut());
        fg_string_free(ptr::null_mut());
    }
}

#[test]
fn dataset_siv_and_selection() {
    let data = generate_synthetic(&SyntheticSpec::bit_coded(1, 2, 12, 12, 3)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let csv_path = dir.path().join("d.csv");
    std::fs::write(&csv_path, data.table.to_csv("label").unwrap()).unwrap();
    let snap_path = dir.path().join("d.fgds");
    let (ds, _) = window(&data.table, 12, 12).unwrap();
    ds.save_snapshot(&snap_path).unwrap();

    let mut from_csv = ptr::null_mut();
    let p = CString::new(csv_path.to_str().unwrap()).unwrap();
    assert_eq!(
        unsafe { fg_dataset_load_csv(p.as_ptr(), 12, &mut from_csv) },
        FgStatus::Ok
    );
    let mut d = ptr::null_mut();
    let p = CString::new(snap_path.to_str().unwrap()).unwrap();
    assert_eq!(unsafe { fg_dataset_load_snapshot(p.as_ptr(), &mut d) }, FgStatus::Ok);
    let (mut n, mut w, mut ns, mut nc) = (0, 0, 0, 0);
    assert_eq!(
        unsafe { fg_dataset_shape(d, &mut n, &mut w, &mut ns, &mut nc) },
        FgStatus::Ok
    );
    assert_eq!((n, w, ns, nc), (24, 12, 3, 2));
    let mut n_csv = 0;
    let st = unsafe { fg_dataset_shape(from_csv, &mut n_csv, ptr::null_mut(), ptr::null_mut(), ptr::null_mut()) };
    assert_eq!(st, FgStatus::Ok);
    assert_eq!(n_csv, 24);

    let mut m = ptr::null_mut();
    assert_eq!(unsafe { fg_model_new(12, 3, 2, 3, 2, 4, &mut m) }, FgStatus::Ok);
    let mut siv = [-1.0; 3];
    assert_eq!(unsafe { fg_siv(m, d, siv.as_mut_ptr(), 3) }, FgStatus::Ok);
    assert!(siv.iter().all(|v| *v >= 0.0));

    let hp = Hyperparams {
        conv_size: 3,
        n_filters: 2,
        dense_widths: vec![6, 4, 3],
        ..Hyperparams::new(12, 3, 2)
    };
    let train = TrainConfig {
        epochs: 2,
        learning_rate: 1e-3,
        ..TrainConfig::default()
    };
    let cfg = serde_json::to_string(&SelectionConfig::new(hp, train, 9)).unwrap();
    let cfg = CString::new(cfg).unwrap();
    let mut json = ptr::null_mut();
    assert_eq!(unsafe { fg_select(d, 2, cfg.as_ptr(), &mut json) }, FgStatus::Ok);
    let text = unsafe { CStr::from_ptr(json) }.to_str().unwrap().to_owned();
    let trace = SelectionTrace::from_json(&text).unwrap();
    assert_eq!(trace.models_trained, 3);
    assert!(trace.s_use.unwrap().len() <= 2);

    let mut none = ptr::null_mut();
    assert_eq!(
        unsafe { fg_select(d, 4, cfg.as_ptr(), &mut none) },
        FgStatus::InvalidArgument
    );
    assert!(none.is_null());
    unsafe {
        fg_string_free(json);
        fg_model_free(m);
        fg_dataset_free(d);
        fg_dataset_free(from_csv);
    }
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/fgssa.h")).unwrap();
    for name in [
        "fg_last_error_message",
        "fg_model_new",
        "fg_model_load",
        "fg_model_save",
        "fg_model_free",
        "fg_model_predict",
        "fg_model_gradcam",
        "fg_dataset_load_csv",
        "fg_dataset_load_snapshot",
        "fg_siv",
        "fg_select",
        "fg_string_free",
        "FG_STATUS_OK",
        "typedef struct FgModel FgModel",
    ] {
        assert!(header.contains(name), "header is missing {name}");
    }
}

#[test]
fn header_compiles_as_c() {
    let Ok(cc) = std::process::Command::new("cc").arg("--version").output() else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    assert!(cc.status.success());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"fgssa.h\"\nint main(void) { FgModel *m = 0; FgStatus s = fg_model_new(12, 2, 3, 3, 2, 1, &m); fg_model_free(m); return s == FG_STATUS_OK ? 0 : 1; }\n",
    )
    .unwrap();
    let out = std::process::Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(concat!(env!("CARGO_MANIFEST_DIR"), "/include"))
        .arg(&src)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
