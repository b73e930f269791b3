use std::ffi::{c_char, CStr, CString};
use std::path::Path;
use std::ptr;

use latent_replay::tasks::suite::suite_vocab;
use latent_replay::trainer::{Model, ModelConfig};
use latent_replay_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn path(p: &Path) -> CString {
    c(p.to_str().unwrap())
}

fn last_error() -> String {
    let p = lr_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn take(s: *mut c_char) -> String {
    let out = unsafe { CStr::from_ptr(s) }.to_string_lossy().into_owned();
    unsafe { lr_string_free(s) };
    out
}

struct Fixture {
    _dir: tempfile::TempDir,
    model: *mut LrModel,
}

impl Drop for Fixture {
    fn drop(&mut self) {
        unsafe { lr_model_free(self.model) };
    }
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let vocab = suite_vocab();
    let cfg = ModelConfig {
        hidden: 8,
        latent_dim: 3,
        sigma2: 1.0,
        ebm_hidden: vec![4],
        inference_hidden: 8,
    };
    let model = Model::new(&cfg, vocab.len(), 4, 7).unwrap();
    let (ckpt, voc) = (dir.path().join("m.ckpt"), dir.path().join("v.txt"));
    model.save(&ckpt).unwrap();
    vocab.save(&voc).unwrap();
    let mut handle = ptr::null_mut();
    let st = unsafe { lr_model_load(path(&ckpt).as_ptr(), path(&voc).as_ptr(), &mut handle) };
    assert_eq!(st, LrStatus::Ok);
    assert!(!handle.is_null());
    Fixture { _dir: dir, model: handle }
}

#[test]
fn load_and_query() {
    let f = fixture();
    assert_eq!(unsafe { lr_model_latent_dim(f.model) }, 3);

    let mut jsonl = ptr::null_mut();
    let mut count = usize::MAX;
    let st = unsafe { lr_model_sample(f.model, 4, 1, 5, 0.1, 20, &mut jsonl, &mut count) };
    assert_eq!(st, LrStatus::Ok);
    let text = take(jsonl);
    assert_eq!(text.lines().count(), count);
    assert!(count <= 4);

    let mut answer = ptr::null_mut();
    let st = unsafe { lr_model_predict(f.model, c("great plot").as_ptr(), c("sentiment ?").as_ptr(), &mut answer) };
    assert_eq!(st, LrStatus::Ok);
    let _ = take(answer);

    let mut energy = f64::NAN;
    let st = unsafe {
        lr_model_energy(
            f.model,
            c("great plot").as_ptr(),
            c("sentiment ?").as_ptr(),
            c("positive").as_ptr(),
            &mut energy,
        )
    };
    assert_eq!(st, LrStatus::Ok);
    assert!(energy.is_finite() && energy >= 0.0);
}

#[test]
fn sampling_is_deterministic() {
    let f = fixture();
    let draw = || {
        let mut jsonl = ptr::null_mut();
        let mut count = 0;
        assert_eq!(unsafe { lr_model_sample(f.model, 6, 42, 5, 0.1, 20, &mut jsonl, &mut count) }, LrStatus::Ok);
        (take(jsonl), count)
    };
    assert_eq!(draw(), draw());
}

#[test]
fn metrics() {
    let mut score = -1.0;
    let st = unsafe { lr_metric(LrMetric::ExactMatch, c("The cat").as_ptr(), c("cat").as_ptr(), &mut score) };
    assert_eq!(st, LrStatus::Ok);
    assert_eq!(score, 100.0);
    let st = unsafe { lr_metric(LrMetric::NormalizedF1, c("red cat").as_ptr(), c("cat").as_ptr(), &mut score) };
    assert_eq!(st, LrStatus::Ok);
    assert!((score - 200.0 / 3.0).abs() < 1e-9);
}

#[test]
fn null_and_invalid_arguments() {
    let mut score = 0.0;
    let st = unsafe { lr_metric(LrMetric::ExactMatch, ptr::null(), c("x").as_ptr(), &mut score) };
    assert_eq!(st, LrStatus::NullArgument);
    assert!(last_error().contains("prediction"));

    let bad = [0xffu8, 0xfe, 0];
    let st = unsafe { lr_metric(LrMetric::ExactMatch, bad.as_ptr().cast(), c("x").as_ptr(), &mut score) };
    assert_eq!(st, LrStatus::InvalidUtf8);

    let st = unsafe { lr_metric(LrMetric::ExactMatch, c("x").as_ptr(), c("x").as_ptr(), ptr::null_mut()) };
    assert_eq!(st, LrStatus::NullArgument);

    let mut handle = ptr::null_mut();
    let st = unsafe { lr_model_load(c("/nonexistent.ckpt").as_ptr(), c("/nonexistent.txt").as_ptr(), &mut handle) };
    assert_eq!(st, LrStatus::Io);
    assert!(handle.is_null());
    assert!(last_error().contains("nonexistent"));

    assert_eq!(unsafe { lr_model_latent_dim(ptr::null()) }, 0);
    let mut answer = ptr::null_mut();
    let st = unsafe { lr_model_predict(ptr::null(), c("a").as_ptr(), c("b").as_ptr(), &mut answer) };
    assert_eq!(st, LrStatus::NullArgument);
    unsafe {
        lr_model_free(ptr::null_mut());
        lr_string_free(ptr::null_mut());
    }
}

#[test]
fn unknown_tokens_are_contract_errors() {
    let f = fixture();
    let mut answer = ptr::null_mut();
    let st = unsafe { lr_model_predict(f.model, c("zebra").as_ptr(), c("what").as_ptr(), &mut answer) };
    assert_ne!(st, LrStatus::Ok);
    assert!(answer.is_null());
    assert!(!last_error().is_empty());
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/latent_replay.h")).unwrap();
    for name in [
        "lr_model_load",
        "lr_model_free",
        "lr_model_sample",
        "lr_model_predict",
        "lr_model_energy",
        "lr_metric",
        "lr_last_error",
        "lr_string_free",
        "LR_STATUS_OK",
        "LR_STATUS_NULL_ARGUMENT",
        "typedef struct LrModel LrModel",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
}
