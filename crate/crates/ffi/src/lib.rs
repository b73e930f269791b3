//! C ABI over a trained checkpoint: replay sampling, answer prediction,
//! slot energies and the answer metrics.
//!
//! Every fallible function returns an [`LrStatus`]; on failure the message
//! is available from [`lr_last_error`] on the same thread. Strings handed
//! out by this library are released with [`lr_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use latent_replay::prior::LangevinConfig;
use latent_replay::tasks::io::write_jsonl;
use latent_replay::tasks::metrics::{metric_em, metric_nf1};
use latent_replay::tasks::qa::{to_qa_format, RawItem};
use latent_replay::tasks::vocab::{Vocab, SEP};
use latent_replay::trainer::{generate_replay, Model};
use latent_replay::{seed, Error};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LrStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Config = 4,
    Contract = 5,
    Numeric = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LrMetric {
    ExactMatch = 0,
    NormalizedF1 = 1,
}

/// A loaded checkpoint with its vocabulary.
pub struct LrModel {
    model: Model,
    vocab: Vocab,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes replaced");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> LrStatus {
    match err.root() {
        Error::Io { .. } => LrStatus::Io,
        Error::Config { .. } | Error::Parse { .. } | Error::Json(_) => LrStatus::Config,
        Error::Numeric(_) => LrStatus::Numeric,
        _ => LrStatus::Contract,
    }
}

struct Fail(LrStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

/// Runs `f`, recording any failure or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> LrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LrStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside latent-replay".into());
            LrStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail(LrStatus::NullArgument, format!("`{what}` is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(LrStatus::InvalidUtf8, format!("`{what}` is not UTF-8")))
}

unsafe fn model_ref<'a>(m: *const LrModel) -> Result<&'a LrModel, Fail> {
    m.as_ref().ok_or_else(|| Fail(LrStatus::NullArgument, "`model` is null".into()))
}

fn check_out<T>(p: *mut T, what: &str) -> Result<(), Fail> {
    if p.is_null() {
        Err(Fail(LrStatus::NullArgument, format!("`{what}` is null")))
    } else {
        Ok(())
    }
}

fn into_c(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).expect("nul bytes replaced").into_raw()
}

/// Message of the last failure on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn lr_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Frees a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn lr_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads a checkpoint and its vocabulary file into `*out`.
///
/// # Safety
/// Paths must be NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lr_model_load(
    checkpoint_path: *const c_char,
    vocab_path: *const c_char,
    out: *mut *mut LrModel,
) -> LrStatus {
    guard(|| {
        check_out(out, "out")?;
        let ckpt = text(checkpoint_path, "checkpoint_path")?;
        let vocab = Vocab::load(Path::new(text(vocab_path, "vocab_path")?))?;
        let model = Model::load(Path::new(ckpt))?;
        if model.generator.vocab_size() != vocab.len() {
            return Err(Fail(
                LrStatus::Config,
                format!(
                    "vocabulary has {} tokens, checkpoint expects {}",
                    vocab.len(),
                    model.generator.vocab_size()
                ),
            ));
        }
        *out = Box::into_raw(Box::new(LrModel { model, vocab }));
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from [`lr_model_load`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn lr_model_free(model: *mut LrModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Latent dimension of the loaded prior, or 0 for null.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lr_model_latent_dim(model: *const LrModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.prior.latent_dim())
}

/// Draws up to `n` replay QA pairs; writes them as JSON Lines to `*out_jsonl`
/// and the number produced to `*out_count`.
///
/// # Safety
/// `model` must be a live handle; output pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn lr_model_sample(
    model: *const LrModel,
    n: usize,
    seed_value: u64,
    k_steps: usize,
    step_size: f64,
    max_len: usize,
    out_jsonl: *mut *mut c_char,
    out_count: *mut usize,
) -> LrStatus {
    guard(|| {
        let m = model_ref(model)?;
        check_out(out_jsonl, "out_jsonl")?;
        check_out(out_count, "out_count")?;
        let cfg = LangevinConfig {
            steps: k_steps,
            step_size,
            seed: seed::derive(seed_value, &[seed::REPLAY]),
        };
        let batch = generate_replay(&m.model.prior, &m.model.generator, n, max_len, &cfg)?;
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &batch.examples, &m.vocab)?;
        *out_jsonl = into_c(String::from_utf8(buf).expect("JSON is UTF-8"));
        *out_count = batch.achieved();
        Ok(())
    })
}

/// Predicted answer text for `context` and `prompt`.
///
/// # Safety
/// `model` must be a live handle; strings NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lr_model_predict(
    model: *const LrModel,
    context: *const c_char,
    prompt: *const c_char,
    out_answer: *mut *mut c_char,
) -> LrStatus {
    guard(|| {
        let m = model_ref(model)?;
        check_out(out_answer, "out_answer")?;
        let mut question = m.vocab.encode(text(context, "context")?)?;
        let prompt = m.vocab.encode(text(prompt, "prompt")?)?;
        if question.is_empty() || prompt.is_empty() {
            return Err(Error::contract("context and prompt must be non-empty").into());
        }
        question.push(SEP);
        question.extend(prompt);
        let ids = m.model.inference.predict_answer(&question)?;
        *out_answer = into_c(m.vocab.decode(&ids));
        Ok(())
    })
}

/// Total slot energy of `answer` for `context` and `prompt`.
///
/// # Safety
/// `model` must be a live handle; strings NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lr_model_energy(
    model: *const LrModel,
    context: *const c_char,
    prompt: *const c_char,
    answer: *const c_char,
    out_energy: *mut f64,
) -> LrStatus {
    guard(|| {
        let m = model_ref(model)?;
        check_out(out_energy, "out_energy")?;
        let raw = RawItem {
            context: text(context, "context")?.into(),
            prompt: text(prompt, "prompt")?.into(),
            answer: text(answer, "answer")?.into(),
        };
        let ex = to_qa_format(&raw, "ffi", &m.vocab)?;
        *out_energy = m.model.inference.energy(&m.model.generator, &ex)?.total;
        Ok(())
    })
}

/// Scores whitespace-tokenized `prediction` against `gold` on a 0-100 scale.
///
/// # Safety
/// Strings NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lr_metric(
    metric: LrMetric,
    prediction: *const c_char,
    gold: *const c_char,
    out_score: *mut f64,
) -> LrStatus {
    guard(|| {
        check_out(out_score, "out_score")?;
        let pred: Vec<&str> = text(prediction, "prediction")?.split_whitespace().collect();
        let gold: Vec<&str> = text(gold, "gold")?.split_whitespace().collect();
        *out_score = match metric {
            LrMetric::ExactMatch => metric_em(&pred, &gold),
            LrMetric::NormalizedF1 => metric_nf1(&pred, &gold),
        };
        Ok(())
    })
}
