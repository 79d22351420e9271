//! C ABI over the `drae` core.
//!
//! Every function returns a [`DraeStatus`]; on failure the message is kept in
//! a per-thread slot readable through [`drae_last_error_message`]. Handles are
//! opaque and must be released with their matching `_free` function.
//!
//! Matrices cross the boundary row-major as `f64`. Subject ids are 0-based
//! codes below the model's subject count.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use drae::classifiers::ClassifierKind;
use drae::linalg::Matrix;
use drae::model::{build_model, Dims, ModelBundle, ModelVariant, ScheduleParams};
use drae::nn::OptimizerConfig;
use drae::schedule::{DropoutSchedule, Head};
use drae::train::{train_classifier, train_feature_extractor, LabeledSet, TaskClassifier, TrainConfig};
use drae::Error;

/// Result codes. `Ok` is zero.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DraeStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Dimension = 3,
    Config = 4,
    Numeric = 5,
    State = 6,
    Io = 7,
    Format = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DraeHead {
    Adversary = 0,
    Nuisance = 1,
}

impl From<DraeHead> for Head {
    fn from(h: DraeHead) -> Self {
        match h {
            DraeHead::Adversary => Head::Adversary,
            DraeHead::Nuisance => Head::Nuisance,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DraeDims {
    pub channels: usize,
    pub latent: usize,
    pub subjects: usize,
    pub classes: usize,
}

/// Training knobs. Fill with [`drae_train_options_default`] first.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DraeTrainOptions {
    pub lambda_a: f64,
    pub lambda_n: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub classifier_epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl From<DraeTrainOptions> for TrainConfig {
    fn from(o: DraeTrainOptions) -> Self {
        TrainConfig {
            lambda_a: o.lambda_a,
            lambda_n: o.lambda_n,
            epochs: o.epochs,
            batch_size: o.batch_size,
            classifier_epochs: o.classifier_epochs,
            optimizer: OptimizerConfig {
                lr: o.learning_rate,
                ..OptimizerConfig::default()
            },
            seed: o.seed,
            log_every: 0,
        }
    }
}

/// Latent dropout schedule.
pub struct DraeSchedule(DropoutSchedule);

/// Model bundle: encoder, decoder, discriminator heads and task classifier.
pub struct DraeModel(ModelBundle);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> DraeStatus {
    match e {
        Error::Dimension { .. } => DraeStatus::Dimension,
        Error::Argument(_) => DraeStatus::InvalidArgument,
        Error::State(_) => DraeStatus::State,
        Error::Numeric(_) => DraeStatus::Numeric,
        Error::Config(_) => DraeStatus::Config,
        Error::Io { .. } => DraeStatus::Io,
        Error::Ingest { .. } | Error::Format(_) => DraeStatus::Format,
        Error::Fold { source, .. } => status_of(source),
    }
}

enum Failure {
    Null(&'static str),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn guard(body: impl FnOnce() -> Result<(), Failure>) -> DraeStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => DraeStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            DraeStatus::NullPointer
        }
        Ok(Err(Failure::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            DraeStatus::Panic
        }
    }
}

unsafe fn as_ref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn as_mut<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or(Failure::Null(what))
}

unsafe fn as_str<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Core(Error::Argument(format!("{what} is not UTF-8"))))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &'static str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn matrix(x: *const f64, rows: usize, cols: usize) -> Result<Matrix, Failure> {
    let n = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::Argument("matrix size overflows".into()))?;
    Ok(Matrix::from_vec(rows, cols, slice(x, n, "x")?.to_vec())?)
}

fn write_out<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::Null("out"));
    }
    unsafe { *out = Box::into_raw(Box::new(value)) };
    Ok(())
}

/// Message for the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn drae_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn drae_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

#[no_mangle]
pub extern "C" fn drae_train_options_default() -> DraeTrainOptions {
    let c = TrainConfig::default();
    DraeTrainOptions {
        lambda_a: c.lambda_a,
        lambda_n: c.lambda_n,
        epochs: c.epochs,
        batch_size: c.batch_size,
        classifier_epochs: c.classifier_epochs,
        learning_rate: c.optimizer.lr,
        seed: c.seed,
    }
}

/// Soft schedule over `dim` nodes with exponent `alpha`.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn drae_schedule_soft(dim: usize, alpha: f64, out: *mut *mut DraeSchedule) -> DraeStatus {
    guard(|| write_out(out, DraeSchedule(DropoutSchedule::soft(dim, alpha)?)))
}

/// Hard split of `dim` nodes in the ratio `adversary:nuisance`.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn drae_schedule_hard(
    dim: usize,
    adversary: u32,
    nuisance: u32,
    out: *mut *mut DraeSchedule,
) -> DraeStatus {
    guard(|| write_out(out, DraeSchedule(DropoutSchedule::hard(dim, (adversary, nuisance))?)))
}

/// # Safety
/// `schedule` must be null or a handle from a `drae_schedule_*` constructor.
#[no_mangle]
pub unsafe extern "C" fn drae_schedule_free(schedule: *mut DraeSchedule) {
    if !schedule.is_null() {
        drop(Box::from_raw(schedule));
    }
}

/// Expected number of nodes a head sees.
///
/// # Safety
/// `schedule` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn drae_schedule_effective_dim(
    schedule: *const DraeSchedule,
    head: DraeHead,
    out: *mut f64,
) -> DraeStatus {
    guard(|| {
        let s = as_ref(schedule, "schedule")?;
        *as_mut(out, "out")? = s.0.effective_dim(head.into());
        Ok(())
    })
}

/// Per-node drop rates for `head`; `out` must hold exactly `len` = dim values.
///
/// # Safety
/// `schedule` must be a live handle and `out` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn drae_schedule_drop_rates(
    schedule: *const DraeSchedule,
    head: DraeHead,
    out: *mut f64,
    len: usize,
) -> DraeStatus {
    guard(|| {
        let rates = as_ref(schedule, "schedule")?.0.drop_rates(head.into());
        if len != rates.len() {
            return Err(Error::Argument(format!("buffer holds {len} values, schedule has {}", rates.len())).into());
        }
        slice_mut(out, len, "out")?.copy_from_slice(&rates);
        Ok(())
    })
}

/// Builds a freshly initialised model. `variant` is a tag such as `"DA-cRAE"`.
///
/// # Safety
/// `variant` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn drae_model_new(
    variant: *const c_char,
    dims: DraeDims,
    alpha: f64,
    seed: u64,
    out: *mut *mut DraeModel,
) -> DraeStatus {
    guard(|| {
        let v: ModelVariant = as_str(variant, "variant")?.parse()?;
        let d = Dims {
            c: dims.channels,
            d: dims.latent,
            s: dims.subjects,
            l: dims.classes,
        };
        let params = ScheduleParams {
            alpha,
            ..ScheduleParams::default()
        };
        write_out(out, DraeModel(build_model(v, d, params, seed)?))
    })
}

/// # Safety
/// `model` must be null or a handle from `drae_model_new`/`drae_model_load`.
#[no_mangle]
pub unsafe extern "C" fn drae_model_free(model: *mut DraeModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn drae_model_dims(model: *const DraeModel, out: *mut DraeDims) -> DraeStatus {
    guard(|| {
        let d = as_ref(model, "model")?.0.dims;
        *as_mut(out, "out")? = DraeDims {
            channels: d.c,
            latent: d.d,
            subjects: d.s,
            classes: d.l,
        };
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn drae_model_save(model: *const DraeModel, path: *const c_char) -> DraeStatus {
    guard(|| {
        let m = as_ref(model, "model")?;
        m.0.save(Path::new(as_str(path, "path")?))?;
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn drae_model_load(path: *const c_char, out: *mut *mut DraeModel) -> DraeStatus {
    guard(|| {
        let bundle = ModelBundle::load(Path::new(as_str(path, "path")?))?;
        write_out(out, DraeModel(bundle))
    })
}

/// Encodes `rows` x channels inputs into `out` (rows x latent, `out_len` values).
///
/// # Safety
/// `x` must hold `rows * cols` values and `out` must be valid for `out_len` writes.
#[no_mangle]
pub unsafe extern "C" fn drae_model_encode(
    model: *const DraeModel,
    x: *const f64,
    rows: usize,
    cols: usize,
    out: *mut f64,
    out_len: usize,
) -> DraeStatus {
    guard(|| {
        let m = as_ref(model, "model")?;
        let z = m.0.encode(&matrix(x, rows, cols)?)?;
        let buf = slice_mut(out, out_len, "out")?;
        if buf.len() != z.as_slice().len() {
            return Err(Error::Argument(format!("buffer holds {out_len} values, need {}", z.as_slice().len())).into());
        }
        buf.copy_from_slice(z.as_slice());
        Ok(())
    })
}

unsafe fn labeled(
    m: &ModelBundle,
    x: *const f64,
    rows: usize,
    subjects: *const u32,
    labels: *const u32,
) -> Result<LabeledSet, Failure> {
    let x = matrix(x, rows, m.dims.c)?;
    let s = slice(subjects, rows, "subjects")?;
    let l = slice(labels, rows, "labels")?;
    if let Some(bad) = s.iter().find(|&&v| v as usize >= m.dims.s) {
        return Err(Error::Argument(format!("subject code {bad} >= {}", m.dims.s)).into());
    }
    if let Some(bad) = l.iter().find(|&&v| v as usize >= m.dims.l) {
        return Err(Error::Argument(format!("label {bad} >= {}", m.dims.l)).into());
    }
    Ok(LabeledSet {
        x,
        subjects: s.iter().map(|&v| v as usize).collect(),
        labels: l.iter().map(|&v| v as usize).collect(),
    })
}

/// Trains the feature extractor, then the MLP task classifier on the frozen
/// encoder. Inputs have `model` channels columns. `options` may be null for
/// defaults. When `final_loss` is non-null it receives the last epoch's total.
///
/// # Safety
/// `x` must hold `rows * channels` values; `subjects` and `labels` `rows` each.
#[no_mangle]
pub unsafe extern "C" fn drae_model_train(
    model: *mut DraeModel,
    x: *const f64,
    rows: usize,
    subjects: *const u32,
    labels: *const u32,
    options: *const DraeTrainOptions,
    final_loss: *mut f64,
) -> DraeStatus {
    guard(|| {
        let m = as_mut(model, "model")?;
        let opts = options.as_ref().copied().unwrap_or_else(|| drae_train_options_default());
        let cfg = TrainConfig::from(opts);
        let set = labeled(&m.0, x, rows, subjects, labels)?;
        // train on a copy so a failure leaves the handle untouched
        let mut bundle = m.0.clone();
        let log = train_feature_extractor(&mut bundle, &set, &set, &cfg)?;
        let trained = train_classifier(&bundle, &ClassifierKind::Mlp, &set, &set, &cfg)?;
        if let TaskClassifier::Mlp(net) = trained.classifier {
            bundle.classifier = net;
        }
        m.0 = bundle;
        if let (Some(out), Some(last)) = (final_loss.as_mut(), log.epochs.last()) {
            *out = last.total;
        }
        Ok(())
    })
}

/// Task-label predictions for `rows` inputs, written to `out` (`rows` values).
///
/// # Safety
/// `x` must hold `rows * cols` values and `out` must be valid for `rows` writes.
#[no_mangle]
pub unsafe extern "C" fn drae_model_predict(
    model: *const DraeModel,
    x: *const f64,
    rows: usize,
    cols: usize,
    out: *mut u32,
) -> DraeStatus {
    guard(|| {
        let m = as_ref(model, "model")?;
        let z = m.0.encode(&matrix(x, rows, cols)?)?;
        let pred = m.0.classify(&z)?.argmax_rows();
        for (o, p) in slice_mut(out, rows, "out")?.iter_mut().zip(pred) {
            *o = p as u32;
        }
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_codes_follow_variants() {
        assert_eq!(status_of(&Error::Argument("x".into())), DraeStatus::InvalidArgument);
        let nested = Error::Fold {
            subject: 3,
            source: Box::new(Error::Numeric("nan".into())),
        };
        assert_eq!(status_of(&nested), DraeStatus::Numeric);
    }

    #[test]
    fn panics_become_status() {
        let s = guard(|| panic!("boom"));
        assert_eq!(s, DraeStatus::Panic);
        let msg = unsafe { CStr::from_ptr(drae_last_error_message()) };
        assert_eq!(msg.to_str().unwrap(), "panic: boom");
    }
}
