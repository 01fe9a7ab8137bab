//! C ABI over the metastress library.
//!
//! Every fallible function returns an [`MsStatus`]; on failure a message is
//! available from [`ms_last_error`] on the same thread. Models are opaque
//! [`MsModel`] handles released with [`ms_model_free`]; strings returned to
//! the caller are released with [`ms_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use metastress::bench::{train, RunConfig, RunRecord, Workspace};
use metastress::metalearners::{evaluate, preprocess, theil_index, Checkpoint, MetaModel, RngState};
use metastress::Error;

/// Result codes shared by all functions.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidConfig = 3,
    InvalidArgument = 4,
    RunFailed = 5,
    Io = 6,
    Panic = 7,
}

/// A trained or loaded meta-model together with the configuration and data
/// it is evaluated on.
pub struct MsModel {
    config: RunConfig,
    workspace: Workspace,
    model: MetaModel,
    record: Option<RunRecord>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(e: &Error) -> MsStatus {
    match e {
        Error::Config(_) | Error::Json(_) | Error::NotEnoughClasses { .. } | Error::NotEnoughInstances { .. } => {
            MsStatus::InvalidConfig
        }
        Error::Invalid(_) | Error::Shape { .. } | Error::Domain { .. } => MsStatus::InvalidArgument,
        Error::Io { .. } | Error::Image { .. } => MsStatus::Io,
        Error::NonFinite { .. } | Error::NonFiniteLoss { .. } | Error::RunFailed(_) => MsStatus::RunFailed,
    }
}

/// Runs `f`, translating errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), (MsStatus, String)>) -> MsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            MsStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            MsStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (MsStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(name: &str) -> (MsStatus, String) {
    (MsStatus::NullPointer, format!("{name} is null"))
}

unsafe fn read_str<'a>(p: *const c_char, name: &str) -> Result<&'a str, (MsStatus, String)> {
    if p.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(p).to_str().map_err(|_| (MsStatus::InvalidUtf8, format!("{name} is not UTF-8")))
}

fn parse_config(json: &str) -> Result<RunConfig, (MsStatus, String)> {
    let cfg: RunConfig = serde_json::from_str(json).map_err(|e| (MsStatus::InvalidConfig, e.to_string()))?;
    cfg.validate().map_err(lib_err)?;
    Ok(cfg)
}

/// Message for the last failed call on this thread, or null. The pointer is
/// valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn ms_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ms_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Theil index of `n` positive losses.
///
/// # Safety
/// `losses` must point to `n` readable doubles and `out` to one writable double.
#[no_mangle]
pub unsafe extern "C" fn ms_theil_index(losses: *const f64, n: usize, out: *mut f64) -> MsStatus {
    guard(|| {
        if losses.is_null() {
            return Err(null("losses"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let v = theil_index(std::slice::from_raw_parts(losses, n)).map_err(lib_err)?;
        *out = v;
        Ok(())
    })
}

/// The two LSTM-optimizer input features for `value` with sharpness `p`.
///
/// # Safety
/// `out` must point to two writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ms_preprocess(value: f64, p: f64, out: *mut f64) -> MsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if !(p > 0.0) || !value.is_finite() {
            return Err((MsStatus::InvalidArgument, "p must be positive and value finite".into()));
        }
        let (a, b) = preprocess(value, p);
        *out = a;
        *out.add(1) = b;
        Ok(())
    })
}

/// Meta-trains from a JSON run config. A diverged run returns `RunFailed`
/// and leaves `*out_model` null.
///
/// # Safety
/// `config_json` must be a NUL-terminated string and `out_model` writable.
#[no_mangle]
pub unsafe extern "C" fn ms_train(config_json: *const c_char, out_model: *mut *mut MsModel) -> MsStatus {
    guard(|| {
        if out_model.is_null() {
            return Err(null("out_model"));
        }
        *out_model = ptr::null_mut();
        let config = parse_config(read_str(config_json, "config_json")?)?;
        let workspace = Workspace::load(&config).map_err(lib_err)?;
        let outcome = train(&config, &workspace, None).map_err(lib_err)?;
        if outcome.record.failed() {
            return Err((MsStatus::RunFailed, format!("meta-training diverged: {:?}", outcome.record.status)));
        }
        let handle = MsModel { config, workspace, model: outcome.model, record: Some(outcome.record) };
        *out_model = Box::into_raw(Box::new(handle));
        Ok(())
    })
}

/// Meta-test accuracy over `num_tasks` tasks (0 uses the config's count).
/// Any of the output pointers may be null.
///
/// # Safety
/// `model` must be a live handle; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn ms_model_evaluate(
    model: *const MsModel,
    num_tasks: usize,
    mean: *mut f64,
    ci95: *mut f64,
    ci999: *mut f64,
) -> MsStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let mut cfg = m.config.clone();
        if num_tasks > 0 {
            cfg.eval_tasks = num_tasks;
        }
        let spec = m.workspace.learner_spec(&cfg);
        let r = evaluate(&m.model, &m.workspace.test_protocol(&spec, &cfg), cfg.adapt_steps()).map_err(lib_err)?;
        for (p, v) in [(mean, r.mean), (ci95, r.ci95), (ci999, r.ci999)] {
            if !p.is_null() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Training record as JSON (or `null` for loaded models). Free with
/// [`ms_string_free`].
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ms_model_record_json(model: *const MsModel, out: *mut *mut c_char) -> MsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let text = serde_json::to_string(&m.record).map_err(|e| (MsStatus::RunFailed, e.to_string()))?;
        *out = CString::new(text).map_err(|e| (MsStatus::RunFailed, e.to_string()))?.into_raw();
        Ok(())
    })
}

/// Writes a checkpoint.
///
/// # Safety
/// `model` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ms_model_save(model: *const MsModel, path: *const c_char) -> MsStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let path = read_str(path, "path")?;
        let iteration = m.record.as_ref().map_or(0, |r| r.best_iteration as u64);
        let rng = RngState { seed: m.config.seed, iteration };
        Checkpoint::new(m.model.clone(), m.config.hash(), rng).save(Path::new(path)).map_err(lib_err)
    })
}

/// Loads a checkpoint and pairs it with the data described by `config_json`.
///
/// # Safety
/// `path` and `config_json` must be NUL-terminated strings; `out_model`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn ms_model_load(
    path: *const c_char,
    config_json: *const c_char,
    out_model: *mut *mut MsModel,
) -> MsStatus {
    guard(|| {
        if out_model.is_null() {
            return Err(null("out_model"));
        }
        *out_model = ptr::null_mut();
        let path = read_str(path, "path")?;
        let config = parse_config(read_str(config_json, "config_json")?)?;
        let ckpt = Checkpoint::load(Path::new(path)).map_err(lib_err)?;
        let mut config = config.for_strategy(ckpt.model.strategy());
        if let MetaModel::Taml(t) = &ckpt.model {
            config.lambda = Some(t.lambda);
        }
        let workspace = Workspace::load(&config).map_err(lib_err)?;
        let expected = workspace.learner_spec(&config).num_params();
        if ckpt.model.init_params().len() != expected {
            return Err((
                MsStatus::InvalidConfig,
                format!("checkpoint has {} base parameters, config expects {expected}", ckpt.model.init_params().len()),
            ));
        }
        *out_model = Box::into_raw(Box::new(MsModel { config, workspace, model: ckpt.model, record: None }));
        Ok(())
    })
}

/// Releases a model handle. Null is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ms_model_free(model: *mut MsModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ms_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
