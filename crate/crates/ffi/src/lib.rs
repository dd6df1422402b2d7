//! C interface to the `dccdi` library.
//!
//! Objects cross the boundary as opaque handles created by a `*_new`,
//! `*_load` or `*_train` function and released with the matching `*_free`.
//! Every fallible function returns a [`DccdiStatus`]; on failure
//! [`dccdi_last_error`] describes the problem until the next call on the same
//! thread. Matrices are row-major `double` buffers whose shape is passed
//! alongside.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use dccdi::cca::{correlation_gradient, correlation_objective, linear_cca_oracle};
use dccdi::cli::{evaluate_method, fit, ExperimentConfig, Method};
use dccdi::fewshot::Dataset;
use dccdi::meta::Model;
use dccdi::{Error, Matrix};

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DccdiStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Numerical = 4,
    Io = 5,
    Config = 6,
    Panic = 7,
}

/// Methods accepted by [`dccdi_evaluate`].
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DccdiMethod {
    Dccdi = 0,
    DccdiNoText = 1,
    Prototypical = 2,
    Matching = 3,
    Relation = 4,
    GraphMetric = 5,
}

impl From<DccdiMethod> for Method {
    fn from(m: DccdiMethod) -> Self {
        match m {
            DccdiMethod::Dccdi => Method::Dccdi,
            DccdiMethod::DccdiNoText => Method::DccdiNoText,
            DccdiMethod::Prototypical => Method::Prototypical,
            DccdiMethod::Matching => Method::Matching,
            DccdiMethod::Relation => Method::Relation,
            DccdiMethod::GraphMetric => Method::GraphMetric,
        }
    }
}

/// Experiment configuration.
pub struct DccdiConfig(ExperimentConfig);

/// A labelled two-view dataset.
pub struct DccdiDataset(Dataset);

/// A meta-trained model.
pub struct DccdiModel(Model);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> DccdiStatus {
    match e {
        Error::Shape { .. } => DccdiStatus::Shape,
        Error::NonFinite(_)
        | Error::NoConvergence { .. }
        | Error::NotSymmetric { .. }
        | Error::EigenvalueTooSmall { .. }
        | Error::Diverged { .. } => DccdiStatus::Numerical,
        Error::Io(_) | Error::Json(_) | Error::Parse { .. } => DccdiStatus::Io,
        Error::Config(_) => DccdiStatus::Config,
        _ => DccdiStatus::InvalidArgument,
    }
}

struct Fail(DccdiStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(DccdiStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, converting errors and panics into a status plus last-error text.
fn guard<F: FnOnce() -> Result<(), Fail>>(f: F) -> DccdiStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DccdiStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            DccdiStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(DccdiStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output handle"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn matrix_arg(p: *const f64, rows: usize, cols: usize, what: &str) -> Result<Matrix, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    let len = rows
        .checked_mul(cols)
        .ok_or_else(|| Fail(DccdiStatus::InvalidArgument, format!("{what}: shape overflows")))?;
    Ok(Matrix::new(rows, cols, std::slice::from_raw_parts(p, len).to_vec())?)
}

unsafe fn write_out(out: *mut f64, values: &[f64], what: &str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null(what));
    }
    ptr::copy_nonoverlapping(values.as_ptr(), out, values.len());
    Ok(())
}

/// Message for the last failed call on this thread, or NULL. Valid until the
/// next call into the library on this thread.
#[no_mangle]
pub extern "C" fn dccdi_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dccdi_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Default configuration.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dccdi_config_new(out: *mut *mut DccdiConfig) -> DccdiStatus {
    guard(|| put(out, DccdiConfig(ExperimentConfig::default())))
}

/// Configuration parsed from TOML text; missing keys take default values.
///
/// # Safety
/// `toml` must be a NUL-terminated string and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dccdi_config_from_toml(toml: *const c_char, out: *mut *mut DccdiConfig) -> DccdiStatus {
    guard(|| {
        let cfg = ExperimentConfig::from_toml_str(str_arg(toml, "toml")?)?;
        put(out, DccdiConfig(cfg))
    })
}

/// Replaces the base seed.
///
/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn dccdi_config_set_seed(cfg: *mut DccdiConfig, seed: u64) -> DccdiStatus {
    guard(|| {
        let c = cfg.as_mut().ok_or_else(|| null("config"))?;
        c.0.seed = seed;
        Ok(())
    })
}

/// Sets the number of evaluation episodes.
///
/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn dccdi_config_set_episodes(cfg: *mut DccdiConfig, episodes: usize) -> DccdiStatus {
    guard(|| {
        let c = cfg.as_mut().ok_or_else(|| null("config"))?;
        c.0.eval.episodes = episodes;
        Ok(())
    })
}

/// # Safety
/// `cfg` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dccdi_config_free(cfg: *mut DccdiConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Generates the target domain of `cfg` when `target` is true, else the source.
///
/// # Safety
/// `cfg` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dccdi_dataset_generate(
    cfg: *const DccdiConfig,
    target: bool,
    out: *mut *mut DccdiDataset,
) -> DccdiStatus {
    guard(|| {
        let c = &handle(cfg, "config")?.0;
        let (ds, _) = if target { c.generate_target()? } else { c.generate_source()? };
        put(out, DccdiDataset(ds))
    })
}

/// Loads a JSON-lines dataset file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dccdi_dataset_load(path: *const c_char, out: *mut *mut DccdiDataset) -> DccdiStatus {
    guard(|| {
        let ds = Dataset::load(PathBuf::from(str_arg(path, "path")?))?;
        put(out, DccdiDataset(ds))
    })
}

/// Number of samples; 0 for NULL.
///
/// # Safety
/// `ds` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dccdi_dataset_len(ds: *const DccdiDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.0.len())
}

/// # Safety
/// `ds` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dccdi_dataset_free(ds: *mut DccdiDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Stage 1 and stage 2 meta-training on `source`.
///
/// # Safety
/// Handles must be live and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dccdi_model_train(
    cfg: *const DccdiConfig,
    source: *const DccdiDataset,
    out: *mut *mut DccdiModel,
) -> DccdiStatus {
    guard(|| {
        let c = &handle(cfg, "config")?.0;
        let ds = &handle(source, "source")?.0;
        let (model, _) = fit(c, ds)?;
        put(out, DccdiModel(model))
    })
}

/// Untrained model initialized from `cfg`'s shape and seed.
///
/// # Safety
/// `cfg` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dccdi_model_new(cfg: *const DccdiConfig, out: *mut *mut DccdiModel) -> DccdiStatus {
    guard(|| {
        let c = &handle(cfg, "config")?.0;
        put(out, DccdiModel(Model::new(&c.model, c.seed)?))
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dccdi_model_load(path: *const c_char, out: *mut *mut DccdiModel) -> DccdiStatus {
    guard(|| {
        let m = Model::load_json(str_arg(path, "path")?)?;
        put(out, DccdiModel(m))
    })
}

/// # Safety
/// `model` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn dccdi_model_save(model: *const DccdiModel, path: *const c_char) -> DccdiStatus {
    guard(|| {
        let m = &handle(model, "model")?.0;
        Ok(m.save_json(str_arg(path, "path")?)?)
    })
}

/// Width of the trunk embedding; 0 for NULL.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dccdi_model_embed_dim(model: *const DccdiModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.embed_dim())
}

/// Embeds `rows x cols` visual features into `out` (`rows x embed_dim`).
///
/// # Safety
/// `x` must hold `rows * cols` values and `out` room for
/// `rows * dccdi_model_embed_dim(model)`.
#[no_mangle]
pub unsafe extern "C" fn dccdi_model_embed(
    model: *const DccdiModel,
    x: *const f64,
    rows: usize,
    cols: usize,
    out: *mut f64,
) -> DccdiStatus {
    guard(|| {
        let m = &handle(model, "model")?.0;
        let e = m.embed(&matrix_arg(x, rows, cols, "x")?)?;
        write_out(out, e.data(), "out")
    })
}

/// # Safety
/// `model` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dccdi_model_free(model: *mut DccdiModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Mean episode accuracy and 95% half-width of one method over
/// `cfg`'s evaluation episodes.
///
/// # Safety
/// Handles must be live; `mean` and `ci95` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dccdi_evaluate(
    model: *const DccdiModel,
    target: *const DccdiDataset,
    cfg: *const DccdiConfig,
    method: DccdiMethod,
    shots: usize,
    mean: *mut f64,
    ci95: *mut f64,
) -> DccdiStatus {
    guard(|| {
        let m = &handle(model, "model")?.0;
        let ds = &handle(target, "target")?.0;
        let c = &handle(cfg, "config")?.0;
        let r = evaluate_method(m, ds, c, method.into(), shots, &c.dccdi)?;
        write_out(mean, &[r.mean_accuracy], "mean")?;
        write_out(ci95, &[r.ci95], "ci95")
    })
}

/// Sum of the top `k` canonical correlations of two `n`-row views, with
/// `r1` added to both covariance diagonals. Gradients are written to `dz1`
/// (`n x d1`) and `dz2` (`n x d2`) when those are non-NULL.
///
/// # Safety
/// Buffers must hold the stated number of values.
#[no_mangle]
pub unsafe extern "C" fn dccdi_correlation(
    z1: *const f64,
    z2: *const f64,
    n: usize,
    d1: usize,
    d2: usize,
    r1: f64,
    k: usize,
    value: *mut f64,
    dz1: *mut f64,
    dz2: *mut f64,
) -> DccdiStatus {
    guard(|| {
        let a = matrix_arg(z1, n, d1, "z1")?;
        let b = matrix_arg(z2, n, d2, "z2")?;
        let (v, stats) = correlation_objective(&a, &b, r1, k)?;
        write_out(value, &[v], "value")?;
        if !dz1.is_null() || !dz2.is_null() {
            let g = correlation_gradient(&stats, &a, &b)?;
            if !dz1.is_null() {
                write_out(dz1, g.dz1.data(), "dz1")?;
            }
            if !dz2.is_null() {
                write_out(dz2, g.dz2.data(), "dz2")?;
            }
        }
        Ok(())
    })
}

/// Leading `k` canonical correlations of `x` (`n x p`) and `y` (`n x q`),
/// descending, written to `out`.
///
/// # Safety
/// Buffers must hold the stated number of values; `out` room for `k`.
#[no_mangle]
pub unsafe extern "C" fn dccdi_linear_cca(
    x: *const f64,
    y: *const f64,
    n: usize,
    p: usize,
    q: usize,
    k: usize,
    r1: f64,
    out: *mut f64,
) -> DccdiStatus {
    guard(|| {
        let cca = linear_cca_oracle(&matrix_arg(x, n, p, "x")?, &matrix_arg(y, n, q, "y")?, k, r1)?;
        write_out(out, &cca.correlations, "out")
    })
}
