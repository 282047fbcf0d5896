//! C ABI over the `htgcfd` library.
//!
//! Objects cross the boundary as opaque handles created by a `*_new`/`*_load`
//! style function and released by the matching `*_free`. Every fallible
//! function returns an [`HtgcfdStatus`]; on failure the message is available
//! from [`htgcfd_last_error`] on the same thread. Strings returned to the
//! caller are owned by the caller and must be released with
//! [`htgcfd_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use htgcfd::checkpoint::load_params;
use htgcfd::config::{load_regions, RunConfig};
use htgcfd::htg::{build_htg, extract_metapath_neighbors, HeteroTradeGraph, MetaPathSpec};
use htgcfd::model::{forward, Hyperparams, ModelParams};
use htgcfd::trainer::{evaluate, run_sequence, RegionData};
use htgcfd::Error;

/// Result codes shared by every fallible entry point.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HtgcfdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidConfig = 3,
    Io = 4,
    Data = 5,
    Numeric = 6,
    OutOfRange = 7,
    Panic = 8,
}

/// Test-set style metrics. `auc` is meaningful only when `auc_defined` is
/// true, which requires both classes among the scored nodes.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct HtgcfdMetrics {
    pub recall: f64,
    pub auc: f64,
    pub f1: f64,
    pub auc_defined: bool,
}

/// Regions loaded from a run configuration.
pub struct HtgcfdRegions {
    regions: Vec<RegionData>,
}

/// The trade graph of one region.
pub struct HtgcfdGraph {
    graph: HeteroTradeGraph,
}

/// Trained parameters restored from a checkpoint.
pub struct HtgcfdModel {
    params: ModelParams,
    hp: Hyperparams,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> HtgcfdStatus {
    match err {
        Error::Config { .. } => HtgcfdStatus::InvalidConfig,
        Error::Io { .. } => HtgcfdStatus::Io,
        Error::NonFinite(_) | Error::Undefined(_) => HtgcfdStatus::Numeric,
        _ => HtgcfdStatus::Data,
    }
}

struct Failure(HtgcfdStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

/// Runs `f`, records any failure or panic, and returns the status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> HtgcfdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HtgcfdStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            HtgcfdStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(HtgcfdStatus::NullPointer, format!("`{what}` is null"))
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(HtgcfdStatus::InvalidUtf8, format!("`{what}` is not UTF-8")))
}

unsafe fn emit<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Message of the last failure on this thread, or NULL. The pointer stays
/// valid until the next failing call on the same thread; do not free it.
#[no_mangle]
pub extern "C" fn htgcfd_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn htgcfd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must be NULL or a string returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn htgcfd_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads the data described by a TOML run configuration.
///
/// # Safety
/// `config_toml` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn htgcfd_regions_load(config_toml: *const c_char, out: *mut *mut HtgcfdRegions) -> HtgcfdStatus {
    guard(|| {
        let cfg = RunConfig::from_toml_str(text(config_toml, "config_toml")?)?;
        cfg.validate()?;
        emit(
            out,
            HtgcfdRegions {
                regions: load_regions(&cfg.data)?,
            },
        )
    })
}

/// Number of regions held, or 0 for NULL.
///
/// # Safety
/// `regions` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn htgcfd_regions_count(regions: *const HtgcfdRegions) -> usize {
    regions.as_ref().map_or(0, |r| r.regions.len())
}

/// Region id at `index`, or 0 when out of range.
///
/// # Safety
/// `regions` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn htgcfd_regions_id(regions: *const HtgcfdRegions, index: usize) -> u32 {
    regions
        .as_ref()
        .and_then(|r| r.regions.get(index))
        .map_or(0, |r| r.region_id)
}

/// # Safety
/// `regions` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn htgcfd_regions_free(regions: *mut HtgcfdRegions) {
    if !regions.is_null() {
        drop(Box::from_raw(regions));
    }
}

/// Builds the trade graph of the region at `index`.
///
/// # Safety
/// `regions` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn htgcfd_graph_build(
    regions: *const HtgcfdRegions,
    index: usize,
    out: *mut *mut HtgcfdGraph,
) -> HtgcfdStatus {
    guard(|| {
        let r = borrow(regions, "regions")?;
        let region = r.regions.get(index).ok_or_else(|| {
            Failure(
                HtgcfdStatus::OutOfRange,
                format!("region index {index} out of range for {} regions", r.regions.len()),
            )
        })?;
        emit(
            out,
            HtgcfdGraph {
                graph: build_htg(&region.dataset)?,
            },
        )
    })
}

/// Number of transaction nodes, or 0 for NULL.
///
/// # Safety
/// `graph` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn htgcfd_graph_num_transactions(graph: *const HtgcfdGraph) -> usize {
    graph.as_ref().map_or(0, |g| g.graph.num_transactions())
}

/// # Safety
/// `graph` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn htgcfd_graph_free(graph: *mut HtgcfdGraph) {
    if !graph.is_null() {
        drop(Box::from_raw(graph));
    }
}

/// Restores a model from a `theta_task{l}.ckpt` file. Layer sizes come from
/// the checkpoint; the attention slope and activation take their defaults.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn htgcfd_model_load(path: *const c_char, out: *mut *mut HtgcfdModel) -> HtgcfdStatus {
    guard(|| {
        let params = load_params(Path::new(text(path, "path")?))?;
        let hp = Hyperparams {
            hidden: params.hidden(),
            heads: params.heads(),
            semantic_hidden: params.semantic_hidden(),
            ..Hyperparams::default()
        };
        emit(out, HtgcfdModel { params, hp })
    })
}

/// # Safety
/// `model` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn htgcfd_model_free(model: *mut HtgcfdModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

fn predictions(model: &HtgcfdModel, graph: &HtgcfdGraph) -> Result<Vec<f64>, Failure> {
    let adjs = model
        .params
        .path_names
        .iter()
        .map(|n| extract_metapath_neighbors(&graph.graph, &MetaPathSpec::from_name(n)?))
        .collect::<htgcfd::Result<Vec<_>>>()?;
    Ok(forward(&graph.graph, &adjs, &model.params, &model.hp)?.predictions)
}

/// Writes the fraud probability of every transaction node into `out`, which
/// must hold `len` doubles with `len` equal to the node count.
///
/// # Safety
/// Handles must be live; `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn htgcfd_predict(
    model: *const HtgcfdModel,
    graph: *const HtgcfdGraph,
    out: *mut f64,
    len: usize,
) -> HtgcfdStatus {
    guard(|| {
        let (m, g) = (borrow(model, "model")?, borrow(graph, "graph")?);
        if out.is_null() {
            return Err(null("out"));
        }
        let n = g.graph.num_transactions();
        if len != n {
            return Err(Failure(
                HtgcfdStatus::OutOfRange,
                format!("buffer holds {len} values, graph has {n} transactions"),
            ));
        }
        let p = predictions(m, g)?;
        std::slice::from_raw_parts_mut(out, len).copy_from_slice(&p);
        Ok(())
    })
}

/// Scores every transaction node of `graph` and compares against its labels.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn htgcfd_evaluate(
    model: *const HtgcfdModel,
    graph: *const HtgcfdGraph,
    threshold: f64,
    out: *mut HtgcfdMetrics,
) -> HtgcfdStatus {
    guard(|| {
        let (m, g) = (borrow(model, "model")?, borrow(graph, "graph")?);
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let scores = predictions(m, g)?;
        let metrics = evaluate(&scores, g.graph.labels(), threshold)?;
        *out = HtgcfdMetrics {
            recall: metrics.recall,
            auc: metrics.auc.unwrap_or(f64::NAN),
            f1: metrics.f1,
            auc_defined: metrics.auc.is_some(),
        };
        Ok(())
    })
}

/// Runs the sequential protocol described by a TOML run configuration with
/// its first configured variant and returns the metrics report as JSON.
///
/// # Safety
/// `config_toml` must be a NUL-terminated string; `out_json` must be
/// writable. Free the result with [`htgcfd_string_free`].
#[no_mangle]
pub unsafe extern "C" fn htgcfd_run_sequence(config_toml: *const c_char, out_json: *mut *mut c_char) -> HtgcfdStatus {
    guard(|| {
        if out_json.is_null() {
            return Err(null("out_json"));
        }
        let mut cfg = RunConfig::from_toml_str(text(config_toml, "config_toml")?)?;
        cfg.resolve();
        cfg.validate()?;
        let mut exp = cfg.experiment.clone();
        exp.train.variant = cfg.sequence.variants[0];
        let outcome = run_sequence(&load_regions(&cfg.data)?, &exp)?;
        let json = serde_json::to_string(&outcome.report).map_err(Error::from)?;
        *out_json = CString::new(json).expect("JSON has no NUL bytes").into_raw();
        Ok(())
    })
}
