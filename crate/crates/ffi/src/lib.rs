//! C ABI over the curation core: load scoring heads and vector stores,
//! embed with the deterministic mock backbone, score embeddings, and apply
//! ensemble threshold decisions.
//!
//! Conventions:
//! * Handles (`CuratorHead`, `CuratorStore`, `CuratorEnsemble`) are opaque;
//!   create them through the `*_load`/`*_open`/`*_new` functions and
//!   release them with the matching `*_free`. Passing NULL to a free is a
//!   no-op.
//! * Every fallible call returns a [`CuratorStatus`]; on failure
//!   [`curator_last_error`] returns a thread-local message describing it.
//! * Strings are NUL-terminated UTF-8. Pointers returned by accessor
//!   functions stay valid while the handle lives.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use libc::{c_char, size_t};

use curator_core::embeddings::{mock_embed, EmbeddingStore};
use curator_core::pipeline::{decide, EnsembleConfig};
use curator_core::regressor::RegressionHead;
use curator_core::thresholds::ThresholdSpec;

/// Result codes for every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CuratorStatus {
    Ok = 0,
    /// A required pointer argument was NULL.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    Utf8 = 2,
    /// The underlying file could not be read or written.
    Io = 3,
    /// The file exists but is not a valid artifact of the expected format.
    Format = 4,
    /// The requested record does not exist.
    NotFound = 5,
    /// A vector length does not match the expected dimension.
    DimMismatch = 6,
    /// The caller-supplied buffer is too small.
    BufferTooSmall = 7,
    /// Inputs are structurally invalid (mismatched heads, bad config).
    InvalidArgument = 8,
    /// An unexpected internal failure; see curator_last_error().
    Internal = 9,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: impl Into<String>) {
    let message = message.into();
    let cstring = CString::new(message.replace('\0', "?"))
        .unwrap_or_else(|_| CString::new("error message unavailable").unwrap());
    LAST_ERROR.with(|slot| *slot.borrow_mut() = cstring);
}

fn fail(status: CuratorStatus, message: impl Into<String>) -> CuratorStatus {
    set_error(message);
    status
}

/// Guards the FFI boundary against panics.
fn guarded(body: impl FnOnce() -> CuratorStatus) -> CuratorStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(_) => fail(CuratorStatus::Internal, "internal panic"),
    }
}

/// Message describing the most recent failure on this thread. Valid until
/// the next failing call on the same thread; never NULL.
#[no_mangle]
pub extern "C" fn curator_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Static library version string.
#[no_mangle]
pub extern "C" fn curator_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr() as *const c_char
}

unsafe fn path_arg<'a>(ptr: *const c_char) -> Result<&'a Path, CuratorStatus> {
    if ptr.is_null() {
        return Err(fail(CuratorStatus::NullArgument, "path is NULL"));
    }
    match CStr::from_ptr(ptr).to_str() {
        Ok(s) => Ok(Path::new(s)),
        Err(e) => Err(fail(CuratorStatus::Utf8, format!("path is not UTF-8: {e}"))),
    }
}

unsafe fn str_arg<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, CuratorStatus> {
    if ptr.is_null() {
        return Err(fail(CuratorStatus::NullArgument, format!("{what} is NULL")));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|e| fail(CuratorStatus::Utf8, format!("{what} is not UTF-8: {e}")))
}

/// A loaded scoring head.
pub struct CuratorHead {
    head: RegressionHead,
    id: CString,
}

/// An open embedding store.
pub struct CuratorStore {
    store: EmbeddingStore,
}

/// Heads paired with their thresholds, ready for keep/drop decisions.
pub struct CuratorEnsemble {
    config: EnsembleConfig,
    head_ids: Vec<CString>,
}

/// Loads a head file. On success writes a handle to `out`; release it with
/// [`curator_head_free`].
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn curator_head_load(
    path: *const c_char,
    out: *mut *mut CuratorHead,
) -> CuratorStatus {
    guarded(|| {
        if out.is_null() {
            return fail(CuratorStatus::NullArgument, "out is NULL");
        }
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(status) => return status,
        };
        match RegressionHead::load(path) {
            Ok(head) => {
                let id = CString::new(head.head_id().replace('\0', "?"))
                    .expect("NULs replaced above");
                *out = Box::into_raw(Box::new(CuratorHead { head, id }));
                CuratorStatus::Ok
            }
            Err(e) => {
                use curator_core::regressor::RegressorError as E;
                let status = match &e {
                    E::Io(_) => CuratorStatus::Io,
                    _ => CuratorStatus::Format,
                };
                fail(status, e.to_string())
            }
        }
    })
}

/// # Safety
/// `head` must come from [`curator_head_load`] and not already be freed.
#[no_mangle]
pub unsafe extern "C" fn curator_head_free(head: *mut CuratorHead) {
    if !head.is_null() {
        drop(Box::from_raw(head));
    }
}

/// Embedding width the head expects; 0 when `head` is NULL.
///
/// # Safety
/// `head` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn curator_head_input_dim(head: *const CuratorHead) -> size_t {
    head.as_ref().map_or(0, |h| h.head.input_dim)
}

/// The head's identity (its label source). NULL when `head` is NULL; the
/// pointer stays valid while the handle lives.
///
/// # Safety
/// `head` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn curator_head_id(head: *const CuratorHead) -> *const c_char {
    head.as_ref()
        .map_or(std::ptr::null(), |h| h.id.as_ptr())
}

/// Scores one embedding with the head.
///
/// # Safety
/// `values` must point to `len` readable floats; `out_score` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn curator_head_score(
    head: *const CuratorHead,
    values: *const f32,
    len: size_t,
    out_score: *mut f64,
) -> CuratorStatus {
    guarded(|| {
        let Some(handle) = head.as_ref() else {
            return fail(CuratorStatus::NullArgument, "head is NULL");
        };
        if values.is_null() || out_score.is_null() {
            return fail(CuratorStatus::NullArgument, "values/out_score is NULL");
        }
        let slice = std::slice::from_raw_parts(values, len);
        match handle.head.forward(slice) {
            Ok(score) => {
                *out_score = score;
                CuratorStatus::Ok
            }
            Err(e) => fail(CuratorStatus::DimMismatch, e.to_string()),
        }
    })
}

/// Opens an embedding store for random access; release with
/// [`curator_store_free`].
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn curator_store_open(
    path: *const c_char,
    out: *mut *mut CuratorStore,
) -> CuratorStatus {
    guarded(|| {
        if out.is_null() {
            return fail(CuratorStatus::NullArgument, "out is NULL");
        }
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(status) => return status,
        };
        match EmbeddingStore::open(path) {
            Ok(store) => {
                *out = Box::into_raw(Box::new(CuratorStore { store }));
                CuratorStatus::Ok
            }
            Err(e) => {
                use curator_core::embeddings::EmbeddingError as E;
                let status = match &e {
                    E::Io(_) => CuratorStatus::Io,
                    _ => CuratorStatus::Format,
                };
                fail(status, e.to_string())
            }
        }
    })
}

/// # Safety
/// `store` must come from [`curator_store_open`] and not already be freed.
#[no_mangle]
pub unsafe extern "C" fn curator_store_free(store: *mut CuratorStore) {
    if !store.is_null() {
        drop(Box::from_raw(store));
    }
}

/// Vector width of the store; 0 when `store` is NULL.
///
/// # Safety
/// `store` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn curator_store_dim(store: *const CuratorStore) -> size_t {
    store.as_ref().map_or(0, |s| s.store.dim())
}

/// Number of vectors in the store; 0 when `store` is NULL.
///
/// # Safety
/// `store` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn curator_store_count(store: *const CuratorStore) -> u64 {
    store.as_ref().map_or(0, |s| s.store.len() as u64)
}

/// Copies the vector for `doc_id` into `out_values` (capacity in floats).
/// Returns NotFound for unknown ids and BufferTooSmall when `capacity`
/// is under the store dimension.
///
/// # Safety
/// `out_values` must point to `capacity` writable floats.
#[no_mangle]
pub unsafe extern "C" fn curator_store_get(
    store: *const CuratorStore,
    doc_id: *const c_char,
    out_values: *mut f32,
    capacity: size_t,
) -> CuratorStatus {
    guarded(|| {
        let Some(handle) = store.as_ref() else {
            return fail(CuratorStatus::NullArgument, "store is NULL");
        };
        let doc_id = match str_arg(doc_id, "doc_id") {
            Ok(s) => s,
            Err(status) => return status,
        };
        if out_values.is_null() {
            return fail(CuratorStatus::NullArgument, "out_values is NULL");
        }
        if capacity < handle.store.dim() {
            return fail(
                CuratorStatus::BufferTooSmall,
                format!("need {} floats, got {}", handle.store.dim(), capacity),
            );
        }
        match handle.store.get(doc_id) {
            Ok(Some(values)) => {
                std::ptr::copy_nonoverlapping(values.as_ptr(), out_values, values.len());
                CuratorStatus::Ok
            }
            Ok(None) => fail(CuratorStatus::NotFound, format!("doc id '{doc_id}' not in store")),
            Err(e) => fail(CuratorStatus::Io, e.to_string()),
        }
    })
}

/// Deterministic mock embedding of `text`: `dim` floats, L2-normalized.
///
/// # Safety
/// `text` must be NUL-terminated; `out_values` must point to `capacity`
/// writable floats with `capacity >= dim`.
#[no_mangle]
pub unsafe extern "C" fn curator_mock_embed(
    text: *const c_char,
    dim: size_t,
    seed: u64,
    out_values: *mut f32,
    capacity: size_t,
) -> CuratorStatus {
    guarded(|| {
        let text = match str_arg(text, "text") {
            Ok(s) => s,
            Err(status) => return status,
        };
        if out_values.is_null() {
            return fail(CuratorStatus::NullArgument, "out_values is NULL");
        }
        if dim == 0 {
            return fail(CuratorStatus::InvalidArgument, "dim must be >= 1");
        }
        if capacity < dim {
            return fail(
                CuratorStatus::BufferTooSmall,
                format!("need {dim} floats, got {capacity}"),
            );
        }
        let values = mock_embed(text, dim, seed);
        std::ptr::copy_nonoverlapping(values.as_ptr(), out_values, dim);
        CuratorStatus::Ok
    })
}

/// Builds a decision ensemble from loaded heads and a thresholds JSON file
/// (as written by the `curator thresholds` command). Heads are matched to
/// specs by id; each head needs exactly one spec. The heads are copied, so
/// the input handles may be freed afterwards.
///
/// # Safety
/// `heads` must point to `head_count` live head handles; `thresholds_path`
/// must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn curator_ensemble_new(
    heads: *const *const CuratorHead,
    head_count: size_t,
    thresholds_path: *const c_char,
    out: *mut *mut CuratorEnsemble,
) -> CuratorStatus {
    guarded(|| {
        if out.is_null() || heads.is_null() {
            return fail(CuratorStatus::NullArgument, "heads/out is NULL");
        }
        let path = match path_arg(thresholds_path) {
            Ok(p) => p,
            Err(status) => return status,
        };
        let text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) => return fail(CuratorStatus::Io, e.to_string()),
        };
        let specs: Vec<ThresholdSpec> = match serde_json::from_str(&text) {
            Ok(s) => s,
            Err(e) => return fail(CuratorStatus::Format, format!("thresholds JSON: {e}")),
        };
        let handles = std::slice::from_raw_parts(heads, head_count);
        let mut pairs = Vec::with_capacity(head_count);
        let mut head_ids = Vec::with_capacity(head_count);
        for &handle in handles {
            let Some(handle) = handle.as_ref() else {
                return fail(CuratorStatus::NullArgument, "head handle is NULL");
            };
            let head = handle.head.clone();
            let Some(spec) = specs.iter().find(|s| s.head_id == head.head_id()) else {
                return fail(
                    CuratorStatus::InvalidArgument,
                    format!("no threshold spec for head '{}'", head.head_id()),
                );
            };
            head_ids.push(handle.id.clone());
            pairs.push((head, spec.clone()));
        }
        match EnsembleConfig::new(pairs) {
            Ok(config) => {
                *out = Box::into_raw(Box::new(CuratorEnsemble { config, head_ids }));
                CuratorStatus::Ok
            }
            Err(e) => fail(CuratorStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// # Safety
/// `ensemble` must come from [`curator_ensemble_new`] and not already be
/// freed.
#[no_mangle]
pub unsafe extern "C" fn curator_ensemble_free(ensemble: *mut CuratorEnsemble) {
    if !ensemble.is_null() {
        drop(Box::from_raw(ensemble));
    }
}

/// Number of heads in the ensemble; 0 when `ensemble` is NULL.
///
/// # Safety
/// `ensemble` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn curator_ensemble_len(ensemble: *const CuratorEnsemble) -> size_t {
    ensemble.as_ref().map_or(0, |e| e.config.heads().len())
}

/// Head id at `index` (ensemble order, matching `out_scores` of
/// [`curator_ensemble_decide`]); NULL when out of range.
///
/// # Safety
/// `ensemble` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn curator_ensemble_head_id(
    ensemble: *const CuratorEnsemble,
    index: size_t,
) -> *const c_char {
    ensemble
        .as_ref()
        .and_then(|e| e.head_ids.get(index))
        .map_or(std::ptr::null(), |id| id.as_ptr())
}

/// Scores one embedding with every head and applies the all-above rule.
/// `out_keep` receives the decision; when `out_scores` is non-NULL it
/// receives one score per head in ensemble order (capacity must cover the
/// head count).
///
/// # Safety
/// `values` must point to `len` readable floats; `out_keep` must be
/// writable; `out_scores`, when non-NULL, must hold one double per head.
#[no_mangle]
pub unsafe extern "C" fn curator_ensemble_decide(
    ensemble: *const CuratorEnsemble,
    values: *const f32,
    len: size_t,
    out_scores: *mut f64,
    out_keep: *mut bool,
) -> CuratorStatus {
    guarded(|| {
        let Some(handle) = ensemble.as_ref() else {
            return fail(CuratorStatus::NullArgument, "ensemble is NULL");
        };
        if values.is_null() || out_keep.is_null() {
            return fail(CuratorStatus::NullArgument, "values/out_keep is NULL");
        }
        let slice = std::slice::from_raw_parts(values, len);
        let scores = match handle.config.score(slice) {
            Ok(scores) => scores,
            Err(e) => return fail(CuratorStatus::DimMismatch, e.to_string()),
        };
        let decision = match decide(&scores, &handle.config) {
            Ok(d) => d,
            Err(e) => return fail(CuratorStatus::Internal, e.to_string()),
        };
        if !out_scores.is_null() {
            for (i, member) in handle.config.heads().iter().enumerate() {
                *out_scores.add(i) = scores[&member.spec.head_id];
            }
        }
        *out_keep = decision.keep;
        CuratorStatus::Ok
    })
}
