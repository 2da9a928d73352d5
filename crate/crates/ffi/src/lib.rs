//! C ABI over trained detgp checkpoints.
//!
//! A [`DetgpModel`] handle owns a model together with the graph it embeds.
//! Every fallible function returns a [`DetgpStatus`]; on failure the message
//! is available from [`detgp_last_error_message`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use detgp::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, StoredGraph};
use detgp::dynamic::insert_nodes;
use detgp::eval::auc;
use detgp::Error;
use ndarray::Array2;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DetgpStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Numeric = 5,
    Graph = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

/// Opaque model handle.
pub struct DetgpModel {
    ckpt: Checkpoint,
    embeddings: Array2<f64>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(e: &Error) -> DetgpStatus {
    match e {
        Error::Io { .. } => DetgpStatus::Io,
        Error::Parse { .. }
        | Error::VersionMismatch { .. }
        | Error::TruncatedTensor { .. }
        | Error::Tensor { .. }
        | Error::Manifest(_) => DetgpStatus::Format,
        Error::NotPositiveDefinite { .. } | Error::NonFiniteLoss { .. } => DetgpStatus::Numeric,
        Error::SelfLoop(_) | Error::DuplicateNode(_) | Error::UnknownNode(_) => DetgpStatus::Graph,
        _ => DetgpStatus::InvalidArgument,
    }
}

fn guard<F: FnOnce() -> Result<(), (DetgpStatus, String)>>(f: F) -> DetgpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DetgpStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            DetgpStatus::Panic
        }
    }
}

fn lift(e: Error) -> (DetgpStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (DetgpStatus, String) {
    (DetgpStatus::NullArgument, format!("`{what}` is null"))
}

/// # Safety
/// `p` must be null or a valid NUL-terminated string.
unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, (DetgpStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    // SAFETY: non-null and NUL-terminated per the caller contract.
    unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| (DetgpStatus::InvalidArgument, format!("`{what}` is not UTF-8")))
}

fn embed(ckpt: &Checkpoint) -> Result<Array2<f64>, Error> {
    let stored = ckpt
        .graph
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("checkpoint does not include a graph".into()))?;
    let texts = ckpt.model.tokenize(&stored.texts);
    let h = ckpt.model.forward(&stored.graph, &texts)?;
    Ok(ckpt.parts.select(h.view(), ckpt.model.text_dim()))
}

/// Loads a checkpoint directory that includes its graph.
///
/// # Safety
/// `dir` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn detgp_model_load(dir: *const c_char, out: *mut *mut DetgpModel) -> DetgpStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        // SAFETY: per the caller contract.
        let dir = unsafe { read_str(dir, "dir") }?;
        let ckpt = load_checkpoint(Path::new(dir)).map_err(lift)?;
        let embeddings = embed(&ckpt).map_err(lift)?;
        let handle = Box::into_raw(Box::new(DetgpModel { ckpt, embeddings }));
        // SAFETY: `out` is non-null and valid per the caller contract.
        unsafe { *out = handle };
        Ok(())
    })
}

/// Writes the model and its current graph to `dir`.
///
/// # Safety
/// `model` must come from [`detgp_model_load`]; `dir` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn detgp_model_save(model: *const DetgpModel, dir: *const c_char) -> DetgpStatus {
    guard(|| {
        // SAFETY: per the caller contract.
        let m = unsafe { model.as_ref() }.ok_or_else(|| null("model"))?;
        // SAFETY: per the caller contract.
        let dir = unsafe { read_str(dir, "dir") }?;
        save_checkpoint(&m.ckpt, Path::new(dir)).map_err(lift)
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `model` must be null or come from [`detgp_model_load`], and must not be
/// used afterwards.
#[no_mangle]
pub unsafe extern "C" fn detgp_model_free(model: *mut DetgpModel) {
    if !model.is_null() {
        // SAFETY: allocated by `Box::into_raw` in `detgp_model_load`.
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Number of nodes in the handle's graph, 0 for null.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn detgp_model_num_nodes(model: *const DetgpModel) -> usize {
    // SAFETY: per the caller contract.
    unsafe { model.as_ref() }.map_or(0, |m| m.embeddings.nrows())
}

/// Width of one embedding row, 0 for null.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn detgp_model_embedding_dim(model: *const DetgpModel) -> usize {
    // SAFETY: per the caller contract.
    unsafe { model.as_ref() }.map_or(0, |m| m.embeddings.ncols())
}

/// Copies all embeddings, row-major, into `out` of capacity `len` doubles.
///
/// # Safety
/// `out` must be valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn detgp_model_embeddings(model: *const DetgpModel, out: *mut f64, len: usize) -> DetgpStatus {
    guard(|| {
        // SAFETY: per the caller contract.
        let m = unsafe { model.as_ref() }.ok_or_else(|| null("model"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let need = m.embeddings.len();
        if len < need {
            return Err((DetgpStatus::BufferTooSmall, format!("need {need} doubles, got {len}")));
        }
        let src = m.embeddings.as_standard_layout();
        // SAFETY: `out` holds at least `need` doubles.
        unsafe { ptr::copy_nonoverlapping(src.as_ptr(), out, need) };
        Ok(())
    })
}

/// Copies the embedding of node `id` into `out` of capacity `len` doubles.
///
/// # Safety
/// `id` must be NUL-terminated and `out` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn detgp_model_node_embedding(
    model: *const DetgpModel,
    id: *const c_char,
    out: *mut f64,
    len: usize,
) -> DetgpStatus {
    guard(|| {
        // SAFETY: per the caller contract.
        let m = unsafe { model.as_ref() }.ok_or_else(|| null("model"))?;
        // SAFETY: per the caller contract.
        let id = unsafe { read_str(id, "id") }?;
        if out.is_null() {
            return Err(null("out"));
        }
        let graph = &m.ckpt.graph.as_ref().expect("loaded with graph").graph;
        let row = graph
            .index_of(id)
            .ok_or_else(|| lift(Error::UnknownNode(id.to_string())))?;
        let d = m.embeddings.ncols();
        if len < d {
            return Err((DetgpStatus::BufferTooSmall, format!("need {d} doubles, got {len}")));
        }
        for (k, v) in m.embeddings.row(row).iter().enumerate() {
            // SAFETY: k < d <= len.
            unsafe { *out.add(k) = *v };
        }
        Ok(())
    })
}

/// Adds node `id` with `text`, linked to `n_neighbors` existing nodes, and
/// recomputes every embedding. Parameters are not changed.
///
/// # Safety
/// Strings must be NUL-terminated; `neighbors` must hold `n_neighbors`
/// string pointers (it may be null when `n_neighbors` is 0).
#[no_mangle]
pub unsafe extern "C" fn detgp_model_insert_node(
    model: *mut DetgpModel,
    id: *const c_char,
    text: *const c_char,
    neighbors: *const *const c_char,
    n_neighbors: usize,
) -> DetgpStatus {
    guard(|| {
        // SAFETY: per the caller contract.
        let m = unsafe { model.as_mut() }.ok_or_else(|| null("model"))?;
        // SAFETY: per the caller contract.
        let id = unsafe { read_str(id, "id") }?;
        // SAFETY: per the caller contract.
        let text = unsafe { read_str(text, "text") }?;
        if n_neighbors > 0 && neighbors.is_null() {
            return Err(null("neighbors"));
        }
        let mut edges = Vec::with_capacity(n_neighbors);
        for k in 0..n_neighbors {
            // SAFETY: `neighbors` holds `n_neighbors` pointers.
            let nb = unsafe { read_str(*neighbors.add(k), "neighbor") }?;
            edges.push((id.to_string(), nb.to_string()));
        }
        let stored = m.ckpt.graph.as_ref().expect("loaded with graph");
        let texts = m.ckpt.model.tokenize(&stored.texts);
        let ins = insert_nodes(
            &m.ckpt.model,
            &stored.graph,
            &texts,
            &[(id.to_string(), text.to_string())],
            &edges,
        )
        .map_err(lift)?;
        let mut raw = stored.texts.clone();
        raw.push(text.to_string());
        m.embeddings = m.ckpt.parts.select(ins.embeddings.view(), m.ckpt.model.text_dim());
        m.ckpt.graph = Some(StoredGraph {
            graph: ins.graph,
            texts: raw,
        });
        Ok(())
    })
}

/// Rank AUC of `pos` against `neg` scores, ties counting half.
///
/// # Safety
/// `pos`/`neg` must be valid for `n_pos`/`n_neg` reads and `out` for one
/// write.
#[no_mangle]
pub unsafe extern "C" fn detgp_auc(
    pos: *const f64,
    n_pos: usize,
    neg: *const f64,
    n_neg: usize,
    out: *mut f64,
) -> DetgpStatus {
    guard(|| {
        if pos.is_null() || neg.is_null() || out.is_null() {
            return Err(null("pos/neg/out"));
        }
        // SAFETY: lengths per the caller contract.
        let (p, n) = unsafe { (std::slice::from_raw_parts(pos, n_pos), std::slice::from_raw_parts(neg, n_neg)) };
        let v = auc(p, n).map_err(lift)?;
        // SAFETY: `out` is valid for one write.
        unsafe { *out = v };
        Ok(())
    })
}

/// Message of the last failure on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn detgp_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}
