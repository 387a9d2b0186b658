//! C ABI over the core encoder: opaque model handles, status codes, and a
//! thread-local last-error message. The header is generated into
//! `include/rir.h` at build time.
//!
//! Ownership rules: every `RirModel*` returned by a constructor must be
//! released with [`rir_model_free`]. Strings are borrowed, NUL-terminated,
//! UTF-8. Output buffers are caller-allocated.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rir_core::checkpoint;
use rir_core::config::ConfigOverlay;
use rir_core::listops;
use rir_core::model::{Model, RunMode};
use rir_core::tensor::tape::Tape;

/// Status code returned by every fallible call.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum RirStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    ParseError = 4,
    IoError = 5,
    BufferTooSmall = 6,
    InternalError = 7,
}

/// Opaque handle to a loaded model.
pub struct RirModel {
    inner: Model,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn fail(status: RirStatus, msg: impl Into<String>) -> RirStatus {
    set_error(msg);
    status
}

/// Copies the most recent error message on this thread into `buf`
/// (NUL-terminated, truncated to `cap`). Returns the full message length.
///
/// # Safety
/// `buf` must point to `cap` writable bytes, or be null (length query).
#[no_mangle]
pub unsafe extern "C" fn rir_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && cap > 0 {
            let n = bytes.len().min(cap - 1);
            unsafe {
                std::ptr::copy_nonoverlapping(bytes.as_ptr(), buf as *mut u8, n);
                *buf.add(n) = 0;
            }
        }
        bytes.len()
    })
}

unsafe fn cstr<'a>(p: *const c_char) -> Result<&'a str, RirStatus> {
    if p.is_null() {
        return Err(fail(RirStatus::NullPointer, "null string pointer"));
    }
    unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| fail(RirStatus::InvalidUtf8, "string is not valid UTF-8"))
}

/// Builds a model with fresh seeded parameters from `key = value` config
/// text (may be empty for defaults). Returns null on failure; see
/// [`rir_last_error`].
///
/// # Safety
/// `config_text` must be null or a NUL-terminated UTF-8 string.
#[no_mangle]
pub unsafe extern "C" fn rir_model_new(config_text: *const c_char) -> *mut RirModel {
    let text = if config_text.is_null() {
        ""
    } else {
        match unsafe { cstr(config_text) } {
            Ok(t) => t,
            Err(_) => return std::ptr::null_mut(),
        }
    };
    let cfg = match ConfigOverlay::from_text(text).and_then(|o| o.finalize()) {
        Ok(cfg) => cfg,
        Err(e) => {
            set_error(format!("config error: {e}"));
            return std::ptr::null_mut();
        }
    };
    match Model::new(cfg) {
        Ok(model) => Box::into_raw(Box::new(RirModel { inner: model })),
        Err(e) => {
            set_error(format!("model construction failed: {e}"));
            std::ptr::null_mut()
        }
    }
}

/// Loads a model from a checkpoint file. Returns null on failure.
///
/// # Safety
/// `path` must be a NUL-terminated UTF-8 string.
#[no_mangle]
pub unsafe extern "C" fn rir_model_load(path: *const c_char) -> *mut RirModel {
    let path = match unsafe { cstr(path) } {
        Ok(p) => p,
        Err(_) => return std::ptr::null_mut(),
    };
    match checkpoint::load(Path::new(path)).and_then(|ck| checkpoint::restore_model(&ck)) {
        Ok(model) => Box::into_raw(Box::new(RirModel { inner: model })),
        Err(e) => {
            set_error(format!("checkpoint load failed: {e}"));
            std::ptr::null_mut()
        }
    }
}

/// Releases a model handle. Null is a no-op.
///
/// # Safety
/// `model` must be a pointer from [`rir_model_new`] / [`rir_model_load`]
/// that has not been freed already.
#[no_mangle]
pub unsafe extern "C" fn rir_model_free(model: *mut RirModel) {
    if !model.is_null() {
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Hidden width `d` of the model's sentence vectors, or -1 on null input.
///
/// # Safety
/// `model` must be null or a live model handle.
#[no_mangle]
pub unsafe extern "C" fn rir_model_hidden_width(model: *const RirModel) -> i32 {
    match unsafe { model.as_ref() } {
        Some(m) => m.inner.cfg.d as i32,
        None => -1,
    }
}

/// Encodes a token-id sequence into a sentence vector of `d` doubles.
///
/// # Safety
/// `ids` must point to `ids_len` u32 values; `out` must point to `out_cap`
/// writable doubles; `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn rir_model_encode(
    model: *const RirModel,
    ids: *const u32,
    ids_len: usize,
    out: *mut f64,
    out_cap: usize,
) -> RirStatus {
    let Some(m) = (unsafe { model.as_ref() }) else {
        return fail(RirStatus::NullPointer, "null model");
    };
    if ids.is_null() || out.is_null() {
        return fail(RirStatus::NullPointer, "null buffer");
    }
    if ids_len == 0 {
        return fail(RirStatus::InvalidArgument, "empty token sequence");
    }
    let d = m.inner.cfg.d;
    if out_cap < d {
        return fail(
            RirStatus::BufferTooSmall,
            format!("need {d} doubles, got {out_cap}"),
        );
    }
    let ids = unsafe { std::slice::from_raw_parts(ids, ids_len) };
    let tape = Tape::inference();
    let mut rng = ChaCha8Rng::seed_from_u64(m.inner.cfg.seed);
    match m.inner.encode(&tape, ids, RunMode::Eval, &mut rng) {
        Ok(outcome) => {
            unsafe {
                std::ptr::copy_nonoverlapping(outcome.root.data().as_ptr(), out, d);
            }
            RirStatus::Ok
        }
        Err(e) => fail(RirStatus::InvalidArgument, format!("encode failed: {e}")),
    }
}

/// Classifies a whitespace-tokenized expression; writes the argmax class.
///
/// # Safety
/// `expr` must be a NUL-terminated UTF-8 string, `out_label` a writable i32,
/// `model` a live handle.
#[no_mangle]
pub unsafe extern "C" fn rir_model_classify(
    model: *const RirModel,
    expr: *const c_char,
    out_label: *mut i32,
) -> RirStatus {
    let Some(m) = (unsafe { model.as_ref() }) else {
        return fail(RirStatus::NullPointer, "null model");
    };
    if out_label.is_null() {
        return fail(RirStatus::NullPointer, "null output");
    }
    let text = match unsafe { cstr(expr) } {
        Ok(t) => t,
        Err(s) => return s,
    };
    let ids = match listops::tokenize(text) {
        Ok(ids) if !ids.is_empty() => ids,
        Ok(_) => return fail(RirStatus::InvalidArgument, "empty expression"),
        Err(e) => return fail(RirStatus::ParseError, format!("{e}")),
    };
    let tape = Tape::inference();
    let mut rng = ChaCha8Rng::seed_from_u64(m.inner.cfg.seed);
    let root = match m.inner.encode(&tape, &ids, RunMode::Eval, &mut rng) {
        Ok(o) => o.root,
        Err(e) => return fail(RirStatus::InternalError, format!("encode failed: {e}")),
    };
    match m.inner.classify(&tape, &root) {
        Ok(logits) => {
            let pred = rir_core::beam::topk_indices(logits.data(), 1)[0];
            unsafe { *out_label = pred as i32 };
            RirStatus::Ok
        }
        Err(e) => fail(RirStatus::InternalError, format!("classify failed: {e}")),
    }
}

/// Writes the induced bracketed parse of an expression into `out`
/// (NUL-terminated). `written` receives the full length (excluding NUL);
/// when it exceeds `cap - 1` the status is `BufferTooSmall`.
///
/// # Safety
/// `expr` must be a NUL-terminated UTF-8 string; `out` must point to `cap`
/// writable bytes; `written` may be null; `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn rir_model_parse(
    model: *const RirModel,
    expr: *const c_char,
    out: *mut c_char,
    cap: usize,
    written: *mut usize,
) -> RirStatus {
    let Some(m) = (unsafe { model.as_ref() }) else {
        return fail(RirStatus::NullPointer, "null model");
    };
    if out.is_null() || cap == 0 {
        return fail(RirStatus::NullPointer, "null or empty output buffer");
    }
    let text = match unsafe { cstr(expr) } {
        Ok(t) => t,
        Err(s) => return s,
    };
    let ids = match listops::tokenize(text) {
        Ok(ids) if !ids.is_empty() => ids,
        Ok(_) => return fail(RirStatus::InvalidArgument, "empty expression"),
        Err(e) => return fail(RirStatus::ParseError, format!("{e}")),
    };
    let tape = Tape::inference();
    let mut rng = ChaCha8Rng::seed_from_u64(m.inner.cfg.seed);
    let outcome = match m.inner.encode(&tape, &ids, RunMode::Eval, &mut rng) {
        Ok(o) => o,
        Err(e) => return fail(RirStatus::InternalError, format!("encode failed: {e}")),
    };
    let labels: Vec<String> = text.split_whitespace().map(str::to_string).collect();
    let tree = outcome.tree.expect("encode yields a tree");
    let rendered = tree.bracketed(&labels);
    let bytes = rendered.as_bytes();
    if !written.is_null() {
        unsafe { *written = bytes.len() };
    }
    if bytes.len() + 1 > cap {
        return fail(
            RirStatus::BufferTooSmall,
            format!("need {} bytes, got {}", bytes.len() + 1, cap),
        );
    }
    unsafe {
        std::ptr::copy_nonoverlapping(bytes.as_ptr(), out as *mut u8, bytes.len());
        *out.add(bytes.len()) = 0;
    }
    RirStatus::Ok
}

/// Evaluates a ListOps expression exactly (the task oracle).
///
/// # Safety
/// `expr` must be a NUL-terminated UTF-8 string; `out_value` a writable i32.
#[no_mangle]
pub unsafe extern "C" fn rir_listops_eval(expr: *const c_char, out_value: *mut i32) -> RirStatus {
    if out_value.is_null() {
        return fail(RirStatus::NullPointer, "null output");
    }
    let text = match unsafe { cstr(expr) } {
        Ok(t) => t,
        Err(s) => return s,
    };
    match listops::eval::evaluate_str(text) {
        Ok(v) => {
            unsafe { *out_value = v as i32 };
            RirStatus::Ok
        }
        Err(e) => fail(RirStatus::ParseError, format!("{e}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ffi::CString;

    fn c(s: &str) -> CString {
        CString::new(s).unwrap()
    }

    fn tiny_model() -> *mut RirModel {
        let cfg = c("d = 8\nd_s = 4\nd_cell = 16\nk = 3\nbeam = 2\nseed = 7\n");
        let m = unsafe { rir_model_new(cfg.as_ptr()) };
        assert!(!m.is_null());
        m
    }

    fn last_error() -> String {
        let mut buf = vec![0 as c_char; 256];
        let n = unsafe { rir_last_error(buf.as_mut_ptr(), buf.len()) };
        let bytes: Vec<u8> = buf[..n.min(255)].iter().map(|&b| b as u8).collect();
        String::from_utf8(bytes).unwrap()
    }

    #[test]
    fn model_lifecycle_and_encode() {
        let m = tiny_model();
        assert_eq!(unsafe { rir_model_hidden_width(m) }, 8);
        let ids = [10u32, 1, 2, 14];
        let mut out = [0.0f64; 8];
        let st = unsafe { rir_model_encode(m, ids.as_ptr(), ids.len(), out.as_mut_ptr(), 8) };
        assert_eq!(st, RirStatus::Ok);
        assert!(out.iter().any(|&v| v != 0.0));
        // deterministic across calls
        let mut out2 = [0.0f64; 8];
        unsafe { rir_model_encode(m, ids.as_ptr(), ids.len(), out2.as_mut_ptr(), 8) };
        assert_eq!(out, out2);
        unsafe { rir_model_free(m) };
    }

    #[test]
    fn classify_and_parse_round() {
        let m = tiny_model();
        let expr = c("[MAX 1 [SM 2 3 ] ]");
        let mut label = -1i32;
        let st = unsafe { rir_model_classify(m, expr.as_ptr(), &mut label) };
        assert_eq!(st, RirStatus::Ok);
        assert!((0..=9).contains(&label));

        let mut buf = vec![0 as c_char; 512];
        let mut written = 0usize;
        let st = unsafe {
            rir_model_parse(m, expr.as_ptr(), buf.as_mut_ptr(), buf.len(), &mut written)
        };
        assert_eq!(st, RirStatus::Ok);
        let text: String = buf[..written].iter().map(|&b| b as u8 as char).collect();
        assert!(text.contains("[MAX"));
        // 7 leaves means 6 merges, each rendered as one bracket pair
        assert_eq!(text.matches('(').count(), 6);
        unsafe { rir_model_free(m) };
    }

    #[test]
    fn status_codes_cover_error_paths() {
        // null model
        let mut out = [0.0f64; 8];
        let ids = [1u32];
        let st =
            unsafe { rir_model_encode(std::ptr::null(), ids.as_ptr(), 1, out.as_mut_ptr(), 8) };
        assert_eq!(st, RirStatus::NullPointer);

        let m = tiny_model();
        // short buffer
        let st = unsafe { rir_model_encode(m, ids.as_ptr(), 1, out.as_mut_ptr(), 2) };
        assert_eq!(st, RirStatus::BufferTooSmall);
        assert!(last_error().contains("doubles"));
        // empty sequence
        let st = unsafe { rir_model_encode(m, ids.as_ptr(), 0, out.as_mut_ptr(), 8) };
        assert_eq!(st, RirStatus::InvalidArgument);
        // unknown token
        let mut label = 0i32;
        let bad = c("[MAX xyzzy ]");
        let st = unsafe { rir_model_classify(m, bad.as_ptr(), &mut label) };
        assert_eq!(st, RirStatus::ParseError);
        assert!(last_error().contains("xyzzy"));
        unsafe { rir_model_free(m) };

        // bad config reports through last_error
        let bad_cfg = c("k = 1");
        let null = unsafe { rir_model_new(bad_cfg.as_ptr()) };
        assert!(null.is_null());
        assert!(last_error().contains("config"));

        // parse buffer too small reports needed size
        let m = tiny_model();
        let expr = c("[MAX 1 2 ]");
        let mut tiny = [0 as c_char; 2];
        let mut need = 0usize;
        let st =
            unsafe { rir_model_parse(m, expr.as_ptr(), tiny.as_mut_ptr(), tiny.len(), &mut need) };
        assert_eq!(st, RirStatus::BufferTooSmall);
        assert!(need > 2);
        unsafe { rir_model_free(m) };
    }

    #[test]
    fn oracle_matches_library_evaluator() {
        let expr = c("[SM [SM [SM [MAX 5 6 ] 2 ] 0 ] 5 0 8 6 ]");
        let mut value = -1i32;
        let st = unsafe { rir_listops_eval(expr.as_ptr(), &mut value) };
        assert_eq!(st, RirStatus::Ok);
        assert_eq!(value, 7);

        let bad = c("[MAX 1 2");
        let st = unsafe { rir_listops_eval(bad.as_ptr(), &mut value) };
        assert_eq!(st, RirStatus::ParseError);
    }

    #[test]
    fn checkpoint_load_round_trip() {
        use rir_core::checkpoint::{save, Checkpoint};
        use rir_core::config::ModelConfig;
        let cfg = ModelConfig {
            d: 8,
            d_s: 4,
            d_cell: 16,
            k: 3,
            beam: 2,
            seed: 9,
            ..ModelConfig::default()
        };
        let model = rir_core::model::Model::new(cfg).unwrap();
        let dir = std::env::temp_dir().join(format!("rir_ffi_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("m.ckpt");
        save(
            &path,
            &Checkpoint {
                cfg: model.cfg.clone(),
                params: model.named_params(),
                opt: None,
                epoch: 0,
                step: 0,
                best_val: 0.0,
            },
        )
        .unwrap();
        let cpath = c(path.to_str().unwrap());
        let handle = unsafe { rir_model_load(cpath.as_ptr()) };
        assert!(!handle.is_null());
        assert_eq!(unsafe { rir_model_hidden_width(handle) }, 8);
        unsafe { rir_model_free(handle) };

        let missing = c("/definitely/not/here.ckpt");
        let null = unsafe { rir_model_load(missing.as_ptr()) };
        assert!(null.is_null());
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn generated_header_exports_the_surface() {
        let header = std::fs::read_to_string(
            std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("include/rir.h"),
        )
        .expect("header generated at build time");
        for symbol in [
            "typedef struct RirModel RirModel",
            "rir_model_new",
            "rir_model_load",
            "rir_model_free",
            "rir_model_encode",
            "rir_model_classify",
            "rir_model_parse",
            "rir_listops_eval",
            "rir_last_error",
        ] {
            assert!(header.contains(symbol), "header is missing {symbol}");
        }
    }
}
