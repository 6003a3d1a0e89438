//! C ABI surface: opaque model handles, status codes, and a thread-local
//! last-error message. The generated header lands in `include/deepwriter.h`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use deepwriter::data::checkpoint::load_checkpoint;
use deepwriter::data::image_io::load_image;
use deepwriter::model::Network;
use deepwriter::patching::PatchPlan;
use deepwriter::pipeline::identify;
use deepwriter::DwError;

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DwStatus {
    DwOk = 0,
    /// Null pointer, non-UTF-8 string, or otherwise unusable argument.
    DwInvalidArgument = 1,
    DwIoError = 2,
    /// Malformed or corrupted checkpoint/image file.
    DwFormatError = 3,
    /// Input violates a documented precondition (bad dims, empty data, ...).
    DwDomainError = 4,
    DwInternalError = 5,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let clean: String = msg.chars().filter(|&c| c != '\0').collect();
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(clean).unwrap_or_default());
}

fn status_of(err: &DwError) -> DwStatus {
    match err {
        DwError::Io { .. } => DwStatus::DwIoError,
        DwError::Format(_) => DwStatus::DwFormatError,
        DwError::Shape(_) | DwError::Domain(_) | DwError::Transfer(_) => DwStatus::DwDomainError,
        DwError::Diverged { .. } => DwStatus::DwInternalError,
    }
}

fn fail(err: &DwError) -> DwStatus {
    set_error(&err.to_string());
    status_of(err)
}

/// Opaque handle to a loaded model.
pub struct DwModel {
    net: Network<f32>,
    labels: Vec<String>,
}

unsafe fn cstr_arg<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, DwStatus> {
    if ptr.is_null() {
        set_error(&format!("{what} is null"));
        return Err(DwStatus::DwInvalidArgument);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error(&format!("{what} is not valid UTF-8"));
        DwStatus::DwInvalidArgument
    })
}

fn guard(body: impl FnOnce() -> DwStatus) -> DwStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic");
            DwStatus::DwInternalError
        }
    }
}

/// Loads a checkpoint file into a model handle. On success `*out` owns the
/// model; release it with `dw_model_free`.
///
/// # Safety
/// `path` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dw_model_load(path: *const c_char, out: *mut *mut DwModel) -> DwStatus {
    guard(|| {
        if out.is_null() {
            set_error("out is null");
            return DwStatus::DwInvalidArgument;
        }
        let path = match cstr_arg(path, "path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        let ckpt = match load_checkpoint(Path::new(path)) {
            Ok(c) => c,
            Err(e) => return fail(&e),
        };
        let net = match ckpt.to_network() {
            Ok(n) => n,
            Err(e) => return fail(&e),
        };
        let model = Box::new(DwModel {
            net,
            labels: ckpt.labels,
        });
        *out = Box::into_raw(model);
        DwStatus::DwOk
    })
}

/// Releases a model handle. A null pointer is a no-op.
///
/// # Safety
/// `model` must be null or a pointer obtained from `dw_model_load`, not yet
/// freed.
#[no_mangle]
pub unsafe extern "C" fn dw_model_free(model: *mut DwModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of enrolled writers (classes) in the model; 0 if `model` is null.
///
/// # Safety
/// `model` must be null or a live handle from `dw_model_load`.
#[no_mangle]
pub unsafe extern "C" fn dw_model_num_classes(model: *const DwModel) -> u32 {
    if model.is_null() {
        return 0;
    }
    (*model).net.num_classes() as u32
}

/// Identifies the writer of the image file at `image_path`. `sample_ratio` is
/// the fraction of scanned patches scored (e.g. 0.1). On success writes the
/// class index to `out_writer` and its probability to `out_confidence`; if
/// `label_buf` is non-null, also copies the writer label (NUL-terminated,
/// truncated to `label_cap` bytes including the NUL).
///
/// # Safety
/// `model` must be a live handle; `image_path` a valid NUL-terminated string;
/// `out_writer`/`out_confidence` valid pointers; `label_buf` null or valid
/// for `label_cap` bytes.
#[no_mangle]
pub unsafe extern "C" fn dw_identify_file(
    model: *const DwModel,
    image_path: *const c_char,
    sample_ratio: f64,
    out_writer: *mut u32,
    out_confidence: *mut f32,
    label_buf: *mut c_char,
    label_cap: usize,
) -> DwStatus {
    guard(|| {
        if model.is_null() || out_writer.is_null() || out_confidence.is_null() {
            set_error("model/out_writer/out_confidence must be non-null");
            return DwStatus::DwInvalidArgument;
        }
        let path = match cstr_arg(image_path, "image_path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        let model = &*model;
        let img = match load_image(Path::new(path)) {
            Ok(i) => i,
            Err(e) => return fail(&e),
        };
        let side = model.net.spec.input_side;
        let plan = PatchPlan {
            patch_side: side,
            scan_stride: side,
            sample_ratio,
        };
        let (writer, scores) = match identify(&model.net, &img, &plan) {
            Ok(r) => r,
            Err(e) => return fail(&e),
        };
        *out_writer = writer as u32;
        *out_confidence = scores.as_slice()[writer];
        if !label_buf.is_null() && label_cap > 0 {
            let label = model
                .labels
                .get(writer)
                .cloned()
                .unwrap_or_else(|| writer.to_string());
            let bytes = label.as_bytes();
            let n = bytes.len().min(label_cap - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr(), label_buf as *mut u8, n);
            *label_buf.add(n) = 0;
        }
        DwStatus::DwOk
    })
}

/// Copies the current thread's last error message into `buf` (NUL-terminated,
/// truncated to `cap`). Returns the full message length in bytes, excluding
/// the NUL.
///
/// # Safety
/// `buf` must be null or valid for `cap` bytes.
#[no_mangle]
pub unsafe extern "C" fn dw_last_error_message(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && cap > 0 {
            let n = bytes.len().min(cap - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}
