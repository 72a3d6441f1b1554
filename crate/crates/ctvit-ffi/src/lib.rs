//! C ABI for the ctvit library.
//!
//! Models are opaque handles created from checkpoint files. Every function
//! returns a [`CtvitStatus`]; on failure the message is retrievable with
//! [`ctvit_last_error`]. Buffers are caller-owned; the library never keeps
//! pointers beyond a call. Handles must be freed with [`ctvit_model_free`]
//! and are safe to share across threads for read-only scoring.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use ctvit::eval::{aggregate_subject, metrics, ClassLabel, ConfusionMatrix2x2};
use ctvit::model::checkpoint::load_checkpoint;
use ctvit::model::{predict, ModelConfig, ModelParams, Variant};
use ctvit::tensor::Tensor;

/// Result code of every FFI call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CtvitStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    IoError = 3,
    FormatError = 4,
    InternalError = 5,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(message: &str) {
    let sanitized = message.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_for(err: &ctvit::Error) -> CtvitStatus {
    match err {
        ctvit::Error::Io { .. } => CtvitStatus::IoError,
        ctvit::Error::Format { .. } => CtvitStatus::FormatError,
        ctvit::Error::Shape(_) | ctvit::Error::InvalidInput(_) | ctvit::Error::Config(_) => {
            CtvitStatus::InvalidArgument
        }
        _ => CtvitStatus::InternalError,
    }
}

fn guard<F: FnOnce() -> CtvitStatus>(f: F) -> CtvitStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => {
            set_last_error("internal panic");
            CtvitStatus::InternalError
        }
    }
}

/// Opaque trained model: configuration plus parameters.
pub struct CtvitModel {
    config: ModelConfig,
    params: ModelParams,
}

/// Per-class and macro metrics of a 2x2 confusion matrix. `has_*` flags
/// mark values whose denominator was empty (the value is then 0).
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct CtvitMetrics {
    pub covid_row_accuracy: f64,
    pub noncovid_row_accuracy: f64,
    pub macro_accuracy: f64,
    pub covid_f1: f64,
    pub noncovid_f1: f64,
    pub macro_f1: f64,
    pub has_covid_row_accuracy: bool,
    pub has_noncovid_row_accuracy: bool,
    pub has_macro_accuracy: bool,
    pub has_covid_f1: bool,
    pub has_noncovid_f1: bool,
    pub has_macro_f1: bool,
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ctvit_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Copies the last error message of this thread into `buf` (truncated to
/// `cap` bytes including the terminator). Returns the full message length.
///
/// # Safety
/// `buf` must point to `cap` writable bytes, or be NULL (then only the
/// required length is returned).
#[no_mangle]
pub unsafe extern "C" fn ctvit_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|slot| {
        let msg = slot.borrow();
        let bytes = msg.as_bytes_with_nul();
        if !buf.is_null() && cap > 0 {
            let n = bytes.len().min(cap);
            ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
            // Terminate even when truncated.
            *buf.add(n - 1) = 0;
        }
        bytes.len()
    })
}

/// Loads a checkpoint file into an opaque model handle.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out_model` a valid pointer.
/// On success `*out_model` owns the model until [`ctvit_model_free`].
#[no_mangle]
pub unsafe extern "C" fn ctvit_model_load(
    path: *const c_char,
    out_model: *mut *mut CtvitModel,
) -> CtvitStatus {
    guard(|| {
        if path.is_null() || out_model.is_null() {
            set_last_error("path and out_model must be non-NULL");
            return CtvitStatus::NullArgument;
        }
        let path = match CStr::from_ptr(path).to_str() {
            Ok(s) => s,
            Err(_) => {
                set_last_error("path is not valid UTF-8");
                return CtvitStatus::InvalidArgument;
            }
        };
        match load_checkpoint(Path::new(path)) {
            Ok(ckpt) => {
                let model = Box::new(CtvitModel {
                    config: ckpt.model,
                    params: ckpt.params,
                });
                *out_model = Box::into_raw(model);
                CtvitStatus::Ok
            }
            Err(e) => {
                set_last_error(&e.to_string());
                status_for(&e)
            }
        }
    })
}

/// Releases a model handle. NULL is a no-op.
///
/// # Safety
/// `model` must be a pointer from [`ctvit_model_load`], not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ctvit_model_free(model: *mut CtvitModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Reports the input geometry: side length of the square plane and the
/// number of slices (1 for the 2D variant).
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn ctvit_model_input_size(
    model: *const CtvitModel,
    side: *mut usize,
    depth: *mut usize,
) -> CtvitStatus {
    guard(|| {
        if model.is_null() || side.is_null() || depth.is_null() {
            set_last_error("model, side and depth must be non-NULL");
            return CtvitStatus::NullArgument;
        }
        let model = &*model;
        *side = model.config.image_size;
        *depth = match model.config.variant {
            Variant::Vit2d => 1,
            Variant::Vit3d => model.config.volume_depth,
        };
        CtvitStatus::Ok
    })
}

/// Scores one input: `pixels` holds `depth * side * side` values in [0, 1],
/// slice-major row-major. Writes the COVID probability to `score_out`.
///
/// # Safety
/// `pixels` must point to `len` readable doubles; other pointers valid.
#[no_mangle]
pub unsafe extern "C" fn ctvit_model_predict(
    model: *const CtvitModel,
    pixels: *const f64,
    len: usize,
    score_out: *mut f64,
) -> CtvitStatus {
    guard(|| {
        if model.is_null() || pixels.is_null() || score_out.is_null() {
            set_last_error("model, pixels and score_out must be non-NULL");
            return CtvitStatus::NullArgument;
        }
        let model = &*model;
        let side = model.config.image_size;
        let shape = match model.config.variant {
            Variant::Vit2d => vec![side, side],
            Variant::Vit3d => vec![model.config.volume_depth, side, side],
        };
        let expected: usize = shape.iter().product();
        if len != expected {
            set_last_error(&format!(
                "expected {expected} pixel values for this model, got {len}"
            ));
            return CtvitStatus::InvalidArgument;
        }
        let data = std::slice::from_raw_parts(pixels, len).to_vec();
        let input = match Tensor::new(shape, data) {
            Ok(t) => t,
            Err(e) => {
                set_last_error(&e.to_string());
                return CtvitStatus::InvalidArgument;
            }
        };
        match predict(&model.config, &model.params, &input) {
            Ok(score) => {
                *score_out = score;
                CtvitStatus::Ok
            }
            Err(e) => {
                set_last_error(&e.to_string());
                status_for(&e)
            }
        }
    })
}

/// Subject-level vote: counts scores strictly above 0.5 as COVID slices and
/// declares the subject COVID when their fraction strictly exceeds
/// `threshold`. Writes 1/0 to `is_covid_out` and the fraction to
/// `fraction_out` (which may be NULL).
///
/// # Safety
/// `scores` must point to `n` readable doubles; `is_covid_out` valid.
#[no_mangle]
pub unsafe extern "C" fn ctvit_aggregate_subject(
    scores: *const f64,
    n: usize,
    threshold: f64,
    is_covid_out: *mut i32,
    fraction_out: *mut f64,
) -> CtvitStatus {
    guard(|| {
        if scores.is_null() || is_covid_out.is_null() {
            set_last_error("scores and is_covid_out must be non-NULL");
            return CtvitStatus::NullArgument;
        }
        let values = std::slice::from_raw_parts(scores, n);
        match aggregate_subject("subject", values, threshold) {
            Ok(prediction) => {
                *is_covid_out = (prediction.decision == ClassLabel::Covid) as i32;
                if !fraction_out.is_null() {
                    *fraction_out = prediction.covid_fraction;
                }
                CtvitStatus::Ok
            }
            Err(e) => {
                set_last_error(&e.to_string());
                status_for(&e)
            }
        }
    })
}

/// Metrics of a confusion matrix given as 4 row-major counts
/// `[covid_covid, covid_noncovid, noncovid_covid, noncovid_noncovid]`
/// (rows = predicted class, columns = true class).
///
/// # Safety
/// `counts` must point to 4 readable u64 values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ctvit_metrics(
    counts: *const u64,
    out: *mut CtvitMetrics,
) -> CtvitStatus {
    guard(|| {
        if counts.is_null() || out.is_null() {
            set_last_error("counts and out must be non-NULL");
            return CtvitStatus::NullArgument;
        }
        let c = std::slice::from_raw_parts(counts, 4);
        let matrix = ConfusionMatrix2x2::from_counts([[c[0], c[1]], [c[2], c[3]]]);
        let report = metrics(&matrix);
        let unpack = |v: Option<f64>| (v.unwrap_or(0.0), v.is_some());
        let (covid_row_accuracy, has_covid_row_accuracy) = unpack(report.covid.row_accuracy);
        let (noncovid_row_accuracy, has_noncovid_row_accuracy) =
            unpack(report.noncovid.row_accuracy);
        let (macro_accuracy, has_macro_accuracy) = unpack(report.macro_accuracy);
        let (covid_f1, has_covid_f1) = unpack(report.covid.f1);
        let (noncovid_f1, has_noncovid_f1) = unpack(report.noncovid.f1);
        let (macro_f1, has_macro_f1) = unpack(report.macro_f1);
        *out = CtvitMetrics {
            covid_row_accuracy,
            noncovid_row_accuracy,
            macro_accuracy,
            covid_f1,
            noncovid_f1,
            macro_f1,
            has_covid_row_accuracy,
            has_noncovid_row_accuracy,
            has_macro_accuracy,
            has_covid_f1,
            has_noncovid_f1,
            has_macro_f1,
        };
        CtvitStatus::Ok
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ctvit::model::checkpoint::{save_checkpoint, Checkpoint, OptimizerSnapshot};
    use ctvit::rng::{DetRng, RngState};
    use std::ffi::CString;

    fn tiny_checkpoint(dir: &Path) -> std::path::PathBuf {
        let config = ModelConfig {
            variant: Variant::Vit2d,
            patch_size: 7,
            image_size: 14,
            volume_depth: 1,
            embed_dim: 16,
            depth: 1,
            num_heads: 2,
            mlp_dim: 32,
            num_classes: 2,
            dropout: 0.0,
        };
        let mut rng = DetRng::new(5);
        let params = ModelParams::init(&config, &mut rng).unwrap();
        let named = params.named();
        let zeros: Vec<Vec<f64>> = named.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        let ckpt = Checkpoint {
            model: config,
            params,
            optimizer: OptimizerSnapshot::Adam {
                step: 0,
                m: zeros.clone(),
                v: zeros,
            },
            epoch: 0,
            cursor: 0,
            step: 0,
            rng: RngState {
                seed: 5,
                word_pos: 0,
            },
            loss_history: vec![],
        };
        let path = dir.join("tiny.ckpt");
        save_checkpoint(&path, &ckpt).unwrap();
        path
    }

    #[test]
    fn version_is_a_c_string() {
        let v = unsafe { CStr::from_ptr(ctvit_version()) };
        assert!(!v.to_str().unwrap().is_empty());
    }

    #[test]
    fn load_predict_free_round_trip_matches_core() {
        let dir = tempfile::tempdir().unwrap();
        let path = tiny_checkpoint(dir.path());
        let cpath = CString::new(path.to_str().unwrap()).unwrap();

        let mut handle: *mut CtvitModel = ptr::null_mut();
        let status = unsafe { ctvit_model_load(cpath.as_ptr(), &mut handle) };
        assert_eq!(status, CtvitStatus::Ok);
        assert!(!handle.is_null());

        let (mut side, mut depth) = (0usize, 0usize);
        let status = unsafe { ctvit_model_input_size(handle, &mut side, &mut depth) };
        assert_eq!(status, CtvitStatus::Ok);
        assert_eq!((side, depth), (14, 1));

        let mut rng = DetRng::new(9);
        let pixels: Vec<f64> = (0..14 * 14).map(|_| rng.uniform()).collect();
        let mut score = f64::NAN;
        let status =
            unsafe { ctvit_model_predict(handle, pixels.as_ptr(), pixels.len(), &mut score) };
        assert_eq!(status, CtvitStatus::Ok);

        // Same numbers as the library API.
        let ckpt = load_checkpoint(&path).unwrap();
        let input = Tensor::new(vec![14, 14], pixels).unwrap();
        let expected = predict(&ckpt.model, &ckpt.params, &input).unwrap();
        assert_eq!(score.to_bits(), expected.to_bits());

        unsafe { ctvit_model_free(handle) };
    }

    #[test]
    fn predict_rejects_wrong_length_with_message() {
        let dir = tempfile::tempdir().unwrap();
        let path = tiny_checkpoint(dir.path());
        let cpath = CString::new(path.to_str().unwrap()).unwrap();
        let mut handle: *mut CtvitModel = ptr::null_mut();
        unsafe { ctvit_model_load(cpath.as_ptr(), &mut handle) };
        let pixels = [0.0; 5];
        let mut score = 0.0;
        let status =
            unsafe { ctvit_model_predict(handle, pixels.as_ptr(), pixels.len(), &mut score) };
        assert_eq!(status, CtvitStatus::InvalidArgument);
        let mut buf = vec![0 as c_char; 256];
        let need = unsafe { ctvit_last_error(buf.as_mut_ptr(), buf.len()) };
        assert!(need > 1);
        let msg = unsafe { CStr::from_ptr(buf.as_ptr()) }.to_str().unwrap();
        assert!(msg.contains("196"), "message was `{msg}`");
        unsafe { ctvit_model_free(handle) };
    }

    #[test]
    fn null_arguments_are_rejected() {
        let mut handle: *mut CtvitModel = ptr::null_mut();
        assert_eq!(
            unsafe { ctvit_model_load(ptr::null(), &mut handle) },
            CtvitStatus::NullArgument
        );
        let mut score = 0.0;
        assert_eq!(
            unsafe { ctvit_model_predict(ptr::null(), ptr::null(), 0, &mut score) },
            CtvitStatus::NullArgument
        );
        let mut covid = 0;
        assert_eq!(
            unsafe { ctvit_aggregate_subject(ptr::null(), 0, 0.25, &mut covid, ptr::null_mut()) },
            CtvitStatus::NullArgument
        );
        // Missing checkpoint file surfaces as an IO error.
        let bogus = CString::new("/nonexistent/x.ckpt").unwrap();
        assert_eq!(
            unsafe { ctvit_model_load(bogus.as_ptr(), &mut handle) },
            CtvitStatus::IoError
        );
    }

    #[test]
    fn aggregate_vote_boundary_is_strict() {
        let scores = [0.9, 0.1, 0.1, 0.1]; // exactly one of four
        let mut covid = -1;
        let mut fraction = 0.0;
        let status = unsafe {
            ctvit_aggregate_subject(scores.as_ptr(), scores.len(), 0.25, &mut covid, &mut fraction)
        };
        assert_eq!(status, CtvitStatus::Ok);
        assert_eq!(covid, 0, "0.25 is not more than 0.25");
        assert_eq!(fraction, 0.25);
        let status = unsafe {
            ctvit_aggregate_subject(scores.as_ptr(), scores.len(), 0.20, &mut covid, &mut fraction)
        };
        assert_eq!(status, CtvitStatus::Ok);
        assert_eq!(covid, 1);
        // Empty score list is invalid.
        let status = unsafe {
            ctvit_aggregate_subject(scores.as_ptr(), 0, 0.25, &mut covid, ptr::null_mut())
        };
        assert_eq!(status, CtvitStatus::InvalidArgument);
    }

    #[test]
    fn metrics_reproduce_reference_table() {
        let counts = [117u64, 31, 50, 144];
        let mut out = CtvitMetrics {
            covid_row_accuracy: 0.0,
            noncovid_row_accuracy: 0.0,
            macro_accuracy: 0.0,
            covid_f1: 0.0,
            noncovid_f1: 0.0,
            macro_f1: 0.0,
            has_covid_row_accuracy: false,
            has_noncovid_row_accuracy: false,
            has_macro_accuracy: false,
            has_covid_f1: false,
            has_noncovid_f1: false,
            has_macro_f1: false,
        };
        let status = unsafe { ctvit_metrics(counts.as_ptr(), &mut out) };
        assert_eq!(status, CtvitStatus::Ok);
        assert!(out.has_macro_f1);
        assert_eq!((out.covid_row_accuracy * 1000.0).round() / 10.0, 79.1);
        assert_eq!((out.noncovid_row_accuracy * 1000.0).round() / 10.0, 74.2);
        assert_eq!((out.macro_accuracy * 1000.0).round() / 10.0, 76.6);
        assert_eq!((out.covid_f1 * 100.0).round() / 100.0, 0.74);
        assert_eq!((out.noncovid_f1 * 100.0).round() / 100.0, 0.78);
        assert_eq!((out.macro_f1 * 100.0).round() / 100.0, 0.76);
    }

    #[test]
    fn generated_header_declares_the_surface() {
        let header = std::fs::read_to_string(
            Path::new(env!("CARGO_MANIFEST_DIR")).join("include/ctvit.h"),
        )
        .expect("cbindgen header exists after build");
        for symbol in [
            "ctvit_version",
            "ctvit_model_load",
            "ctvit_model_free",
            "ctvit_model_predict",
            "ctvit_aggregate_subject",
            "ctvit_metrics",
            "ctvit_last_error",
            "CTVIT_H",
        ] {
            assert!(header.contains(symbol), "header lacks {symbol}");
        }
    }
}
