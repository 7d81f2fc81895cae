//! C ABI over the adgen inference surface.
//!
//! Handles are opaque; every function returns an [`AdgenStatus`] and the last
//! error message is kept per thread. Typical flow:
//!
//! ```c
//! AdgenModel *model = NULL;
//! adgen_model_load("final.ckpt", &model);
//! AdgenBank *bank = NULL;
//! adgen_bank_build(model, "data/dots/train/good", 1.0, 7, &bank);
//! float score;
//! adgen_score_image(model, bank, "query.png", &score);
//! adgen_bank_free(bank);
//! adgen_model_free(model);
//! ```

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use adgen::checkpoint::Checkpoint;
use adgen::data::{ImageSample, SampleOrigin};
use adgen::error::Error;
use adgen::inference::{build_reference_bank, score_pixels, score_query, ReferenceBank};
use adgen::model::Model;
use adgen::mvtec::load_image_rgb;
use adgen::training::model_from_checkpoint;

/// Status codes returned by every API call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdgenStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    IoError = 3,
    InvalidInput = 4,
    InternalError = 5,
}

/// Opaque model handle (checkpointed weights plus configuration).
pub struct AdgenModel {
    model: Model<f32>,
}

/// Opaque reference bank handle.
pub struct AdgenBank {
    bank: ReferenceBank,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let sanitized = msg.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(err: &Error) -> AdgenStatus {
    match err {
        Error::Io { .. } | Error::Image { .. } => AdgenStatus::IoError,
        Error::Config(_)
        | Error::Layout { .. }
        | Error::Data(_)
        | Error::Shape(_)
        | Error::Eval(_)
        | Error::Checkpoint(_) => AdgenStatus::InvalidInput,
        Error::NonFinite { .. } | Error::Internal(_) => AdgenStatus::InternalError,
    }
}

fn guard(f: impl FnOnce() -> AdgenStatus) -> AdgenStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => {
            set_error("panic across FFI boundary");
            AdgenStatus::InternalError
        }
    }
}

unsafe fn cstr_path(ptr: *const c_char) -> Result<PathBuf, AdgenStatus> {
    if ptr.is_null() {
        set_error("null path argument");
        return Err(AdgenStatus::NullArgument);
    }
    match CStr::from_ptr(ptr).to_str() {
        Ok(s) => Ok(PathBuf::from(s)),
        Err(_) => {
            set_error("path is not valid UTF-8");
            Err(AdgenStatus::InvalidUtf8)
        }
    }
}

fn load_sample(model: &Model<f32>, path: &Path) -> Result<ImageSample, Error> {
    Ok(ImageSample {
        pixels: load_image_rgb(path, model.config.input_size)?,
        label: 0,
        domain: String::new(),
        mask: None,
        path: path.to_string_lossy().to_string(),
        origin: SampleOrigin::Test,
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn adgen_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message of the most recent error on this thread. Valid until the next
/// failing call on the same thread.
#[no_mangle]
pub extern "C" fn adgen_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Load a model from a checkpoint file written by `adgen train`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out_model` must be a valid
/// pointer. On success `*out_model` owns the handle until
/// [`adgen_model_free`].
#[no_mangle]
pub unsafe extern "C" fn adgen_model_load(
    path: *const c_char,
    out_model: *mut *mut AdgenModel,
) -> AdgenStatus {
    guard(|| {
        if out_model.is_null() {
            set_error("null out_model");
            return AdgenStatus::NullArgument;
        }
        let path = match cstr_path(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        let ckpt = match Checkpoint::load(&path) {
            Ok(c) => c,
            Err(e) => {
                set_error(&e.to_string());
                return status_of(&e);
            }
        };
        match model_from_checkpoint(&ckpt) {
            Ok((model, _)) => {
                *out_model = Box::into_raw(Box::new(AdgenModel { model }));
                AdgenStatus::Ok
            }
            Err(e) => {
                set_error(&e.to_string());
                status_of(&e)
            }
        }
    })
}

/// # Safety
/// `model` must be a pointer returned by [`adgen_model_load`] (or null).
#[no_mangle]
pub unsafe extern "C" fn adgen_model_free(model: *mut AdgenModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Side length of the square input the model expects; 0 on null.
///
/// # Safety
/// `model` must be null or a live model handle.
#[no_mangle]
pub unsafe extern "C" fn adgen_model_input_size(model: *const AdgenModel) -> u32 {
    if model.is_null() {
        return 0;
    }
    (*model).model.config.input_size as u32
}

/// Build a reference bank from every PNG in `dir` (normal images of the
/// target domain), keeping a `fraction` of them chosen by `seed`.
///
/// # Safety
/// `model` must be a live model handle; `dir` a NUL-terminated string;
/// `out_bank` a valid pointer. On success `*out_bank` owns the handle until
/// [`adgen_bank_free`].
#[no_mangle]
pub unsafe extern "C" fn adgen_bank_build(
    model: *const AdgenModel,
    dir: *const c_char,
    fraction: f64,
    seed: u64,
    out_bank: *mut *mut AdgenBank,
) -> AdgenStatus {
    guard(|| {
        if model.is_null() || out_bank.is_null() {
            set_error("null model or out_bank");
            return AdgenStatus::NullArgument;
        }
        let dir = match cstr_path(dir) {
            Ok(p) => p,
            Err(s) => return s,
        };
        let model = &(*model).model;

        let entries = match std::fs::read_dir(&dir) {
            Ok(e) => e,
            Err(e) => {
                set_error(&format!("cannot read {}: {e}", dir.display()));
                return AdgenStatus::IoError;
            }
        };
        let mut files: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().map(|x| x == "png").unwrap_or(false))
            .collect();
        files.sort();
        if files.is_empty() {
            set_error(&format!("no PNG files under {}", dir.display()));
            return AdgenStatus::InvalidInput;
        }
        let mut samples = Vec::with_capacity(files.len());
        for f in &files {
            match load_sample(model, f) {
                Ok(mut s) => {
                    s.origin = SampleOrigin::Train;
                    samples.push(s);
                }
                Err(e) => {
                    set_error(&e.to_string());
                    return status_of(&e);
                }
            }
        }
        let refs: Vec<&ImageSample> = samples.iter().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match build_reference_bank(&refs, fraction, model, &mut rng) {
            Ok(bank) => {
                *out_bank = Box::into_raw(Box::new(AdgenBank { bank }));
                AdgenStatus::Ok
            }
            Err(e) => {
                set_error(&e.to_string());
                status_of(&e)
            }
        }
    })
}

/// # Safety
/// `bank` must be a pointer returned by [`adgen_bank_build`] (or null).
#[no_mangle]
pub unsafe extern "C" fn adgen_bank_free(bank: *mut AdgenBank) {
    if !bank.is_null() {
        drop(Box::from_raw(bank));
    }
}

/// Number of images pooled into the bank; 0 on null.
///
/// # Safety
/// `bank` must be null or a live bank handle.
#[no_mangle]
pub unsafe extern "C" fn adgen_bank_image_count(bank: *const AdgenBank) -> u32 {
    if bank.is_null() {
        return 0;
    }
    (*bank).bank.image_ids.len() as u32
}

/// Image-level anomaly score of one image file, in (0, 1).
///
/// # Safety
/// `model` and `bank` must be live handles; `path` NUL-terminated;
/// `out_score` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn adgen_score_image(
    model: *const AdgenModel,
    bank: *const AdgenBank,
    path: *const c_char,
    out_score: *mut f32,
) -> AdgenStatus {
    guard(|| {
        if model.is_null() || bank.is_null() || out_score.is_null() {
            set_error("null model, bank or out_score");
            return AdgenStatus::NullArgument;
        }
        let path = match cstr_path(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        let model = &(*model).model;
        let sample = match load_sample(model, &path) {
            Ok(s) => s,
            Err(e) => {
                set_error(&e.to_string());
                return status_of(&e);
            }
        };
        match score_query(&sample, &(*bank).bank, model) {
            Ok(scores) => {
                *out_score = scores.image_score();
                AdgenStatus::Ok
            }
            Err(e) => {
                set_error(&e.to_string());
                status_of(&e)
            }
        }
    })
}

/// Pixel-level anomaly map of one image file. `out_map` receives
/// `input_size × input_size` row-major scores in (0, 1); `map_len` must equal
/// that product (see [`adgen_model_input_size`]).
///
/// # Safety
/// `model` and `bank` must be live handles; `path` NUL-terminated; `out_map`
/// must point to at least `map_len` floats.
#[no_mangle]
pub unsafe extern "C" fn adgen_score_pixels(
    model: *const AdgenModel,
    bank: *const AdgenBank,
    path: *const c_char,
    out_map: *mut f32,
    map_len: usize,
) -> AdgenStatus {
    guard(|| {
        if model.is_null() || bank.is_null() || out_map.is_null() {
            set_error("null model, bank or out_map");
            return AdgenStatus::NullArgument;
        }
        let path = match cstr_path(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        let model = &(*model).model;
        let n = model.config.input_size;
        if map_len != n * n {
            set_error(&format!("map_len {map_len} != input_size² = {}", n * n));
            return AdgenStatus::InvalidInput;
        }
        let sample = match load_sample(model, &path) {
            Ok(s) => s,
            Err(e) => {
                set_error(&e.to_string());
                return status_of(&e);
            }
        };
        match score_pixels(&sample, &(*bank).bank, model) {
            Ok(map) => {
                let out = std::slice::from_raw_parts_mut(out_map, map_len);
                for (dst, src) in out.iter_mut().zip(map.map.iter()) {
                    *dst = *src;
                }
                AdgenStatus::Ok
            }
            Err(e) => {
                set_error(&e.to_string());
                status_of(&e)
            }
        }
    })
}
