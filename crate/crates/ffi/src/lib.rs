//! C ABI over the Neural Process toolkit.
//!
//! Models travel as opaque handles; every call returns a status code and
//! writes results through caller-owned buffers. All functions are
//! panic-safe: a Rust panic is reported as `NP_STATUS_INTERNAL` instead of
//! unwinding across the boundary.
//!
//! Buffer conventions are row-major f64: context pairs are `n × (x_dim +
//! y_dim)` (inputs then outputs per row), targets are `m × x_dim`, and
//! predictions fill `n_samples × m × y_dim`.

use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use np_core::model::NpModel;
use np_core::rng;
use np_core::train::load_model;
use np_core::{Error, Tensor};

/// Opaque model handle. Create with `np_model_load`, release with
/// `np_model_free`. Safe to share across threads for prediction.
pub struct NpHandle {
    model: NpModel,
}

/// Status codes returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NpStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A path or string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// File could not be read or written.
    Io = 3,
    /// Checkpoint or sidecar bytes are malformed.
    Format = 4,
    /// Buffer or tensor dimensions do not match the model.
    Shape = 5,
    /// Argument outside its valid domain (e.g. zero samples).
    Domain = 6,
    /// A computation produced a non-finite value.
    Numeric = 7,
    /// Configuration rejected by the model.
    Config = 8,
    /// Unexpected internal failure (a panic was caught).
    Internal = 9,
}

fn status_of(err: &Error) -> NpStatus {
    match err {
        Error::Shape { .. } | Error::UnknownParam(_) | Error::DuplicateParam(_) => NpStatus::Shape,
        Error::Domain { .. } => NpStatus::Domain,
        Error::NonFinite { .. } | Error::NonFiniteLoss { .. } | Error::NotPositiveDefinite { .. } => {
            NpStatus::Numeric
        }
        Error::Format(_) => NpStatus::Format,
        Error::Config(_) | Error::Json(_) => NpStatus::Config,
        Error::Io(_) => NpStatus::Io,
    }
}

/// Static human-readable description of a status code.
#[no_mangle]
pub extern "C" fn np_status_message(status: NpStatus) -> *const c_char {
    let msg: &'static [u8] = match status {
        NpStatus::Ok => b"ok\0",
        NpStatus::NullArgument => b"required pointer argument was null\0",
        NpStatus::InvalidUtf8 => b"string argument was not valid UTF-8\0",
        NpStatus::Io => b"file could not be read or written\0",
        NpStatus::Format => b"checkpoint bytes are malformed\0",
        NpStatus::Shape => b"buffer dimensions do not match the model\0",
        NpStatus::Domain => b"argument outside its valid domain\0",
        NpStatus::Numeric => b"computation produced a non-finite value\0",
        NpStatus::Config => b"model configuration rejected\0",
        NpStatus::Internal => b"internal error\0",
    };
    msg.as_ptr() as *const c_char
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn np_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

fn guarded(f: impl FnOnce() -> NpStatus) -> NpStatus {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or(NpStatus::Internal)
}

/// Loads a checkpoint (plus its JSON config sidecar) into a fresh handle.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn np_model_load(path: *const c_char, out: *mut *mut NpHandle) -> NpStatus {
    guarded(|| {
        if path.is_null() || out.is_null() {
            return NpStatus::NullArgument;
        }
        let path = match unsafe { CStr::from_ptr(path) }.to_str() {
            Ok(p) => p,
            Err(_) => return NpStatus::InvalidUtf8,
        };
        match load_model(Path::new(path)) {
            Ok(model) => {
                unsafe { *out = Box::into_raw(Box::new(NpHandle { model })) };
                NpStatus::Ok
            }
            Err(e) => status_of(&e),
        }
    })
}

/// Releases a handle. Null is a no-op.
///
/// # Safety
/// `handle` must have come from `np_model_load` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn np_model_free(handle: *mut NpHandle) {
    if !handle.is_null() {
        drop(unsafe { Box::from_raw(handle) });
    }
}

/// Input dimension of the model's function domain.
///
/// # Safety
/// `handle` must be a live handle from `np_model_load`.
#[no_mangle]
pub unsafe extern "C" fn np_model_x_dim(handle: *const NpHandle) -> u32 {
    if handle.is_null() {
        return 0;
    }
    unsafe { &*handle }.model.config.x_dim as u32
}

/// Output dimension of the modelled functions.
///
/// # Safety
/// `handle` must be a live handle from `np_model_load`.
#[no_mangle]
pub unsafe extern "C" fn np_model_y_dim(handle: *const NpHandle) -> u32 {
    if handle.is_null() {
        return 0;
    }
    unsafe { &*handle }.model.config.y_dim as u32
}

/// Dimension of the global latent variable.
///
/// # Safety
/// `handle` must be a live handle from `np_model_load`.
#[no_mangle]
pub unsafe extern "C" fn np_model_z_dim(handle: *const NpHandle) -> u32 {
    if handle.is_null() {
        return 0;
    }
    unsafe { &*handle }.model.config.z_dim as u32
}

/// Draws `n_samples` functions conditioned on the context and evaluates
/// their predictive mean and std at the targets. Deterministic given `seed`.
///
/// `context_pairs` holds `n_context` rows of `x_dim + y_dim` values
/// (`n_context` may be zero, falling back to the learned prior);
/// `target_xs` holds `n_targets` rows of `x_dim` values; `out_means` and
/// `out_stds` each receive `n_samples · n_targets · y_dim` values, sample by
/// sample. Either output pointer may be null to skip it.
///
/// # Safety
/// All non-null pointers must cover the byte ranges implied by the counts.
#[no_mangle]
pub unsafe extern "C" fn np_model_predict(
    handle: *const NpHandle,
    context_pairs: *const f64,
    n_context: usize,
    target_xs: *const f64,
    n_targets: usize,
    n_samples: usize,
    seed: u64,
    out_means: *mut f64,
    out_stds: *mut f64,
) -> NpStatus {
    guarded(|| {
        if handle.is_null() || (context_pairs.is_null() && n_context > 0) || target_xs.is_null() {
            return NpStatus::NullArgument;
        }
        let model = &unsafe { &*handle }.model;
        let (xd, yd) = (model.config.x_dim, model.config.y_dim);

        let ctx = if n_context == 0 {
            Tensor::zeros(vec![0, xd + yd])
        } else {
            let data = unsafe { std::slice::from_raw_parts(context_pairs, n_context * (xd + yd)) };
            match Tensor::new(vec![n_context, xd + yd], data.to_vec()) {
                Ok(t) => t,
                Err(e) => return status_of(&e),
            }
        };
        let targets = {
            let data = unsafe { std::slice::from_raw_parts(target_xs, n_targets * xd) };
            match Tensor::new(vec![n_targets, xd], data.to_vec()) {
                Ok(t) => t,
                Err(e) => return status_of(&e),
            }
        };

        let mut rng = rng::seeded(seed);
        let preds = match model.predict(&ctx, &targets, n_samples, &mut rng) {
            Ok(p) => p,
            Err(e) => return status_of(&e),
        };
        let block = n_targets * yd;
        for (s, pred) in preds.iter().enumerate() {
            if !out_means.is_null() {
                let dst = unsafe { std::slice::from_raw_parts_mut(out_means.add(s * block), block) };
                dst.copy_from_slice(pred.mean.data());
            }
            if !out_stds.is_null() {
                let dst = unsafe { std::slice::from_raw_parts_mut(out_stds.add(s * block), block) };
                dst.copy_from_slice(pred.std.data());
            }
        }
        NpStatus::Ok
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use np_core::model::NpConfig;
    use np_core::train::save_model;
    use std::ffi::CString;

    fn saved_model_path(dir: &tempfile::TempDir) -> CString {
        let cfg = NpConfig {
            r_dim: 8,
            z_dim: 8,
            encoder_hidden: vec![16],
            latent_hidden: vec![16],
            decoder_hidden: vec![16],
            ..NpConfig::for_1d()
        };
        let model = NpModel::init(cfg, &mut rng::seeded(1)).unwrap();
        let path = dir.path().join("m.npk");
        save_model(&model, &path).unwrap();
        CString::new(path.to_str().unwrap()).unwrap()
    }

    #[test]
    fn load_predict_free_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = saved_model_path(&dir);
        let mut handle: *mut NpHandle = std::ptr::null_mut();
        let st = unsafe { np_model_load(path.as_ptr(), &mut handle) };
        assert_eq!(st, NpStatus::Ok);
        assert_eq!(unsafe { np_model_x_dim(handle) }, 1);
        assert_eq!(unsafe { np_model_y_dim(handle) }, 1);
        assert_eq!(unsafe { np_model_z_dim(handle) }, 8);

        let ctx = [0.0f64, 0.5, 1.0, -0.25]; // two (x, y) pairs
        let targets = [-1.0f64, 0.0, 1.0];
        let mut means = [0.0f64; 2 * 3];
        let mut stds = [0.0f64; 2 * 3];
        let st = unsafe {
            np_model_predict(
                handle,
                ctx.as_ptr(),
                2,
                targets.as_ptr(),
                3,
                2,
                42,
                means.as_mut_ptr(),
                stds.as_mut_ptr(),
            )
        };
        assert_eq!(st, NpStatus::Ok);
        assert!(means.iter().all(|v| v.is_finite()));
        assert!(stds.iter().all(|v| *v > 0.0));

        // determinism for a fixed seed
        let mut means2 = [0.0f64; 6];
        let st = unsafe {
            np_model_predict(handle, ctx.as_ptr(), 2, targets.as_ptr(), 3, 2, 42, means2.as_mut_ptr(), std::ptr::null_mut())
        };
        assert_eq!(st, NpStatus::Ok);
        assert_eq!(means, means2);

        // empty context falls back to the learned prior
        let st = unsafe {
            np_model_predict(handle, std::ptr::null(), 0, targets.as_ptr(), 3, 1, 7, means2.as_mut_ptr(), std::ptr::null_mut())
        };
        assert_eq!(st, NpStatus::Ok);

        unsafe { np_model_free(handle) };
        unsafe { np_model_free(std::ptr::null_mut()) }; // null is a no-op
    }

    #[test]
    fn error_codes_cover_bad_inputs() {
        let mut handle: *mut NpHandle = std::ptr::null_mut();
        assert_eq!(unsafe { np_model_load(std::ptr::null(), &mut handle) }, NpStatus::NullArgument);

        let missing = CString::new("/nonexistent/model.npk").unwrap();
        assert_eq!(unsafe { np_model_load(missing.as_ptr(), &mut handle) }, NpStatus::Io);

        let dir = tempfile::tempdir().unwrap();
        let garbage = dir.path().join("bad.npk");
        std::fs::write(&garbage, b"not a checkpoint").unwrap();
        std::fs::write(dir.path().join("bad.npk.json"), "{}").unwrap();
        let bad = CString::new(garbage.to_str().unwrap()).unwrap();
        let st = unsafe { np_model_load(bad.as_ptr(), &mut handle) };
        assert!(matches!(st, NpStatus::Format | NpStatus::Config), "{st:?}");

        // zero samples is a domain error through a live handle
        let path = saved_model_path(&dir);
        assert_eq!(unsafe { np_model_load(path.as_ptr(), &mut handle) }, NpStatus::Ok);
        let targets = [0.0f64];
        let st = unsafe {
            np_model_predict(handle, std::ptr::null(), 0, targets.as_ptr(), 1, 0, 0, std::ptr::null_mut(), std::ptr::null_mut())
        };
        assert_eq!(st, NpStatus::Domain);
        unsafe { np_model_free(handle) };
    }

    #[test]
    fn status_messages_are_nul_terminated_statics() {
        for s in [NpStatus::Ok, NpStatus::Io, NpStatus::Internal] {
            let msg = unsafe { CStr::from_ptr(np_status_message(s)) };
            assert!(!msg.to_str().unwrap().is_empty());
        }
        let v = unsafe { CStr::from_ptr(np_version()) };
        assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
    }
}
