//! C ABI over the `layerwise` crate.
//!
//! Every object is an opaque heap handle created by a `*_new`/`*_load`
//! function and released with the matching `*_free`. Functions return an
//! [`LwStatus`]; on failure a description is available from
//! [`lw_last_error_message`] on the same thread. Matrices are row-major
//! `double` arrays.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use layerwise::checkpoint::{Checkpoint, Model};
use layerwise::error::Error;
use layerwise::pipeline::{model_from_checkpoint, run_finetune, run_pretrain, Algorithm};
use layerwise::unit::layer_rng;
use layerwise::{unfold, CdHyperparams, ConfigBuilder, DataMatrix, RbmParams, StackedAutoencoder};
use rand_chacha::ChaCha8Rng;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LwStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Config = 4,
    Data = 5,
    Io = 6,
    Checkpoint = 7,
    Runtime = 8,
    Panic = 9,
}

/// Pre-training schedule selector for [`lw_pretrain`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LwAlgorithm {
    Greedy = 0,
    Sync = 1,
}

/// Dense row-major matrix.
pub struct LwMatrix {
    inner: DataMatrix,
}

/// A single RBM together with its own random stream.
pub struct LwRbm {
    params: RbmParams,
    hp: CdHyperparams,
    rng: ChaCha8Rng,
    epochs: usize,
}

/// Unresolved configuration (preset plus overrides).
pub struct LwConfig {
    builder: ConfigBuilder,
}

/// An unfolded autoencoder.
pub struct LwModel {
    sae: StackedAutoencoder,
    seed: u64,
    epoch: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(e: &Error) -> LwStatus {
    match e {
        Error::Shape(_) => LwStatus::Shape,
        Error::Config(_) => LwStatus::Config,
        Error::Data(_) => LwStatus::Data,
        Error::Io { .. } | Error::Csv { .. } => LwStatus::Io,
        Error::Checkpoint(_) => LwStatus::Checkpoint,
        Error::InvalidArgument(_) => LwStatus::InvalidArgument,
        _ => LwStatus::Runtime,
    }
}

/// Runs `f`, translating errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), (LwStatus, String)>) -> LwStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            LwStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            LwStatus::Panic
        }
    }
}

fn lib_err(e: impl Into<Error>) -> (LwStatus, String) {
    let e = e.into();
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (LwStatus, String) {
    (LwStatus::NullPointer, format!("{what} is null"))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, (LwStatus, String)> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn handle_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, (LwStatus, String)> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn string<'a>(p: *const c_char, what: &str) -> Result<&'a str, (LwStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (LwStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn out_ptr<T>(out: *mut *mut T, value: T) -> Result<(), (LwStatus, String)> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Message describing the last failed call on this thread, or NULL. Valid
/// until the next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn lw_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn lw_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

// ---- matrices ----

/// Copies `rows * cols` values from `data` into a new matrix.
///
/// # Safety
/// `data` must point to `rows * cols` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lw_matrix_new(rows: usize, cols: usize, data: *const f64, out: *mut *mut LwMatrix) -> LwStatus {
    guard(|| {
        if data.is_null() && rows * cols > 0 {
            return Err(null("data"));
        }
        let values = if rows * cols == 0 {
            Vec::new()
        } else {
            std::slice::from_raw_parts(data, rows * cols).to_vec()
        };
        let inner = DataMatrix::from_vec(rows, cols, values).map_err(lib_err)?;
        out_ptr(out, LwMatrix { inner })
    })
}

/// # Safety
/// `m` must be a live matrix handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn lw_matrix_rows(m: *const LwMatrix) -> usize {
    m.as_ref().map_or(0, |m| m.inner.rows())
}

/// # Safety
/// `m` must be a live matrix handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn lw_matrix_cols(m: *const LwMatrix) -> usize {
    m.as_ref().map_or(0, |m| m.inner.cols())
}

/// Copies the matrix into `dst`, which must hold `len >= rows * cols` doubles.
///
/// # Safety
/// `dst` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn lw_matrix_copy_to(m: *const LwMatrix, dst: *mut f64, len: usize) -> LwStatus {
    guard(|| {
        let m = handle(m, "matrix")?;
        let src = m.inner.as_slice();
        if dst.is_null() {
            return Err(null("destination"));
        }
        if len < src.len() {
            return Err((
                LwStatus::InvalidArgument,
                format!("destination holds {len} values, matrix has {}", src.len()),
            ));
        }
        ptr::copy_nonoverlapping(src.as_ptr(), dst, src.len());
        Ok(())
    })
}

/// # Safety
/// `m` must be a handle from this library (or NULL) and not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn lw_matrix_free(m: *mut LwMatrix) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

// ---- RBMs ----

/// Randomly initialised RBM with default contrastive-divergence settings.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lw_rbm_new(n_visible: usize, n_hidden: usize, seed: u64, out: *mut *mut LwRbm) -> LwStatus {
    guard(|| {
        if n_visible == 0 || n_hidden == 0 {
            return Err((LwStatus::InvalidArgument, "layer sizes must be positive".into()));
        }
        let mut rng = layer_rng(seed, 0);
        let params = RbmParams::random(n_visible, n_hidden, &mut rng);
        out_ptr(
            out,
            LwRbm {
                params,
                hp: CdHyperparams::default(),
                rng,
                epochs: 0,
            },
        )
    })
}

/// One epoch of CD training on `data`.
///
/// # Safety
/// Handles must be live.
#[no_mangle]
pub unsafe extern "C" fn lw_rbm_train_epoch(rbm: *mut LwRbm, data: *const LwMatrix, batch_size: usize) -> LwStatus {
    guard(|| {
        let rbm = handle_mut(rbm, "rbm")?;
        let data = handle(data, "data")?;
        if batch_size == 0 {
            return Err((LwStatus::InvalidArgument, "batch size must be positive".into()));
        }
        let LwRbm { params, hp, rng, epochs } = rbm;
        params
            .train_epoch(data.inner.view(), batch_size, hp, *epochs, rng, &mut || {})
            .map_err(lib_err)?;
        *epochs += 1;
        Ok(())
    })
}

/// Hidden-unit probabilities for every row of `data`.
///
/// # Safety
/// Handles must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lw_rbm_hidden_probs(rbm: *const LwRbm, data: *const LwMatrix, out: *mut *mut LwMatrix) -> LwStatus {
    guard(|| {
        let rbm = handle(rbm, "rbm")?;
        let data = handle(data, "data")?;
        let inner = rbm.params.hidden_probs(data.inner.view()).map_err(lib_err)?;
        out_ptr(out, LwMatrix { inner })
    })
}

/// Mean squared reconstruction error per example after one up-down pass.
///
/// # Safety
/// Handles must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lw_rbm_reconstruction_error(rbm: *const LwRbm, data: *const LwMatrix, out: *mut f64) -> LwStatus {
    guard(|| {
        let rbm = handle(rbm, "rbm")?;
        let data = handle(data, "data")?;
        let out = handle_mut(out, "output")?;
        *out = rbm.params.reconstruction_error(data.inner.view()).map_err(lib_err)?;
        Ok(())
    })
}

/// # Safety
/// `r` must be a handle from this library (or NULL) and not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn lw_rbm_free(r: *mut LwRbm) {
    if !r.is_null() {
        drop(Box::from_raw(r));
    }
}

// ---- configuration ----

/// Configuration starting from a built-in preset (`"paper"`, `"desk"`) or,
/// when `preset` is NULL, from the defaults.
///
/// # Safety
/// `preset` must be NULL or a NUL-terminated string; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lw_config_new(preset: *const c_char, out: *mut *mut LwConfig) -> LwStatus {
    guard(|| {
        let builder = if preset.is_null() {
            ConfigBuilder::new()
        } else {
            ConfigBuilder::preset(string(preset, "preset")?).map_err(lib_err)?
        };
        out_ptr(out, LwConfig { builder })
    })
}

/// Merges TOML text (dotted keys) into the configuration.
///
/// # Safety
/// Handles must be live; `text` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn lw_config_merge(cfg: *mut LwConfig, text: *const c_char) -> LwStatus {
    guard(|| {
        let cfg = handle_mut(cfg, "config")?;
        cfg.builder.merge_str("<ffi>", string(text, "text")?).map_err(lib_err)?;
        Ok(())
    })
}

/// Applies one `key=value` override.
///
/// # Safety
/// Handles must be live; `assignment` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn lw_config_set(cfg: *mut LwConfig, assignment: *const c_char) -> LwStatus {
    guard(|| {
        let cfg = handle_mut(cfg, "config")?;
        cfg.builder.set(string(assignment, "assignment")?).map_err(lib_err)?;
        Ok(())
    })
}

/// # Safety
/// `c` must be a handle from this library (or NULL) and not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn lw_config_free(c: *mut LwConfig) {
    if !c.is_null() {
        drop(Box::from_raw(c));
    }
}

// ---- models ----

/// Pre-trains with the chosen schedule and returns the unfolded autoencoder.
///
/// # Safety
/// Handles must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lw_pretrain(
    cfg: *const LwConfig,
    algorithm: LwAlgorithm,
    train: *const LwMatrix,
    valid: *const LwMatrix,
    out: *mut *mut LwModel,
) -> LwStatus {
    guard(|| {
        let cfg = handle(cfg, "config")?.builder.build(None).map_err(lib_err)?;
        let (train, valid) = (handle(train, "train")?, handle(valid, "valid")?);
        let alg = match algorithm {
            LwAlgorithm::Greedy => Algorithm::Greedy,
            LwAlgorithm::Sync => Algorithm::Sync,
        };
        let pre = run_pretrain(&cfg, alg, &train.inner, &valid.inner).map_err(lib_err)?;
        let sae = unfold(&pre.layers).map_err(lib_err)?;
        out_ptr(
            out,
            LwModel {
                sae,
                seed: cfg.seed,
                epoch: 0,
            },
        )
    })
}

/// Runs `epochs` fine-tuning epochs, continuing the model's epoch count.
///
/// # Safety
/// Handles must be live.
#[no_mangle]
pub unsafe extern "C" fn lw_model_finetune(
    model: *mut LwModel,
    cfg: *const LwConfig,
    train: *const LwMatrix,
    valid: *const LwMatrix,
    epochs: usize,
) -> LwStatus {
    guard(|| {
        let model = handle_mut(model, "model")?;
        let cfg = handle(cfg, "config")?.builder.build(None).map_err(lib_err)?;
        let (train, valid) = (handle(train, "train")?, handle(valid, "valid")?);
        run_finetune(
            &mut model.sae,
            &cfg,
            &train.inner,
            &valid.inner,
            model.epoch as usize,
            epochs,
            |_, _| Ok(()),
        )
        .map_err(lib_err)?;
        model.epoch += epochs as u64;
        Ok(())
    })
}

/// Reconstruction error per example of `data`.
///
/// # Safety
/// Handles must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lw_model_loss(model: *const LwModel, data: *const LwMatrix, out: *mut f64) -> LwStatus {
    guard(|| {
        let model = handle(model, "model")?;
        let data = handle(data, "data")?;
        let out = handle_mut(out, "output")?;
        *out = model.sae.loss(&data.inner).map_err(lib_err)?;
        Ok(())
    })
}

/// Reconstructions of every row of `data`.
///
/// # Safety
/// Handles must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lw_model_reconstruct(model: *const LwModel, data: *const LwMatrix, out: *mut *mut LwMatrix) -> LwStatus {
    guard(|| {
        let model = handle(model, "model")?;
        let data = handle(data, "data")?;
        let inner = model.sae.reconstruct(&data.inner).map_err(lib_err)?;
        out_ptr(out, LwMatrix { inner })
    })
}

/// Code-layer activations of every row of `data`.
///
/// # Safety
/// Handles must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lw_model_encode(model: *const LwModel, data: *const LwMatrix, out: *mut *mut LwMatrix) -> LwStatus {
    guard(|| {
        let model = handle(model, "model")?;
        let data = handle(data, "data")?;
        let inner = model.sae.encode(&data.inner).map_err(lib_err)?;
        out_ptr(out, LwMatrix { inner })
    })
}

/// # Safety
/// Handle must be live; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn lw_model_save(model: *const LwModel, path: *const c_char) -> LwStatus {
    guard(|| {
        let model = handle(model, "model")?;
        let path = string(path, "path")?;
        Checkpoint {
            seed: model.seed,
            epoch: model.epoch,
            model: Model::Autoencoder(model.sae.clone()),
        }
        .save(Path::new(path))
        .map_err(lib_err)
    })
}

/// Loads a checkpoint of either kind; RBM stacks are unfolded.
///
/// # Safety
/// `path` NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lw_model_load(path: *const c_char, out: *mut *mut LwModel) -> LwStatus {
    guard(|| {
        let ck = Checkpoint::load(Path::new(string(path, "path")?)).map_err(lib_err)?;
        let sae = model_from_checkpoint(&ck).map_err(lib_err)?;
        let epoch = match ck.model {
            Model::RbmStack(_) => 0,
            Model::Autoencoder(_) => ck.epoch,
        };
        out_ptr(
            out,
            LwModel {
                sae,
                seed: ck.seed,
                epoch,
            },
        )
    })
}

/// # Safety
/// `m` must be a handle from this library (or NULL) and not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn lw_model_free(m: *mut LwModel) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}
