//! C ABI over `fedsfr-core`.
//!
//! Objects are opaque heap handles created by `*_new`/`*_load` functions and
//! released with the matching `*_free`. Every fallible call returns an
//! [`FsfrStatus`]; on failure a human-readable message is kept per thread and
//! can be copied out with [`fsfr_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use fedsfr::compression::top_s_sparsify;
use fedsfr::config::RunConfig;
use fedsfr::federation::Simulator;
use fedsfr::jscc::{self, ChannelConfig, JsccModel};
use fedsfr::metrics::{self, RoundMetrics};
use fedsfr::rng::{Purpose, StreamFactory};
use fedsfr::tensor::Tensor;
use fedsfr::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FsfrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Config = 3,
    Shape = 4,
    InvalidArgument = 5,
    Data = 6,
    Io = 7,
    NonFinite = 8,
    Finished = 9,
    BufferTooSmall = 10,
    Panic = 99,
}

/// Training simulator handle.
pub struct FsfrSimulator {
    inner: Simulator,
}

/// JSCC model handle.
pub struct FsfrModel {
    inner: JsccModel,
}

/// Per-round metrics as plain values.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FsfrRoundMetrics {
    pub t: u64,
    pub eta_c: f64,
    pub eta_s: f64,
    pub train_lc: f64,
    pub test_lc_pre_fr: f64,
    pub test_lc_post_fr: f64,
    pub test_psnr_pre_fr: f64,
    pub test_psnr_post_fr: f64,
    pub fr_improved: bool,
    pub epsilon_hat: f64,
    pub cos_ab: f64,
    pub mean_mem_sq: f64,
    pub memory_bound: f64,
    pub grad_norm_sq: f64,
    pub wall_ms: f64,
}

impl From<&RoundMetrics> for FsfrRoundMetrics {
    fn from(m: &RoundMetrics) -> Self {
        Self {
            t: m.t as u64,
            eta_c: m.eta_c,
            eta_s: m.eta_s,
            train_lc: m.train_lc,
            test_lc_pre_fr: m.test_lc_pre_fr,
            test_lc_post_fr: m.test_lc_post_fr,
            test_psnr_pre_fr: m.test_psnr_pre_fr,
            test_psnr_post_fr: m.test_psnr_post_fr,
            fr_improved: m.fr_improved,
            epsilon_hat: m.epsilon_hat,
            cos_ab: m.cos_ab,
            mean_mem_sq: m.mean_mem_sq,
            memory_bound: m.memory_bound,
            grad_norm_sq: m.grad_norm_sq,
            wall_ms: m.wall_ms,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(FsfrStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Config(_) => FsfrStatus::Config,
            Error::Shape { .. } | Error::Length { .. } | Error::TapeMismatch(_) => FsfrStatus::Shape,
            Error::NonFinite(_) | Error::ZeroNorm => FsfrStatus::NonFinite,
            Error::Budget { .. } | Error::IndexOutOfRange { .. } | Error::InvalidArgument(_) => {
                FsfrStatus::InvalidArgument
            }
            Error::Data(_) | Error::Format { .. } => FsfrStatus::Data,
            Error::Io(_) | Error::Csv(_) => FsfrStatus::Io,
        };
        Failure(status, e.to_string())
    }
}

fn fail(status: FsfrStatus, msg: impl Into<String>) -> Failure {
    Failure(status, msg.into())
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard<F: FnOnce() -> Result<(), Failure>>(f: F) -> FsfrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FsfrStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(_) => {
            set_last_error("panic inside fedsfr".into());
            FsfrStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(fail(FsfrStatus::NullPointer, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(FsfrStatus::InvalidUtf8, format!("{name} is not valid UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(FsfrStatus::NullPointer, format!("{name} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_out<'a, T>(p: *mut T, len: usize, name: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(fail(FsfrStatus::NullPointer, format!("{name} is null")));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| fail(FsfrStatus::NullPointer, format!("{name} is null")))
}

unsafe fn mut_arg<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut()
        .ok_or_else(|| fail(FsfrStatus::NullPointer, format!("{name} is null")))
}

unsafe fn write_out<T>(p: *mut T, value: T, name: &str) -> Result<(), Failure> {
    if p.is_null() {
        return Err(fail(FsfrStatus::NullPointer, format!("{name} is null")));
    }
    p.write(value);
    Ok(())
}

unsafe fn write_handle<T>(p: *mut *mut T, make: impl FnOnce() -> Result<T, Failure>) -> Result<(), Failure> {
    if p.is_null() {
        return Err(fail(FsfrStatus::NullPointer, "out is null"));
    }
    p.write(Box::into_raw(Box::new(make()?)));
    Ok(())
}

unsafe fn config_arg(p: *const c_char) -> Result<RunConfig, Failure> {
    if p.is_null() {
        return Ok(RunConfig::desk());
    }
    Ok(RunConfig::from_toml_str(str_arg(p, "config_toml")?)?)
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length excluding the NUL, or
/// 0 if there is no error.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn fsfr_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else { return 0 };
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fsfr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a simulator from TOML text. A null `config_toml` selects the
/// bundled desk-scale config.
///
/// # Safety
/// `config_toml` must be null or a valid C string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fsfr_simulator_new(config_toml: *const c_char, out: *mut *mut FsfrSimulator) -> FsfrStatus {
    guard(|| {
        write_handle(out, || {
            let cfg = config_arg(config_toml)?;
            Ok(FsfrSimulator { inner: Simulator::new(cfg)? })
        })
    })
}

/// Like [`fsfr_simulator_new`] but overrides the seed.
///
/// # Safety
/// As for [`fsfr_simulator_new`].
#[no_mangle]
pub unsafe extern "C" fn fsfr_simulator_new_seeded(
    config_toml: *const c_char,
    seed: u64,
    out: *mut *mut FsfrSimulator,
) -> FsfrStatus {
    guard(|| {
        write_handle(out, || {
            let mut cfg = config_arg(config_toml)?;
            cfg.seed = seed;
            Ok(FsfrSimulator { inner: Simulator::new(cfg)? })
        })
    })
}

/// # Safety
/// `sim` must be null or a handle from `fsfr_simulator_new*` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fsfr_simulator_free(sim: *mut FsfrSimulator) {
    if !sim.is_null() {
        drop(Box::from_raw(sim));
    }
}

/// Runs one round. Returns `Finished` once all configured rounds are done.
/// `metrics` may be null.
///
/// # Safety
/// `sim` must be a live handle; `metrics` null or writable.
#[no_mangle]
pub unsafe extern "C" fn fsfr_simulator_step(sim: *mut FsfrSimulator, metrics: *mut FsfrRoundMetrics) -> FsfrStatus {
    guard(|| {
        let sim = mut_arg(sim, "sim")?;
        if sim.inner.is_finished() {
            return Err(fail(FsfrStatus::Finished, "all rounds completed"));
        }
        let m = FsfrRoundMetrics::from(sim.inner.step()?);
        if !metrics.is_null() {
            metrics.write(m);
        }
        Ok(())
    })
}

/// Index of the next round to run.
///
/// # Safety
/// `sim` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fsfr_simulator_round(sim: *const FsfrSimulator, out: *mut u64) -> FsfrStatus {
    guard(|| write_out(out, ref_arg(sim, "sim")?.inner.round() as u64, "out"))
}

/// Total number of configured rounds.
///
/// # Safety
/// `sim` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fsfr_simulator_rounds(sim: *const FsfrSimulator, out: *mut u64) -> FsfrStatus {
    guard(|| {
        let rounds = ref_arg(sim, "sim")?.inner.config().federation.rounds;
        write_out(out, rounds as u64, "out")
    })
}

/// Metrics of a completed round `t`.
///
/// # Safety
/// `sim` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fsfr_simulator_metrics(
    sim: *const FsfrSimulator,
    t: u64,
    out: *mut FsfrRoundMetrics,
) -> FsfrStatus {
    guard(|| {
        let sim = ref_arg(sim, "sim")?;
        let m = usize::try_from(t)
            .ok()
            .and_then(|t| sim.inner.log().rounds.get(t))
            .ok_or_else(|| fail(FsfrStatus::InvalidArgument, format!("round {t} has not run")))?;
        write_out(out, FsfrRoundMetrics::from(m), "out")
    })
}

/// Writes the metrics of all completed rounds as CSV.
///
/// # Safety
/// `sim` must be a live handle; `path` a valid C string.
#[no_mangle]
pub unsafe extern "C" fn fsfr_simulator_write_metrics(sim: *const FsfrSimulator, path: *const c_char) -> FsfrStatus {
    guard(|| {
        let sim = ref_arg(sim, "sim")?;
        let path = PathBuf::from(str_arg(path, "path")?);
        sim.inner.log().write_csv(path)?;
        Ok(())
    })
}

/// Copies the current global model into a new model handle.
///
/// # Safety
/// `sim` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fsfr_simulator_model(sim: *const FsfrSimulator, out: *mut *mut FsfrModel) -> FsfrStatus {
    guard(|| {
        let model = ref_arg(sim, "sim")?.inner.model().clone();
        write_handle(out, || Ok(FsfrModel { inner: model }))
    })
}

/// Loads a model checkpoint.
///
/// # Safety
/// `path` must be a valid C string; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fsfr_model_load(path: *const c_char, out: *mut *mut FsfrModel) -> FsfrStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        write_handle(out, || {
            let file = std::fs::File::open(path).map_err(Error::from)?;
            Ok(FsfrModel { inner: JsccModel::load(std::io::BufReader::new(file))? })
        })
    })
}

/// Writes a model checkpoint.
///
/// # Safety
/// `model` must be a live handle; `path` a valid C string.
#[no_mangle]
pub unsafe extern "C" fn fsfr_model_save(model: *const FsfrModel, path: *const c_char) -> FsfrStatus {
    guard(|| {
        let model = ref_arg(model, "model")?;
        let file = std::fs::File::create(str_arg(path, "path")?).map_err(Error::from)?;
        model.inner.save(std::io::BufWriter::new(file))?;
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a live handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fsfr_model_free(model: *mut FsfrModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Image element count (`C·H·W`), feature length `d` and parameter count.
/// Any out pointer may be null.
///
/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn fsfr_model_dims(
    model: *const FsfrModel,
    image_len: *mut usize,
    feature_dim: *mut usize,
    param_count: *mut usize,
) -> FsfrStatus {
    guard(|| {
        let m = &ref_arg(model, "model")?.inner;
        if !image_len.is_null() {
            image_len.write(m.image_shape().iter().product());
        }
        if !feature_dim.is_null() {
            feature_dim.write(m.feature_dim());
        }
        if !param_count.is_null() {
            param_count.write(m.param_count());
        }
        Ok(())
    })
}

fn image_tensor(model: &JsccModel, data: &[f64]) -> Result<Tensor, Failure> {
    Ok(Tensor::new(model.image_shape(), data.to_vec())?)
}

/// Encodes one planar `C×H×W` image into its un-normalised feature.
///
/// # Safety
/// `image` must hold `image_len` values and `feature` `feature_len` slots.
#[no_mangle]
pub unsafe extern "C" fn fsfr_model_encode(
    model: *const FsfrModel,
    image: *const f64,
    image_len: usize,
    feature: *mut f64,
    feature_len: usize,
) -> FsfrStatus {
    guard(|| {
        let m = &ref_arg(model, "model")?.inner;
        let x = image_tensor(m, slice_arg(image, image_len, "image")?)?;
        let y = jscc::encode(m, &x)?;
        if feature_len < y.len() {
            return Err(fail(
                FsfrStatus::BufferTooSmall,
                format!("feature buffer holds {feature_len}, need {}", y.len()),
            ));
        }
        slice_out(feature, y.len(), "feature")?.copy_from_slice(y.data());
        Ok(())
    })
}

/// Sends one image through encoder, AWGN channel at `snr_db` and decoder.
/// The noise is a deterministic function of `seed`. `loss` may be null.
///
/// # Safety
/// `image` and `recon` must each hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn fsfr_model_transmit(
    model: *const FsfrModel,
    image: *const f64,
    recon: *mut f64,
    len: usize,
    snr_db: f64,
    seed: u64,
    loss: *mut f64,
) -> FsfrStatus {
    guard(|| {
        let m = &ref_arg(model, "model")?.inner;
        let x = image_tensor(m, slice_arg(image, len, "image")?)?;
        let mut rng = StreamFactory::new(seed).stream(Purpose::Eval, 0, 0);
        let (x_hat, l) = jscc::transmit_image(m, &x, ChannelConfig::new(snr_db), &mut rng)?;
        slice_out(recon, len, "recon")?.copy_from_slice(x_hat.data());
        if !loss.is_null() {
            loss.write(l);
        }
        Ok(())
    })
}

/// PSNR in dB between two equally long buffers; `+inf` when identical.
///
/// # Safety
/// `recon` and `reference` must each hold `len` values; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fsfr_psnr(
    recon: *const f64,
    reference: *const f64,
    len: usize,
    max_val: f64,
    out: *mut f64,
) -> FsfrStatus {
    guard(|| {
        if len == 0 {
            return Err(fail(FsfrStatus::InvalidArgument, "empty input"));
        }
        let a = Tensor::from_vec(slice_arg(recon, len, "recon")?.to_vec());
        let b = Tensor::from_vec(slice_arg(reference, len, "reference")?.to_vec());
        write_out(out, metrics::psnr(&a, &b, max_val)?, "out")
    })
}

/// Keeps the `budget` largest-magnitude non-zero entries of `values` (treated
/// as one layer) and zeroes the rest in place. Writes the number kept.
///
/// # Safety
/// `values` must hold `len` values; `kept` writable.
#[no_mangle]
pub unsafe extern "C" fn fsfr_top_s(values: *mut f64, len: usize, budget: usize, kept: *mut usize) -> FsfrStatus {
    guard(|| {
        let v = slice_out(values, len, "values")?;
        let (sparse, _) = top_s_sparsify(v, &[(0, len)], &[budget], 0)?;
        v.fill(0.0);
        sparse.for_each_entry(&[(0, len)], |i, x| v[i] = x);
        write_out(kept, sparse.total_nnz(), "kept")
    })
}
