//! C interface to the adaptive-bandwidth image transmission codec.
//!
//! The surface follows the usual C embedding conventions:
//!
//! * Opaque handles ([`JsccConfig`], [`JsccCodec`]) created and destroyed by
//!   paired `_open`/`_free` functions. Handles are never shared across the
//!   boundary by value.
//! * Every fallible function returns a [`JsccStatus`]; on failure a
//!   human-readable message is retrievable with [`jscc_last_error`] (the
//!   pointer stays valid until the next failure on the same thread).
//! * Buffers are caller-allocated; query functions report required lengths.
//! * Panics are caught at the boundary and reported as
//!   `JSCC_STATUS_RUNTIME` rather than unwinding into C.
//!
//! The generated header lands in `include/jscc.h` at build time.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use candle_core::{Device, Tensor};
use jscc_core::channel::{awgn_slice, normalize_power_blocks_slice, normalize_power_slice};
use jscc_core::checkpoint::load_codec;
use jscc_core::codec::{pad_received, Codec, SideInfo};
use jscc_core::config::ExperimentConfig;
use jscc_core::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JsccStatus {
    /// Success.
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// Arguments were structurally valid but semantically wrong (bad config,
    /// off-grid level, wrong buffer length, ...).
    Invalid = 2,
    /// A required external resource is missing on this host.
    Unavailable = 3,
    /// Internal failure (I/O, tensor math, caught panic).
    Runtime = 4,
}

/// Opaque experiment-configuration handle.
pub struct JsccConfig {
    inner: ExperimentConfig,
}

/// Opaque handle to a trained codec loaded from a run directory.
pub struct JsccCodec {
    codec: Codec,
}

struct Failure {
    status: JsccStatus,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Failure {
        let status = match &e {
            Error::Config(_)
            | Error::Shape(_)
            | Error::Channel(_)
            | Error::Eval(_)
            | Error::Data(_)
            | Error::Checkpoint(_)
            | Error::Toml(_)
            | Error::Json(_) => JsccStatus::Invalid,
            Error::CompressorUnavailable(_) => JsccStatus::Unavailable,
            _ => JsccStatus::Runtime,
        };
        Failure { status, message: e.to_string() }
    }
}

impl From<candle_core::Error> for Failure {
    fn from(e: candle_core::Error) -> Failure {
        Failure { status: JsccStatus::Runtime, message: e.to_string() }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn record(status: JsccStatus, message: &str) -> JsccStatus {
    let clean: String = message.chars().filter(|&c| c != '\0').collect();
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(clean).expect("NULs were stripped");
    });
    status
}

/// Run an FFI body, translating failures and panics into status codes.
fn ffi<F: FnOnce() -> Result<(), Failure>>(body: F) -> JsccStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => JsccStatus::Ok,
        Ok(Err(f)) => record(f.status, &f.message),
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            record(JsccStatus::Runtime, &format!("internal panic: {msg}"))
        }
    }
}

fn null_arg(name: &str) -> Failure {
    Failure { status: JsccStatus::NullArgument, message: format!("{name} is null") }
}

fn invalid(message: impl Into<String>) -> Failure {
    Failure { status: JsccStatus::Invalid, message: message.into() }
}

unsafe fn require<'a, T>(ptr: *const T, name: &str) -> Result<&'a T, Failure> {
    ptr.as_ref().ok_or_else(|| null_arg(name))
}

unsafe fn require_mut<'a, T>(ptr: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    ptr.as_mut().ok_or_else(|| null_arg(name))
}

unsafe fn require_str<'a>(ptr: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if ptr.is_null() {
        return Err(null_arg(name));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| invalid(format!("{name} is not valid UTF-8")))
}

unsafe fn require_slice<'a>(
    ptr: *const f32,
    len: usize,
    name: &str,
) -> Result<&'a [f32], Failure> {
    if ptr.is_null() {
        return Err(null_arg(name));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn require_slice_mut<'a>(
    ptr: *mut f32,
    len: usize,
    name: &str,
) -> Result<&'a mut [f32], Failure> {
    if ptr.is_null() {
        return Err(null_arg(name));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, len))
}

/// Message for the most recent failure on this thread (empty string if none
/// yet). Valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn jscc_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn jscc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

// ---------------------------------------------------------------------------
// Configuration handles
// ---------------------------------------------------------------------------

/// Parse an experiment config from a TOML file.
#[no_mangle]
pub unsafe extern "C" fn jscc_config_load(
    path: *const c_char,
    out: *mut *mut JsccConfig,
) -> JsccStatus {
    ffi(|| {
        let path = require_str(path, "path")?;
        let out = require_mut(out, "out")?;
        let inner = ExperimentConfig::load(Path::new(path))?;
        *out = Box::into_raw(Box::new(JsccConfig { inner }));
        Ok(())
    })
}

/// Parse an experiment config from TOML text.
#[no_mangle]
pub unsafe extern "C" fn jscc_config_from_toml(
    toml: *const c_char,
    out: *mut *mut JsccConfig,
) -> JsccStatus {
    ffi(|| {
        let toml = require_str(toml, "toml")?;
        let out = require_mut(out, "out")?;
        let inner = ExperimentConfig::from_toml_str(toml)?;
        *out = Box::into_raw(Box::new(JsccConfig { inner }));
        Ok(())
    })
}

/// Release a config handle (null is a no-op).
#[no_mangle]
pub unsafe extern "C" fn jscc_config_free(cfg: *mut JsccConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Number of bandwidth levels on the grid.
#[no_mangle]
pub unsafe extern "C" fn jscc_config_levels(
    cfg: *const JsccConfig,
    out: *mut usize,
) -> JsccStatus {
    ffi(|| {
        let cfg = require(cfg, "cfg")?;
        *require_mut(out, "out")? = cfg.inner.grid.levels;
        Ok(())
    })
}

/// Bandwidth ratio of a 1-based grid level.
#[no_mangle]
pub unsafe extern "C" fn jscc_config_rho(
    cfg: *const JsccConfig,
    level: usize,
    out: *mut f64,
) -> JsccStatus {
    ffi(|| {
        let cfg = require(cfg, "cfg")?;
        let out = require_mut(out, "out")?;
        if level == 0 || level > cfg.inner.grid.levels {
            return Err(invalid(format!(
                "level {level} is outside the 1..={} grid",
                cfg.inner.grid.levels
            )));
        }
        *out = cfg.inner.grid.rho_at(level);
        Ok(())
    })
}

/// Complex channel symbols transmitted at a 1-based grid level.
#[no_mangle]
pub unsafe extern "C" fn jscc_config_symbols(
    cfg: *const JsccConfig,
    level: usize,
    out: *mut usize,
) -> JsccStatus {
    ffi(|| {
        let cfg = require(cfg, "cfg")?;
        let out = require_mut(out, "out")?;
        let dims = cfg.inner.dimensions()?;
        *out = dims.level(level)?.complex_symbols;
        Ok(())
    })
}

/// Copy the config hash (hex) into a caller buffer of `cap` bytes
/// (NUL-terminated; 65 bytes suffice).
#[no_mangle]
pub unsafe extern "C" fn jscc_config_hash(
    cfg: *const JsccConfig,
    buf: *mut c_char,
    cap: usize,
) -> JsccStatus {
    ffi(|| {
        let cfg = require(cfg, "cfg")?;
        if buf.is_null() {
            return Err(null_arg("buf"));
        }
        let hash = cfg.inner.config_hash();
        if cap < hash.len() + 1 {
            return Err(invalid(format!(
                "buffer of {cap} bytes cannot hold a {}-byte hash",
                hash.len() + 1
            )));
        }
        std::ptr::copy_nonoverlapping(hash.as_ptr() as *const c_char, buf, hash.len());
        *buf.add(hash.len()) = 0;
        Ok(())
    })
}

// ---------------------------------------------------------------------------
// Pure helpers
// ---------------------------------------------------------------------------

/// Loss weight for a PSNR gap of `delta_db` under the clipped exponential
/// policy.
#[no_mangle]
pub extern "C" fn jscc_weight(delta_db: f64, alpha: f64, beta: f64, gamma: f64) -> f64 {
    jscc_core::dwa::dwa_weight(delta_db, alpha, beta, gamma)
}

/// Error-free bits a capacity-achieving code delivers for
/// `rho * source_dim` complex channel uses at `snr_db`.
#[no_mangle]
pub extern "C" fn jscc_capacity_bits(rho: f64, source_dim: usize, snr_db: f64) -> u64 {
    jscc_core::baseline::capacity_bit_budget(rho, source_dim, snr_db)
}

/// Complex noise variance for a given SNR in dB (unit signal power).
#[no_mangle]
pub extern "C" fn jscc_noise_variance(snr_db: f64) -> f64 {
    jscc_core::channel::noise_variance(snr_db)
}

// ---------------------------------------------------------------------------
// Channel operations on raw buffers
// ---------------------------------------------------------------------------

/// Scale `buf` (interleaved re/im pairs, so `len` must be even) to unit
/// average power per complex symbol.
#[no_mangle]
pub unsafe extern "C" fn jscc_normalize_power(buf: *mut f32, len: usize) -> JsccStatus {
    ffi(|| {
        let buf = require_slice_mut(buf, len, "buf")?;
        normalize_power_slice(buf)?;
        Ok(())
    })
}

/// Like [`jscc_normalize_power`], but each of `blocks` equal consecutive
/// blocks is normalized independently.
#[no_mangle]
pub unsafe extern "C" fn jscc_normalize_power_blocks(
    buf: *mut f32,
    len: usize,
    blocks: usize,
) -> JsccStatus {
    ffi(|| {
        let buf = require_slice_mut(buf, len, "buf")?;
        normalize_power_blocks_slice(buf, blocks)?;
        Ok(())
    })
}

/// Add complex white Gaussian noise at `snr_db` (assuming unit signal
/// power), seeded deterministically.
#[no_mangle]
pub unsafe extern "C" fn jscc_awgn(
    buf: *mut f32,
    len: usize,
    snr_db: f64,
    seed: u64,
) -> JsccStatus {
    ffi(|| {
        let buf = require_slice_mut(buf, len, "buf")?;
        awgn_slice(buf, snr_db, seed)?;
        Ok(())
    })
}

/// PSNR in dB between two equal-length buffers on the [0, 1] pixel scale.
#[no_mangle]
pub unsafe extern "C" fn jscc_psnr(
    a: *const f32,
    b: *const f32,
    len: usize,
    out: *mut f64,
) -> JsccStatus {
    ffi(|| {
        let a = require_slice(a, len, "a")?;
        let b = require_slice(b, len, "b")?;
        let out = require_mut(out, "out")?;
        if len == 0 {
            return Err(invalid("buffers must be non-empty"));
        }
        let mse: f64 = a
            .iter()
            .zip(b)
            .map(|(&x, &y)| {
                let d = (x as f64 - y as f64) * 255.0;
                d * d
            })
            .sum::<f64>()
            / len as f64;
        *out = if mse == 0.0 { f64::INFINITY } else { 10.0 * (255.0 * 255.0 / mse).log10() };
        Ok(())
    })
}

// ---------------------------------------------------------------------------
// Codec handles
// ---------------------------------------------------------------------------

/// Load a trained codec from a run directory (`config.toml` +
/// `best.safetensors`).
#[no_mangle]
pub unsafe extern "C" fn jscc_codec_open(
    run_dir: *const c_char,
    out: *mut *mut JsccCodec,
) -> JsccStatus {
    ffi(|| {
        let dir = require_str(run_dir, "run_dir")?;
        let out = require_mut(out, "out")?;
        let (codec, _meta) = load_codec(Path::new(dir))?;
        *out = Box::into_raw(Box::new(JsccCodec { codec }));
        Ok(())
    })
}

/// Release a codec handle (null is a no-op).
#[no_mangle]
pub unsafe extern "C" fn jscc_codec_free(codec: *mut JsccCodec) {
    if !codec.is_null() {
        drop(Box::from_raw(codec));
    }
}

/// `f32` elements per image (channels x height x width).
#[no_mangle]
pub unsafe extern "C" fn jscc_codec_image_elems(
    codec: *const JsccCodec,
    out: *mut usize,
) -> JsccStatus {
    ffi(|| {
        let codec = require(codec, "codec")?;
        let [c, h, w] = codec.codec.config().model.image;
        *require_mut(out, "out")? = c * h * w;
        Ok(())
    })
}

/// `f32` elements (interleaved re/im) per image on the channel at a level.
#[no_mangle]
pub unsafe extern "C" fn jscc_codec_symbol_elems(
    codec: *const JsccCodec,
    level: usize,
    out: *mut usize,
) -> JsccStatus {
    ffi(|| {
        let codec = require(codec, "codec")?;
        *require_mut(out, "out")? = codec.codec.dims().level(level)?.real_len;
        Ok(())
    })
}

unsafe fn image_tensor(
    codec: &Codec,
    pixels: *const f32,
    batch: usize,
) -> Result<Tensor, Failure> {
    if batch == 0 {
        return Err(invalid("batch must be at least 1"));
    }
    let [c, h, w] = codec.config().model.image;
    let len = batch * c * h * w;
    let data = require_slice(pixels, len, "pixels")?;
    Ok(Tensor::from_vec(data.to_vec(), (batch, c, h, w), &Device::Cpu)?)
}

/// Encode a batch of images (`batch * image_elems` floats in [0, 1]) to
/// masked, power-normalized channel symbols (`batch * symbol_elems(level)`
/// floats).
#[no_mangle]
pub unsafe extern "C" fn jscc_codec_encode(
    codec: *const JsccCodec,
    pixels: *const f32,
    batch: usize,
    level: usize,
    snr_db: f64,
    out: *mut f32,
    out_len: usize,
) -> JsccStatus {
    ffi(|| {
        let handle = require(codec, "codec")?;
        let codec = &handle.codec;
        let images = image_tensor(codec, pixels, batch)?;
        let si = SideInfo::new(codec.config(), level, snr_db)?;
        let z = codec.encode(&images, &si)?;
        let masked =
            jscc_core::codec::mask_codeword(&z, level, codec.scheme(), codec.dims())?;
        let sent = jscc_core::codec::normalize_masked(&masked, codec.scheme(), codec.dims())?;
        let flat = sent.tensor().flatten_all()?.to_vec1::<f32>()?;
        if out_len != flat.len() {
            return Err(invalid(format!(
                "out_len {out_len} != {} (batch {batch} x {} symbol elements)",
                flat.len(),
                flat.len() / batch
            )));
        }
        require_slice_mut(out, out_len, "out")?.copy_from_slice(&flat);
        Ok(())
    })
}

/// Decode received channel symbols (`batch * symbol_elems(level)` floats)
/// back to images (`batch * image_elems` floats, clamped to [0, 1]).
#[no_mangle]
pub unsafe extern "C" fn jscc_codec_decode(
    codec: *const JsccCodec,
    symbols: *const f32,
    batch: usize,
    level: usize,
    snr_db: f64,
    out: *mut f32,
    out_len: usize,
) -> JsccStatus {
    ffi(|| {
        let handle = require(codec, "codec")?;
        let codec = &handle.codec;
        if batch == 0 {
            return Err(invalid("batch must be at least 1"));
        }
        let reals = codec.dims().level(level)?.real_len;
        let data = require_slice(symbols, batch * reals, "symbols")?;
        let received = Tensor::from_vec(data.to_vec(), (batch, reals), &Device::Cpu)?;
        let si = SideInfo::new(codec.config(), level, snr_db)?;
        let padded = pad_received(&received, level, codec.scheme(), codec.dims())?;
        let decoded = codec.decode(&padded, &si)?;
        let flat = decoded.flatten_all()?.to_vec1::<f32>()?;
        if out_len != flat.len() {
            return Err(invalid(format!("out_len {out_len} != {}", flat.len())));
        }
        require_slice_mut(out, out_len, "out")?.copy_from_slice(&flat);
        Ok(())
    })
}

/// Full chain at one grid point: encode, mask, normalize, AWGN at `snr_db`
/// (seeded by `noise_seed`), zero-pad, decode. Input and output are
/// `batch * image_elems` floats.
#[no_mangle]
pub unsafe extern "C" fn jscc_codec_transmit(
    codec: *const JsccCodec,
    pixels: *const f32,
    batch: usize,
    level: usize,
    snr_db: f64,
    noise_seed: u64,
    out: *mut f32,
    out_len: usize,
) -> JsccStatus {
    ffi(|| {
        let handle = require(codec, "codec")?;
        let codec = &handle.codec;
        let images = image_tensor(codec, pixels, batch)?;
        let si = SideInfo::new(codec.config(), level, snr_db)?;
        let mut noise = jscc_core::channel::NoiseModel::new(snr_db, noise_seed);
        let decoded = codec.run_point(&images, &si, &mut noise)?;
        let flat = decoded.flatten_all()?.to_vec1::<f32>()?;
        if out_len != flat.len() {
            return Err(invalid(format!("out_len {out_len} != {}", flat.len())));
        }
        require_slice_mut(out, out_len, "out")?.copy_from_slice(&flat);
        Ok(())
    })
}
