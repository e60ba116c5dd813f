//! C ABI over the voicecloak toolkit.
//!
//! Objects cross the boundary as opaque handles (`VcWaveform`, `VcEncoder`)
//! that the caller releases with the matching `*_free`. Every fallible call
//! returns a `VcStatus`; on failure a message is available from
//! `vc_last_error_message` on the same thread until the next failing call.
//! Panics never unwind into C, they are reported as `VC_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use voicecloak::attack::{AttackConfig, Method, ProtectOptions, Protector};
use voicecloak::audio_io::{read_wav, resample_linear, write_wav, Waveform, CANONICAL_RATE};
use voicecloak::encoder::{init_random, load_weights, save_weights, Embedding, EncoderConfig};
use voicecloak::metrics::{compute_eer, delta_cosd, snr_db};
use voicecloak::spectral::StftConfig;
use voicecloak::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VcStatus {
    Ok = 0,
    /// A required pointer argument was NULL.
    NullPointer = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// Bad configuration, shape or value.
    InvalidArgument = 3,
    Io = 4,
    /// Malformed WAV, weight file or JSON.
    Format = 5,
    /// Zero-energy signal or near-zero vector norm.
    Numeric = 6,
    /// The output buffer is smaller than required; nothing was written.
    BufferTooSmall = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VcMethod {
    Fgsm = 0,
    Ifgsm = 1,
    Gaussian = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VcProtectConfig {
    pub method: VcMethod,
    /// L-infinity budget on the STFT magnitude.
    pub epsilon: f64,
    /// I-FGSM step size.
    pub alpha: f64,
    /// I-FGSM iteration count.
    pub iterations: u32,
    /// Noise level of the Gaussian baseline, in dB.
    pub target_snr_db: f64,
    pub seed: u64,
    pub clamp_nonnegative: bool,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VcProtectReport {
    /// SNR of the output against the (resampled) input; infinite when identical.
    pub snr_db: f64,
    /// ΔCosD between clean and protected audio, re-analyzed.
    pub delta_cosd: f64,
    /// ΔCosD on the perturbed magnitude; NaN for the Gaussian baseline.
    pub magnitude_delta_cosd: f64,
    /// Loss after the last step; NaN for the Gaussian baseline.
    pub final_loss: f64,
    pub num_samples: usize,
}

/// Mono audio buffer.
pub struct VcWaveform {
    inner: Waveform,
}

/// Encoder weights plus the analysis front end.
pub struct VcEncoder {
    inner: Protector,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(VcStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io { .. } => VcStatus::Io,
            Error::UnsupportedEncoding { .. }
            | Error::TruncatedWav { .. }
            | Error::Wav(_)
            | Error::VersionMismatch { .. }
            | Error::BadTensor { .. }
            | Error::Header(_)
            | Error::MalformedLine { .. } => VcStatus::Format,
            Error::ZeroEnergy | Error::NearZeroNorm(_) => VcStatus::Numeric,
            _ => VcStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn fail(status: VcStatus, msg: impl Into<String>) -> Failure {
    Failure(status, msg.into())
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> VcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => VcStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("internal panic: {msg}"));
            VcStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| fail(VcStatus::NullPointer, format!("`{name}` is NULL")))
}

unsafe fn out_ptr<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut()
        .ok_or_else(|| fail(VcStatus::NullPointer, format!("`{name}` is NULL")))
}

unsafe fn path_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(fail(VcStatus::NullPointer, format!("`{name}` is NULL")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(VcStatus::InvalidUtf8, format!("`{name}` is not valid UTF-8")))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, name: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(VcStatus::NullPointer, format!("`{name}` is NULL")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn copy_out(values: &[f64], out: *mut f64, capacity: usize) -> Result<(), Failure> {
    if capacity < values.len() {
        return Err(fail(
            VcStatus::BufferTooSmall,
            format!("buffer holds {capacity} values, need {}", values.len()),
        ));
    }
    if values.is_empty() {
        return Ok(());
    }
    if out.is_null() {
        return Err(fail(VcStatus::NullPointer, "`out` is NULL"));
    }
    ptr::copy_nonoverlapping(values.as_ptr(), out, values.len());
    Ok(())
}

fn canonical(w: &Waveform) -> Result<std::borrow::Cow<'_, Waveform>, Failure> {
    if w.sample_rate() == CANONICAL_RATE {
        Ok(std::borrow::Cow::Borrowed(w))
    } else {
        Ok(std::borrow::Cow::Owned(resample_linear(w, CANONICAL_RATE)?))
    }
}

fn boxed<T>(value: T) -> *mut T {
    Box::into_raw(Box::new(value))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn vc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failure on this thread, or NULL. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn vc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Static name of a status code.
#[no_mangle]
pub extern "C" fn vc_status_name(status: VcStatus) -> *const c_char {
    let s: &'static str = match status {
        VcStatus::Ok => "ok\0",
        VcStatus::NullPointer => "null pointer\0",
        VcStatus::InvalidUtf8 => "invalid utf-8\0",
        VcStatus::InvalidArgument => "invalid argument\0",
        VcStatus::Io => "i/o error\0",
        VcStatus::Format => "format error\0",
        VcStatus::Numeric => "numeric error\0",
        VcStatus::BufferTooSmall => "buffer too small\0",
        VcStatus::Panic => "internal panic\0",
    };
    s.as_ptr().cast()
}

/// Copies `len` samples (nominally in [-1, 1]) into a new waveform.
///
/// # Safety
/// `samples` must point to `len` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vc_waveform_from_samples(
    samples: *const f64,
    len: usize,
    sample_rate: u32,
    out: *mut *mut VcWaveform,
) -> VcStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let data = slice_arg(samples, len, "samples")?;
        *out = boxed(VcWaveform {
            inner: Waveform::new(data.to_vec(), sample_rate)?,
        });
        Ok(())
    })
}

/// Reads a mono WAV file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vc_waveform_read(path: *const c_char, out: *mut *mut VcWaveform) -> VcStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = boxed(VcWaveform {
            inner: read_wav(path_arg(path, "path")?)?,
        });
        Ok(())
    })
}

/// Writes a 16-bit PCM WAV file.
///
/// # Safety
/// `wave` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn vc_waveform_write(wave: *const VcWaveform, path: *const c_char) -> VcStatus {
    guard(|| {
        let w = deref(wave, "wave")?;
        write_wav(path_arg(path, "path")?, &w.inner)?;
        Ok(())
    })
}

/// Number of samples; 0 for NULL.
///
/// # Safety
/// `wave` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn vc_waveform_len(wave: *const VcWaveform) -> usize {
    wave.as_ref().map_or(0, |w| w.inner.len())
}

/// Sample rate in Hz; 0 for NULL.
///
/// # Safety
/// `wave` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn vc_waveform_sample_rate(wave: *const VcWaveform) -> u32 {
    wave.as_ref().map_or(0, |w| w.inner.sample_rate())
}

/// Copies the samples into `out`, which must hold `vc_waveform_len` values.
///
/// # Safety
/// `wave` must be a live handle; `out` must point to `capacity` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn vc_waveform_copy_samples(wave: *const VcWaveform, out: *mut f64, capacity: usize) -> VcStatus {
    guard(|| copy_out(deref(wave, "wave")?.inner.samples(), out, capacity))
}

/// Releases a waveform; NULL is ignored.
///
/// # Safety
/// `wave` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn vc_waveform_free(wave: *mut VcWaveform) {
    if !wave.is_null() {
        drop(Box::from_raw(wave));
    }
}

fn new_encoder(ws: voicecloak::encoder::WeightStore) -> Result<*mut VcEncoder, Failure> {
    Ok(boxed(VcEncoder {
        inner: Protector::new(ws, StftConfig::default())?,
    }))
}

/// Random He-initialized encoder. `config_json` may be NULL for the default
/// architecture.
///
/// # Safety
/// `config_json` must be NULL or a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vc_encoder_init(config_json: *const c_char, seed: u64, out: *mut *mut VcEncoder) -> VcStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let cfg: EncoderConfig = if config_json.is_null() {
            EncoderConfig::default()
        } else {
            serde_json::from_str(path_arg(config_json, "config_json")?)
                .map_err(|e| fail(VcStatus::Format, format!("encoder config: {e}")))?
        };
        *out = new_encoder(init_random(&cfg, seed)?)?;
        Ok(())
    })
}

/// Loads a weight file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vc_encoder_load(path: *const c_char, out: *mut *mut VcEncoder) -> VcStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = new_encoder(load_weights(path_arg(path, "path")?)?)?;
        Ok(())
    })
}

/// Saves the weights.
///
/// # Safety
/// `encoder` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn vc_encoder_save(encoder: *const VcEncoder, path: *const c_char) -> VcStatus {
    guard(|| {
        let e = deref(encoder, "encoder")?;
        save_weights(e.inner.weights(), path_arg(path, "path")?)?;
        Ok(())
    })
}

/// Embedding dimension; 0 for NULL.
///
/// # Safety
/// `encoder` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn vc_encoder_embed_dim(encoder: *const VcEncoder) -> usize {
    encoder.as_ref().map_or(0, |e| e.inner.weights().embed_dim())
}

/// Releases an encoder; NULL is ignored.
///
/// # Safety
/// `encoder` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn vc_encoder_free(encoder: *mut VcEncoder) {
    if !encoder.is_null() {
        drop(Box::from_raw(encoder));
    }
}

/// Speaker embedding of `wave` (resampled to 16 kHz if needed) into `out`,
/// which must hold `vc_encoder_embed_dim` values.
///
/// # Safety
/// Handles must be live; `out` must point to `capacity` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn vc_embed(
    encoder: *const VcEncoder,
    wave: *const VcWaveform,
    out: *mut f64,
    capacity: usize,
) -> VcStatus {
    guard(|| {
        let e = deref(encoder, "encoder")?;
        let w = canonical(&deref(wave, "wave")?.inner)?;
        copy_out(e.inner.embed_waveform(&w)?.values(), out, capacity)
    })
}

/// Defaults used by the command-line tool: I-FGSM, ε = 0.02, α = 0.0004,
/// 50 iterations, 32 dB for the Gaussian baseline.
#[no_mangle]
pub extern "C" fn vc_protect_config_default() -> VcProtectConfig {
    let d = ProtectOptions::default();
    VcProtectConfig {
        method: VcMethod::Ifgsm,
        epsilon: d.attack.epsilon,
        alpha: d.attack.alpha,
        iterations: d.attack.iterations as u32,
        target_snr_db: d.target_snr_db,
        seed: d.seed,
        clamp_nonnegative: d.attack.clamp_nonnegative,
    }
}

/// Protects `wave` (resampled to 16 kHz if needed). The output is a new
/// 16 kHz waveform; `report` may be NULL.
///
/// # Safety
/// Handles and `config` must be live; `out` must be writable; `report` must
/// be NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn vc_protect(
    encoder: *const VcEncoder,
    wave: *const VcWaveform,
    config: *const VcProtectConfig,
    out: *mut *mut VcWaveform,
    report: *mut VcProtectReport,
) -> VcStatus {
    guard(|| {
        let e = deref(encoder, "encoder")?;
        let w = canonical(&deref(wave, "wave")?.inner)?;
        let c = deref(config, "config")?;
        let out = out_ptr(out, "out")?;
        let opts = ProtectOptions {
            method: match c.method {
                VcMethod::Fgsm => Method::Fgsm,
                VcMethod::Ifgsm => Method::Ifgsm,
                VcMethod::Gaussian => Method::Gaussian,
            },
            attack: AttackConfig {
                epsilon: c.epsilon,
                alpha: c.alpha,
                iterations: c.iterations as usize,
                clamp_nonnegative: c.clamp_nonnegative,
            },
            target_snr_db: c.target_snr_db,
            seed: c.seed,
        };
        if opts.method == Method::Ifgsm {
            opts.attack.validate()?;
        }
        let protected = e.inner.protect(&w, &opts)?;
        if let Some(r) = report.as_mut() {
            let rep = &protected.report;
            *r = VcProtectReport {
                snr_db: rep.snr_db.unwrap_or(f64::INFINITY),
                delta_cosd: rep.delta_cosd,
                magnitude_delta_cosd: rep.magnitude_delta_cosd.unwrap_or(f64::NAN),
                final_loss: rep.loss_trajectory.last().copied().unwrap_or(f64::NAN),
                num_samples: rep.num_samples,
            };
        }
        *out = boxed(VcWaveform {
            inner: protected.waveform,
        });
        Ok(())
    })
}

/// SNR of `test` against `reference` in dB; infinite when identical.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vc_snr_db(reference: *const VcWaveform, test: *const VcWaveform, out: *mut f64) -> VcStatus {
    guard(|| {
        let v = snr_db(&deref(reference, "reference")?.inner, &deref(test, "test")?.inner)?;
        *out_ptr(out, "out")? = v;
        Ok(())
    })
}

/// ΔCosD (negative cosine similarity) between two embeddings of length `len`.
///
/// # Safety
/// `e` and `e_tilde` must point to `len` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vc_delta_cosd(e: *const f64, e_tilde: *const f64, len: usize, out: *mut f64) -> VcStatus {
    guard(|| {
        let a = Embedding::new(slice_arg(e, len, "e")?.to_vec());
        let b = Embedding::new(slice_arg(e_tilde, len, "e_tilde")?.to_vec());
        *out_ptr(out, "out")? = delta_cosd(&a, &b)?;
        Ok(())
    })
}

/// Equal error rate (fraction in [0, 1]) and its threshold.
///
/// # Safety
/// Score arrays must hold the given counts; `eer` must be writable;
/// `threshold` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn vc_eer(
    target_scores: *const f64,
    n_target: usize,
    nontarget_scores: *const f64,
    n_nontarget: usize,
    eer: *mut f64,
    threshold: *mut f64,
) -> VcStatus {
    guard(|| {
        let r = compute_eer(
            slice_arg(target_scores, n_target, "target_scores")?,
            slice_arg(nontarget_scores, n_nontarget, "nontarget_scores")?,
        )?;
        *out_ptr(eer, "eer")? = r.eer;
        if let Some(t) = threshold.as_mut() {
            *t = r.threshold;
        }
        Ok(())
    })
}
