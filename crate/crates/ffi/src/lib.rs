//! C ABI over the `semtx` chain.
//!
//! Objects cross the boundary as opaque handles: a codec from
//! `semtx_codec_load` (released by `semtx_codec_free`) and an emulator from
//! `semtx_emulator_start` (released by `semtx_emulator_stop`). Every fallible call returns a
//! [`SemtxStatus`]; the message of the last failure on the calling thread is
//! available from [`semtx_last_error`]. Panics are caught at the boundary and
//! reported as `SEMTX_STATUS_PANIC`.
//!
//! Complex buffers are interleaved `double` pairs `(re, im)`; images are
//! 8-bit, row-major, channels interleaved.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use num_complex::Complex64;

use semtx::baseline::Decision;
use semtx::channel::ChannelSpec;
use semtx::codec::Checkpoint;
use semtx::corpus::CorpusItem;
use semtx::emulator::{EmulatorHandle, EmulatorServer};
use semtx::frame::{build_frames, frame_capacity, frame_len, parse_frame, synchronize};
use semtx::harness::{run_e2e, Codec, PowerMode, RunSettings, Scheme, Transport};
use semtx::image::{BoundingBox, ImageTensor, RegionAnnotation};
use semtx::link::CsiMode;
use semtx::metrics::{psnr, ssim};

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SemtxStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    ShapeMismatch = 3,
    OutOfRange = 4,
    Config = 5,
    Capacity = 6,
    NotFound = 7,
    Malformed = 8,
    Timeout = 9,
    Io = 10,
    Diverged = 11,
    /// The output buffer is too small; the required length was written.
    BufferTooSmall = 12,
    Panic = 13,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SemtxScheme {
    Jscc = 0,
    JsccRandomSnr = 1,
    Baseline = 2,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SemtxChannel {
    Awgn = 0,
    RayleighFlat = 1,
    Multipath = 2,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SemtxPower {
    Off = 0,
    Uniform = 1,
    Learned = 2,
}

/// One end-to-end run. Use `semtx_run_config_default` to fill defaults.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct SemtxRunConfig {
    pub scheme: SemtxScheme,
    pub channel: SemtxChannel,
    /// Paths of the multipath channel; ignored otherwise.
    pub num_paths: u32,
    /// `INFINITY` for a noiseless channel.
    pub snr_db: f64,
    /// Fixed mask ratio in `[0, 0.7]`; negative selects it from SNR and
    /// object area.
    pub mask_ratio: f64,
    /// Nonzero for perfect CSI, zero for pilot-based estimates.
    pub perfect_csi: u8,
    pub power: SemtxPower,
    /// Nonzero for soft-decision decoding in the baseline.
    pub soft_decisions: u8,
    pub patch_size: u32,
    pub seed: u64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct SemtxBox {
    pub class_id: u8,
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct SemtxReport {
    pub psnr_db: f64,
    pub ssim: f64,
    pub cs_proxy: f64,
    pub psnr_cs: f64,
    pub ssim_cs: f64,
    /// Mask ratio actually applied.
    pub mask_ratio: f64,
    /// 1 if the image was delivered (always 1 for the learned codec).
    pub delivered: u8,
}

/// Opaque trained codec.
pub struct SemtxCodec(Codec);

/// Opaque running emulator.
pub struct SemtxEmulator(EmulatorHandle);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &semtx::Error) -> SemtxStatus {
    use semtx::Error as E;
    match e {
        E::InvalidInput(_) => SemtxStatus::InvalidInput,
        E::ShapeMismatch { .. } => SemtxStatus::ShapeMismatch,
        E::OutOfRange(_) => SemtxStatus::OutOfRange,
        E::Config(_) => SemtxStatus::Config,
        E::Diverged { .. } => SemtxStatus::Diverged,
        E::Capacity(_) => SemtxStatus::Capacity,
        E::NotFound(_) => SemtxStatus::NotFound,
        E::Malformed(_) => SemtxStatus::Malformed,
        E::Timeout(_) => SemtxStatus::Timeout,
        E::Io(_) => SemtxStatus::Io,
    }
}

struct Fail(SemtxStatus, String);

impl From<semtx::Error> for Fail {
    fn from(e: semtx::Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn fail<T>(status: SemtxStatus, msg: impl Into<String>) -> Result<T, Fail> {
    Err(Fail(status, msg.into()))
}

/// Runs `f`, converting errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SemtxStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SemtxStatus::Ok,
        Ok(Err(Fail(s, m))) => {
            set_error(&m);
            s
        }
        Err(p) => {
            let m = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(&format!("panic: {m}"));
            SemtxStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, n: usize) -> Result<&'a [T], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return fail(SemtxStatus::NullPointer, "null input buffer");
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn out<'a, T>(p: *mut T) -> Result<&'a mut T, Fail> {
    p.as_mut()
        .ok_or(Fail(SemtxStatus::NullPointer, "null output pointer".into()))
}

unsafe fn c_str<'a>(p: *const c_char) -> Result<&'a str, Fail> {
    if p.is_null() {
        return fail(SemtxStatus::NullPointer, "null string");
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(SemtxStatus::InvalidInput, "string is not UTF-8".into()))
}

fn to_complex(v: &[f64]) -> Result<Vec<Complex64>, Fail> {
    if !v.len().is_multiple_of(2) {
        return fail(
            SemtxStatus::InvalidInput,
            "interleaved complex buffer has odd length",
        );
    }
    Ok(v.chunks_exact(2)
        .map(|c| Complex64::new(c[0], c[1]))
        .collect())
}

/// Copies `src` into a caller buffer of `cap` complex values.
unsafe fn write_complex(
    src: &[Complex64],
    dst: *mut f64,
    cap: usize,
    len: *mut usize,
) -> Result<(), Fail> {
    *out(len)? = src.len();
    if src.len() > cap {
        return fail(
            SemtxStatus::BufferTooSmall,
            format!("{} complex values needed, buffer holds {cap}", src.len()),
        );
    }
    if src.is_empty() {
        return Ok(());
    }
    if dst.is_null() {
        return fail(SemtxStatus::NullPointer, "null output buffer");
    }
    let d = std::slice::from_raw_parts_mut(dst, 2 * src.len());
    for (i, s) in src.iter().enumerate() {
        d[2 * i] = s.re;
        d[2 * i + 1] = s.im;
    }
    Ok(())
}

unsafe fn image(pixels: *const u8, h: u32, w: u32, c: u32) -> Result<ImageTensor, Fail> {
    let n = h as usize * w as usize * c as usize;
    Ok(ImageTensor::new(
        h as usize,
        w as usize,
        c as usize,
        slice(pixels, n)?.to_vec(),
    )?)
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn semtx_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread. The pointer stays valid
/// until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn semtx_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

#[no_mangle]
pub extern "C" fn semtx_run_config_default() -> SemtxRunConfig {
    SemtxRunConfig {
        scheme: SemtxScheme::Jscc,
        channel: SemtxChannel::Awgn,
        num_paths: 5,
        snr_db: 10.0,
        mask_ratio: -1.0,
        perfect_csi: 0,
        power: SemtxPower::Off,
        soft_decisions: 0,
        patch_size: 16,
        seed: 0,
    }
}

/// Loads a checkpoint written by `semtx train`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out_codec` must be writable.
#[no_mangle]
pub unsafe extern "C" fn semtx_codec_load(
    path: *const c_char,
    out_codec: *mut *mut SemtxCodec,
) -> SemtxStatus {
    guard(|| {
        let slot = out(out_codec)?;
        *slot = ptr::null_mut();
        let ckpt = Checkpoint::load(c_str(path)?)?;
        *slot = Box::into_raw(Box::new(SemtxCodec(ckpt.into())));
        Ok(())
    })
}

/// # Safety
/// `codec` must come from `semtx_codec_load` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn semtx_codec_free(codec: *mut SemtxCodec) {
    if !codec.is_null() {
        drop(Box::from_raw(codec));
    }
}

/// Patch side, patches per image and channels the codec was trained for.
/// Images must tile into exactly `n_patches` patches of that side.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn semtx_codec_layout(
    codec: *const SemtxCodec,
    out_patch_size: *mut u32,
    out_n_patches: *mut u32,
    out_channels: *mut u32,
) -> SemtxStatus {
    guard(|| {
        let c = &codec
            .as_ref()
            .ok_or(Fail(SemtxStatus::NullPointer, "null codec".into()))?
            .0;
        let d = c.model.dims;
        *out(out_patch_size)? = d.patch_size as u32;
        *out(out_n_patches)? = d.n_patches as u32;
        *out(out_channels)? = d.channels as u32;
        Ok(())
    })
}

fn settings(cfg: &SemtxRunConfig) -> Result<RunSettings, Fail> {
    let channel = match cfg.channel {
        SemtxChannel::Awgn => ChannelSpec::awgn(cfg.snr_db),
        SemtxChannel::RayleighFlat => ChannelSpec::rayleigh_flat(cfg.snr_db),
        SemtxChannel::Multipath => ChannelSpec::multipath(cfg.num_paths as usize, cfg.snr_db),
    };
    channel.validate()?;
    Ok(RunSettings {
        scheme: match cfg.scheme {
            SemtxScheme::Jscc => Scheme::Jscc,
            SemtxScheme::JsccRandomSnr => Scheme::JsccRandomSnr,
            SemtxScheme::Baseline => Scheme::Baseline,
        },
        channel,
        mr: (cfg.mask_ratio >= 0.0).then_some(cfg.mask_ratio),
        csi: if cfg.perfect_csi != 0 {
            CsiMode::Perfect
        } else {
            CsiMode::LeastSquares
        },
        power: match cfg.power {
            SemtxPower::Off => PowerMode::Off,
            SemtxPower::Uniform => PowerMode::Uniform,
            SemtxPower::Learned => PowerMode::Learned,
        },
        decision: if cfg.soft_decisions != 0 {
            Decision::Soft
        } else {
            Decision::Hard
        },
        transport: Transport::InProcess,
        patch_size: cfg.patch_size as usize,
        seed: cfg.seed,
        image_index: 0,
    })
}

/// Sends one image through the full chain and writes the reconstruction
/// (same shape as the input) and its scores. `codec` may be null for the
/// baseline scheme; `boxes` may be null when `n_boxes` is 0.
///
/// # Safety
/// `pixels` and `out_pixels` must hold `height·width·channels` bytes;
/// `boxes` must hold `n_boxes` entries.
#[no_mangle]
pub unsafe extern "C" fn semtx_transmit_image(
    codec: *const SemtxCodec,
    config: *const SemtxRunConfig,
    pixels: *const u8,
    height: u32,
    width: u32,
    channels: u32,
    boxes: *const SemtxBox,
    n_boxes: usize,
    out_pixels: *mut u8,
    out_report: *mut SemtxReport,
) -> SemtxStatus {
    guard(|| {
        let cfg = config
            .as_ref()
            .ok_or(Fail(SemtxStatus::NullPointer, "null config".into()))?;
        let img = image(pixels, height, width, channels)?;
        let regions = RegionAnnotation::new(
            slice(boxes, n_boxes)?
                .iter()
                .map(|b| BoundingBox {
                    class_id: b.class_id,
                    x: b.x as usize,
                    y: b.y as usize,
                    w: b.w as usize,
                    h: b.h as usize,
                })
                .collect(),
        );
        regions.validate(img.height(), img.width())?;
        let report = out(out_report)?;
        if out_pixels.is_null() {
            return fail(SemtxStatus::NullPointer, "null output image");
        }
        let item = CorpusItem {
            name: String::new(),
            image: img,
            regions,
        };
        let codec = codec.as_ref().map(|c| &c.0);
        let o = run_e2e(&item, codec, &settings(cfg)?)?;
        std::slice::from_raw_parts_mut(out_pixels, item.image.len())
            .copy_from_slice(o.reconstruction.pixels());
        *report = SemtxReport {
            psnr_db: o.report.psnr_db,
            ssim: o.report.ssim,
            cs_proxy: o.report.cs_proxy,
            psnr_cs: o.report.psnr_cs,
            ssim_cs: o.report.ssim_cs,
            mask_ratio: o.row.mr,
            delivered: (o.row.status == semtx::baseline::BaselineStatus::Ok) as u8,
        };
        Ok(())
    })
}

/// PSNR in dB and SSIM of two equally shaped images.
///
/// # Safety
/// Both buffers must hold `height·width·channels` bytes.
#[no_mangle]
pub unsafe extern "C" fn semtx_image_quality(
    reference: *const u8,
    test: *const u8,
    height: u32,
    width: u32,
    channels: u32,
    out_psnr_db: *mut f64,
    out_ssim: *mut f64,
) -> SemtxStatus {
    guard(|| {
        let a = image(reference, height, width, channels)?;
        let b = image(test, height, width, channels)?;
        *out(out_psnr_db)? = psnr(&a, &b)?;
        *out(out_ssim)? = ssim(&a, &b)?;
        Ok(())
    })
}

/// Samples in one frame.
#[no_mangle]
pub extern "C" fn semtx_frame_len() -> usize {
    frame_len()
}

/// Data symbols carried by one frame.
#[no_mangle]
pub extern "C" fn semtx_frame_capacity() -> usize {
    frame_capacity()
}

/// Packs `n_symbols` complex symbols into back-to-back frames. On
/// `SEMTX_STATUS_BUFFER_TOO_SMALL`, `out_len` holds the needed length.
///
/// # Safety
/// `symbols` must hold `2·n_symbols` doubles and `out_samples` `2·out_cap`.
#[no_mangle]
pub unsafe extern "C" fn semtx_frame_pack(
    symbols: *const f64,
    n_symbols: usize,
    payload_type: u8,
    mr_index: u8,
    out_samples: *mut f64,
    out_cap: usize,
    out_len: *mut usize,
) -> SemtxStatus {
    guard(|| {
        let syms = to_complex(slice(symbols, 2 * n_symbols)?)?;
        let frames = build_frames(&syms, payload_type, mr_index)?;
        write_complex(&frames.concat(), out_samples, out_cap, out_len)
    })
}

/// Parses back-to-back frames and writes every data symbol. With `search`
/// nonzero each frame start is found by preamble search first.
///
/// # Safety
/// `samples` must hold `2·n_samples` doubles and `out_symbols` `2·out_cap`.
#[no_mangle]
pub unsafe extern "C" fn semtx_frame_unpack(
    samples: *const f64,
    n_samples: usize,
    search: u8,
    out_symbols: *mut f64,
    out_cap: usize,
    out_len: *mut usize,
) -> SemtxStatus {
    guard(|| {
        let s = to_complex(slice(samples, 2 * n_samples)?)?;
        let mut pos = 0;
        let mut syms = Vec::new();
        while s.len() - pos >= frame_len() {
            if search != 0 {
                pos += synchronize(&s[pos..], s.len() - pos - frame_len())?;
            }
            syms.extend(parse_frame(&s[pos..])?.symbols);
            pos += frame_len();
        }
        if syms.is_empty() {
            return fail(SemtxStatus::InvalidInput, "no complete frame in input");
        }
        write_complex(&syms, out_symbols, out_cap, out_len)
    })
}

/// Starts a channel emulator on `bind_addr` (e.g. `"127.0.0.1:0"`).
///
/// # Safety
/// `bind_addr` must be a NUL-terminated string; `out_emulator` writable.
#[no_mangle]
pub unsafe extern "C" fn semtx_emulator_start(
    bind_addr: *const c_char,
    out_emulator: *mut *mut SemtxEmulator,
) -> SemtxStatus {
    guard(|| {
        let slot = out(out_emulator)?;
        *slot = ptr::null_mut();
        let handle = EmulatorServer::bind(c_str(bind_addr)?)?.spawn()?;
        *slot = Box::into_raw(Box::new(SemtxEmulator(handle)));
        Ok(())
    })
}

/// UDP port the emulator listens on.
///
/// # Safety
/// `emulator` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn semtx_emulator_port(
    emulator: *const SemtxEmulator,
    out_port: *mut u16,
) -> SemtxStatus {
    guard(|| {
        let e = emulator
            .as_ref()
            .ok_or(Fail(SemtxStatus::NullPointer, "null emulator".into()))?;
        *out(out_port)? = e.0.addr().port();
        Ok(())
    })
}

/// Stops the emulator and releases the handle.
///
/// # Safety
/// `emulator` must come from `semtx_emulator_start` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn semtx_emulator_stop(emulator: *mut SemtxEmulator) -> SemtxStatus {
    if emulator.is_null() {
        return SemtxStatus::Ok;
    }
    let e = Box::from_raw(emulator);
    guard(move || Ok(e.0.shutdown()?))
}
