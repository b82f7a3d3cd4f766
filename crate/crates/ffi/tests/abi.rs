//! The exported functions called as a foreign caller would.

use std::ffi::{CStr, CString};
use std::process::Command;
use std::ptr;

use semtx::codec::{Checkpoint, CodecDims, CodecModel};
use semtx::corpus::synthetic_scene;
use semtx::harness::BANDWIDTH_RATIO;
use semtx_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(semtx_last_error()) }
        .to_string_lossy()
        .into_owned()
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(semtx_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn frames_round_trip_with_size_query() {
    let n = 6000;
    let symbols: Vec<f64> = (0..2 * n)
        .map(|i| {
            if i % 3 == 0 {
                0.9486832980505138
            } else {
                -0.31622776601683794
            }
        })
        .collect();
    let mut len = 0usize;
    let st = unsafe { semtx_frame_pack(symbols.as_ptr(), n, 1, 2, ptr::null_mut(), 0, &mut len) };
    assert_eq!(st, SemtxStatus::BufferTooSmall);
    assert_eq!(len, 2 * semtx_frame_len());
    let mut samples = vec![0.0; 2 * len];
    let st = unsafe {
        semtx_frame_pack(
            symbols.as_ptr(),
            n,
            1,
            2,
            samples.as_mut_ptr(),
            len,
            &mut len,
        )
    };
    assert_eq!(st, SemtxStatus::Ok);
    for search in [0u8, 1] {
        let mut back = vec![0.0; 4 * semtx_frame_capacity()];
        let mut got = 0usize;
        let st = unsafe {
            semtx_frame_unpack(
                samples.as_ptr(),
                len,
                search,
                back.as_mut_ptr(),
                back.len() / 2,
                &mut got,
            )
        };
        assert_eq!(st, SemtxStatus::Ok, "{}", last_error());
        assert_eq!(got, 2 * semtx_frame_capacity());
        assert!(symbols.iter().zip(&back).all(|(a, b)| (a - b).abs() < 1e-9));
    }
}

#[test]
fn errors_carry_status_and_message() {
    let mut len = 0usize;
    let st = unsafe { semtx_frame_pack(ptr::null(), 4, 0, 0, ptr::null_mut(), 0, &mut len) };
    assert_eq!(st, SemtxStatus::NullPointer);
    assert!(last_error().contains("null"));
    let st = unsafe { semtx_frame_pack(ptr::null(), 0, 16, 0, ptr::null_mut(), 0, &mut len) };
    assert_eq!(st, SemtxStatus::OutOfRange);
    let mut codec = ptr::null_mut();
    let path = CString::new("/nonexistent/semtx.ckpt").unwrap();
    assert_eq!(
        unsafe { semtx_codec_load(path.as_ptr(), &mut codec) },
        SemtxStatus::Io
    );
    assert!(codec.is_null());
    let a = [0u8; 12];
    let (mut p, mut s) = (0.0, 0.0);
    // 2×2 images are below the SSIM window
    assert_eq!(
        unsafe { semtx_image_quality(a.as_ptr(), a.as_ptr(), 2, 2, 3, &mut p, &mut s) },
        SemtxStatus::InvalidInput
    );
}

#[test]
fn baseline_and_codec_runs() {
    let item = synthetic_scene(64, 64, 4);
    let (h, w, c) = (64u32, 64u32, 3u32);
    let mut recon = vec![0u8; item.image.len()];
    let mut report = SemtxReport::default();
    let mut cfg = semtx_run_config_default();
    cfg.scheme = SemtxScheme::Baseline;
    cfg.snr_db = f64::INFINITY;
    let st = unsafe {
        semtx_transmit_image(
            ptr::null(),
            &cfg,
            item.image.pixels().as_ptr(),
            h,
            w,
            c,
            ptr::null(),
            0,
            recon.as_mut_ptr(),
            &mut report,
        )
    };
    assert_eq!(st, SemtxStatus::Ok, "{}", last_error());
    assert_eq!(report.delivered, 1);
    let (mut p, mut s) = (0.0, 0.0);
    unsafe {
        semtx_image_quality(
            item.image.pixels().as_ptr(),
            recon.as_ptr(),
            h,
            w,
            c,
            &mut p,
            &mut s,
        )
    };
    assert_eq!((p, s), (report.psnr_db, report.ssim));

    // the learned scheme needs a codec handle
    cfg.scheme = SemtxScheme::Jscc;
    let run = |cfg: &SemtxRunConfig,
               codec: *const SemtxCodec,
               recon: &mut [u8],
               report: &mut SemtxReport| unsafe {
        let b = SemtxBox {
            class_id: 1,
            x: 8,
            y: 8,
            w: 20,
            h: 20,
        };
        semtx_transmit_image(
            codec,
            cfg,
            item.image.pixels().as_ptr(),
            h,
            w,
            c,
            &b,
            1,
            recon.as_mut_ptr(),
            report,
        )
    };
    assert_eq!(
        run(&cfg, ptr::null(), &mut recon, &mut report),
        SemtxStatus::NotFound
    );

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.ckpt");
    let dims = CodecDims::for_image(64, 64, 3, 16, 32, BANDWIDTH_RATIO).unwrap();
    Checkpoint {
        model: CodecModel::new(dims, 1).unwrap(),
        adam: None,
        allocator: None,
    }
    .save(&path)
    .unwrap();
    let cpath = CString::new(path.to_str().unwrap()).unwrap();
    let mut codec = ptr::null_mut();
    assert_eq!(
        unsafe { semtx_codec_load(cpath.as_ptr(), &mut codec) },
        SemtxStatus::Ok
    );
    let (mut ps, mut np, mut ch) = (0, 0, 0);
    unsafe { semtx_codec_layout(codec, &mut ps, &mut np, &mut ch) };
    assert_eq!((ps, np, ch), (16, 16, 3));
    assert_eq!(
        run(&cfg, codec, &mut recon, &mut report),
        SemtxStatus::Ok,
        "{}",
        last_error()
    );
    assert_eq!(report.delivered, 1);
    cfg.power = SemtxPower::Learned;
    let st = run(&cfg, codec, &mut recon, &mut report);
    assert_eq!(st, SemtxStatus::NotFound, "no allocator in this checkpoint");
    unsafe { semtx_codec_free(codec) };
}

#[test]
fn emulator_lifecycle() {
    let addr = CString::new("127.0.0.1:0").unwrap();
    let mut emu = ptr::null_mut();
    assert_eq!(
        unsafe { semtx_emulator_start(addr.as_ptr(), &mut emu) },
        SemtxStatus::Ok
    );
    let mut port = 0u16;
    assert_eq!(
        unsafe { semtx_emulator_port(emu, &mut port) },
        SemtxStatus::Ok
    );
    assert_ne!(port, 0);
    assert_eq!(unsafe { semtx_emulator_stop(emu) }, SemtxStatus::Ok);
    let bad = CString::new("not an address").unwrap();
    assert_ne!(
        unsafe { semtx_emulator_start(bad.as_ptr(), &mut emu) },
        SemtxStatus::Ok
    );
    assert!(emu.is_null());
}

/// Compiles a C caller against the generated header and the static library.
#[test]
fn c_program_links_and_runs() {
    let Ok(cc) = Command::new("cc").arg("--version").output() else {
        eprintln!("no C compiler; skipping");
        return;
    };
    assert!(cc.status.success());
    let manifest = std::path::Path::new(env!("CARGO_MANIFEST_DIR"));
    let header_dir = manifest.join("include");
    // test binaries live in <target>/<profile>/deps
    let exe = std::env::current_exe().unwrap();
    let lib_dir = exe.parent().unwrap().parent().unwrap();
    if !lib_dir.join("libsemtx_ffi.a").exists() {
        eprintln!("static library not built; skipping");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(
        &src,
        r#"
#include <math.h>
#include <stdio.h>
#include <string.h>
#include "semtx.h"

int main(void) {
    double sym[2 * 100];
    for (int i = 0; i < 200; i++) sym[i] = (i % 2) ? 0.316227766016838 : -0.948683298050514;
    size_t len = 0;
    if (semtx_frame_pack(sym, 100, 0, 0, NULL, 0, &len) != SEMTX_STATUS_BUFFER_TOO_SMALL) return 1;
    if (len != semtx_frame_len()) return 2;
    static double frame[2 * 20000];
    if (semtx_frame_pack(sym, 100, 0, 0, frame, 20000, &len) != SEMTX_STATUS_OK) return 3;
    static double back[2 * 5000];
    size_t got = 0;
    if (semtx_frame_unpack(frame, len, 1, back, 5000, &got) != SEMTX_STATUS_OK) return 4;
    for (int i = 0; i < 200; i++) if (fabs(back[i] - sym[i]) > 1e-9) return 5;
    if (semtx_frame_pack(NULL, 3, 0, 0, NULL, 0, &len) != SEMTX_STATUS_NULL_POINTER) return 6;
    if (strlen(semtx_last_error()) == 0) return 7;
    SemtxRunConfig cfg = semtx_run_config_default();
    if (cfg.patch_size != 16 || cfg.mask_ratio >= 0) return 8;
    printf("ok %s\n", semtx_version());
    return 0;
}
"#,
    )
    .unwrap();
    let bin = dir.path().join("main");
    let out = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(&header_dir)
        .arg(lib_dir.join("libsemtx_ffi.a"))
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let run = Command::new(&bin).output().unwrap();
    assert!(run.status.success(), "exit {:?}", run.status.code());
    assert!(String::from_utf8_lossy(&run.stdout).starts_with("ok "));
}
