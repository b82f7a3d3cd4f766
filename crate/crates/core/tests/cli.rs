//! The `semtx` binary's frame tools on real files.

use std::process::Command;

use semtx::phy::map_qam16;
use semtx::rng::NoiseRng;
use semtx::wire::{read_iq_file, write_iq_file};

fn semtx(args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_semtx"))
        .args(args)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn frame_pack_then_parse() {
    let dir = tempfile::tempdir().unwrap();
    let (syms_path, frames_path, back_path) = (
        dir.path().join("s.iq"),
        dir.path().join("f.iq"),
        dir.path().join("b.iq"),
    );
    let syms = map_qam16(&NoiseRng::new(8).bits(4 * 7000)).unwrap();
    write_iq_file(&syms_path, &syms).unwrap();
    let p = |x: &std::path::Path| x.to_str().unwrap().to_owned();
    semtx(&[
        "frame-pack",
        "--input",
        &p(&syms_path),
        "--output",
        &p(&frames_path),
        "--payload-type",
        "2",
    ]);
    assert_eq!(read_iq_file(&frames_path).unwrap().len(), 2 * 13_720);
    for sync in [false, true] {
        let mut args = vec![
            "frame-parse",
            "--input",
            &p(&frames_path),
            "--output",
            &p(&back_path),
            "--count",
            "7000",
        ]
        .into_iter()
        .map(String::from)
        .collect::<Vec<_>>();
        if sync {
            args.push("--sync".into());
        }
        semtx(&args.iter().map(String::as_str).collect::<Vec<_>>());
        let back = read_iq_file(&back_path).unwrap();
        assert_eq!(back.len(), 7000);
        // files hold 32-bit floats
        assert!(syms.iter().zip(&back).all(|(a, b)| (a - b).norm() < 1e-5));
    }
}

#[test]
fn bad_arguments_fail() {
    let out = Command::new(env!("CARGO_BIN_EXE_semtx"))
        .args(["sweep-snr", "--set", "no_such_key=1"])
        .output()
        .unwrap();
    assert!(!out.status.success());
}
