//! End-to-end runs through the harness, in process, framed and emulated.

use std::sync::OnceLock;

use semtx::baseline::Decision;
use semtx::channel::ChannelSpec;
use semtx::codec::{encode, quantize};
use semtx::corpus::{synthetic_corpus, CorpusItem};
use semtx::emulator::EmulatorServer;
use semtx::harness::{
    run_e2e, train_codec, Codec, ExperimentSpec, PowerMode, RunSettings, Scheme, Transport,
};
use semtx::link::CsiMode;
use semtx::metrics::PSNR_CAP_DB;
use semtx::preprocess::preprocess;

fn corpus() -> &'static Vec<CorpusItem> {
    static C: OnceLock<Vec<CorpusItem>> = OnceLock::new();
    C.get_or_init(|| synthetic_corpus(8, 64, 64, 77))
}

fn codec() -> &'static Codec {
    static C: OnceLock<Codec> = OnceLock::new();
    C.get_or_init(|| {
        let spec = ExperimentSpec::parse(
            "hidden=64\ntrain_steps=300,100,100\nalloc_steps=0\nimage_size=64",
        )
        .unwrap();
        train_codec(&spec, corpus()).unwrap().into()
    })
}

fn settings(
    scheme: Scheme,
    channel: ChannelSpec,
    mr: Option<f64>,
    seed: u64,
    image_index: usize,
) -> RunSettings {
    RunSettings {
        scheme,
        channel,
        mr,
        csi: CsiMode::LeastSquares,
        power: PowerMode::Off,
        decision: Decision::Hard,
        transport: Transport::InProcess,
        patch_size: 16,
        seed,
        image_index,
    }
}

#[test]
fn noiseless_link_delivers_quantized_latents() {
    for (i, item) in corpus().iter().enumerate() {
        let s = settings(Scheme::Jscc, ChannelSpec::noiseless(), Some(0.0), 1, i);
        let out = run_e2e(item, Some(codec()), &s).unwrap();
        let pre = preprocess(&item.image, &item.regions, 16, f64::INFINITY, Some(0.0)).unwrap();
        let sent = quantize(&encode(&pre.masked, &pre.mask, &codec().model).unwrap()).unwrap();
        assert_eq!(out.received.unwrap(), sent);
        assert_eq!(out.row.mr, 0.0);
        // with nothing masked the kept-patch loss is the plain image MSE
        let full: f64 = item
            .image
            .pixels()
            .iter()
            .zip(out.reconstruction.pixels())
            .map(|(&a, &b)| ((a as f64 - b as f64) / 255.0).powi(2))
            .sum::<f64>()
            / item.image.len() as f64;
        assert!((out.kept_mse - full).abs() < 1e-12);
        let again = run_e2e(item, Some(codec()), &s).unwrap();
        assert_eq!(again.reconstruction, out.reconstruction);
    }
}

#[test]
fn masking_helps_kept_patches_at_low_snr() {
    let (mut kept, mut full) = (0.0, 0.0);
    for seed in 0..5 {
        for (i, item) in corpus().iter().enumerate() {
            let ch = ChannelSpec::awgn(-5.0);
            full += run_e2e(
                item,
                Some(codec()),
                &settings(Scheme::Jscc, ch, Some(0.0), seed, i),
            )
            .unwrap()
            .kept_mse;
            kept += run_e2e(
                item,
                Some(codec()),
                &settings(Scheme::Jscc, ch, Some(0.5), seed, i),
            )
            .unwrap()
            .kept_mse;
        }
    }
    println!("kept-patch MSE at MR 0.5 {kept:.4} vs MR 0 {full:.4} (sums)");
    assert!(kept < full);
}

#[test]
fn emulator_matches_local_framed_path() {
    let server = EmulatorServer::bind("127.0.0.1:0")
        .unwrap()
        .spawn()
        .unwrap();
    let channels = [ChannelSpec::awgn(12.0), ChannelSpec::multipath(5, 15.0)];
    for (i, item) in corpus().iter().take(3).enumerate() {
        for ch in channels {
            for scheme in [Scheme::Baseline, Scheme::Jscc] {
                let mut s = settings(scheme, ch, Some(0.2), 4, i);
                s.transport = Transport::Framed;
                let local = run_e2e(item, Some(codec()), &s).unwrap();
                s.transport = Transport::Emulator(server.addr());
                let remote = run_e2e(item, Some(codec()), &s).unwrap();
                assert_eq!(
                    local.reconstruction, remote.reconstruction,
                    "{scheme} {ch:?}"
                );
                assert_eq!(local.row, remote.row);
            }
        }
    }
}

#[test]
fn concurrent_sessions_are_independent() {
    let server = EmulatorServer::bind("127.0.0.1:0")
        .unwrap()
        .spawn()
        .unwrap();
    let addr = server.addr();
    let run = |i: usize| {
        let mut s = settings(
            Scheme::Baseline,
            ChannelSpec::multipath(5, 14.0),
            None,
            9,
            i,
        );
        s.transport = Transport::Emulator(addr);
        run_e2e(&corpus()[i], None, &s).unwrap()
    };
    let alone: Vec<_> = (0..2).map(run).collect();
    let together: Vec<_> = std::thread::scope(|sc| {
        let hs: Vec<_> = (0..2).map(|i| sc.spawn(move || run(i))).collect();
        hs.into_iter().map(|h| h.join().unwrap()).collect()
    });
    for (a, b) in alone.iter().zip(&together) {
        assert_eq!(a.reconstruction, b.reconstruction);
        assert_eq!(a.row, b.row);
    }
}

/// Mean clean-channel PSNR of the test codec, recorded from the first run.
const NOISELESS_PSNR_DB: f64 = 17.869809648567;

#[test]
fn noiseless_psnr_regression() {
    let mut sum = 0.0;
    for (i, item) in corpus().iter().enumerate() {
        let s = settings(Scheme::Jscc, ChannelSpec::noiseless(), Some(0.0), 0, i);
        sum += run_e2e(item, Some(codec()), &s).unwrap().report.psnr_db;
    }
    let mean = sum / corpus().len() as f64;
    println!("noiseless MR 0 mean PSNR {mean:.12}");
    assert!(mean < PSNR_CAP_DB);
    assert!((mean - NOISELESS_PSNR_DB).abs() < 1e-9);
}

/// At a fixed mask ratio; the adaptive ratio trades codec output for
/// infill and need not be monotone.
#[test]
fn quality_degrades_gracefully() {
    let grid = [-5.0, 0.0, 5.0, 10.0, 15.0];
    for mr in [0.0, 0.5] {
        let means: Vec<f64> = grid
            .iter()
            .map(|&snr| {
                let mut sum = 0.0;
                for seed in 0..5 {
                    for (i, item) in corpus().iter().enumerate() {
                        let s = settings(Scheme::Jscc, ChannelSpec::awgn(snr), Some(mr), seed, i);
                        sum += run_e2e(item, Some(codec()), &s).unwrap().report.ssim;
                    }
                }
                sum / (5 * corpus().len()) as f64
            })
            .collect();
        println!("MR {mr}: mean SSIM over {grid:?}: {means:?}");
        assert!(means.windows(2).all(|w| w[1] >= w[0]));
    }
}
