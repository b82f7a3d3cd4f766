//! The separable chain collapses over a narrow SNR range.

use semtx::corpus::synthetic_corpus;
use semtx::harness::{run_snr_sweep, summarize, ExperimentSpec};

#[test]
fn mean_ssim_cliff_within_four_db() {
    let spec = ExperimentSpec::parse(
        "scheme=baseline\nsnr_grid=4,5,6,7,8,9,10,11,12,13,14,15,16\nseeds=0,1,2\ncorpus_size=16\nimage_size=64",
    )
    .unwrap();
    let corpus = synthetic_corpus(16, 64, 64, 0x636f_7270);
    let rows = run_snr_sweep(&spec, None, &corpus).unwrap();
    let curve: Vec<(f64, f64)> = summarize(&rows, false)
        .iter()
        .map(|r| (r.snr_db, r.ssim))
        .collect();
    println!("{curve:?}");
    let lo = curve.iter().rev().find(|p| p.1 < 0.05).unwrap().0;
    let hi = curve
        .iter()
        .find(|p| p.1 > 0.8)
        .expect("baseline never exceeds SSIM 0.8")
        .0;
    assert!(lo < hi && hi - lo <= 4.0, "window [{lo}, {hi}]");
    // symbol parity: both schemes spend exactly the same budget
    assert_eq!(semtx::harness::symbol_budget(&corpus[0].image), 768);
}
