//! Preamble acquisition at 10 dB with random start offsets.

use num_complex::Complex64;
use semtx::frame::{build_frame, synchronize, FrameMeta};
use semtx::phy::map_qam16;
use semtx::rng::NoiseRng;

#[test]
fn sync_finds_exact_offset() {
    let mut rng = NoiseRng::new(0x5e);
    let syms = map_qam16(&rng.bits(4 * 5000)).unwrap();
    let frame = build_frame(
        &syms,
        &FrameMeta {
            payload_type: 1,
            mr_index: 0,
            frame_seq: 0,
        },
    )
    .unwrap();
    let signal_power = frame.iter().map(|s| s.norm_sqr()).sum::<f64>() / frame.len() as f64;
    let noise_var = signal_power / 10.0;
    let trials = 1000;
    let mut exact = 0;
    for _ in 0..trials {
        let offset = rng.below(5000);
        let mut stream: Vec<Complex64> = (0..offset)
            .map(|_| rng.complex_gaussian(noise_var))
            .collect();
        stream.extend(frame.iter().map(|s| s + rng.complex_gaussian(noise_var)));
        if synchronize(&stream, 5000).ok() == Some(offset) {
            exact += 1;
        }
    }
    println!("{exact}/{trials} exact");
    assert!(exact as f64 >= 0.99 * trials as f64);
}
