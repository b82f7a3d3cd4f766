//! Malformed and random datagrams must be rejected cleanly, never panic.

use proptest::prelude::*;
use semtx::rng::NoiseRng;
use semtx::wire::{
    fragment, peek_header, MsgType, Reassembler, WireMessage, HEADER_LEN, MAX_PAYLOAD,
};
use std::time::{Duration, Instant};

fn msg_type() -> impl Strategy<Value = MsgType> {
    prop::sample::select(vec![
        MsgType::Config,
        MsgType::IqUp,
        MsgType::IqDown,
        MsgType::Ack,
        MsgType::Error,
    ])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn encode_decode_round_trip(
        t in msg_type(), session in any::<u32>(), seq in any::<u32>(),
        payload in prop::collection::vec(any::<u8>(), 0..=MAX_PAYLOAD),
    ) {
        let m = WireMessage::single(t, session, seq, payload);
        let bytes = m.encode().unwrap();
        prop_assert_eq!(bytes.len(), HEADER_LEN + m.payload.len());
        prop_assert_eq!(WireMessage::decode(&bytes).unwrap(), m);
    }

    #[test]
    fn fragments_reassemble_in_any_order(
        len in 0usize..6000, seed in any::<u64>(),
    ) {
        let mut rng = NoiseRng::new(seed);
        let payload: Vec<u8> = (0..len).map(|_| rng.below(256) as u8).collect();
        let mut frags = fragment(MsgType::IqUp, 3, 9, &payload).unwrap();
        prop_assert_eq!(frags.len(), len.div_ceil(MAX_PAYLOAD).max(1));
        rng.shuffle(&mut frags);
        let mut r = Reassembler::new(Duration::from_secs(1));
        let now = Instant::now();
        let mut done = None;
        for f in frags {
            let wire = WireMessage::decode(&f.encode().unwrap()).unwrap();
            if let Some(a) = r.push(wire, now).unwrap() {
                prop_assert!(done.is_none());
                done = Some(a);
            }
        }
        let a = done.unwrap();
        prop_assert_eq!(a.payload, payload);
        prop_assert_eq!(r.pending(), 0);
    }
}

/// 100,000 hostile datagrams: random bytes, truncations and single-byte
/// corruptions of valid messages.
#[test]
fn hostile_datagrams_never_panic() {
    let mut rng = NoiseRng::new(0xf022);
    let mut accepted = 0usize;
    for i in 0..100_000 {
        let bytes: Vec<u8> = match i % 3 {
            0 => (0..rng.below(64)).map(|_| rng.below(256) as u8).collect(),
            _ => {
                let len = rng.below(200);
                let m = WireMessage::single(
                    MsgType::IqUp,
                    rng.below(1 << 20) as u32,
                    i as u32,
                    vec![7; len],
                );
                let mut b = m.encode().unwrap();
                if i % 3 == 1 {
                    let at = rng.below(b.len());
                    b[at] ^= 1 << rng.below(8);
                } else {
                    b.truncate(rng.below(b.len()));
                }
                b
            }
        };
        let _ = peek_header(&bytes);
        if let Ok(m) = WireMessage::decode(&bytes) {
            // whatever survives must re-encode to the same datagram
            assert_eq!(m.encode().unwrap(), bytes);
            accepted += 1;
        }
    }
    assert!(accepted < 100_000);
}
