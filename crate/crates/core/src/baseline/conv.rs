//! Rate-1/2 convolutional code, constraint length 7, generators 171/133
//! (octal), zero-terminated with six tail bits, and a Viterbi decoder.

pub const CONSTRAINT: usize = 7;
pub const TAIL: usize = CONSTRAINT - 1;
pub const G0: u32 = 0o171;
pub const G1: u32 = 0o133;
const STATES: usize = 1 << TAIL;

#[inline]
fn outputs(reg: u32) -> (u8, u8) {
    (
        ((reg & G0).count_ones() & 1) as u8,
        ((reg & G1).count_ones() & 1) as u8,
    )
}

/// Coded length is `2 × (info + 6)`.
pub fn conv_encode(info: &[u8]) -> Vec<u8> {
    let mut state = 0u32;
    let mut out = Vec::with_capacity(2 * (info.len() + TAIL));
    for &b in info.iter().chain(std::iter::repeat_n(&0, TAIL)) {
        let reg = ((b as u32 & 1) << TAIL) | state;
        let (a, c) = outputs(reg);
        out.push(a);
        out.push(c);
        state = reg >> 1;
    }
    out
}

/// Maximum-likelihood decoding given per-coded-bit costs for sending 0 and
/// 1. Returns the info bits (tail removed).
fn viterbi(cost: impl Fn(usize, u8) -> f64, n_steps: usize) -> Vec<u8> {
    let mut metric = vec![f64::INFINITY; STATES];
    metric[0] = 0.0;
    let mut survivors = vec![0u8; n_steps * STATES];
    let mut next = vec![f64::INFINITY; STATES];
    for t in 0..n_steps {
        next.iter_mut().for_each(|m| *m = f64::INFINITY);
        let c = [
            [cost(2 * t, 0), cost(2 * t, 1)],
            [cost(2 * t + 1, 0), cost(2 * t + 1, 1)],
        ];
        for (s, &m) in metric.iter().enumerate() {
            if !m.is_finite() {
                continue;
            }
            for b in 0..2u32 {
                let reg = (b << TAIL) | s as u32;
                let (o0, o1) = outputs(reg);
                let ns = (reg >> 1) as usize;
                let v = m + c[0][o0 as usize] + c[1][o1 as usize];
                if v < next[ns] {
                    next[ns] = v;
                    // predecessor is identified by its dropped low bit
                    survivors[t * STATES + ns] = (s & 1) as u8;
                }
            }
        }
        std::mem::swap(&mut metric, &mut next);
    }
    let mut state = 0usize;
    let mut bits = vec![0u8; n_steps];
    for t in (0..n_steps).rev() {
        bits[t] = (state >> (TAIL - 1)) as u8 & 1;
        let low = survivors[t * STATES + state] as usize;
        state = ((state << 1) & (STATES - 1)) | low;
    }
    bits.truncate(n_steps.saturating_sub(TAIL));
    bits
}

/// Hard-decision decoding (Hamming branch metric).
pub fn viterbi_hard(coded: &[u8]) -> Vec<u8> {
    viterbi(|i, b| (coded[i] != b) as u8 as f64, coded.len() / 2)
}

/// Soft decoding from LLRs (positive favours bit 0).
pub fn viterbi_soft(llr: &[f64]) -> Vec<u8> {
    viterbi(|i, b| if b == 0 { -llr[i] } else { llr[i] }, llr.len() / 2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::NoiseRng;

    #[test]
    fn impulse_response_matches_generators() {
        let c = conv_encode(&[1]);
        let a: Vec<u8> = c.iter().step_by(2).copied().collect();
        let b: Vec<u8> = c.iter().skip(1).step_by(2).copied().collect();
        // register taps read from the newest bit (bit 6) down to the oldest
        let taps = |g: u32| {
            (0..7)
                .map(|i| ((g >> (6 - i)) & 1) as u8)
                .collect::<Vec<_>>()
        };
        assert_eq!(a, taps(G0));
        assert_eq!(b, taps(G1));
        assert_eq!(c.len(), 14);
    }

    #[test]
    fn clean_round_trip() {
        let info = NoiseRng::new(1).bits(500);
        assert_eq!(viterbi_hard(&conv_encode(&info)), info);
    }

    #[test]
    fn corrects_scattered_errors() {
        let info = NoiseRng::new(2).bits(300);
        let mut c = conv_encode(&info);
        for i in (5..c.len()).step_by(40) {
            c[i] ^= 1;
        }
        assert_eq!(viterbi_hard(&c), info);
        let llr: Vec<f64> = c.iter().map(|&b| if b == 0 { 1.0 } else { -1.0 }).collect();
        assert_eq!(viterbi_soft(&llr), info);
    }
}
