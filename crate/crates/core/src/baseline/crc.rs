//! CRC-32 (reflected polynomial 0xEDB88320) over a bit sequence.
//!
//! Bits are consumed in the order given. Feeding the bytes of a message
//! least-significant bit first reproduces the usual byte-wise CRC-32.

pub const CRC32_POLY: u32 = 0xEDB8_8320;

pub fn crc32_bits(bits: &[u8]) -> u32 {
    let mut crc = 0xFFFF_FFFFu32;
    for &b in bits {
        crc ^= (b & 1) as u32;
        crc = if crc & 1 != 0 {
            (crc >> 1) ^ CRC32_POLY
        } else {
            crc >> 1
        };
    }
    !crc
}

/// Bytes as bits, least-significant bit first.
pub fn bytes_to_bits_lsb(bytes: &[u8]) -> Vec<u8> {
    bytes
        .iter()
        .flat_map(|b| (0..8).map(move |i| (b >> i) & 1))
        .collect()
}

pub fn crc32_bytes(bytes: &[u8]) -> u32 {
    crc32_bits(&bytes_to_bits_lsb(bytes))
}

/// Appends the 32 CRC bits, least-significant first.
pub fn append_crc(bits: &[u8]) -> Vec<u8> {
    let c = crc32_bits(bits);
    let mut out = bits.to_vec();
    out.extend((0..32).map(|i| ((c >> i) & 1) as u8));
    out
}

/// Splits off and checks a trailing CRC.
pub fn check_crc(bits_with_crc: &[u8]) -> Option<&[u8]> {
    if bits_with_crc.len() < 32 {
        return None;
    }
    let (payload, tail) = bits_with_crc.split_at(bits_with_crc.len() - 32);
    let got = tail
        .iter()
        .enumerate()
        .fold(0u32, |acc, (i, &b)| acc | ((b as u32 & 1) << i));
    (crc32_bits(payload) == got).then_some(payload)
}
