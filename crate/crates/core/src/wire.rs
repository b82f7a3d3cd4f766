//! UDP message format shared by the emulator and its clients.
//!
//! ```text
//! offset size field
//!  0     4    magic "SEML"
//!  4     1    version (1)
//!  5     1    msg_type (0 CONFIG, 1 IQ_UP, 2 IQ_DOWN, 3 ACK, 4 ERROR)
//!  6     2    flags
//!  8     4    session
//! 12     4    seq
//! 16     2    frag_index
//! 18     2    frag_count
//! 20     4    payload_len (<= 1400)
//! 24     ..   payload
//! ```
//! Integers are little-endian. IQ payloads are interleaved `f32` I/Q pairs.
//! CONFIG payloads are `key=value` lines.

use std::collections::HashMap;
use std::time::{Duration, Instant};

use num_complex::Complex64;

use crate::channel::{ChannelKind, ChannelSpec};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SEML";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 24;
pub const MAX_PAYLOAD: usize = 1400;
pub const MAX_DATAGRAM: usize = HEADER_LEN + MAX_PAYLOAD;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MsgType {
    Config = 0,
    IqUp = 1,
    IqDown = 2,
    Ack = 3,
    Error = 4,
}

impl TryFrom<u8> for MsgType {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        Ok(match v {
            0 => Self::Config,
            1 => Self::IqUp,
            2 => Self::IqDown,
            3 => Self::Ack,
            4 => Self::Error,
            _ => return Err(Error::Malformed(format!("unknown message type {v}"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WireMessage {
    pub msg_type: MsgType,
    pub flags: u16,
    pub session: u32,
    pub seq: u32,
    pub frag_index: u16,
    pub frag_count: u16,
    pub payload: Vec<u8>,
}

impl WireMessage {
    pub fn single(msg_type: MsgType, session: u32, seq: u32, payload: Vec<u8>) -> Self {
        Self {
            msg_type,
            flags: 0,
            session,
            seq,
            frag_index: 0,
            frag_count: 1,
            payload,
        }
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        if self.payload.len() > MAX_PAYLOAD {
            return Err(Error::Capacity(format!(
                "payload {} exceeds {MAX_PAYLOAD} bytes",
                self.payload.len()
            )));
        }
        let mut out = Vec::with_capacity(HEADER_LEN + self.payload.len());
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.push(self.msg_type as u8);
        out.extend_from_slice(&self.flags.to_le_bytes());
        out.extend_from_slice(&self.session.to_le_bytes());
        out.extend_from_slice(&self.seq.to_le_bytes());
        out.extend_from_slice(&self.frag_index.to_le_bytes());
        out.extend_from_slice(&self.frag_count.to_le_bytes());
        out.extend_from_slice(&(self.payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.payload);
        Ok(out)
    }

    pub fn decode(buf: &[u8]) -> Result<Self> {
        let h = parse_header(buf)?;
        let len = h.payload_len as usize;
        if buf.len() != HEADER_LEN + len {
            return Err(Error::Malformed(format!(
                "datagram is {} bytes, header announces {}",
                buf.len(),
                HEADER_LEN + len
            )));
        }
        Ok(Self {
            msg_type: MsgType::try_from(h.msg_type)?,
            flags: h.flags,
            session: h.session,
            seq: h.seq,
            frag_index: h.frag_index,
            frag_count: h.frag_count,
            payload: buf[HEADER_LEN..].to_vec(),
        })
    }
}

/// Raw header fields, available even when the message type is unknown so
/// that errors can be addressed to the right session.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RawHeader {
    pub version: u8,
    pub msg_type: u8,
    pub flags: u16,
    pub session: u32,
    pub seq: u32,
    pub frag_index: u16,
    pub frag_count: u16,
    pub payload_len: u32,
}

pub fn peek_header(buf: &[u8]) -> Option<RawHeader> {
    if buf.len() < HEADER_LEN || &buf[..4] != MAGIC {
        return None;
    }
    let u16_at = |i: usize| u16::from_le_bytes([buf[i], buf[i + 1]]);
    let u32_at = |i: usize| u32::from_le_bytes([buf[i], buf[i + 1], buf[i + 2], buf[i + 3]]);
    Some(RawHeader {
        version: buf[4],
        msg_type: buf[5],
        flags: u16_at(6),
        session: u32_at(8),
        seq: u32_at(12),
        frag_index: u16_at(16),
        frag_count: u16_at(18),
        payload_len: u32_at(20),
    })
}

fn parse_header(buf: &[u8]) -> Result<RawHeader> {
    if buf.len() < HEADER_LEN {
        return Err(Error::Malformed(format!(
            "datagram of {} bytes is shorter than the header",
            buf.len()
        )));
    }
    let h = peek_header(buf).ok_or_else(|| Error::Malformed("bad magic".into()))?;
    if h.version != VERSION {
        return Err(Error::Malformed(format!(
            "unsupported version {}",
            h.version
        )));
    }
    if h.payload_len as usize > MAX_PAYLOAD {
        return Err(Error::Malformed(format!(
            "payload length {} exceeds {MAX_PAYLOAD}",
            h.payload_len
        )));
    }
    if h.frag_count == 0 || h.frag_index >= h.frag_count {
        return Err(Error::Malformed(format!(
            "fragment {} of {} is out of range",
            h.frag_index, h.frag_count
        )));
    }
    Ok(h)
}

/// Splits a logical message into at most 1,400-byte fragments sharing `seq`.
pub fn fragment(
    msg_type: MsgType,
    session: u32,
    seq: u32,
    payload: &[u8],
) -> Result<Vec<WireMessage>> {
    let count = payload.len().div_ceil(MAX_PAYLOAD).max(1);
    if count > u16::MAX as usize {
        return Err(Error::Capacity(format!(
            "{} bytes need too many fragments",
            payload.len()
        )));
    }
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let chunk = &payload
            [(i * MAX_PAYLOAD).min(payload.len())..((i + 1) * MAX_PAYLOAD).min(payload.len())];
        out.push(WireMessage {
            msg_type,
            flags: 0,
            session,
            seq,
            frag_index: i as u16,
            frag_count: count as u16,
            payload: chunk.to_vec(),
        });
    }
    Ok(out)
}

struct Partial {
    msg_type: MsgType,
    parts: Vec<Option<Vec<u8>>>,
    received: usize,
    started: Instant,
}

/// A reassembled logical message.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Assembled {
    pub msg_type: MsgType,
    pub session: u32,
    pub seq: u32,
    pub payload: Vec<u8>,
}

/// Collects fragments in any order, keyed by `(session, seq)`.
pub struct Reassembler {
    pending: HashMap<(u32, u32), Partial>,
    timeout: Duration,
}

impl Reassembler {
    pub fn new(timeout: Duration) -> Self {
        Self {
            pending: HashMap::new(),
            timeout,
        }
    }

    pub fn pending(&self) -> usize {
        self.pending.len()
    }

    /// Adds a fragment; returns the message once every fragment is present.
    pub fn push(&mut self, m: WireMessage, now: Instant) -> Result<Option<Assembled>> {
        let key = (m.session, m.seq);
        let count = m.frag_count as usize;
        let entry = self.pending.entry(key).or_insert_with(|| Partial {
            msg_type: m.msg_type,
            parts: vec![None; count],
            received: 0,
            started: now,
        });
        if entry.parts.len() != count || entry.msg_type != m.msg_type {
            self.pending.remove(&key);
            return Err(Error::Malformed(format!(
                "fragment of seq {} disagrees with earlier fragments",
                m.seq
            )));
        }
        let slot = &mut entry.parts[m.frag_index as usize];
        if slot.is_none() {
            *slot = Some(m.payload);
            entry.received += 1;
        }
        if entry.received < count {
            return Ok(None);
        }
        let p = self.pending.remove(&key).expect("entry present");
        Ok(Some(Assembled {
            msg_type: p.msg_type,
            session: key.0,
            seq: key.1,
            payload: p.parts.into_iter().flatten().flatten().collect(),
        }))
    }

    /// Drops and reports incomplete messages older than the timeout.
    pub fn expire(&mut self, now: Instant) -> Vec<(u32, u32)> {
        let timeout = self.timeout;
        let stale: Vec<(u32, u32)> = self
            .pending
            .iter()
            .filter(|(_, p)| now.duration_since(p.started) >= timeout)
            .map(|(k, _)| *k)
            .collect();
        for k in &stale {
            self.pending.remove(k);
        }
        stale
    }
}

pub fn iq_to_bytes(samples: &[Complex64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(samples.len() * 8);
    for s in samples {
        out.extend_from_slice(&(s.re as f32).to_le_bytes());
        out.extend_from_slice(&(s.im as f32).to_le_bytes());
    }
    out
}

pub fn bytes_to_iq(bytes: &[u8]) -> Result<Vec<Complex64>> {
    if !bytes.len().is_multiple_of(8) {
        return Err(Error::Malformed(format!(
            "IQ payload of {} bytes is not whole pairs",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| {
            let re = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
            let im = f32::from_le_bytes([c[4], c[5], c[6], c[7]]);
            Complex64::new(re as f64, im as f64)
        })
        .collect())
}

/// Reads a `.iq` file (interleaved little-endian `f32` I/Q).
pub fn read_iq_file(path: impl AsRef<std::path::Path>) -> Result<Vec<Complex64>> {
    bytes_to_iq(&std::fs::read(path)?)
}

pub fn write_iq_file(path: impl AsRef<std::path::Path>, samples: &[Complex64]) -> Result<()> {
    std::fs::write(path, iq_to_bytes(samples))?;
    Ok(())
}

/// Rounds samples through `f32` as the wire does.
pub fn round_to_f32(samples: &[Complex64]) -> Vec<Complex64> {
    samples
        .iter()
        .map(|s| Complex64::new(s.re as f32 as f64, s.im as f32 as f64))
        .collect()
}

/// `kind`, `snr_db`, `num_paths`, `decay` and `seed` as text lines.
pub fn encode_config(spec: &ChannelSpec, seed: u64) -> Vec<u8> {
    format!(
        "kind={}\nsnr_db={}\nnum_paths={}\ndecay={}\nseed={seed}\n",
        spec.kind, spec.snr_db, spec.num_paths, spec.decay
    )
    .into_bytes()
}

pub fn decode_config(payload: &[u8]) -> Result<(ChannelSpec, u64)> {
    let text =
        std::str::from_utf8(payload).map_err(|_| Error::Malformed("config is not UTF-8".into()))?;
    let mut spec = ChannelSpec::noiseless();
    let mut seed = 0u64;
    let bad = |k: &str, v: &str| Error::Malformed(format!("bad config value {k}={v}"));
    for line in text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
    {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Malformed(format!("config line {line:?} lacks '='")))?;
        let (k, v) = (k.trim(), v.trim());
        match k {
            "kind" => spec.kind = v.parse::<ChannelKind>()?,
            "snr_db" => spec.snr_db = parse_snr(v).ok_or_else(|| bad(k, v))?,
            "num_paths" => spec.num_paths = v.parse().map_err(|_| bad(k, v))?,
            "decay" => spec.decay = v.parse().map_err(|_| bad(k, v))?,
            "seed" => seed = v.parse().map_err(|_| bad(k, v))?,
            _ => return Err(Error::Malformed(format!("unknown config key {k:?}"))),
        }
    }
    if spec.kind != ChannelKind::Multipath {
        spec.num_paths = 1;
    }
    spec.validate()
        .map_err(|e| Error::Malformed(e.to_string()))?;
    Ok((spec, seed))
}

/// Accepts finite numbers and `inf`/`+inf`.
pub fn parse_snr(v: &str) -> Option<f64> {
    match v {
        "inf" | "+inf" | "infinity" => Some(f64::INFINITY),
        _ => v.parse::<f64>().ok().filter(|x| x.is_finite()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout_is_fixed() {
        let m = WireMessage {
            msg_type: MsgType::IqUp,
            flags: 0x0102,
            session: 0x0A0B0C0D,
            seq: 7,
            frag_index: 2,
            frag_count: 3,
            payload: vec![0xEE; 5],
        };
        let b = m.encode().unwrap();
        assert_eq!(&b[..4], b"SEML");
        assert_eq!(b[4], 1);
        assert_eq!(b[5], 1);
        assert_eq!(&b[6..8], &[0x02, 0x01]);
        assert_eq!(&b[8..12], &[0x0D, 0x0C, 0x0B, 0x0A]);
        assert_eq!(&b[20..24], &[5, 0, 0, 0]);
        assert_eq!(WireMessage::decode(&b).unwrap(), m);
    }

    #[test]
    fn rejects_bad_headers() {
        let good = WireMessage::single(MsgType::Ack, 1, 1, vec![])
            .encode()
            .unwrap();
        let mut v = good.clone();
        v[4] = 2;
        assert!(WireMessage::decode(&v).is_err());
        let mut t = good.clone();
        t[5] = 9;
        assert!(WireMessage::decode(&t).is_err());
        assert!(WireMessage::decode(&good[..10]).is_err());
        let mut l = good.clone();
        l[20] = 1;
        assert!(WireMessage::decode(&l).is_err());
    }

    #[test]
    fn frame_payload_fragments() {
        let payload: Vec<u8> = (0..109_760u32).map(|i| (i * 31 % 251) as u8).collect();
        let frags = fragment(MsgType::IqUp, 9, 4, &payload).unwrap();
        assert_eq!(frags.len(), 79);
        let mut r = Reassembler::new(Duration::from_secs(1));
        let now = Instant::now();
        let mut done = None;
        for f in frags.into_iter().rev() {
            if let Some(a) = r.push(f, now).unwrap() {
                done = Some(a);
            }
        }
        assert_eq!(done.unwrap().payload, payload);
        assert_eq!(r.pending(), 0);
    }

    #[test]
    fn expiry_reports_incomplete() {
        let frags = fragment(MsgType::IqUp, 1, 2, &[0u8; 3000]).unwrap();
        let mut r = Reassembler::new(Duration::from_millis(10));
        let t0 = Instant::now();
        r.push(frags[0].clone(), t0).unwrap();
        assert!(r.expire(t0).is_empty());
        assert_eq!(r.expire(t0 + Duration::from_millis(20)), vec![(1, 2)]);
    }

    #[test]
    fn config_round_trip() {
        let spec = ChannelSpec::multipath(5, 12.5);
        let (s, seed) = decode_config(&encode_config(&spec, 77)).unwrap();
        assert_eq!((s, seed), (spec, 77));
        let (s, _) = decode_config(&encode_config(&ChannelSpec::noiseless(), 0)).unwrap();
        assert!(s.snr_db.is_infinite());
        assert!(decode_config(b"kind=bogus").is_err());
    }
}
