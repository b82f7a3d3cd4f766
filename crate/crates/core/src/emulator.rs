//! UDP channel emulator.
//!
//! A client opens a session with a CONFIG message (acknowledged with ACK),
//! then sends baseband frames as IQ_UP. Each frame is passed through the
//! session's channel realization in the time domain and returned as IQ_DOWN
//! with the same sequence number. Frames are processed in sequence order so
//! the session's noise stream is consumed deterministically.

use std::collections::{BTreeMap, HashMap};
use std::net::{SocketAddr, ToSocketAddrs, UdpSocket};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use num_complex::Complex64;

use crate::channel::{apply_time_domain, realize, ChannelRealization, ChannelSpec};
use crate::error::{Error, Result};
use crate::rng::NoiseRng;
use crate::wire::{
    bytes_to_iq, decode_config, encode_config, fragment, iq_to_bytes, peek_header, Assembled,
    MsgType, Reassembler, WireMessage, MAX_DATAGRAM,
};

/// FFT size used to realize session channels (matches the frame numerology).
pub const EMULATOR_FFT: usize = 256;
pub const EMULATOR_CP: usize = 64;
pub const REASSEMBLY_TIMEOUT: Duration = Duration::from_secs(1);
const POLL: Duration = Duration::from_millis(20);

enum Job {
    Iq {
        seq: u32,
        samples: Vec<Complex64>,
        addr: SocketAddr,
    },
    Skip(u32),
}

struct Session {
    tx: Sender<Job>,
    addr: SocketAddr,
    handle: JoinHandle<()>,
}

pub struct EmulatorServer {
    socket: UdpSocket,
    /// Channel for sessions that send IQ_UP without a CONFIG first.
    default_channel: Option<(ChannelSpec, u64)>,
}

/// A server running on a background thread; dropping it stops the server.
pub struct EmulatorHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    join: Option<JoinHandle<Result<()>>>,
}

impl EmulatorHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) -> Result<()> {
        self.stop_inner()
    }

    fn stop_inner(&mut self) -> Result<()> {
        self.stop.store(true, Ordering::SeqCst);
        match self.join.take() {
            Some(j) => j
                .join()
                .map_err(|_| Error::InvalidInput("emulator thread panicked".into()))?,
            None => Ok(()),
        }
    }
}

impl Drop for EmulatorHandle {
    fn drop(&mut self) {
        let _ = self.stop_inner();
    }
}

impl EmulatorServer {
    pub fn bind(addr: impl ToSocketAddrs) -> Result<Self> {
        let socket = UdpSocket::bind(addr)?;
        socket.set_read_timeout(Some(POLL))?;
        Ok(Self {
            socket,
            default_channel: None,
        })
    }

    pub fn with_default_channel(mut self, spec: ChannelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        self.default_channel = Some((spec, seed));
        Ok(self)
    }

    pub fn local_addr(&self) -> Result<SocketAddr> {
        Ok(self.socket.local_addr()?)
    }

    pub fn spawn(self) -> Result<EmulatorHandle> {
        let addr = self.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let join = thread::Builder::new()
            .name("emulator".into())
            .spawn(move || self.run(&flag))?;
        Ok(EmulatorHandle {
            addr,
            stop,
            join: Some(join),
        })
    }

    /// Serves until `stop` is set.
    pub fn run(&self, stop: &AtomicBool) -> Result<()> {
        let mut sessions: HashMap<u32, Session> = HashMap::new();
        let mut reasm = Reassembler::new(REASSEMBLY_TIMEOUT);
        let mut buf = vec![0u8; 65_536];
        while !stop.load(Ordering::SeqCst) {
            match self.socket.recv_from(&mut buf) {
                Ok((n, src)) => self.handle_datagram(&buf[..n], src, &mut reasm, &mut sessions),
                Err(e)
                    if matches!(
                        e.kind(),
                        std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut
                    ) => {}
                Err(e) => return Err(e.into()),
            }
            for (session, seq) in reasm.expire(Instant::now()) {
                log::warn!("session {session}: seq {seq} incomplete after {REASSEMBLY_TIMEOUT:?}");
                if let Some(s) = sessions.get(&session) {
                    self.send_error(s.addr, session, seq, "reassembly timeout");
                    let _ = s.tx.send(Job::Skip(seq));
                }
            }
        }
        for (_, s) in sessions.drain() {
            drop(s.tx);
            let _ = s.handle.join();
        }
        Ok(())
    }

    fn handle_datagram(
        &self,
        buf: &[u8],
        src: SocketAddr,
        reasm: &mut Reassembler,
        sessions: &mut HashMap<u32, Session>,
    ) {
        let msg = match WireMessage::decode(buf) {
            Ok(m) => m,
            Err(e) => {
                let (session, seq) = peek_header(buf)
                    .map(|h| (h.session, h.seq))
                    .unwrap_or((0, 0));
                log::debug!("rejecting datagram from {src}: {e}");
                self.send_error(src, session, seq, &e.to_string());
                return;
            }
        };
        if !matches!(msg.msg_type, MsgType::Config | MsgType::IqUp) {
            self.send_error(src, msg.session, msg.seq, "unexpected message type");
            return;
        }
        let (session, seq) = (msg.session, msg.seq);
        match reasm.push(msg, Instant::now()) {
            Ok(Some(done)) => self.handle_message(done, src, sessions),
            Ok(None) => {}
            Err(e) => self.send_error(src, session, seq, &e.to_string()),
        }
    }

    fn handle_message(&self, m: Assembled, src: SocketAddr, sessions: &mut HashMap<u32, Session>) {
        match m.msg_type {
            MsgType::Config => {
                let ch = decode_config(&m.payload)
                    .and_then(|(spec, seed)| realize(&spec, EMULATOR_FFT, seed));
                match ch.and_then(|ch| self.start_session(m.session, ch, m.seq, src)) {
                    Ok(s) => {
                        if let Some(old) = sessions.insert(m.session, s) {
                            drop(old.tx);
                            let _ = old.handle.join();
                        }
                        self.send(
                            src,
                            &WireMessage::single(MsgType::Ack, m.session, m.seq, vec![]),
                        );
                    }
                    Err(e) => self.send_error(src, m.session, m.seq, &e.to_string()),
                }
            }
            MsgType::IqUp => {
                if let std::collections::hash_map::Entry::Vacant(e) = sessions.entry(m.session) {
                    let Some((spec, seed)) = self.default_channel else {
                        self.send_error(src, m.session, m.seq, "unknown session");
                        return;
                    };
                    let started = realize(&spec, EMULATOR_FFT, seed).and_then(|ch| {
                        self.start_session(m.session, ch, m.seq.wrapping_sub(1), src)
                    });
                    match started {
                        Ok(s) => {
                            e.insert(s);
                        }
                        Err(e) => {
                            self.send_error(src, m.session, m.seq, &e.to_string());
                            return;
                        }
                    }
                }
                let s = sessions.get_mut(&m.session).expect("session present");
                match bytes_to_iq(&m.payload) {
                    Ok(samples) => {
                        s.addr = src;
                        let _ = s.tx.send(Job::Iq {
                            seq: m.seq,
                            samples,
                            addr: src,
                        });
                    }
                    Err(e) => {
                        self.send_error(src, m.session, m.seq, &e.to_string());
                        let _ = s.tx.send(Job::Skip(m.seq));
                    }
                }
            }
            _ => self.send_error(src, m.session, m.seq, "unexpected message type"),
        }
    }

    fn start_session(
        &self,
        session: u32,
        ch: ChannelRealization,
        config_seq: u32,
        addr: SocketAddr,
    ) -> Result<Session> {
        let (tx, rx) = mpsc::channel();
        let socket = self.socket.try_clone()?;
        let handle = thread::Builder::new()
            .name("emulator-session".into())
            .spawn(move || session_worker(socket, session, ch, config_seq.wrapping_add(1), rx))?;
        Ok(Session { tx, addr, handle })
    }

    fn send(&self, to: SocketAddr, m: &WireMessage) {
        send_on(&self.socket, to, m);
    }

    fn send_error(&self, to: SocketAddr, session: u32, seq: u32, reason: &str) {
        let mut text = reason.as_bytes().to_vec();
        text.truncate(crate::wire::MAX_PAYLOAD);
        self.send(to, &WireMessage::single(MsgType::Error, session, seq, text));
    }
}

fn send_on(socket: &UdpSocket, to: SocketAddr, m: &WireMessage) {
    match m.encode() {
        Ok(b) => {
            if let Err(e) = socket.send_to(&b, to) {
                log::warn!("send to {to} failed: {e}");
            }
        }
        Err(e) => log::error!("cannot encode reply: {e}"),
    }
}

/// Processes frames strictly in sequence order, starting after the CONFIG
/// sequence number. A gap left by a dropped frame is skipped once the
/// reassembler reports it or the buffered frames have waited a full timeout.
fn session_worker(
    socket: UdpSocket,
    session: u32,
    ch: ChannelRealization,
    first_seq: u32,
    rx: Receiver<Job>,
) {
    let mut rng = ch.noise_rng();
    let mut next = first_seq;
    let mut waiting: BTreeMap<u32, (Vec<Complex64>, SocketAddr)> = BTreeMap::new();
    let mut skipped: Vec<u32> = Vec::new();
    let mut stalled_since: Option<Instant> = None;
    loop {
        match rx.recv_timeout(POLL) {
            Ok(Job::Iq { seq, samples, addr }) => {
                if seq.wrapping_sub(next) < u32::MAX / 2 {
                    waiting.insert(seq, (samples, addr));
                } else {
                    // Behind the window: process immediately rather than drop.
                    emit(&socket, session, &ch, &mut rng, seq, &samples, addr);
                }
            }
            Ok(Job::Skip(seq)) => skipped.push(seq),
            Err(mpsc::RecvTimeoutError::Timeout) => {}
            Err(mpsc::RecvTimeoutError::Disconnected) => return,
        }
        loop {
            if let Some((samples, addr)) = waiting.remove(&next) {
                emit(&socket, session, &ch, &mut rng, next, &samples, addr);
            } else if let Some(i) = skipped.iter().position(|&s| s == next) {
                skipped.swap_remove(i);
            } else {
                break;
            }
            next = next.wrapping_add(1);
            stalled_since = None;
        }
        if waiting.is_empty() {
            stalled_since = None;
        } else {
            let since = *stalled_since.get_or_insert_with(Instant::now);
            if since.elapsed() >= REASSEMBLY_TIMEOUT {
                let first = *waiting.keys().next().expect("non-empty");
                log::warn!("sequence gap {next}..{first}; skipping ahead");
                next = first;
                stalled_since = None;
            }
        }
    }
}

fn emit(
    socket: &UdpSocket,
    session: u32,
    ch: &ChannelRealization,
    rng: &mut NoiseRng,
    seq: u32,
    samples: &[Complex64],
    addr: SocketAddr,
) {
    let out = apply_time_domain(samples, ch, EMULATOR_CP, rng);
    match fragment(MsgType::IqDown, session, seq, &iq_to_bytes(&out.samples)) {
        Ok(frags) => frags.iter().for_each(|f| send_on(socket, addr, f)),
        Err(e) => log::error!("cannot fragment reply: {e}"),
    }
}

/// Blocking client for one emulator session.
pub struct EmulatorClient {
    socket: UdpSocket,
    server: SocketAddr,
    session: u32,
    seq: u32,
    timeout: Duration,
}

impl EmulatorClient {
    pub fn connect(server: impl ToSocketAddrs, session: u32, timeout: Duration) -> Result<Self> {
        let server = server
            .to_socket_addrs()?
            .next()
            .ok_or_else(|| Error::InvalidInput("server address resolves to nothing".into()))?;
        let local: SocketAddr = if server.is_ipv4() {
            "0.0.0.0:0".parse().expect("literal")
        } else {
            "[::]:0".parse().expect("literal")
        };
        let socket = UdpSocket::bind(local)?;
        socket.set_read_timeout(Some(POLL))?;
        Ok(Self {
            socket,
            server,
            session,
            seq: 0,
            timeout,
        })
    }

    pub fn session(&self) -> u32 {
        self.session
    }

    /// Opens (or replaces) the session channel and waits for the ACK.
    pub fn configure(&mut self, spec: &ChannelSpec, seed: u64) -> Result<()> {
        let seq = self.seq;
        self.seq = self.seq.wrapping_add(1);
        for f in fragment(
            MsgType::Config,
            self.session,
            seq,
            &encode_config(spec, seed),
        )? {
            self.socket.send_to(&f.encode()?, self.server)?;
        }
        self.await_reply(seq, MsgType::Ack).map(|_| ())
    }

    /// Sends one frame and returns the channel output.
    pub fn transmit(&mut self, samples: &[Complex64]) -> Result<Vec<Complex64>> {
        let seq = self.seq;
        self.seq = self.seq.wrapping_add(1);
        for f in fragment(MsgType::IqUp, self.session, seq, &iq_to_bytes(samples))? {
            self.socket.send_to(&f.encode()?, self.server)?;
        }
        let payload = self.await_reply(seq, MsgType::IqDown)?;
        let out = bytes_to_iq(&payload)?;
        if out.len() != samples.len() {
            return Err(Error::Malformed(format!(
                "reply has {} samples, sent {}",
                out.len(),
                samples.len()
            )));
        }
        Ok(out)
    }

    /// Sends raw bytes (used to probe error handling).
    pub fn send_raw(&self, bytes: &[u8]) -> Result<()> {
        self.socket.send_to(bytes, self.server)?;
        Ok(())
    }

    /// Waits for any single message from the server.
    pub fn recv_message(&self) -> Result<WireMessage> {
        let deadline = Instant::now() + self.timeout;
        let mut buf = vec![0u8; MAX_DATAGRAM];
        loop {
            if Instant::now() >= deadline {
                return Err(Error::Timeout("no reply from emulator".into()));
            }
            match self.socket.recv_from(&mut buf) {
                Ok((n, _)) => return WireMessage::decode(&buf[..n]),
                Err(e)
                    if matches!(
                        e.kind(),
                        std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut
                    ) => {}
                Err(e) => return Err(e.into()),
            }
        }
    }

    fn await_reply(&self, seq: u32, want: MsgType) -> Result<Vec<u8>> {
        let deadline = Instant::now() + self.timeout;
        let mut reasm = Reassembler::new(self.timeout);
        let mut buf = vec![0u8; MAX_DATAGRAM];
        while Instant::now() < deadline {
            let n = match self.socket.recv_from(&mut buf) {
                Ok((n, _)) => n,
                Err(e)
                    if matches!(
                        e.kind(),
                        std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut
                    ) =>
                {
                    continue
                }
                Err(e) => return Err(e.into()),
            };
            let Ok(m) = WireMessage::decode(&buf[..n]) else {
                continue;
            };
            if m.session != self.session || m.seq != seq {
                continue;
            }
            if m.msg_type == MsgType::Error {
                return Err(Error::Malformed(format!(
                    "emulator error: {}",
                    String::from_utf8_lossy(&m.payload)
                )));
            }
            if m.msg_type != want {
                continue;
            }
            if let Some(done) = reasm.push(m, Instant::now())? {
                return Ok(done.payload);
            }
        }
        Err(Error::Timeout(format!(
            "no {want:?} for seq {seq} within {:?}",
            self.timeout
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wire::round_to_f32;

    fn server() -> EmulatorHandle {
        EmulatorServer::bind("127.0.0.1:0")
            .unwrap()
            .spawn()
            .unwrap()
    }

    fn ramp(n: usize) -> Vec<Complex64> {
        (0..n)
            .map(|i| Complex64::new((i as f64 * 0.01).sin(), (i as f64 * 0.02).cos()))
            .collect()
    }

    #[test]
    fn noiseless_awgn_is_identity_up_to_f32() {
        let h = server();
        let mut c = EmulatorClient::connect(h.addr(), 3, Duration::from_secs(5)).unwrap();
        c.configure(&ChannelSpec::noiseless(), 0).unwrap();
        let x = ramp(3000);
        assert_eq!(c.transmit(&x).unwrap(), round_to_f32(&x));
    }

    #[test]
    fn matches_local_channel() {
        let h = server();
        let spec = ChannelSpec::multipath(5, 15.0);
        let mut c = EmulatorClient::connect(h.addr(), 11, Duration::from_secs(5)).unwrap();
        c.configure(&spec, 42).unwrap();
        let ch = realize(&spec, EMULATOR_FFT, 42).unwrap();
        let mut rng = ch.noise_rng();
        for _ in 0..2 {
            let x = round_to_f32(&ramp(2000));
            let want = round_to_f32(&apply_time_domain(&x, &ch, EMULATOR_CP, &mut rng).samples);
            assert_eq!(c.transmit(&x).unwrap(), want);
        }
    }

    #[test]
    fn iq_before_config_is_an_error() {
        let h = server();
        let mut c = EmulatorClient::connect(h.addr(), 5, Duration::from_secs(2)).unwrap();
        assert!(matches!(c.transmit(&ramp(8)), Err(Error::Malformed(_))));
    }

    #[test]
    fn default_channel_serves_unconfigured_sessions() {
        let h = EmulatorServer::bind("127.0.0.1:0")
            .unwrap()
            .with_default_channel(ChannelSpec::noiseless(), 0)
            .unwrap()
            .spawn()
            .unwrap();
        let mut c = EmulatorClient::connect(h.addr(), 6, Duration::from_secs(5)).unwrap();
        let x = ramp(100);
        assert_eq!(c.transmit(&x).unwrap(), round_to_f32(&x));
        assert_eq!(c.transmit(&x).unwrap(), round_to_f32(&x));
    }

    #[test]
    fn bad_version_gets_error_reply() {
        let h = server();
        let c = EmulatorClient::connect(h.addr(), 8, Duration::from_secs(2)).unwrap();
        let mut b = WireMessage::single(MsgType::Config, 8, 0, vec![])
            .encode()
            .unwrap();
        b[4] = 7;
        c.send_raw(&b).unwrap();
        let m = c.recv_message().unwrap();
        assert_eq!((m.msg_type, m.session), (MsgType::Error, 8));
    }
}
