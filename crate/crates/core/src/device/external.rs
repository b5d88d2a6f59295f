//! Block exchange with external processors.
//!
//! Wire format: every frame is a little-endian `u64` byte length followed by
//! the payload. The client opens with a 6-byte handshake (`u32` sample rate,
//! `u16` channel count) which the server echoes. A stream is a run of data
//! frames of interleaved `f32` LE samples terminated by a zero-length frame;
//! the server answers each data frame with one processed frame and closes
//! the stream with its own zero-length frame. Closing the connection ends the
//! session.

use crate::error::{Error, Result};
use crate::signal::Waveform;
use std::fmt;
use std::io::{BufReader, BufWriter, Read, Write};
use std::net::TcpStream;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::time::Duration;

/// Default samples per channel in one data frame.
pub const BLOCK_SIZE: usize = 4096;
const DEFAULT_TIMEOUT: Duration = Duration::from_secs(10);
/// Longest delay `calibrate_latency` looks for, in samples.
const MAX_CALIBRATION_DELAY: usize = 8_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LatencyCalibration {
    /// Round-trip delay of channel 0 in samples.
    pub delay: usize,
    /// Delay of channel 1 minus delay of channel 0.
    pub skew: i64,
}

impl LatencyCalibration {
    pub fn channel_delay(&self, channel: usize) -> usize {
        if channel == 0 {
            self.delay
        } else {
            (self.delay as i64 + self.skew).max(0) as usize
        }
    }
}

pub trait Endpoint: Send {
    fn handshake(&mut self, sample_rate: u32, channels: u16) -> Result<()>;
    /// Send a stream of interleaved blocks and collect the returned blocks.
    fn run_stream(&mut self, blocks: &[Vec<f32>]) -> Result<Vec<Vec<f32>>>;
    fn close(&mut self) -> Result<()>;
}

#[derive(Clone, Debug, PartialEq)]
pub enum EndpointSpec {
    /// Launch a program speaking the protocol on stdin/stdout.
    Command { program: String, args: Vec<String> },
    Tcp(String),
    /// In-process loopback with a configurable delay line.
    Loopback(LoopbackProcessor),
}

impl EndpointSpec {
    pub fn connect(&self) -> Result<Box<dyn Endpoint>> {
        Ok(match self {
            EndpointSpec::Command { program, args } => {
                Box::new(ChildEndpoint::spawn(program, args)?)
            }
            EndpointSpec::Tcp(addr) => {
                let stream = TcpStream::connect(addr)
                    .map_err(|e| Error::Device(format!("cannot connect to {addr}: {e}")))?;
                let reader = stream.try_clone()?;
                Box::new(StreamEndpoint::new(reader, stream))
            }
            EndpointSpec::Loopback(p) => Box::new(LoopbackEndpoint::new(p.clone())),
        })
    }
}

impl fmt::Display for EndpointSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EndpointSpec::Command { program, args } => {
                write!(f, "cmd:{program}")?;
                args.iter().try_for_each(|a| write!(f, " {a}"))
            }
            EndpointSpec::Tcp(addr) => write!(f, "tcp:{addr}"),
            EndpointSpec::Loopback(p) => write!(
                f,
                "loopback:delay={},skew={},gain={},drop={},silent={}",
                p.delay,
                p.skew,
                p.gain,
                p.drop_block.map_or(-1, |d| d as i64),
                p.silent as u8
            ),
        }
    }
}

impl std::str::FromStr for EndpointSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if let Some(cmd) = s.strip_prefix("cmd:") {
            let mut parts = cmd.split_whitespace().map(String::from);
            let program = parts
                .next()
                .ok_or_else(|| Error::invalid("empty endpoint command"))?;
            return Ok(EndpointSpec::Command {
                program,
                args: parts.collect(),
            });
        }
        if let Some(addr) = s.strip_prefix("tcp:") {
            return Ok(EndpointSpec::Tcp(addr.to_string()));
        }
        if let Some(rest) = s.strip_prefix("loopback") {
            let mut p = LoopbackProcessor::default();
            for kv in rest.trim_start_matches(':').split(',').filter(|x| !x.is_empty()) {
                let (k, v) = kv
                    .split_once('=')
                    .ok_or_else(|| Error::invalid(format!("expected key=value, got {kv:?}")))?;
                let num: f64 = v
                    .parse()
                    .map_err(|_| Error::invalid(format!("bad number {v:?}")))?;
                match k {
                    "delay" => p.delay = num as usize,
                    "skew" => p.skew = num as usize,
                    "gain" => p.gain = num,
                    "drop" => p.drop_block = (num >= 0.0).then_some(num as usize),
                    "silent" => p.silent = num != 0.0,
                    _ => return Err(Error::invalid(format!("unknown loopback key {k:?}"))),
                }
            }
            return Ok(EndpointSpec::Loopback(p));
        }
        Err(Error::invalid(format!("unknown endpoint {s:?}")))
    }
}

/// Reference processor for loopback endpoints and the `serve` helper:
/// a per-channel delay line with gain.
#[derive(Clone, Debug, PartialEq)]
pub struct LoopbackProcessor {
    pub delay: usize,
    /// Extra delay of channel 1.
    pub skew: usize,
    pub gain: f64,
    /// Index of a returned block to leave out of every stream.
    pub drop_block: Option<usize>,
    /// Return zeros instead of the input.
    pub silent: bool,
}

impl Default for LoopbackProcessor {
    fn default() -> Self {
        Self {
            delay: 0,
            skew: 0,
            gain: 1.0,
            drop_block: None,
            silent: false,
        }
    }
}

struct LoopbackState {
    lines: Vec<std::collections::VecDeque<f32>>,
    block_index: usize,
}

impl LoopbackProcessor {
    fn state(&self, channels: usize) -> LoopbackState {
        LoopbackState {
            lines: (0..channels)
                .map(|c| {
                    let d = self.delay + if c == 1 { self.skew } else { 0 };
                    std::iter::repeat_n(0.0, d).collect()
                })
                .collect(),
            block_index: 0,
        }
    }

    fn process(&self, st: &mut LoopbackState, block: &[f32]) -> Option<Vec<f32>> {
        let nch = st.lines.len();
        let mut out = Vec::with_capacity(block.len());
        for (i, &x) in block.iter().enumerate() {
            let line = &mut st.lines[i % nch];
            line.push_back(x);
            let y = line.pop_front().unwrap_or(0.0);
            out.push(if self.silent { 0.0 } else { y * self.gain as f32 });
        }
        let idx = st.block_index;
        st.block_index += 1;
        (self.drop_block != Some(idx)).then_some(out)
    }
}

pub struct LoopbackEndpoint {
    processor: LoopbackProcessor,
    channels: usize,
}

impl LoopbackEndpoint {
    pub fn new(processor: LoopbackProcessor) -> Self {
        Self {
            processor,
            channels: 0,
        }
    }
}

impl Endpoint for LoopbackEndpoint {
    fn handshake(&mut self, _sample_rate: u32, channels: u16) -> Result<()> {
        self.channels = channels as usize;
        Ok(())
    }

    fn run_stream(&mut self, blocks: &[Vec<f32>]) -> Result<Vec<Vec<f32>>> {
        if self.channels == 0 {
            return Err(Error::Device("stream before handshake".into()));
        }
        let mut st = self.processor.state(self.channels);
        Ok(blocks
            .iter()
            .filter_map(|b| self.processor.process(&mut st, b))
            .collect())
    }

    fn close(&mut self) -> Result<()> {
        Ok(())
    }
}

fn write_frame<W: Write>(w: &mut W, payload: &[u8]) -> std::io::Result<()> {
    w.write_all(&(payload.len() as u64).to_le_bytes())?;
    w.write_all(payload)
}

/// `Ok(None)` on clean end of input before a frame starts.
fn read_frame<R: Read>(r: &mut R) -> std::io::Result<Option<Vec<u8>>> {
    let mut len = [0u8; 8];
    let mut got = 0;
    while got < 8 {
        let n = r.read(&mut len[got..])?;
        if n == 0 {
            if got == 0 {
                return Ok(None);
            }
            return Err(std::io::ErrorKind::UnexpectedEof.into());
        }
        got += n;
    }
    let len = u64::from_le_bytes(len) as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    Ok(Some(buf))
}

fn encode(block: &[f32]) -> Vec<u8> {
    block.iter().flat_map(|x| x.to_le_bytes()).collect()
}

fn decode(bytes: &[u8]) -> Result<Vec<f32>> {
    if bytes.len() % 4 != 0 {
        return Err(Error::Device(format!("frame of {} bytes is not f32 data", bytes.len())));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

fn handshake_payload(sample_rate: u32, channels: u16) -> Vec<u8> {
    let mut v = sample_rate.to_le_bytes().to_vec();
    v.extend_from_slice(&channels.to_le_bytes());
    v
}

/// A byte sink whose end-of-stream can be signalled to the peer.
pub trait CloseWrite: Write + Send {
    fn close_write(&mut self) -> std::io::Result<()>;
}

impl CloseWrite for TcpStream {
    fn close_write(&mut self) -> std::io::Result<()> {
        self.shutdown(std::net::Shutdown::Write)
    }
}

impl CloseWrite for std::os::unix::net::UnixStream {
    fn close_write(&mut self) -> std::io::Result<()> {
        self.shutdown(std::net::Shutdown::Write)
    }
}

impl CloseWrite for ChildStdin {
    fn close_write(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

/// Client side of the protocol over any byte stream. Incoming frames are
/// read on a background thread so writing can never deadlock.
pub struct StreamEndpoint<W: CloseWrite> {
    writer: Option<BufWriter<W>>,
    frames: Receiver<std::io::Result<Option<Vec<u8>>>>,
    timeout: Duration,
}

impl<W: CloseWrite> StreamEndpoint<W> {
    pub fn new<R: Read + Send + 'static>(reader: R, writer: W) -> Self {
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            let mut reader = BufReader::new(reader);
            loop {
                let f = read_frame(&mut reader);
                let stop = !matches!(f, Ok(Some(_)));
                if tx.send(f).is_err() || stop {
                    break;
                }
            }
        });
        Self {
            writer: Some(BufWriter::new(writer)),
            frames: rx,
            timeout: DEFAULT_TIMEOUT,
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    fn writer(&mut self) -> Result<&mut BufWriter<W>> {
        self.writer
            .as_mut()
            .ok_or_else(|| Error::Device("endpoint already closed".into()))
    }

    fn next_frame(&mut self) -> Result<Vec<u8>> {
        match self.frames.recv_timeout(self.timeout) {
            Ok(Ok(Some(f))) => Ok(f),
            Ok(Ok(None)) | Err(RecvTimeoutError::Disconnected) => {
                Err(Error::Device("endpoint closed the connection".into()))
            }
            Ok(Err(e)) => Err(e.into()),
            Err(RecvTimeoutError::Timeout) => Err(Error::Timeout(self.timeout)),
        }
    }
}

impl<W: CloseWrite> Endpoint for StreamEndpoint<W> {
    fn handshake(&mut self, sample_rate: u32, channels: u16) -> Result<()> {
        let hs = handshake_payload(sample_rate, channels);
        let w = self.writer()?;
        write_frame(w, &hs)?;
        w.flush()?;
        let ack = self.next_frame()?;
        if ack != hs {
            return Err(Error::Device("endpoint rejected the handshake".into()));
        }
        Ok(())
    }

    fn run_stream(&mut self, blocks: &[Vec<f32>]) -> Result<Vec<Vec<f32>>> {
        let w = self.writer()?;
        for b in blocks {
            write_frame(w, &encode(b))?;
        }
        write_frame(w, &[])?;
        w.flush()?;
        let mut out = Vec::with_capacity(blocks.len());
        loop {
            let f = self.next_frame()?;
            if f.is_empty() {
                return Ok(out);
            }
            out.push(decode(&f)?);
        }
    }

    fn close(&mut self) -> Result<()> {
        if let Some(w) = self.writer.take() {
            let mut inner = w.into_inner().map_err(|e| e.into_error())?;
            inner.close_write()?;
        }
        Ok(())
    }
}

/// A child process speaking the protocol on its stdin/stdout.
pub struct ChildEndpoint {
    child: Child,
    inner: Option<StreamEndpoint<ChildStdin>>,
}

impl ChildEndpoint {
    pub fn spawn(program: &str, args: &[String]) -> Result<Self> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Device(format!("cannot launch {program}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        Ok(Self {
            child,
            inner: Some(StreamEndpoint::new(stdout, stdin)),
        })
    }

    fn inner(&mut self) -> Result<&mut StreamEndpoint<ChildStdin>> {
        self.inner
            .as_mut()
            .ok_or_else(|| Error::Device("endpoint already closed".into()))
    }
}

impl Endpoint for ChildEndpoint {
    fn handshake(&mut self, sample_rate: u32, channels: u16) -> Result<()> {
        self.inner()?.handshake(sample_rate, channels)
    }

    fn run_stream(&mut self, blocks: &[Vec<f32>]) -> Result<Vec<Vec<f32>>> {
        self.inner()?.run_stream(blocks)
    }

    fn close(&mut self) -> Result<()> {
        if let Some(mut inner) = self.inner.take() {
            inner.close()?;
        }
        self.child.wait()?;
        Ok(())
    }
}

impl Drop for ChildEndpoint {
    fn drop(&mut self) {
        if self.inner.is_some() {
            let _ = self.child.kill();
            let _ = self.child.wait();
        }
    }
}

/// Server side: answer one session on `reader`/`writer` with `processor`.
pub fn serve<R: Read, W: Write>(reader: R, writer: W, processor: &LoopbackProcessor) -> Result<()> {
    let mut reader = BufReader::new(reader);
    let mut writer = BufWriter::new(writer);
    let hs = read_frame(&mut reader)?.ok_or_else(|| Error::Device("no handshake".into()))?;
    if hs.len() != 6 {
        return Err(Error::Device("malformed handshake".into()));
    }
    let channels = u16::from_le_bytes([hs[4], hs[5]]) as usize;
    if channels == 0 {
        return Err(Error::Device("zero channels in handshake".into()));
    }
    write_frame(&mut writer, &hs)?;
    writer.flush()?;
    let mut st = processor.state(channels);
    while let Some(frame) = read_frame(&mut reader)? {
        if frame.is_empty() {
            write_frame(&mut writer, &[])?;
            writer.flush()?;
            st = processor.state(channels);
            continue;
        }
        if let Some(out) = processor.process(&mut st, &decode(&frame)?) {
            write_frame(&mut writer, &encode(&out))?;
        }
    }
    writer.flush()?;
    Ok(())
}

fn interleave(channels: &[Vec<f64>], total: usize, block: usize) -> Vec<Vec<f32>> {
    let nch = channels.len();
    let mut blocks = Vec::new();
    let mut start = 0;
    while start < total {
        let end = (start + block).min(total);
        let mut b = Vec::with_capacity((end - start) * nch);
        for i in start..end {
            for ch in channels {
                b.push(ch.get(i).copied().unwrap_or(0.0) as f32);
            }
        }
        blocks.push(b);
        start = end;
    }
    blocks
}

fn deinterleave(blocks: &[Vec<f32>], nch: usize) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::new(); nch];
    for (i, x) in blocks.iter().flatten().enumerate() {
        out[i % nch].push(*x as f64);
    }
    out
}

/// Send an impulse and locate it in the returned signal of every channel.
pub fn calibrate_latency(
    endpoint: &mut dyn Endpoint,
    sample_rate: u32,
    channels: usize,
) -> Result<LatencyCalibration> {
    endpoint.handshake(sample_rate, channels as u16)?;
    let skew_limit = (sample_rate as usize) / 100;
    let total = (MAX_CALIBRATION_DELAY + skew_limit + 1).div_ceil(BLOCK_SIZE) * BLOCK_SIZE;
    let mut probe = vec![vec![0.0; total]; channels];
    for ch in probe.iter_mut() {
        ch[0] = 0.5;
    }
    let returned = deinterleave(&endpoint.run_stream(&interleave(&probe, total, BLOCK_SIZE))?, channels);
    let mut delays = Vec::with_capacity(channels);
    for ch in &returned {
        let (idx, peak) = ch
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |(bi, bv), (i, v)| if v.abs() > bv { (i, v.abs()) } else { (bi, bv) });
        let rest = ch.iter().map(|v| v * v).sum::<f64>() - peak * peak;
        let floor = (rest / ch.len().max(1) as f64).sqrt();
        if !(peak > 1e-6 && peak > 10.0 * floor) {
            return Err(Error::NoImpulse);
        }
        delays.push(idx);
    }
    let delay = delays[0];
    let skew = delays.get(1).map_or(0, |&d| d as i64 - delay as i64);
    if skew.unsigned_abs() as usize >= skew_limit {
        return Err(Error::Device(format!("channel skew of {skew} samples")));
    }
    Ok(LatencyCalibration { delay, skew })
}

/// Pass a waveform through the endpoint block by block and remove the
/// calibrated delay from every channel.
pub fn external_exchange(
    endpoint: &mut dyn Endpoint,
    input: &Waveform,
    calibration: &LatencyCalibration,
) -> Result<Waveform> {
    let n = input.len();
    let nch = input.num_channels();
    let max_delay = (0..nch).map(|c| calibration.channel_delay(c)).max().unwrap_or(0);
    let total = (n + max_delay).div_ceil(BLOCK_SIZE).max(1) * BLOCK_SIZE;
    let blocks = interleave(input.channels(), total, BLOCK_SIZE);
    let returned = endpoint.run_stream(&blocks)?;
    let got: usize = returned.iter().map(Vec::len).sum();
    if got != total * nch {
        return Err(Error::LengthMismatch {
            expected: total * nch,
            actual: got,
        });
    }
    let raw = deinterleave(&returned, nch);
    let channels = raw
        .into_iter()
        .enumerate()
        .map(|(c, ch)| {
            let d = calibration.channel_delay(c);
            ch[d..d + n].to_vec()
        })
        .collect();
    Waveform::new(channels, input.sample_rate(), input.calibration_db())
}
