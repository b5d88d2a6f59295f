//! Device-under-test stage: built-in hearing-aid simulants and an adapter for
//! external black-box processors.

mod external;
mod filters;

pub use external::{
    calibrate_latency, external_exchange, serve, ChildEndpoint, Endpoint, EndpointSpec,
    CloseWrite, LatencyCalibration, LoopbackEndpoint, LoopbackProcessor, StreamEndpoint, BLOCK_SIZE,
};

use crate::error::{Error, Result};
use crate::signal::Waveform;
use filters::BandSplitter;
use std::collections::VecDeque;
use std::fmt;

const MIN_SAMPLE_RATE: u32 = 8_000;

#[derive(Clone, Debug, PartialEq)]
pub struct GainParams {
    /// One value (flat) or one value per band.
    pub gains_db: Vec<f64>,
    pub crossovers_hz: Vec<f64>,
}

impl Default for GainParams {
    fn default() -> Self {
        Self {
            gains_db: vec![0.0],
            crossovers_hz: vec![750.0, 2500.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompressorParams {
    pub gains_db: Vec<f64>,
    pub crossovers_hz: Vec<f64>,
    pub ratio: f64,
    /// Band level in dB SPL above which compression starts.
    pub knee_db: f64,
    pub attack_s: f64,
    pub release_s: f64,
}

impl Default for CompressorParams {
    fn default() -> Self {
        Self {
            gains_db: vec![0.0],
            crossovers_hz: vec![750.0, 2500.0],
            ratio: 2.0,
            knee_db: 45.0,
            attack_s: 0.005,
            release_s: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BeamformerParams {
    pub taps: usize,
    /// NLMS step size.
    pub mu: f64,
    /// Delay of the fixed branch, lets the adaptive filter act non-causally.
    pub delay: usize,
}

impl Default for BeamformerParams {
    fn default() -> Self {
        Self {
            taps: 64,
            mu: 0.01,
            delay: 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DeviceKind {
    Identity,
    Gain(GainParams),
    Compressor(CompressorParams),
    Beamformer(BeamformerParams),
    External(EndpointSpec),
    Chain(Vec<DeviceDescriptor>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeviceDescriptor {
    pub name: String,
    pub kind: DeviceKind,
}

impl DeviceDescriptor {
    pub fn identity() -> Self {
        Self::new(DeviceKind::Identity)
    }

    pub fn gain(gains_db: Vec<f64>) -> Self {
        Self::new(DeviceKind::Gain(GainParams {
            gains_db,
            ..GainParams::default()
        }))
    }

    pub fn compressor(params: CompressorParams) -> Self {
        Self::new(DeviceKind::Compressor(params))
    }

    pub fn beamformer() -> Self {
        Self::new(DeviceKind::Beamformer(BeamformerParams::default()))
    }

    pub fn new(kind: DeviceKind) -> Self {
        let mut d = Self {
            name: String::new(),
            kind,
        };
        d.name = d.to_string();
        d
    }

    pub fn is_identity(&self) -> bool {
        match &self.kind {
            DeviceKind::Identity => true,
            DeviceKind::Chain(stages) => stages.iter().all(Self::is_identity),
            _ => false,
        }
    }

    pub fn is_external(&self) -> bool {
        match &self.kind {
            DeviceKind::External(_) => true,
            DeviceKind::Chain(stages) => stages.iter().any(Self::is_external),
            _ => false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check_gains = |g: &[f64], x: &[f64]| -> Result<()> {
            if g.is_empty() || g.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("device gains must be finite and non-empty"));
            }
            if g.len() != 1 && g.len() != x.len() + 1 {
                return Err(Error::invalid(format!(
                    "{} gains for {} bands",
                    g.len(),
                    x.len() + 1
                )));
            }
            if x.windows(2).any(|w| w[1] <= w[0]) || x.iter().any(|f| *f <= 0.0) {
                return Err(Error::invalid("crossovers must be positive and increasing"));
            }
            Ok(())
        };
        match &self.kind {
            DeviceKind::Identity | DeviceKind::External(_) => Ok(()),
            DeviceKind::Gain(p) => check_gains(&p.gains_db, &p.crossovers_hz),
            DeviceKind::Compressor(p) => {
                check_gains(&p.gains_db, &p.crossovers_hz)?;
                if !(p.ratio >= 1.0) || !p.knee_db.is_finite() {
                    return Err(Error::invalid("compression ratio must be >= 1"));
                }
                if !(p.attack_s > 0.0 && p.release_s > 0.0) {
                    return Err(Error::invalid("attack and release must be positive"));
                }
                Ok(())
            }
            DeviceKind::Beamformer(p) => {
                if p.taps == 0 || !(p.mu > 0.0 && p.mu < 2.0) {
                    return Err(Error::invalid("beamformer needs taps > 0 and 0 < mu < 2"));
                }
                Ok(())
            }
            DeviceKind::Chain(stages) => stages.iter().try_for_each(Self::validate),
        }
    }

    /// A fresh streaming processor for built-in devices.
    pub fn processor(&self, sample_rate: u32, calibration_db: f64) -> Result<Box<dyn BlockProcessor>> {
        self.validate()?;
        if sample_rate < MIN_SAMPLE_RATE {
            return Err(Error::invalid(format!("unsupported sample rate {sample_rate} Hz")));
        }
        Ok(match &self.kind {
            DeviceKind::Identity => Box::new(IdentityProcessor),
            DeviceKind::Gain(p) => Box::new(GainProcessor::new(p, sample_rate)),
            DeviceKind::Compressor(p) => {
                Box::new(CompressorProcessor::new(p, sample_rate, calibration_db))
            }
            DeviceKind::Beamformer(p) => Box::new(Beamformer::new(p)),
            DeviceKind::Chain(stages) => Box::new(ChainProcessor(
                stages
                    .iter()
                    .map(|s| s.processor(sample_rate, calibration_db))
                    .collect::<Result<_>>()?,
            )),
            DeviceKind::External(_) => {
                return Err(Error::Device(
                    "external devices are not block processors; use process()".into(),
                ))
            }
        })
    }
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|g| format!("{g}")).collect::<Vec<_>>().join("/")
}

impl fmt::Display for DeviceDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            DeviceKind::Identity => write!(f, "identity"),
            DeviceKind::Gain(p) => write!(
                f,
                "gain:gains={},xover={}",
                fmt_list(&p.gains_db),
                fmt_list(&p.crossovers_hz)
            ),
            DeviceKind::Compressor(p) => write!(
                f,
                "compressor:gains={},xover={},ratio={},knee={},attack={},release={}",
                fmt_list(&p.gains_db),
                fmt_list(&p.crossovers_hz),
                p.ratio,
                p.knee_db,
                p.attack_s,
                p.release_s
            ),
            DeviceKind::Beamformer(p) => {
                write!(f, "beamformer:taps={},mu={},delay={}", p.taps, p.mu, p.delay)
            }
            DeviceKind::External(e) => write!(f, "{e}"),
            DeviceKind::Chain(stages) => {
                let parts: Vec<String> = stages.iter().map(|s| s.to_string()).collect();
                write!(f, "{}", parts.join("+"))
            }
        }
    }
}

fn parse_list(v: &str) -> Result<Vec<f64>> {
    v.split(['/', ','])
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::invalid(format!("bad number {s:?}")))
        })
        .collect()
}

fn parse_kv(args: &str) -> Result<Vec<(String, String)>> {
    args.split(',')
        .filter(|s| !s.is_empty())
        .map(|kv| match kv.split_once('=') {
            Some((k, v)) => Ok((k.trim().to_string(), v.trim().to_string())),
            None => Err(Error::invalid(format!("expected key=value, got {kv:?}"))),
        })
        .collect()
}

fn parse_f64(v: &str) -> Result<f64> {
    v.parse().map_err(|_| Error::invalid(format!("bad number {v:?}")))
}

impl std::str::FromStr for DeviceDescriptor {
    type Err = Error;

    /// `identity`, `gain:20`, `gain:gains=0/10/20`,
    /// `compressor:ratio=3,knee=50`, `beamformer`, `tcp:HOST:PORT`,
    /// `cmd:PROGRAM ARGS`, `loopback:delay=480`; stages joined with `+`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if !s.starts_with("cmd:") && s.contains('+') {
            let stages = s.split('+').map(str::parse).collect::<Result<Vec<_>>>()?;
            return Ok(Self::new(DeviceKind::Chain(stages)));
        }
        let (head, args) = s.split_once(':').unwrap_or((s, ""));
        let kind = match head {
            "identity" | "none" | "unaided" => DeviceKind::Identity,
            "gain" | "linear" => {
                let mut p = GainParams::default();
                if !args.is_empty() && !args.contains('=') {
                    p.gains_db = parse_list(args)?;
                } else {
                    for (k, v) in parse_kv(args)? {
                        match k.as_str() {
                            "gains" => p.gains_db = parse_list(&v)?,
                            "xover" => p.crossovers_hz = parse_list(&v)?,
                            _ => return Err(Error::invalid(format!("unknown gain key {k:?}"))),
                        }
                    }
                }
                DeviceKind::Gain(p)
            }
            "compressor" => {
                let mut p = CompressorParams::default();
                for (k, v) in parse_kv(args)? {
                    match k.as_str() {
                        "gains" => p.gains_db = parse_list(&v)?,
                        "xover" => p.crossovers_hz = parse_list(&v)?,
                        "ratio" => p.ratio = parse_f64(&v)?,
                        "knee" => p.knee_db = parse_f64(&v)?,
                        "attack" => p.attack_s = parse_f64(&v)?,
                        "release" => p.release_s = parse_f64(&v)?,
                        _ => {
                            return Err(Error::invalid(format!("unknown compressor key {k:?}")))
                        }
                    }
                }
                DeviceKind::Compressor(p)
            }
            "beamformer" => {
                let mut p = BeamformerParams::default();
                for (k, v) in parse_kv(args)? {
                    match k.as_str() {
                        "taps" => p.taps = parse_f64(&v)? as usize,
                        "mu" => p.mu = parse_f64(&v)?,
                        "delay" => p.delay = parse_f64(&v)? as usize,
                        _ => {
                            return Err(Error::invalid(format!("unknown beamformer key {k:?}")))
                        }
                    }
                }
                DeviceKind::Beamformer(p)
            }
            "tcp" | "cmd" | "loopback" => DeviceKind::External(s.parse()?),
            other => return Err(Error::invalid(format!("unknown device {other:?}"))),
        };
        let d = Self::new(kind);
        d.validate()?;
        Ok(d)
    }
}

/// Streaming stereo (or mono) processing with internal state.
pub trait BlockProcessor: Send {
    /// Process one block in place; all channels have equal length.
    fn process_block(&mut self, channels: &mut [Vec<f64>]) -> Result<()>;
}

struct IdentityProcessor;

impl BlockProcessor for IdentityProcessor {
    fn process_block(&mut self, _: &mut [Vec<f64>]) -> Result<()> {
        Ok(())
    }
}

fn band_gains(gains_db: &[f64], bands: usize) -> Vec<f64> {
    (0..bands)
        .map(|k| 10f64.powf(gains_db[if gains_db.len() == 1 { 0 } else { k }] / 20.0))
        .collect()
}

struct GainProcessor {
    gains: Vec<f64>,
    splitters: Vec<BandSplitter>,
    flat: bool,
    crossovers: Vec<f64>,
    sample_rate: u32,
}

impl GainProcessor {
    fn new(p: &GainParams, sample_rate: u32) -> Self {
        let bands = p.crossovers_hz.len() + 1;
        let gains = band_gains(&p.gains_db, bands);
        let flat = gains.windows(2).all(|w| w[0] == w[1]);
        Self {
            gains,
            splitters: Vec::new(),
            flat,
            crossovers: p.crossovers_hz.clone(),
            sample_rate,
        }
    }
}

impl BlockProcessor for GainProcessor {
    fn process_block(&mut self, channels: &mut [Vec<f64>]) -> Result<()> {
        if self.flat {
            let g = self.gains[0];
            channels.iter_mut().flatten().for_each(|x| *x *= g);
            return Ok(());
        }
        while self.splitters.len() < channels.len() {
            self.splitters
                .push(BandSplitter::new(&self.crossovers, self.sample_rate));
        }
        let mut bands = vec![0.0; self.gains.len()];
        for (ch, sp) in channels.iter_mut().zip(&mut self.splitters) {
            for x in ch.iter_mut() {
                sp.split(*x, &mut bands);
                *x = bands.iter().zip(&self.gains).map(|(b, g)| b * g).sum();
            }
        }
        Ok(())
    }
}

struct CompressorProcessor {
    params: CompressorParams,
    gains_db: Vec<f64>,
    splitters: Vec<BandSplitter>,
    envelopes: Vec<Vec<f64>>,
    attack: f64,
    release: f64,
    calibration_db: f64,
    sample_rate: u32,
}

impl CompressorProcessor {
    fn new(p: &CompressorParams, sample_rate: u32, calibration_db: f64) -> Self {
        let bands = p.crossovers_hz.len() + 1;
        let gains_db = (0..bands)
            .map(|k| p.gains_db[if p.gains_db.len() == 1 { 0 } else { k }])
            .collect();
        let coeff = |tau: f64| (-1.0 / (tau * sample_rate as f64)).exp();
        Self {
            params: p.clone(),
            gains_db,
            splitters: Vec::new(),
            envelopes: Vec::new(),
            attack: coeff(p.attack_s),
            release: coeff(p.release_s),
            calibration_db,
            sample_rate,
        }
    }

    /// Static input/output curve: gain in dB for a band level in dB SPL.
    fn static_gain_db(&self, band: usize, level_db: f64) -> f64 {
        let over = (level_db - self.params.knee_db).max(0.0);
        self.gains_db[band] - over * (1.0 - 1.0 / self.params.ratio)
    }
}

impl BlockProcessor for CompressorProcessor {
    fn process_block(&mut self, channels: &mut [Vec<f64>]) -> Result<()> {
        let nb = self.gains_db.len();
        while self.splitters.len() < channels.len() {
            self.splitters
                .push(BandSplitter::new(&self.params.crossovers_hz, self.sample_rate));
            self.envelopes.push(vec![0.0; nb]);
        }
        let mut bands = vec![0.0; nb];
        for c in 0..channels.len() {
            for i in 0..channels[c].len() {
                let x = channels[c][i];
                self.splitters[c].split(x, &mut bands);
                let mut y = 0.0;
                for (k, &b) in bands.iter().enumerate() {
                    let p = b * b;
                    let env = &mut self.envelopes[c][k];
                    let a = if p > *env { self.attack } else { self.release };
                    *env = a * *env + (1.0 - a) * p;
                    let level = if *env > 0.0 {
                        self.calibration_db + 10.0 * (*env / 0.5).log10()
                    } else {
                        f64::NEG_INFINITY
                    };
                    y += b * 10f64.powf(self.static_gain_db(k, level) / 20.0);
                }
                channels[c][i] = y;
            }
        }
        Ok(())
    }
}

/// Two-microphone generalized sidelobe canceller steered to the front.
///
/// The fixed branch is the channel mean, the blocking branch the channel
/// difference (which carries no frontal signal); an NLMS filter on the
/// blocking branch removes whatever of it is correlated with the fixed
/// branch. Output is the same on both channels.
pub struct Beamformer {
    params: BeamformerParams,
    weights: Vec<f64>,
    fixed_delay: VecDeque<f64>,
    history: VecDeque<f64>,
    power: f64,
    fixed_power: f64,
    block_power: f64,
}

/// Smoothing of the branch powers used for adaptation control.
const CONTROL_SMOOTHING: f64 = 0.995;

impl Beamformer {
    pub fn new(params: &BeamformerParams) -> Self {
        Self {
            params: params.clone(),
            weights: vec![0.0; params.taps],
            fixed_delay: VecDeque::from(vec![0.0; params.delay]),
            history: VecDeque::from(vec![0.0; params.taps]),
            power: 0.0,
            fixed_power: 0.0,
            block_power: 0.0,
        }
    }

    /// Advance one sample; returns the output and the filter state used
    /// before adaptation (for shadow processing of components).
    fn step(&mut self, l: f64, r: f64) -> f64 {
        let fixed = 0.5 * (l + r);
        let block = 0.5 * (l - r);
        self.fixed_delay.push_back(fixed);
        let fd = self.fixed_delay.pop_front().unwrap_or(fixed);
        let old = self.history.pop_back().unwrap_or(0.0);
        self.history.push_front(block);
        self.power += block * block - old * old;
        self.power = self.power.max(0.0);
        let est: f64 = self
            .weights
            .iter()
            .zip(&self.history)
            .map(|(w, b)| w * b)
            .sum();
        let y = fd - est;
        // adapt slowly while the frontal (fixed-branch-only) signal dominates
        let a = CONTROL_SMOOTHING;
        self.fixed_power = a * self.fixed_power + (1.0 - a) * fixed * fixed;
        self.block_power = a * self.block_power + (1.0 - a) * block * block;
        let control = (self.block_power / (self.fixed_power + 1e-20)).min(1.0);
        let norm = self.params.mu * control * y / (self.power + 1e-10);
        for (w, b) in self.weights.iter_mut().zip(&self.history) {
            *w += norm * b;
        }
        y
    }
}

/// Applies a frozen copy of a beamformer's trajectory to a component signal.
struct Shadow {
    fixed_delay: VecDeque<f64>,
    history: VecDeque<f64>,
}

impl Shadow {
    fn new(p: &BeamformerParams) -> Self {
        Self {
            fixed_delay: VecDeque::from(vec![0.0; p.delay]),
            history: VecDeque::from(vec![0.0; p.taps]),
        }
    }

    fn step(&mut self, l: f64, r: f64, weights: &[f64]) -> f64 {
        self.fixed_delay.push_back(0.5 * (l + r));
        let fd = self.fixed_delay.pop_front().unwrap_or(0.0);
        self.history.pop_back();
        self.history.push_front(0.5 * (l - r));
        fd - weights
            .iter()
            .zip(&self.history)
            .map(|(w, b)| w * b)
            .sum::<f64>()
    }
}

impl BlockProcessor for Beamformer {
    fn process_block(&mut self, channels: &mut [Vec<f64>]) -> Result<()> {
        if channels.len() != 2 {
            return Err(Error::ChannelLayout("beamformer needs stereo input".into()));
        }
        let (left, right) = channels.split_at_mut(1);
        for (l, r) in left[0].iter_mut().zip(right[0].iter_mut()) {
            let y = self.step(*l, *r);
            *l = y;
            *r = y;
        }
        Ok(())
    }
}

struct ChainProcessor(Vec<Box<dyn BlockProcessor>>);

impl BlockProcessor for ChainProcessor {
    fn process_block(&mut self, channels: &mut [Vec<f64>]) -> Result<()> {
        self.0.iter_mut().try_for_each(|p| p.process_block(channels))
    }
}

/// Run a device over a whole waveform. Output has the input's length and rate.
pub fn process(device: &DeviceDescriptor, input: &Waveform) -> Result<Waveform> {
    match &device.kind {
        DeviceKind::Identity => Ok(input.clone()),
        DeviceKind::External(spec) => {
            let mut endpoint = spec.connect()?;
            let cal = calibrate_latency(endpoint.as_mut(), input.sample_rate(), input.num_channels())?;
            let out = external_exchange(endpoint.as_mut(), input, &cal);
            endpoint.close()?;
            out
        }
        DeviceKind::Chain(stages) if device.is_external() => {
            stages.iter().try_fold(input.clone(), |w, s| process(s, &w))
        }
        _ => {
            let mut p = device.processor(input.sample_rate(), input.calibration_db())?;
            let mut channels = input.channels().to_vec();
            p.process_block(&mut channels)?;
            Waveform::new(channels, input.sample_rate(), input.calibration_db())
        }
    }
}

/// Beamform a stereo mixture.
pub fn beamform(input: &Waveform, params: &BeamformerParams) -> Result<Waveform> {
    process(&DeviceDescriptor::new(DeviceKind::Beamformer(params.clone())), input)
}

/// Beamform a mixture while applying the identical filter trajectory to its
/// separately known speech and noise components. Returns (mix, speech, noise)
/// outputs; only meaningful in test harnesses where components are known.
pub fn beamform_components(
    mix: &Waveform,
    speech: &Waveform,
    noise: &Waveform,
    params: &BeamformerParams,
) -> Result<(Waveform, Waveform, Waveform)> {
    for w in [mix, speech, noise] {
        if !w.is_stereo() {
            return Err(Error::ChannelLayout("beamformer needs stereo input".into()));
        }
        if w.len() != mix.len() {
            return Err(Error::LengthMismatch {
                expected: mix.len(),
                actual: w.len(),
            });
        }
    }
    let mut bf = Beamformer::new(params);
    let mut sh_s = Shadow::new(params);
    let mut sh_n = Shadow::new(params);
    let n = mix.len();
    let (mut y, mut ys, mut yn) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for i in 0..n {
        ys.push(sh_s.step(speech.channel(0)[i], speech.channel(1)[i], &bf.weights));
        yn.push(sh_n.step(noise.channel(0)[i], noise.channel(1)[i], &bf.weights));
        y.push(bf.step(mix.channel(0)[i], mix.channel(1)[i]));
    }
    let mk = |v: Vec<f64>| Waveform::stereo(v.clone(), v, mix.sample_rate(), mix.calibration_db());
    Ok((mk(y)?, mk(ys)?, mk(yn)?))
}

impl serde::Serialize for DeviceDescriptor {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> serde::Deserialize<'de> for DeviceDescriptor {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests;
