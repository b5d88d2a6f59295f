use super::{dbspl_to_rms, MatrixCorpus, Waveform};
use crate::error::{Error, Result};
use crate::seed;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskerKind {
    Silence,
    Stationary,
    Fluctuating,
    Babble,
}

impl MaskerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MaskerKind::Silence => "silence",
            MaskerKind::Stationary => "stationary",
            MaskerKind::Fluctuating => "fluctuating",
            MaskerKind::Babble => "babble",
        }
    }
}

impl std::str::FromStr for MaskerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "silence" | "none" => Ok(MaskerKind::Silence),
            "stationary" | "icra1m" | "ssn" => Ok(MaskerKind::Stationary),
            "fluctuating" | "icra5-250m" => Ok(MaskerKind::Fluctuating),
            "babble" => Ok(MaskerKind::Babble),
            other => Err(Error::invalid(format!("unknown masker {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaskerSpec {
    pub kind: MaskerKind,
    pub level_db: f64,
    /// Longest pause of the fluctuating masker.
    pub gap_max_s: f64,
    pub seed: u64,
}

impl Default for MaskerSpec {
    fn default() -> Self {
        Self {
            kind: MaskerKind::Stationary,
            level_db: 65.0,
            gap_max_s: 0.25,
            seed: 7,
        }
    }
}

impl MaskerSpec {
    pub fn new(kind: MaskerKind, level_db: f64) -> Self {
        Self {
            kind,
            level_db,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=120.0).contains(&self.level_db) {
            return Err(Error::invalid(format!(
                "masker level {} outside [0, 120] dB SPL",
                self.level_db
            )));
        }
        if !(self.gap_max_s > 0.0) {
            return Err(Error::invalid("gap_max must be positive"));
        }
        Ok(())
    }
}

/// A masker buffer at its nominal level from which excerpts are drawn.
#[derive(Clone, Debug)]
pub struct MaskerSignal {
    waveform: Waveform,
    level_db: f64,
}

impl MaskerSignal {
    pub fn new(waveform: Waveform) -> Result<Self> {
        if waveform.is_stereo() {
            return Err(Error::ChannelLayout("masker must be mono".into()));
        }
        if waveform.is_empty() {
            return Err(Error::invalid("empty masker"));
        }
        let level_db = waveform.level_dbspl();
        Ok(Self { waveform, level_db })
    }

    pub fn waveform(&self) -> &Waveform {
        &self.waveform
    }

    /// Nominal level; `-inf` for silence.
    pub fn level_db(&self) -> f64 {
        self.level_db
    }

    pub fn is_silent(&self) -> bool {
        !self.level_db.is_finite()
    }

    /// `len` samples starting at a random offset, wrapping around.
    pub fn excerpt<R: Rng + ?Sized>(&self, len: usize, rng: &mut R) -> Vec<f64> {
        let buf = self.waveform.channel(0);
        let start = rng.random_range(0..buf.len());
        buf.iter().cycle().skip(start).take(len).copied().collect()
    }
}

/// Synthesizes maskers matched to the long-term spectrum of a corpus.
pub struct MaskerGenerator<'a> {
    corpus: &'a MatrixCorpus,
    /// Long-term average power per bin of a 1024-point spectrum.
    ltass: Vec<f64>,
}

const LTASS_FFT: usize = 1024;

impl<'a> MaskerGenerator<'a> {
    pub fn new(corpus: &'a MatrixCorpus) -> Self {
        let mut planner = FftPlanner::<f64>::new();
        let fft = planner.plan_fft_forward(LTASS_FFT);
        let window: Vec<f64> = (0..LTASS_FFT)
            .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / LTASS_FFT as f64).cos())
            .collect();
        let mut acc = vec![0.0; LTASS_FFT / 2 + 1];
        let mut frames = 0usize;
        let mut buf = vec![Complex::new(0.0, 0.0); LTASS_FFT];
        for token in corpus.tokens() {
            let x = token.waveform.channel(0);
            let mut start = 0;
            while start + LTASS_FFT <= x.len() {
                for (b, (s, w)) in buf.iter_mut().zip(x[start..].iter().zip(&window)) {
                    *b = Complex::new(s * w, 0.0);
                }
                fft.process(&mut buf);
                for (a, b) in acc.iter_mut().zip(&buf) {
                    *a += b.norm_sqr();
                }
                frames += 1;
                start += LTASS_FFT / 2;
            }
        }
        let ltass = acc.into_iter().map(|a| a / frames.max(1) as f64).collect();
        Self { corpus, ltass }
    }

    fn ltass_at(&self, freq: f64) -> f64 {
        let sr = self.corpus.sample_rate() as f64;
        let pos = freq / sr * LTASS_FFT as f64;
        let i = pos.floor() as usize;
        if i + 1 >= self.ltass.len() {
            return *self.ltass.last().unwrap();
        }
        let frac = pos - i as f64;
        self.ltass[i] * (1.0 - frac) + self.ltass[i + 1] * frac
    }

    /// Band-limited speech-shaped Gaussian noise, one vector per band.
    fn shaped_noise<R: Rng>(&self, len: usize, band_edges: &[f64], rng: &mut R) -> Vec<Vec<f64>> {
        let n = len.next_power_of_two().max(LTASS_FFT);
        let sr = self.corpus.sample_rate() as f64;
        let mut spectrum = vec![Complex::new(0.0, 0.0); n];
        for (k, bin) in spectrum.iter_mut().enumerate().take(n / 2 + 1).skip(1) {
            let mag = self.ltass_at(k as f64 * sr / n as f64).sqrt();
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            *bin = Complex::new(re, im) * mag;
        }
        let mut planner = FftPlanner::<f64>::new();
        let ifft = planner.plan_fft_inverse(n);
        band_edges
            .windows(2)
            .map(|edge| {
                let mut s = vec![Complex::new(0.0, 0.0); n];
                for k in 1..n / 2 {
                    let f = k as f64 * sr / n as f64;
                    if f >= edge[0] && f < edge[1] {
                        s[k] = spectrum[k];
                        s[n - k] = spectrum[k].conj();
                    }
                }
                ifft.process(&mut s);
                s.into_iter().take(len).map(|c| c.re).collect()
            })
            .collect()
    }

    pub fn generate(&self, spec: &MaskerSpec, duration_s: f64, seed_value: u64) -> Result<Waveform> {
        if !(duration_s > 0.0 && duration_s.is_finite()) {
            return Err(Error::invalid("masker duration must be positive"));
        }
        spec.validate()?;
        let sr = self.corpus.sample_rate();
        let cal = self.corpus.calibration_db();
        let len = (duration_s * sr as f64).round() as usize;
        let mut rng = seed::rng(seed_value, &[0x6d61_736b, spec.kind as u64]);
        let nyq = sr as f64 / 2.0;
        let mut samples = match spec.kind {
            MaskerKind::Silence => return Ok(Waveform::silence(len, 1, sr, cal)),
            MaskerKind::Stationary => self
                .shaped_noise(len, &[0.0, nyq + 1.0], &mut rng)
                .remove(0),
            MaskerKind::Fluctuating => {
                let bands = self.shaped_noise(len, &[0.0, 800.0, 2400.0, nyq + 1.0], &mut rng);
                let gate = pause_gate(len, sr as f64, spec.gap_max_s, &mut rng);
                let mut out = vec![0.0; len];
                for band in &bands {
                    let env = syllabic_envelope(len, sr as f64, 8.0, &mut rng);
                    for i in 0..len {
                        out[i] += band[i] * env[i] * gate[i];
                    }
                }
                out
            }
            MaskerKind::Babble => self.babble(len, 8, &mut rng)?,
        };
        let rms = (samples.iter().map(|s| s * s).sum::<f64>() / len.max(1) as f64).sqrt();
        if rms > 0.0 {
            let g = dbspl_to_rms(spec.level_db, cal) / rms;
            samples.iter_mut().for_each(|s| *s *= g);
        }
        Waveform::mono(samples, sr, cal)
    }

    fn babble<R: Rng>(&self, len: usize, talkers: usize, rng: &mut R) -> Result<Vec<f64>> {
        let mut out = vec![0.0; len];
        for _ in 0..talkers {
            let mut stream = Vec::with_capacity(len + 48_000);
            while stream.len() < len + 48_000 {
                let slots = std::array::from_fn(|_| rng.random_range(0..10));
                let (w, _) = self.corpus.render_sentence(slots)?;
                stream.extend_from_slice(w.channel(0));
            }
            let offset = rng.random_range(0..48_000);
            let seg = &stream[offset..offset + len];
            let rms = (seg.iter().map(|s| s * s).sum::<f64>() / len as f64).sqrt();
            for (o, s) in out.iter_mut().zip(seg) {
                *o += s / rms;
            }
        }
        Ok(out)
    }
}

/// On/off gate with pauses of at most `gap_max` seconds and 5 ms ramps.
fn pause_gate<R: Rng>(len: usize, sr: f64, gap_max: f64, rng: &mut R) -> Vec<f64> {
    let mut gate = vec![0.0; len];
    let ramp = (0.005 * sr) as usize;
    let mut i = 0;
    while i < len {
        let on = (rng.random_range(0.15..1.0) * sr) as usize;
        let end = (i + on).min(len);
        for (k, g) in gate[i..end].iter_mut().enumerate() {
            let up = (k as f64 / ramp as f64).min(1.0);
            let down = ((end - i - k) as f64 / ramp as f64).min(1.0);
            *g = up.min(down);
        }
        let off = (rng.random_range(0.02..=gap_max) * sr) as usize;
        i = end + off.max(1);
    }
    gate
}

/// Log-normal amplitude modulation concentrated at 1-8 Hz.
fn syllabic_envelope<R: Rng>(len: usize, sr: f64, depth_db: f64, rng: &mut R) -> Vec<f64> {
    let comps: Vec<(f64, f64, f64)> = (0..6)
        .map(|_| {
            (
                rng.random_range(1.0..8.0),
                rng.random_range(0.0..2.0 * PI),
                rng.random_range(0.5..1.0),
            )
        })
        .collect();
    let norm = (comps.iter().map(|c| c.2 * c.2 / 2.0).sum::<f64>()).sqrt();
    (0..len)
        .map(|i| {
            let t = i as f64 / sr;
            let z: f64 = comps
                .iter()
                .map(|&(f, p, a)| a * (2.0 * PI * f * t + p).sin())
                .sum::<f64>()
                / norm;
            10f64.powf(depth_db * z / 20.0)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::CorpusConfig;

    fn envelope_db(w: &Waveform, frame: usize) -> Vec<f64> {
        w.channel(0)
            .chunks_exact(frame)
            .map(|c| {
                let ms = c.iter().map(|s| s * s).sum::<f64>() / frame as f64;
                10.0 * (ms + 1e-30).log10()
            })
            .collect()
    }

    fn variance(x: &[f64]) -> f64 {
        let m = x.iter().sum::<f64>() / x.len() as f64;
        x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / x.len() as f64
    }

    #[test]
    fn silence_is_zero() {
        let corpus = MatrixCorpus::synthesize(&CorpusConfig::default()).unwrap();
        let g = MaskerGenerator::new(&corpus);
        let w = g
            .generate(&MaskerSpec::new(MaskerKind::Silence, 65.0), 1.0, 1)
            .unwrap();
        assert!(w.channel(0).iter().all(|&s| s == 0.0));
        assert!(g.generate(&MaskerSpec::default(), 0.0, 1).is_err());
    }

    #[test]
    fn levels_are_exact() {
        let corpus = MatrixCorpus::synthesize(&CorpusConfig::default()).unwrap();
        let g = MaskerGenerator::new(&corpus);
        for kind in [MaskerKind::Stationary, MaskerKind::Fluctuating, MaskerKind::Babble] {
            let w = g.generate(&MaskerSpec::new(kind, 65.0), 4.0, 3).unwrap();
            assert!((w.level_dbspl() - 65.0).abs() < 0.1, "{kind:?}");
        }
    }

    #[test]
    fn fluctuating_has_short_pauses_and_more_envelope_variance() {
        let corpus = MatrixCorpus::synthesize(&CorpusConfig::default()).unwrap();
        let g = MaskerGenerator::new(&corpus);
        let frame = 160;
        let mut stat_var = 0.0;
        let mut fluct_var = 0.0;
        for seed in 0..10 {
            let s = g
                .generate(&MaskerSpec::new(MaskerKind::Stationary, 65.0), 10.0, seed)
                .unwrap();
            let f = g
                .generate(&MaskerSpec::new(MaskerKind::Fluctuating, 65.0), 10.0, seed)
                .unwrap();
            let (es, ef) = (envelope_db(&s, frame), envelope_db(&f, frame));
            stat_var += variance(&es);
            fluct_var += variance(&ef.iter().map(|v| v.max(-150.0)).collect::<Vec<_>>());

            // contiguous sub-threshold runs in 10 ms frames
            let thr = 65.0 - 30.0 - 120.0 - 10.0 * 2f64.log10();
            let mut runs = Vec::new();
            let mut run = 0usize;
            for &v in &ef {
                if v < thr {
                    run += 1;
                } else if run > 0 {
                    runs.push(run);
                    run = 0;
                }
            }
            let ok = runs
                .iter()
                .filter(|&&r| r as f64 * 0.01 > 0.0 && r as f64 * 0.01 <= 0.25)
                .count();
            assert!(ok >= 1, "seed {seed}: no pause found");
            assert!(runs.iter().all(|&r| r as f64 * 0.01 <= 0.26), "{runs:?}");
        }
        assert!(fluct_var > stat_var, "{fluct_var} vs {stat_var}");
    }

    #[test]
    fn excerpts_differ_between_draws() {
        let corpus = MatrixCorpus::synthesize(&CorpusConfig::default()).unwrap();
        let g = MaskerGenerator::new(&corpus);
        let m = MaskerSignal::new(g.generate(&MaskerSpec::default(), 5.0, 1).unwrap()).unwrap();
        let mut rng = seed::rng(1, &[]);
        let a = m.excerpt(1000, &mut rng);
        let b = m.excerpt(1000, &mut rng);
        assert_ne!(a, b);
        // longer than the buffer wraps
        assert_eq!(m.excerpt(200_000, &mut rng).len(), 200_000);
    }
}
