use crate::error::{Error, Result};
use crate::signal::Waveform;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::io::Write;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogMsParams {
    pub frame_s: f64,
    pub hop_s: f64,
    pub fft_size: usize,
    pub bands: usize,
    pub f_min_hz: f64,
    pub f_max_hz: f64,
    /// Lowest representable band level in dB SPL.
    pub floor_db: f64,
}

impl Default for LogMsParams {
    fn default() -> Self {
        Self {
            frame_s: 0.025,
            hop_s: 0.010,
            fft_size: 512,
            bands: 31,
            f_min_hz: 64.0,
            f_max_hz: 8000.0,
            floor_db: -20.0,
        }
    }
}

/// Log-Mel spectrogram of one channel, values in dB SPL.
#[derive(Clone, Debug, PartialEq)]
pub struct LogMS {
    pub frame_rate: f64,
    pub band_centers: Vec<f64>,
    /// `frames × bands`, row-major.
    pub values: Vec<f64>,
}

impl LogMS {
    pub fn new(frame_rate: f64, band_centers: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if !(frame_rate > 0.0) || band_centers.is_empty() {
            return Err(Error::invalid("LogMS needs a positive frame rate and bands"));
        }
        if band_centers.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("band centers must increase"));
        }
        if values.len() % band_centers.len() != 0 || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("LogMS values must be finite and whole frames"));
        }
        Ok(Self {
            frame_rate,
            band_centers,
            values,
        })
    }

    pub fn bands(&self) -> usize {
        self.band_centers.len()
    }

    pub fn frames(&self) -> usize {
        self.values.len() / self.bands()
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        let b = self.bands();
        &self.values[t * b..(t + 1) * b]
    }

    pub fn get(&self, t: usize, band: usize) -> f64 {
        self.values[t * self.bands() + band]
    }

    /// One header row of band centers, then one row per frame.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let header: Vec<String> = self.band_centers.iter().map(|c| format!("{c:.1}")).collect();
        writeln!(w, "frame,{}", header.join(","))?;
        for t in 0..self.frames() {
            let row: Vec<String> = self.frame(t).iter().map(|v| format!("{v:.4}")).collect();
            writeln!(w, "{t},{}", row.join(","))?;
        }
        Ok(())
    }
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Precomputed analysis for one parameter set and sample rate.
pub struct MelAnalyzer {
    params: LogMsParams,
    frame_len: usize,
    hop: usize,
    window: Vec<f64>,
    /// Per band: (first bin, weights).
    weights: Vec<(usize, Vec<f64>)>,
    centers: Vec<f64>,
    /// Maps |X_k|^2 to one-sided mean-square contributions.
    bin_scale: Vec<f64>,
    fft: std::sync::Arc<dyn rustfft::Fft<f64>>,
}

impl MelAnalyzer {
    pub fn new(params: &LogMsParams, sample_rate: u32) -> Result<Self> {
        let sr = sample_rate as f64;
        let frame_len = (params.frame_s * sr).round() as usize;
        let hop = (params.hop_s * sr).round() as usize;
        if frame_len == 0 || hop == 0 || params.fft_size < frame_len || params.bands < 2 {
            return Err(Error::invalid("inconsistent LogMS frame parameters"));
        }
        if !(params.f_min_hz > 0.0 && params.f_max_hz > params.f_min_hz) {
            return Err(Error::invalid("Mel band range must be positive and increasing"));
        }
        let n = params.fft_size;
        let window: Vec<f64> = (0..frame_len)
            .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / frame_len as f64).cos())
            .collect();
        let wsum: f64 = window.iter().map(|w| w * w).sum();
        let bin_scale = (0..=n / 2)
            .map(|k| {
                let side = if k == 0 || k == n / 2 { 1.0 } else { 2.0 };
                side / (n as f64 * wsum)
            })
            .collect();

        let (m_lo, m_hi) = (hz_to_mel(params.f_min_hz), hz_to_mel(params.f_max_hz));
        let step = (m_hi - m_lo) / (params.bands - 1) as f64;
        let mel_centers: Vec<f64> = (0..params.bands).map(|b| m_lo + b as f64 * step).collect();
        let centers = mel_centers.iter().map(|&m| mel_to_hz(m)).collect();
        let bin_hz = sr / n as f64;
        let weights = mel_centers
            .iter()
            .map(|&mc| {
                let mut first = None;
                let mut w = Vec::new();
                for k in 0..=n / 2 {
                    let m = hz_to_mel(k as f64 * bin_hz);
                    let v = 1.0 - (m - mc).abs() / step;
                    if v > 0.0 {
                        first.get_or_insert(k);
                        w.push(v);
                    } else if first.is_some() {
                        break;
                    }
                }
                (first.unwrap_or(0), w)
            })
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(n);
        Ok(Self {
            params: params.clone(),
            frame_len,
            hop,
            window,
            weights,
            centers,
            bin_scale,
            fft,
        })
    }

    pub fn frame_len(&self) -> usize {
        self.frame_len
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn band_centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn analyze(&self, samples: &[f64], sample_rate: u32, calibration_db: f64) -> Result<LogMS> {
        if samples.len() < self.frame_len {
            return Err(Error::SignalTooShort {
                samples: samples.len(),
                needed: self.frame_len,
            });
        }
        let frames = 1 + (samples.len() - self.frame_len) / self.hop;
        let nb = self.params.bands;
        let mut values = Vec::with_capacity(frames * nb);
        let mut buf = vec![Complex::new(0.0, 0.0); self.params.fft_size];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        let mut power = vec![0.0; self.params.fft_size / 2 + 1];
        for t in 0..frames {
            let x = &samples[t * self.hop..t * self.hop + self.frame_len];
            for (i, c) in buf.iter_mut().enumerate() {
                *c = Complex::new(if i < self.frame_len { x[i] * self.window[i] } else { 0.0 }, 0.0);
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (k, p) in power.iter_mut().enumerate() {
                *p = buf[k].norm_sqr() * self.bin_scale[k];
            }
            for (first, w) in &self.weights {
                let e: f64 = w.iter().zip(&power[*first..]).map(|(w, p)| w * p).sum();
                let db = if e > 0.0 {
                    calibration_db + 10.0 * (e / 0.5).log10()
                } else {
                    f64::NEG_INFINITY
                };
                values.push(db.max(self.params.floor_db));
            }
        }
        LogMS::new(sample_rate as f64 / self.hop as f64, self.centers.clone(), values)
    }
}

/// Log-Mel spectrogram of every channel.
pub fn log_mel_spectrogram(waveform: &Waveform, params: &LogMsParams) -> Result<Vec<LogMS>> {
    let an = MelAnalyzer::new(params, waveform.sample_rate())?;
    waveform
        .channels()
        .iter()
        .map(|c| an.analyze(c, waveform.sample_rate(), waveform.calibration_db()))
        .collect()
}
