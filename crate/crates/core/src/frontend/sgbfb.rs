use super::{FeatureMatrix, LogMS};
use crate::error::{Error, Result};
use rustfft::num_complex::Complex;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

type C = Complex<f64>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SgbfbParams {
    /// Spectral modulation frequencies in cycles per band; 0 is the low-pass.
    pub spectral_mod: Vec<f64>,
    /// Temporal modulation frequencies in Hz; 0 is the low-pass.
    pub temporal_mod_hz: Vec<f64>,
    /// Number of carrier periods under the envelope of a modulation filter.
    pub periods: f64,
    pub max_spectral_size: usize,
    pub max_temporal_s: f64,
    pub dc_spectral_size: usize,
    pub dc_temporal_s: f64,
    /// Band subsampling step as a fraction of the spectral filter size.
    pub band_step: f64,
}

impl Default for SgbfbParams {
    fn default() -> Self {
        Self {
            spectral_mod: vec![0.0, 0.25],
            temporal_mod_hz: vec![0.0, 5.0, 12.0, 25.0],
            periods: 3.5,
            max_spectral_size: 23,
            max_temporal_s: 0.4,
            dc_spectral_size: 7,
            dc_temporal_s: 0.05,
            band_step: 0.4,
        }
    }
}

/// A 1-D Gabor filter (Hann envelope times complex carrier). Non-DC filters
/// are zero-mean with unit gain at the carrier; the DC filter sums to one.
#[derive(Clone, Debug)]
pub(crate) struct Gabor {
    taps: Vec<C>,
}

impl Gabor {
    /// `omega` in cycles per sample.
    pub fn new(omega: f64, periods: f64, max_size: usize, dc_size: usize) -> Self {
        let raw = if omega == 0.0 {
            dc_size
        } else {
            ((periods / omega).round() as usize).min(max_size)
        };
        let size = raw.max(1) | 1;
        let mid = (size / 2) as f64;
        let env: Vec<f64> = (0..size)
            .map(|i| 0.5 - 0.5 * (2.0 * PI * (i as f64 + 1.0) / (size as f64 + 1.0)).cos())
            .collect();
        let esum: f64 = env.iter().sum();
        if omega == 0.0 {
            return Self {
                taps: env.iter().map(|e| C::new(e / esum, 0.0)).collect(),
            };
        }
        let w = 2.0 * PI * omega;
        let carrier: Vec<C> = (0..size)
            .map(|i| C::from_polar(1.0, w * (i as f64 - mid)))
            .collect();
        let mean = env
            .iter()
            .zip(&carrier)
            .map(|(e, c)| c * *e)
            .sum::<C>()
            / esum;
        let mut taps: Vec<C> = env
            .iter()
            .zip(&carrier)
            .map(|(e, c)| (c - mean) * *e)
            .collect();
        // correlation-style application: response to exp(i w x) is sum conj-free
        let gain = taps
            .iter()
            .enumerate()
            .map(|(i, h)| h * C::from_polar(1.0, -w * (i as f64 - mid)))
            .sum::<C>()
            .norm();
        taps.iter_mut().for_each(|h| *h /= gain);
        Self { taps }
    }

    pub fn size(&self) -> usize {
        self.taps.len()
    }

    /// Response at `pos` of a sequence read through `at` with replicated edges.
    #[inline]
    fn apply(&self, len: usize, pos: usize, at: impl Fn(usize) -> C) -> C {
        let half = (self.taps.len() / 2) as isize;
        self.taps
            .iter()
            .enumerate()
            .map(|(i, h)| {
                let j = (pos as isize + half - i as isize).clamp(0, len as isize - 1) as usize;
                h * at(j)
            })
            .sum()
    }
}

/// Filterbank prepared for one band count and frame rate.
pub struct Sgbfb {
    spectral: Vec<(Gabor, Vec<usize>)>,
    temporal: Vec<Gabor>,
    bands: usize,
}

impl Sgbfb {
    pub fn new(params: &SgbfbParams, bands: usize, frame_rate: f64) -> Result<Self> {
        if params.spectral_mod.is_empty() || params.temporal_mod_hz.is_empty() {
            return Err(Error::invalid("SGBFB needs at least one filter per axis"));
        }
        if params
            .spectral_mod
            .iter()
            .chain(&params.temporal_mod_hz)
            .any(|w| !(w.is_finite() && *w >= 0.0))
        {
            return Err(Error::invalid("modulation frequencies must be >= 0"));
        }
        if params.spectral_mod.iter().any(|&w| w > 0.5) {
            return Err(Error::invalid("spectral modulation above 0.5 cycles/band"));
        }
        let mut spectral = Vec::new();
        for &w in &params.spectral_mod {
            let g = Gabor::new(w, params.periods, params.max_spectral_size, params.dc_spectral_size);
            if w > 0.0 && 2 * bands < g.size() {
                return Err(Error::invalid(format!(
                    "{bands} bands are too few for a {}-band spectral filter",
                    g.size()
                )));
            }
            let step = ((g.size() as f64 * params.band_step).round() as usize).max(1);
            let n_pos = (bands - 1) / step + 1;
            let offset = ((bands - 1) - (n_pos - 1) * step) / 2;
            let positions = (0..n_pos).map(|k| offset + k * step).collect();
            spectral.push((g, positions));
        }
        let max_t = (params.max_temporal_s * frame_rate).round() as usize;
        let dc_t = (params.dc_temporal_s * frame_rate).round() as usize;
        let temporal = params
            .temporal_mod_hz
            .iter()
            .map(|&f| Gabor::new(f / frame_rate, params.periods, max_t.max(1), dc_t.max(1)))
            .collect();
        Ok(Self {
            spectral,
            temporal,
            bands,
        })
    }

    pub fn dim(&self) -> usize {
        self.spectral.iter().map(|(_, p)| p.len()).sum::<usize>() * self.temporal.len()
    }

    pub fn features(&self, logms: &LogMS) -> Result<FeatureMatrix> {
        if logms.bands() != self.bands {
            return Err(Error::DimensionMismatch {
                model: self.bands,
                features: logms.bands(),
            });
        }
        let frames = logms.frames();
        if frames == 0 {
            return Err(Error::SignalTooShort {
                samples: 0,
                needed: 1,
            });
        }
        let dim = self.dim();
        let mut data = vec![0.0; frames * dim];
        let mut col = 0;
        let mut spec = vec![C::new(0.0, 0.0); frames];
        for (g, positions) in &self.spectral {
            for &b in positions {
                for (t, s) in spec.iter_mut().enumerate() {
                    let row = logms.frame(t);
                    *s = g.apply(self.bands, b, |j| C::new(row[j], 0.0));
                }
                for tg in &self.temporal {
                    for t in 0..frames {
                        data[t * dim + col] = tg.apply(frames, t, |j| spec[j]).re;
                    }
                    col += 1;
                }
            }
        }
        FeatureMatrix::new(data, dim, false)
    }
}

pub fn sgbfb_features(logms: &LogMS, params: &SgbfbParams) -> Result<FeatureMatrix> {
    Sgbfb::new(params, logms.bands(), logms.frame_rate)?.features(logms)
}
