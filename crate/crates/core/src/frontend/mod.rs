//! Log-Mel spectrogram, hearing impairment, Gabor features and normalization.

mod audiogram;
mod logms;
mod sgbfb;

pub use audiogram::{
    apply_absolute_threshold, apply_level_uncertainty, apply_threshold_spl, AudiogramProfile,
    DEFAULT_HL_TO_SPL,
};
pub use logms::{hz_to_mel, log_mel_spectrogram, mel_to_hz, LogMS, LogMsParams, MelAnalyzer};
pub use sgbfb::{sgbfb_features, Sgbfb, SgbfbParams};

use crate::error::{Error, Result};
use crate::signal::Waveform;
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Frame-major feature matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    data: Vec<f64>,
    dim: usize,
    binaural: bool,
}

impl FeatureMatrix {
    pub fn new(data: Vec<f64>, dim: usize, binaural: bool) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(Error::invalid("feature data is not a whole number of frames"));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite feature value"));
        }
        Ok(Self { data, dim, binaural })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn frames(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_binaural(&self) -> bool {
        self.binaural
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let header: Vec<String> = (0..self.dim).map(|d| format!("f{d}")).collect();
        writeln!(w, "frame,{}", header.join(","))?;
        for t in 0..self.frames() {
            let row: Vec<String> = self.frame(t).iter().map(|v| format!("{v:.6}")).collect();
            writeln!(w, "{t},{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Per-dimension mean and variance normalization over the utterance.
/// Constant dimensions become zero.
pub fn mvn(features: &FeatureMatrix) -> Result<FeatureMatrix> {
    let (n, d) = (features.frames(), features.dim);
    if n < 2 {
        return Err(Error::SignalTooShort {
            samples: n,
            needed: 2,
        });
    }
    let mut mean = vec![0.0; d];
    for t in 0..n {
        for (m, v) in mean.iter_mut().zip(features.frame(t)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0; d];
    for t in 0..n {
        for ((s, v), m) in var.iter_mut().zip(features.frame(t)).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let scale: Vec<f64> = var
        .iter()
        .zip(&mean)
        .map(|(s, m)| {
            let sd = (s / n as f64).sqrt();
            // relative test so that large constant offsets count as constant
            if sd <= 1e-9 * (1.0 + m.abs()) {
                0.0
            } else {
                1.0 / sd
            }
        })
        .collect();
    let data = features
        .data
        .iter()
        .enumerate()
        .map(|(i, v)| (v - mean[i % d]) * scale[i % d])
        .collect();
    Ok(FeatureMatrix {
        data,
        dim: d,
        binaural: features.binaural,
    })
}

/// Frame-wise concatenation of left and right ear features.
pub fn concat_binaural(left: &FeatureMatrix, right: &FeatureMatrix) -> Result<FeatureMatrix> {
    if left.frames() != right.frames() {
        return Err(Error::LengthMismatch {
            expected: left.frames(),
            actual: right.frames(),
        });
    }
    let dim = left.dim + right.dim;
    let mut data = Vec::with_capacity(left.frames() * dim);
    for t in 0..left.frames() {
        data.extend_from_slice(left.frame(t));
        data.extend_from_slice(right.frame(t));
    }
    Ok(FeatureMatrix {
        data,
        dim,
        binaural: true,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EarMode {
    /// Separate features per ear, concatenated.
    Binaural,
    /// Left channel only.
    Mono,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FrontendConfig {
    pub logms: LogMsParams,
    pub sgbfb: SgbfbParams,
    pub ears: EarMode,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        Self {
            logms: LogMsParams::default(),
            sgbfb: SgbfbParams::default(),
            ears: EarMode::Binaural,
        }
    }
}

/// Reusable feature extractor.
pub struct Frontend {
    config: FrontendConfig,
    analyzer: MelAnalyzer,
    filterbank: Sgbfb,
    sample_rate: u32,
    /// Band thresholds in dB SPL and level uncertainty, if impaired.
    impairment: Option<(Vec<f64>, f64)>,
}

impl Frontend {
    pub fn new(
        config: &FrontendConfig,
        sample_rate: u32,
        profile: Option<&AudiogramProfile>,
    ) -> Result<Self> {
        let analyzer = MelAnalyzer::new(&config.logms, sample_rate)?;
        let frame_rate = sample_rate as f64 / analyzer.hop() as f64;
        let filterbank = Sgbfb::new(&config.sgbfb, config.logms.bands, frame_rate)?;
        let impairment = match profile {
            Some(p) => {
                p.validate()?;
                Some((
                    p.band_thresholds_spl(analyzer.band_centers()),
                    p.level_uncertainty_db,
                ))
            }
            None => None,
        };
        Ok(Self {
            config: config.clone(),
            analyzer,
            filterbank,
            sample_rate,
            impairment,
        })
    }

    pub fn dim(&self) -> usize {
        let ears = match self.config.ears {
            EarMode::Binaural => 2,
            EarMode::Mono => 1,
        };
        self.filterbank.dim() * ears
    }

    /// Impaired LogMS of one channel.
    pub fn logms(&self, samples: &[f64], calibration_db: f64, seed: u64) -> Result<LogMS> {
        let mut lm = self.analyzer.analyze(samples, self.sample_rate, calibration_db)?;
        if let Some((thr, ul)) = &self.impairment {
            lm = apply_threshold_spl(&lm, thr)?;
            lm = apply_level_uncertainty(&lm, *ul, seed)?;
        }
        Ok(lm)
    }

    /// Features of a (mono or stereo) signal; mono input is treated as diotic.
    pub fn extract(&self, waveform: &Waveform, seed: u64) -> Result<FeatureMatrix> {
        if waveform.sample_rate() != self.sample_rate {
            return Err(Error::SampleRateMismatch(waveform.sample_rate(), self.sample_rate));
        }
        let ear = |c: usize| -> Result<FeatureMatrix> {
            let ch = waveform.channel(c.min(waveform.num_channels() - 1));
            let lm = self.logms(ch, waveform.calibration_db(), crate::seed::derive(seed, &[c as u64]))?;
            mvn(&self.filterbank.features(&lm)?)
        };
        match self.config.ears {
            EarMode::Mono => ear(0),
            EarMode::Binaural => concat_binaural(&ear(0)?, &ear(1)?),
        }
    }
}
