//! Calibrated waveforms, the procedural matrix corpus, maskers, mixing and
//! the two-source spatial layout.

mod corpus;
mod masker;
mod scene;
pub mod wav;

pub use corpus::{
    synthesize_corpus, CorpusConfig, MatrixCorpus, Token, Transcript, WordClass, WordId,
    CLASS_COUNT, TOKENS_PER_CLASS,
};
pub use masker::{MaskerGenerator, MaskerKind, MaskerSignal, MaskerSpec};
pub use scene::{spatialize, LayoutTag, SceneLayout};

use crate::error::{Error, Result};
use rand::Rng;

pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;
/// dB SPL produced by a full-scale 1 kHz sine.
pub const DEFAULT_CALIBRATION_DB: f64 = 120.0;

/// Sampled audio with one or two channels and a level calibration.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    channels: Vec<Vec<f64>>,
    sample_rate: u32,
    calibration_db: f64,
}

impl Waveform {
    pub fn new(channels: Vec<Vec<f64>>, sample_rate: u32, calibration_db: f64) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        if channels.is_empty() || channels.len() > 2 {
            return Err(Error::ChannelLayout(format!(
                "{} channels, expected 1 or 2",
                channels.len()
            )));
        }
        if channels.len() == 2 && channels[0].len() != channels[1].len() {
            return Err(Error::LengthMismatch {
                expected: channels[0].len(),
                actual: channels[1].len(),
            });
        }
        if channels.iter().flatten().any(|s| !s.is_finite()) {
            return Err(Error::invalid("non-finite sample"));
        }
        if !calibration_db.is_finite() {
            return Err(Error::invalid("calibration must be finite"));
        }
        Ok(Self {
            channels,
            sample_rate,
            calibration_db,
        })
    }

    pub fn mono(samples: Vec<f64>, sample_rate: u32, calibration_db: f64) -> Result<Self> {
        Self::new(vec![samples], sample_rate, calibration_db)
    }

    pub fn stereo(
        left: Vec<f64>,
        right: Vec<f64>,
        sample_rate: u32,
        calibration_db: f64,
    ) -> Result<Self> {
        Self::new(vec![left, right], sample_rate, calibration_db)
    }

    pub fn silence(len: usize, channels: usize, sample_rate: u32, calibration_db: f64) -> Self {
        Self {
            channels: vec![vec![0.0; len]; channels.clamp(1, 2)],
            sample_rate,
            calibration_db,
        }
    }

    pub(crate) fn from_parts_unchecked(
        channels: Vec<Vec<f64>>,
        sample_rate: u32,
        calibration_db: f64,
    ) -> Self {
        debug_assert!(!channels.is_empty() && channels.len() <= 2);
        Self {
            channels,
            sample_rate,
            calibration_db,
        }
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn calibration_db(&self) -> f64 {
        self.calibration_db
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn duration_s(&self) -> f64 {
        self.len() as f64 / self.sample_rate as f64
    }

    pub fn channel(&self, index: usize) -> &[f64] {
        &self.channels[index]
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }

    pub fn into_channels(self) -> Vec<Vec<f64>> {
        self.channels
    }

    pub fn is_stereo(&self) -> bool {
        self.channels.len() == 2
    }

    pub fn scaled(&self, gain: f64) -> Self {
        Self {
            channels: self
                .channels
                .iter()
                .map(|c| c.iter().map(|s| s * gain).collect())
                .collect(),
            sample_rate: self.sample_rate,
            calibration_db: self.calibration_db,
        }
    }

    /// RMS level in dB SPL over all channels; `-inf` for silence.
    pub fn level_dbspl(&self) -> f64 {
        let n: usize = self.channels.iter().map(Vec::len).sum();
        if n == 0 {
            return f64::NEG_INFINITY;
        }
        let energy: f64 = self.channels.iter().flatten().map(|s| s * s).sum();
        ms_to_dbspl(energy / n as f64, self.calibration_db)
    }

    pub fn channel_level_dbspl(&self, index: usize) -> f64 {
        samples_level_dbspl(&self.channels[index], self.calibration_db)
    }

    /// Duplicate a mono waveform to two channels.
    pub fn to_stereo(&self) -> Self {
        if self.is_stereo() {
            return self.clone();
        }
        Self {
            channels: vec![self.channels[0].clone(), self.channels[0].clone()],
            sample_rate: self.sample_rate,
            calibration_db: self.calibration_db,
        }
    }
}

/// dB SPL of a mean-square value given the full-scale-sine calibration.
pub fn ms_to_dbspl(mean_square: f64, calibration_db: f64) -> f64 {
    if mean_square <= 0.0 {
        f64::NEG_INFINITY
    } else {
        calibration_db + 10.0 * (mean_square / 0.5).log10()
    }
}

/// Linear RMS amplitude that corresponds to `level_db` dB SPL.
pub fn dbspl_to_rms(level_db: f64, calibration_db: f64) -> f64 {
    (0.5f64).sqrt() * 10f64.powf((level_db - calibration_db) / 20.0)
}

pub fn samples_level_dbspl(samples: &[f64], calibration_db: f64) -> f64 {
    if samples.is_empty() {
        return f64::NEG_INFINITY;
    }
    let ms = samples.iter().map(|s| s * s).sum::<f64>() / samples.len() as f64;
    ms_to_dbspl(ms, calibration_db)
}

/// RMS level of a waveform referred to its calibration.
pub fn level_dbspl(waveform: &Waveform) -> f64 {
    waveform.level_dbspl()
}

/// Gain that brings a signal at `current_db` to `target_db`.
pub fn gain_for(current_db: f64, target_db: f64) -> f64 {
    10f64.powf((target_db - current_db) / 20.0)
}

/// Scale mono speech so that its level sits `snr_db` above the masker's
/// nominal level. In silence `snr_db` is the speech level in dB SPL.
pub fn scale_speech(speech: &Waveform, masker_level_db: f64, snr_db: f64) -> Result<Waveform> {
    let current = speech.level_dbspl();
    if !current.is_finite() {
        return Err(Error::invalid("speech signal is silent"));
    }
    let target = if masker_level_db.is_finite() {
        masker_level_db + snr_db
    } else {
        snr_db
    };
    Ok(speech.scaled(gain_for(current, target)))
}

/// Mix mono speech with a fresh random excerpt of `masker` at `snr_db`.
///
/// The masker keeps its nominal level and the speech is scaled. Maskers
/// shorter than the speech are read circularly.
pub fn mix_at_snr<R: Rng + ?Sized>(
    speech: &Waveform,
    masker: &MaskerSignal,
    snr_db: f64,
    rng: &mut R,
) -> Result<Waveform> {
    check_compatible(speech, masker.waveform())?;
    if speech.is_stereo() {
        return Err(Error::ChannelLayout("mix_at_snr expects mono speech".into()));
    }
    let scaled = scale_speech(speech, masker.level_db(), snr_db)?;
    let excerpt = masker.excerpt(speech.len(), rng);
    let mixed = scaled.channels[0]
        .iter()
        .zip(&excerpt)
        .map(|(s, n)| s + n)
        .collect();
    Ok(Waveform::from_parts_unchecked(
        vec![mixed],
        speech.sample_rate,
        speech.calibration_db,
    ))
}

pub(crate) fn check_compatible(a: &Waveform, b: &Waveform) -> Result<()> {
    if a.sample_rate != b.sample_rate {
        return Err(Error::SampleRateMismatch(a.sample_rate, b.sample_rate));
    }
    if (a.calibration_db - b.calibration_db).abs() > 1e-9 {
        return Err(Error::invalid("calibration mismatch between signals"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn sine(freq: f64, amp: f64, secs: f64) -> Waveform {
        let sr = DEFAULT_SAMPLE_RATE;
        let n = (secs * sr as f64) as usize;
        let s = (0..n)
            .map(|i| amp * (2.0 * std::f64::consts::PI * freq * i as f64 / sr as f64).sin())
            .collect();
        Waveform::mono(s, sr, 100.0).unwrap()
    }

    #[test]
    fn full_scale_sine_reads_calibration() {
        assert!((sine(1000.0, 1.0, 1.0).level_dbspl() - 100.0).abs() < 1e-9);
    }

    #[test]
    fn half_amplitude_is_six_db_down() {
        let l = sine(1000.0, 0.5, 1.0).level_dbspl();
        assert!((l - 93.979_400_086_720_37).abs() < 1e-6, "{l}");
    }

    #[test]
    fn zeros_are_negative_infinity() {
        let w = Waveform::silence(100, 1, 16_000, 100.0);
        assert_eq!(level_dbspl(&w), f64::NEG_INFINITY);
    }

    #[test]
    fn rejects_bad_layouts() {
        assert!(Waveform::new(vec![], 16_000, 100.0).is_err());
        assert!(Waveform::new(vec![vec![0.0]; 3], 16_000, 100.0).is_err());
        assert!(Waveform::mono(vec![f64::NAN], 16_000, 100.0).is_err());
        assert!(Waveform::mono(vec![0.0], 0, 100.0).is_err());
        assert!(Waveform::stereo(vec![0.0], vec![0.0, 1.0], 16_000, 100.0).is_err());
    }

    #[test]
    fn mix_equal_levels_leaves_speech_unscaled() {
        let speech = sine(500.0, 0.1, 0.5);
        let noise = sine(700.0, 0.1, 2.0);
        let masker = MaskerSignal::new(noise).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let scaled = scale_speech(&speech, masker.level_db(), 0.0).unwrap();
        for (a, b) in scaled.channel(0).iter().zip(speech.channel(0)) {
            assert!((a - b).abs() < 1e-12);
        }
        let mixed = mix_at_snr(&speech, &masker, 0.0, &mut rng).unwrap();
        assert_eq!(mixed.len(), speech.len());
    }

    #[test]
    fn minus_ten_db_snr_puts_speech_at_55() {
        let speech = sine(500.0, 0.3, 0.5);
        let noise_amp = dbspl_to_rms(65.0, 100.0) * 2f64.sqrt();
        let masker = MaskerSignal::new(sine(700.0, noise_amp, 2.0)).unwrap();
        assert!((masker.level_db() - 65.0).abs() < 1e-6);
        let scaled = scale_speech(&speech, masker.level_db(), -10.0).unwrap();
        assert!((scaled.level_dbspl() - 55.0).abs() < 1e-9);
    }

    #[test]
    fn silence_interprets_snr_as_level() {
        let speech = sine(500.0, 0.3, 0.5);
        let masker = MaskerSignal::new(Waveform::silence(1000, 1, 16_000, 100.0)).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mixed = mix_at_snr(&speech, &masker, 40.0, &mut rng).unwrap();
        assert!((mixed.level_dbspl() - 40.0).abs() < 1e-9);
    }
}
