use super::Waveform;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LayoutTag {
    /// Speech from the front, no masker source.
    S0,
    /// Speech and masker co-located in front.
    S0N0,
    /// Masker 90 degrees to the left.
    S0N90,
}

impl std::str::FromStr for LayoutTag {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().replace([' ', '_'], "").as_str() {
            "S0" => Ok(LayoutTag::S0),
            "S0N0" => Ok(LayoutTag::S0N0),
            "S0N90" => Ok(LayoutTag::S0N90),
            _ => Err(Error::invalid(format!("unknown layout {s:?}"))),
        }
    }
}

impl LayoutTag {
    pub fn as_str(self) -> &'static str {
        match self {
            LayoutTag::S0 => "S0",
            LayoutTag::S0N0 => "S0N0",
            LayoutTag::S0N90 => "S0N90",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneLayout {
    pub tag: LayoutTag,
    /// Interaural time difference applied to the lateral masker.
    pub itd_s: f64,
    /// Head-shadow attenuation of the lateral masker at the far ear.
    pub ild_db: f64,
}

impl Default for SceneLayout {
    fn default() -> Self {
        Self {
            tag: LayoutTag::S0N0,
            itd_s: 0.65e-3,
            ild_db: 6.0,
        }
    }
}

impl SceneLayout {
    pub fn new(tag: LayoutTag) -> Self {
        Self {
            tag,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.itd_s >= 0.0 && self.ild_db >= 0.0) {
            return Err(Error::invalid("itd and ild must be non-negative"));
        }
        Ok(())
    }

    pub fn itd_samples(&self, sample_rate: u32) -> usize {
        (self.itd_s * sample_rate as f64).round() as usize
    }
}

/// Place mono speech in front and the masker according to `layout`.
///
/// The masker is read from its start; for S0N90 the far (right) ear gets it
/// `itd` later and `ild` dB weaker.
pub fn spatialize(speech: &Waveform, masker: &Waveform, layout: &SceneLayout) -> Result<Waveform> {
    if speech.is_stereo() || masker.is_stereo() {
        return Err(Error::ChannelLayout("spatialize expects mono inputs".into()));
    }
    layout.validate()?;
    let n = speech.len();
    let s = speech.channel(0);
    let m = masker.channel(0);
    let at = |i: usize| m.get(i).copied().unwrap_or(0.0);
    let (left, right): (Vec<f64>, Vec<f64>) = match layout.tag {
        LayoutTag::S0 => (s.to_vec(), s.to_vec()),
        LayoutTag::S0N0 => {
            let mix: Vec<f64> = (0..n).map(|i| s[i] + at(i)).collect();
            (mix.clone(), mix)
        }
        LayoutTag::S0N90 => {
            let d = layout.itd_samples(speech.sample_rate());
            let g = 10f64.powf(-layout.ild_db / 20.0);
            let left = (0..n).map(|i| s[i] + at(i + d)).collect();
            let right = (0..n).map(|i| s[i] + g * at(i)).collect();
            (left, right)
        }
    };
    Ok(Waveform::from_parts_unchecked(
        vec![left, right],
        speech.sample_rate(),
        speech.calibration_db(),
    ))
}
