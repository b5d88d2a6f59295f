use super::LogMS;
use crate::error::{Error, Result};
use rand_distr::{Distribution, Normal};
use std::path::Path;

/// Approximate dB SPL of 0 dB HL at the eardrum, per frequency.
pub const DEFAULT_HL_TO_SPL: [(f64, f64); 10] = [
    (125.0, 22.1),
    (250.0, 12.4),
    (500.0, 6.4),
    (1000.0, 5.0),
    (1500.0, 7.0),
    (2000.0, 10.7),
    (3000.0, 10.0),
    (4000.0, 7.6),
    (6000.0, 11.0),
    (8000.0, 15.0),
];

/// Absolute thresholds of a listener plus a supra-threshold level uncertainty.
#[derive(Clone, Debug, PartialEq)]
pub struct AudiogramProfile {
    pub name: String,
    pub frequencies: Vec<f64>,
    pub thresholds_hl: Vec<f64>,
    /// Standard deviation in dB of the noise added to the LogMS.
    pub level_uncertainty_db: f64,
    /// (frequency, dB SPL of 0 dB HL) pairs.
    pub hl_to_spl: Vec<(f64, f64)>,
}

/// Piecewise-linear interpolation on a log-frequency axis, flat outside.
fn interp_log(table: &[(f64, f64)], f: f64) -> f64 {
    let (first, last) = (table[0], table[table.len() - 1]);
    if f <= first.0 {
        return first.1;
    }
    if f >= last.0 {
        return last.1;
    }
    let i = table.partition_point(|(x, _)| *x <= f);
    let (f0, v0) = table[i - 1];
    let (f1, v1) = table[i];
    let a = (f.ln() - f0.ln()) / (f1.ln() - f0.ln());
    v0 + a * (v1 - v0)
}

impl AudiogramProfile {
    pub fn new(
        name: impl Into<String>,
        frequencies: Vec<f64>,
        thresholds_hl: Vec<f64>,
        level_uncertainty_db: f64,
    ) -> Result<Self> {
        let p = Self {
            name: name.into(),
            frequencies,
            thresholds_hl,
            level_uncertainty_db,
            hl_to_spl: DEFAULT_HL_TO_SPL.to_vec(),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frequencies.is_empty() || self.frequencies.len() != self.thresholds_hl.len() {
            return Err(Error::invalid("audiogram needs one threshold per frequency"));
        }
        if self.frequencies.windows(2).any(|w| w[1] <= w[0]) || self.frequencies[0] <= 0.0 {
            return Err(Error::invalid("audiogram frequencies must increase"));
        }
        if self.thresholds_hl.iter().any(|t| !(-10.0..=120.0).contains(t)) {
            return Err(Error::invalid("thresholds must lie in [-10, 120] dB HL"));
        }
        if !(self.level_uncertainty_db.is_finite() && self.level_uncertainty_db >= 0.0) {
            return Err(Error::invalid("level uncertainty must be finite and >= 0"));
        }
        if self.hl_to_spl.is_empty() || self.hl_to_spl.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::invalid("HL-to-SPL table must have increasing frequencies"));
        }
        Ok(())
    }

    /// 0 dB HL at all audiometric frequencies.
    pub fn normal() -> Self {
        let f = vec![125.0, 250.0, 500.0, 1000.0, 2000.0, 4000.0, 8000.0];
        let n = f.len();
        Self::new("NH", f, vec![0.0; n], 0.0).expect("valid")
    }

    /// Moderate, sloping high-frequency loss.
    pub fn n3() -> Self {
        Self::new(
            "N3",
            vec![250.0, 500.0, 750.0, 1000.0, 1500.0, 2000.0, 3000.0, 4000.0, 6000.0, 8000.0],
            vec![35.0, 35.0, 35.0, 40.0, 45.0, 50.0, 55.0, 60.0, 65.0, 70.0],
            0.0,
        )
        .expect("valid")
    }

    pub fn with_level_uncertainty(mut self, ul_db: f64) -> Self {
        self.level_uncertainty_db = ul_db;
        self
    }

    pub fn threshold_hl_at(&self, f: f64) -> f64 {
        let table: Vec<(f64, f64)> = self
            .frequencies
            .iter()
            .copied()
            .zip(self.thresholds_hl.iter().copied())
            .collect();
        interp_log(&table, f)
    }

    pub fn threshold_spl_at(&self, f: f64) -> f64 {
        self.threshold_hl_at(f) + interp_log(&self.hl_to_spl, f)
    }

    /// Mean threshold in dB SPL over audiogram frequencies up to `f_max`.
    pub fn mean_spl_up_to(&self, f_max: f64) -> Result<f64> {
        let v: Vec<f64> = self
            .frequencies
            .iter()
            .filter(|&&f| f <= f_max)
            .map(|&f| self.threshold_spl_at(f))
            .collect();
        if v.is_empty() {
            return Err(Error::invalid(format!("no audiogram frequency at or below {f_max} Hz")));
        }
        Ok(v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn band_thresholds_spl(&self, centers: &[f64]) -> Vec<f64> {
        centers.iter().map(|&f| self.threshold_spl_at(f)).collect()
    }

    /// Plain-text table: `frequency_hz, threshold_dbhl` rows, `#` comments,
    /// optional `uL = x`, `name = x` and `hl2spl, frequency_hz, offset_db` rows.
    pub fn parse(text: &str) -> Result<Self> {
        let mut name = String::from("custom");
        let mut freqs = Vec::new();
        let mut thr = Vec::new();
        let mut ul = 0.0;
        let mut table = Vec::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = || Error::Config(format!("audiogram line {}: {raw:?}", ln + 1));
            if let Some((k, v)) = line.split_once('=') {
                match k.trim() {
                    "uL" | "ul" | "level_uncertainty" => ul = v.trim().parse().map_err(|_| bad())?,
                    "name" => name = v.trim().to_string(),
                    _ => return Err(bad()),
                }
                continue;
            }
            let fields: Vec<&str> = line
                .split([',', '\t', ' '])
                .filter(|s| !s.is_empty())
                .collect();
            match fields.as_slice() {
                ["hl2spl", f, o] => table.push((
                    f.parse().map_err(|_| bad())?,
                    o.parse().map_err(|_| bad())?,
                )),
                [f, t] => match (f.parse::<f64>(), t.parse::<f64>()) {
                    (Ok(f), Ok(t)) => {
                        freqs.push(f);
                        thr.push(t);
                    }
                    // header row
                    _ if freqs.is_empty() => {}
                    _ => return Err(bad()),
                },
                _ => return Err(bad()),
            }
        }
        let mut p = Self {
            name,
            frequencies: freqs,
            thresholds_hl: thr,
            level_uncertainty_db: ul,
            hl_to_spl: if table.is_empty() {
                DEFAULT_HL_TO_SPL.to_vec()
            } else {
                table
            },
        };
        p.hl_to_spl.sort_by(|a, b| a.0.total_cmp(&b.0));
        p.validate()?;
        Ok(p)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut p = Self::parse(&text)?;
        if p.name == "custom" {
            if let Some(stem) = path.file_stem() {
                p.name = stem.to_string_lossy().into_owned();
            }
        }
        Ok(p)
    }

    pub fn to_table(&self) -> String {
        let mut s = format!(
            "name = {}\nuL = {}\nfrequency_hz, threshold_dbhl\n",
            self.name, self.level_uncertainty_db
        );
        for (f, t) in self.frequencies.iter().zip(&self.thresholds_hl) {
            s.push_str(&format!("{f}, {t}\n"));
        }
        if self.hl_to_spl != DEFAULT_HL_TO_SPL.to_vec() {
            for (f, o) in &self.hl_to_spl {
                s.push_str(&format!("hl2spl, {f}, {o}\n"));
            }
        }
        s
    }
}

/// Clamp every bin to its band threshold (dB SPL); `-inf` leaves it as is.
pub fn apply_threshold_spl(logms: &LogMS, thresholds: &[f64]) -> Result<LogMS> {
    if thresholds.len() != logms.bands() {
        return Err(Error::DimensionMismatch {
            model: thresholds.len(),
            features: logms.bands(),
        });
    }
    let nb = logms.bands();
    let values = logms
        .values
        .iter()
        .enumerate()
        .map(|(i, &v)| v.max(thresholds[i % nb]))
        .collect();
    Ok(LogMS {
        values,
        ..logms.clone()
    })
}

pub fn apply_absolute_threshold(logms: &LogMS, profile: &AudiogramProfile) -> Result<LogMS> {
    apply_threshold_spl(logms, &profile.band_thresholds_spl(&logms.band_centers))
}

/// Add independent N(0, uL) noise to every bin.
pub fn apply_level_uncertainty(logms: &LogMS, ul_db: f64, seed: u64) -> Result<LogMS> {
    if !(ul_db.is_finite() && ul_db >= 0.0) {
        return Err(Error::invalid("level uncertainty must be finite and >= 0"));
    }
    if ul_db == 0.0 {
        return Ok(logms.clone());
    }
    let mut rng = crate::seed::rng(seed, &[0x75_4c]);
    let normal = Normal::new(0.0, ul_db).map_err(|e| Error::invalid(e.to_string()))?;
    let values = logms
        .values
        .iter()
        .map(|v| v + normal.sample(&mut rng))
        .collect();
    Ok(LogMS {
        values,
        ..logms.clone()
    })
}
