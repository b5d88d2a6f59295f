use super::{Backend, DarfConfig, RowModel};
use crate::error::{Error, Result};
use crate::fade::Role;
use crate::recognizer::ScoreCounts;
use crate::seed;
use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

/// Parametric recognition map: logistic in test SNR whose midpoint moves
/// away from `t_opt` with slope `alpha` per dB of train/test mismatch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleSurface {
    /// Logistic slope per dB.
    pub slope: f64,
    /// Midpoint at the optimal training SNR.
    pub m0: f64,
    pub alpha: f64,
    pub t_opt: f64,
    pub chance: f64,
    /// Extra midpoint shift of the single-class approximation probes.
    pub approx_offset_db: f64,
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

impl OracleSurface {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.slope, self.m0, self.alpha, self.t_opt, self.approx_offset_db]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.slope <= 0.0 || self.alpha < 0.0 || !(0.0..1.0).contains(&self.chance) {
            return Err(Error::invalid("oracle needs slope > 0, alpha >= 0, chance in [0, 1)"));
        }
        Ok(())
    }

    fn rate_at(&self, midpoint: f64, test: f64) -> f64 {
        self.chance + (1.0 - self.chance) * logistic(self.slope * (test - midpoint))
    }

    pub fn midpoint(&self, train: f64) -> f64 {
        self.m0 + self.alpha * (train - self.t_opt).abs()
    }

    pub fn rate(&self, train: f64, test: f64) -> f64 {
        self.rate_at(self.midpoint(train), test)
    }

    /// A pooled model behaves like the model at the middle of its pair.
    pub fn pair_rate(&self, a: f64, b: f64, test: f64) -> f64 {
        self.rate(0.5 * (a + b), test)
    }

    pub fn approx_rate(&self, snr: f64) -> f64 {
        self.rate_at(self.midpoint(snr) + self.approx_offset_db, snr)
    }

    /// Test SNR at which the row for `train` reaches `target`.
    pub fn crossing(&self, train: f64, target: f64) -> Option<f64> {
        if !(target > self.chance && target < 1.0) {
            return None;
        }
        let q = (target - self.chance) / (1.0 - self.chance);
        Some(self.midpoint(train) + logit(q) / self.slope)
    }

    /// Surface reproducing the worked example: probes at -5 and 0 dB give
    /// 32 % and 62 %, matched midpoint near -8.3 dB, mismatch slope 0.25.
    pub fn worked_example() -> Self {
        let (chance, alpha, m0) = (0.1, 0.25, -8.3);
        let lc = |r: f64| logit((r - chance) / (1.0 - chance));
        let slope = (lc(0.62) - lc(0.32)) / (5.0 * (1.0 + alpha));
        Self {
            slope,
            m0,
            alpha,
            t_opt: 0.0,
            chance,
            approx_offset_db: -m0 - lc(0.62) / slope,
        }
    }

    /// Random monotone surface around `center`.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, center: f64) -> Self {
        Self {
            slope: rng.random_range(0.12..0.6),
            m0: center + rng.random_range(-6.0..6.0),
            alpha: rng.random_range(0.0..0.5),
            t_opt: center + rng.random_range(-6.0..12.0),
            chance: 0.1,
            approx_offset_db: rng.random_range(0.0..6.0),
        }
    }
}

/// Rate of the oracle surface at one cell.
pub fn oracle_rate(surface: &OracleSurface, train_snr: f64, test_snr: f64) -> f64 {
    surface.rate(train_snr, test_snr)
}

/// Controller backend answering from an oracle surface.
#[derive(Clone, Debug)]
pub struct OracleBackend {
    pub surface: OracleSurface,
    pub initial_estimate: f64,
    /// Binomially sample each cell with this many scored words per test
    /// sentence (approximation tokens score one word); `None` returns the
    /// noise-free rate.
    pub binomial: Option<u64>,
    pub seed: u64,
    pub sentence_s: f64,
    pub token_s: f64,
}

impl OracleBackend {
    pub fn new(surface: OracleSurface, initial_estimate: f64) -> Self {
        Self {
            surface,
            initial_estimate,
            binomial: None,
            seed: 0,
            sentence_s: 2.5,
            token_s: 0.625,
        }
    }

    pub fn with_binomial(mut self, words_per_item: u64, seed: u64) -> Self {
        self.binomial = Some(words_per_item);
        self.seed = seed;
        self
    }

    fn counts(&self, p: f64, words: u64, tags: &[u64]) -> Result<ScoreCounts> {
        let p = p.clamp(0.0, 1.0);
        match self.binomial {
            None => {
                let n = 1_000_000;
                Ok(ScoreCounts {
                    presented: n,
                    correct: (p * n as f64).round() as usize,
                })
            }
            Some(_) => {
                let n = words;
                let mut rng = seed::rng(self.seed, tags);
                let k = Binomial::new(n, p).map_err(|e| Error::invalid(e.to_string()))?.sample(&mut rng);
                Ok(ScoreCounts {
                    presented: n as usize,
                    correct: k as usize,
                })
            }
        }
    }
}

impl Backend for OracleBackend {
    fn initial_estimate(&self) -> Result<f64> {
        Ok(self.initial_estimate)
    }

    fn seconds(&self, role: Role, count: usize) -> f64 {
        count as f64
            * if role.is_approximation() {
                self.token_s
            } else {
                self.sentence_s
            }
    }

    fn approx_probe(&self, snr: f64, config: &DarfConfig) -> Result<ScoreCounts> {
        self.counts(
            self.surface.approx_rate(snr),
            (config.approx_test * config.presentations) as u64,
            &[0, seed::snr_tag(snr)],
        )
    }

    fn rates(&self, cells: &[(RowModel, f64)], config: &DarfConfig) -> Result<Vec<ScoreCounts>> {
        cells
            .iter()
            .map(|&(row, test)| {
                let (p, tag) = match row {
                    RowModel::Single(t) => (self.surface.rate(t, test), [1, seed::snr_tag(t), 0]),
                    RowModel::Pair(a, b) => (
                        self.surface.pair_rate(a, b, test),
                        [2, seed::snr_tag(a), seed::snr_tag(b)],
                    ),
                };
                let words = self.binomial.unwrap_or(0) * config.n_test as u64;
                self.counts(p, words, &[tag[0], tag[1], tag[2], seed::snr_tag(test)])
            })
            .collect()
    }
}
