//! Procedural matrix-sentence corpus: five word classes with ten synthetic
//! tokens each. A token is a harmonic complex shaped by its own formant
//! trajectories, optionally preceded by a fricative-like noise burst.

use super::{dbspl_to_rms, Waveform, DEFAULT_CALIBRATION_DB, DEFAULT_SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::seed;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt;

pub const CLASS_COUNT: usize = 5;
pub const TOKENS_PER_CLASS: usize = 10;
const TOKEN_LEVEL_DB: f64 = 65.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum WordClass {
    Name,
    Verb,
    Number,
    Adjective,
    Object,
}

impl WordClass {
    /// Sentence syntax order.
    pub const ALL: [WordClass; CLASS_COUNT] = [
        WordClass::Name,
        WordClass::Verb,
        WordClass::Number,
        WordClass::Adjective,
        WordClass::Object,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL.get(i).copied().ok_or(Error::IndexOutOfRange {
            what: "word class",
            index: i,
            limit: CLASS_COUNT,
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            WordClass::Name => "name",
            WordClass::Verb => "verb",
            WordClass::Number => "number",
            WordClass::Adjective => "adjective",
            WordClass::Object => "object",
        }
    }

    pub fn words(self) -> impl Iterator<Item = WordId> {
        (0..TOKENS_PER_CLASS).map(move |i| WordId::new(self, i))
    }
}

impl std::str::FromStr for WordClass {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown word class {s:?}")))
    }
}

/// Vocabulary index `class * 10 + token`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct WordId(pub u8);

impl WordId {
    pub fn new(class: WordClass, index: usize) -> Self {
        debug_assert!(index < TOKENS_PER_CLASS);
        WordId((class.index() * TOKENS_PER_CLASS + index) as u8)
    }

    pub fn class(self) -> WordClass {
        WordClass::ALL[self.0 as usize / TOKENS_PER_CLASS]
    }

    pub fn index_in_class(self) -> usize {
        self.0 as usize % TOKENS_PER_CLASS
    }

    pub fn vocabulary() -> impl Iterator<Item = WordId> {
        (0..(CLASS_COUNT * TOKENS_PER_CLASS) as u8).map(WordId)
    }
}

impl fmt::Display for WordId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.class().as_str(), self.index_in_class())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Transcript(pub Vec<WordId>);

impl Transcript {
    pub fn words(&self) -> &[WordId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for Transcript {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let words: Vec<String> = self.0.iter().map(|w| w.to_string()).collect();
        f.write_str(&words.join(" "))
    }
}

#[derive(Clone, Debug)]
pub struct Token {
    pub id: WordId,
    pub waveform: Waveform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub seed: u64,
    /// Duration of each synthesized word.
    pub token_duration_s: f64,
    /// Silence distributed around the five words of a sentence
    /// (20 % lead, 4 × 10 % between words, 40 % trail).
    pub sentence_gap_s: f64,
    /// Silence on each side of an isolated token.
    pub token_pad_s: f64,
    pub sample_rate: u32,
    pub calibration_db: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            token_duration_s: 0.4,
            sentence_gap_s: 0.5,
            token_pad_s: 0.1125,
            sample_rate: DEFAULT_SAMPLE_RATE,
            calibration_db: DEFAULT_CALIBRATION_DB,
        }
    }
}

impl CorpusConfig {
    pub fn sentence_duration_s(&self) -> f64 {
        CLASS_COUNT as f64 * self.token_duration_s + self.sentence_gap_s
    }

    pub fn isolated_token_duration_s(&self) -> f64 {
        self.token_duration_s + 2.0 * self.token_pad_s
    }
}

#[derive(Clone, Debug)]
pub struct MatrixCorpus {
    config: CorpusConfig,
    tokens: Vec<Token>,
}

/// Build a corpus with default rate and calibration.
pub fn synthesize_corpus(
    seed: u64,
    token_duration_s: f64,
    sentence_gap_s: f64,
) -> Result<MatrixCorpus> {
    MatrixCorpus::synthesize(&CorpusConfig {
        seed,
        token_duration_s,
        sentence_gap_s,
        ..CorpusConfig::default()
    })
}

impl MatrixCorpus {
    pub fn synthesize(config: &CorpusConfig) -> Result<Self> {
        if !(config.token_duration_s > 0.0 && config.token_duration_s.is_finite()) {
            return Err(Error::invalid("token duration must be positive"));
        }
        if !(config.sentence_gap_s >= 0.0 && config.token_pad_s >= 0.0) {
            return Err(Error::invalid("gaps must be non-negative"));
        }
        if config.sample_rate < 8_000 {
            return Err(Error::invalid("sample rate below 8 kHz"));
        }
        let tokens = WordId::vocabulary()
            .map(|id| {
                let mut rng = seed::rng(config.seed, &[0x70_6b6e, id.0 as u64]);
                let samples = synth_word(&mut rng, id, config);
                Token {
                    id,
                    waveform: Waveform::from_parts_unchecked(
                        vec![samples],
                        config.sample_rate,
                        config.calibration_db,
                    ),
                }
            })
            .collect();
        Ok(Self {
            config: config.clone(),
            tokens,
        })
    }

    pub fn config(&self) -> &CorpusConfig {
        &self.config
    }

    pub fn sample_rate(&self) -> u32 {
        self.config.sample_rate
    }

    pub fn calibration_db(&self) -> f64 {
        self.config.calibration_db
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn token(&self, id: WordId) -> &Token {
        &self.tokens[id.0 as usize]
    }

    fn gap(&self, secs: f64) -> usize {
        (secs * self.config.sample_rate as f64).round() as usize
    }

    /// Concatenate one token per class in syntax order.
    pub fn render_sentence(&self, slots: [usize; CLASS_COUNT]) -> Result<(Waveform, Transcript)> {
        for &i in &slots {
            if i >= TOKENS_PER_CLASS {
                return Err(Error::IndexOutOfRange {
                    what: "slot index",
                    index: i,
                    limit: TOKENS_PER_CLASS,
                });
            }
        }
        let gap = self.config.sentence_gap_s;
        let lead = self.gap(0.2 * gap);
        let between = self.gap(0.1 * gap);
        let trail = self.gap(0.4 * gap);
        let mut out = vec![0.0; lead];
        let mut words = Vec::with_capacity(CLASS_COUNT);
        for (k, (&i, class)) in slots.iter().zip(WordClass::ALL).enumerate() {
            let id = WordId::new(class, i);
            if k > 0 {
                out.extend(std::iter::repeat_n(0.0, between));
            }
            out.extend_from_slice(self.token(id).waveform.channel(0));
            words.push(id);
        }
        out.extend(std::iter::repeat_n(0.0, trail));
        Ok((
            Waveform::from_parts_unchecked(vec![out], self.sample_rate(), self.calibration_db()),
            Transcript(words),
        ))
    }

    /// An isolated token with padding on both sides.
    pub fn render_token(&self, class: WordClass, index: usize) -> Result<(Waveform, Transcript)> {
        if index >= TOKENS_PER_CLASS {
            return Err(Error::IndexOutOfRange {
                what: "token index",
                index,
                limit: TOKENS_PER_CLASS,
            });
        }
        let id = WordId::new(class, index);
        let pad = self.gap(self.config.token_pad_s);
        let mut out = vec![0.0; pad];
        out.extend_from_slice(self.token(id).waveform.channel(0));
        out.extend(std::iter::repeat_n(0.0, pad));
        Ok((
            Waveform::from_parts_unchecked(vec![out], self.sample_rate(), self.calibration_db()),
            Transcript(vec![id]),
        ))
    }
}

struct Formants {
    start: [f64; 3],
    end: [f64; 3],
}

struct Syllable {
    start: f64,
    end: f64,
    formants: Formants,
    burst: Option<(f64, f64)>,
}

const BANDWIDTHS: [f64; 3] = [90.0, 120.0, 180.0];

fn resonance(f: f64, center: f64, bw: f64) -> f64 {
    let c2 = center * center;
    c2 / ((c2 - f * f).powi(2) + (bw * f).powi(2)).sqrt()
}

fn draw_formants<R: Rng>(rng: &mut R) -> Formants {
    let mut pick = |lo: f64, hi: f64| rng.random_range(lo..hi);
    Formants {
        start: [pick(280.0, 850.0), pick(900.0, 2400.0), pick(2300.0, 3400.0)],
        end: [pick(280.0, 850.0), pick(900.0, 2400.0), pick(2300.0, 3400.0)],
    }
}

fn synth_word<R: Rng>(rng: &mut R, id: WordId, config: &CorpusConfig) -> Vec<f64> {
    let sr = config.sample_rate as f64;
    let n = (config.token_duration_s * sr).round() as usize;
    let duration = n as f64 / sr;
    let n_syll = rng.random_range(1..=3usize);
    let mut cuts: Vec<f64> = (0..n_syll - 1).map(|_| rng.random_range(0.25..0.75)).collect();
    cuts.sort_by(f64::total_cmp);
    let mut bounds = vec![0.0];
    bounds.extend(cuts);
    bounds.push(1.0);
    let syllables: Vec<Syllable> = bounds
        .windows(2)
        .map(|w| {
            let burst = rng
                .random_bool(0.4)
                .then(|| (rng.random_range(2500.0..6500.0), rng.random_range(0.03..0.08)));
            Syllable {
                start: w[0] * duration,
                end: w[1] * duration,
                formants: draw_formants(rng),
                burst,
            }
        })
        .collect();
    let f0_start = rng.random_range(95.0..150.0);
    let f0_end = f0_start * rng.random_range(0.8..1.2);
    // Class-dependent spectral tilt keeps the classes acoustically distinct
    // without making any two words in a class identical.
    let tilt_db_per_oct = -9.0 - 1.5 * id.class().index() as f64 + rng.random_range(-1.5..1.5);

    let nyquist = sr / 2.0 - 200.0;
    let mut out = vec![0.0; n];
    let mut phase = 0.0;
    let block = 32;
    let mut amps: Vec<f64> = Vec::new();
    for start in (0..n).step_by(block) {
        let t = start as f64 / sr;
        let pos = t / duration;
        let f0 = f0_start + (f0_end - f0_start) * pos;
        let syl = syllables
            .iter()
            .find(|s| t < s.end)
            .unwrap_or(syllables.last().unwrap());
        let local = ((t - syl.start) / (syl.end - syl.start)).clamp(0.0, 1.0);
        let formants: Vec<f64> = (0..3)
            .map(|k| syl.formants.start[k] + (syl.formants.end[k] - syl.formants.start[k]) * local)
            .collect();
        let n_harm = (nyquist / f0).floor() as usize;
        amps.clear();
        amps.extend((1..=n_harm).map(|h| {
            let f = h as f64 * f0;
            let shape: f64 = formants
                .iter()
                .zip(BANDWIDTHS)
                .map(|(&c, bw)| resonance(f, c, bw))
                .sum();
            shape * 10f64.powf(tilt_db_per_oct * (f / 100.0).log2() / 20.0)
        }));
        // syllable envelope: raised-cosine ramps of 25 ms
        let ramp = 0.025;
        let env = ((t - syl.start) / ramp).clamp(0.0, 1.0) * ((syl.end - t) / ramp).clamp(0.0, 1.0);
        let env = 0.5 - 0.5 * (PI * env).cos();
        let end = (start + block).min(n);
        for sample in out.iter_mut().take(end).skip(start) {
            phase += 2.0 * PI * f0 / sr;
            if phase > 2.0 * PI {
                phase -= 2.0 * PI;
            }
            let mut v = 0.0;
            for (h, a) in amps.iter().enumerate() {
                v += a * ((h + 1) as f64 * phase).sin();
            }
            *sample = env * v;
        }
    }

    // fricative-like bursts at syllable onsets
    for syl in &syllables {
        if let Some((center, dur)) = syl.burst {
            let s0 = (syl.start * sr) as usize;
            let len = ((dur * sr) as usize).min(n.saturating_sub(s0));
            let mut y1 = 0.0;
            let mut y2 = 0.0;
            let w = 2.0 * PI * center / sr;
            let r: f64 = 0.97;
            let (a1, a2) = (2.0 * r * w.cos(), -r * r);
            for i in 0..len {
                let x: f64 = StandardNormal.sample(rng);
                let y = x + a1 * y1 + a2 * y2;
                y2 = y1;
                y1 = y;
                let env = (PI * i as f64 / len as f64).sin();
                out[s0 + i] += 0.08 * env * y;
            }
        }
    }

    // global 5 ms fade in/out
    let fade = ((0.005 * sr) as usize).min(n / 2);
    for i in 0..fade {
        let g = i as f64 / fade as f64;
        out[i] *= g;
        out[n - 1 - i] *= g;
    }

    let rms = (out.iter().map(|s| s * s).sum::<f64>() / n as f64).sqrt();
    let target = dbspl_to_rms(TOKEN_LEVEL_DB, config.calibration_db);
    if rms > 0.0 {
        out.iter_mut().for_each(|s| *s *= target / rms);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus() -> MatrixCorpus {
        MatrixCorpus::synthesize(&CorpusConfig::default()).unwrap()
    }

    #[test]
    fn fifty_tokens_in_five_classes() {
        let c = corpus();
        assert_eq!(c.tokens().len(), 50);
        for (i, t) in c.tokens().iter().enumerate() {
            assert_eq!(t.id.0 as usize, i);
            assert_eq!(t.waveform.sample_rate(), c.sample_rate());
        }
        assert_eq!(WordId(23).class(), WordClass::Number);
        assert_eq!(WordId(23).index_in_class(), 3);
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let a = synthesize_corpus(1, 0.6, 0.5).unwrap();
        let b = synthesize_corpus(1, 0.6, 0.5).unwrap();
        for (x, y) in a.tokens().iter().zip(b.tokens()) {
            assert_eq!(x.waveform, y.waveform);
        }
    }

    #[test]
    fn different_seed_changes_audio_not_structure() {
        let a = synthesize_corpus(1, 0.6, 0.5).unwrap();
        let b = synthesize_corpus(2, 0.6, 0.5).unwrap();
        assert_eq!(a.tokens().len(), b.tokens().len());
        let differing = a
            .tokens()
            .iter()
            .zip(b.tokens())
            .filter(|(x, y)| x.waveform != y.waveform)
            .count();
        assert_eq!(differing, 50);
        assert_eq!(a.tokens()[7].waveform.len(), b.tokens()[7].waveform.len());
    }

    #[test]
    fn tokens_are_mutually_distinct() {
        let c = corpus();
        for i in 0..50 {
            for j in (i + 1)..50 {
                let a = c.tokens()[i].waveform.channel(0);
                let b = c.tokens()[j].waveform.channel(0);
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                let na: f64 = a.iter().map(|x| x * x).sum();
                let nb: f64 = b.iter().map(|x| x * x).sum();
                assert!(dot / (na * nb).sqrt() < 0.9, "tokens {i} and {j} too similar");
            }
        }
    }

    #[test]
    fn invalid_duration_rejected() {
        assert!(synthesize_corpus(1, 0.0, 0.5).is_err());
        assert!(synthesize_corpus(1, -1.0, 0.5).is_err());
    }

    #[test]
    fn sentence_transcript_and_duration() {
        let c = corpus();
        let (w, t) = c.render_sentence([0; 5]).unwrap();
        let expected: Vec<WordId> = WordClass::ALL.iter().map(|&k| WordId::new(k, 0)).collect();
        assert_eq!(t.0, expected);
        assert!((w.duration_s() - 2.5).abs() < 0.01, "{}", w.duration_s());
        assert!(c.render_sentence([0, 0, 10, 0, 0]).is_err());
    }

    #[test]
    fn twenty_sentences_take_about_a_minute() {
        let c = corpus();
        let total: f64 = (0..20)
            .map(|i| c.render_sentence([i % 10; 5]).unwrap().0.duration_s())
            .sum();
        assert!((45.0..=65.0).contains(&total), "{total}");
    }

    #[test]
    fn token_budgets() {
        let c = corpus();
        let one = c.render_token(WordClass::Name, 3).unwrap().0.duration_s();
        assert!((25.0 * one - 15.0).abs() < 1.0, "{}", 25.0 * one);
        assert!((120.0 * one - 75.0).abs() < 1.0, "{}", 120.0 * one);
        assert_eq!(
            c.render_token(WordClass::Name, 3).unwrap(),
            c.render_token(WordClass::Name, 3).unwrap()
        );
        assert!(c.render_token(WordClass::Name, 10).is_err());
    }
}
