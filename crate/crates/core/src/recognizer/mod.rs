//! Whole-word GMM-HMM recognizer for the matrix grammar.

mod model;
mod train;
mod viterbi;

pub use model::{AcousticModel, Gmm, Hmm};
pub use train::{train, train_with_report, uninformed, TrainReport};

use crate::error::{Error, Result};
use crate::frontend::FeatureMatrix;
use crate::signal::{Transcript, WordClass, WordId, CLASS_COUNT};
use serde::{Deserialize, Serialize};
use viterbi::{search, with_silence, CompiledModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Grammar {
    /// Five slots in syntax order, ten alternatives each.
    Sentence,
    /// One slot with the ten words of a class.
    SingleClass(WordClass),
}

impl Grammar {
    pub fn slots(&self) -> Vec<WordClass> {
        match self {
            Grammar::Sentence => WordClass::ALL.to_vec(),
            Grammar::SingleClass(c) => vec![*c],
        }
    }

    pub fn words(&self) -> Vec<WordId> {
        self.slots().into_iter().flat_map(|c| c.words()).collect()
    }

    /// Whether a transcript is a sentence of this grammar.
    pub fn accepts(&self, t: &Transcript) -> bool {
        let slots = self.slots();
        t.len() == slots.len() && t.words().iter().zip(&slots).all(|(w, c)| w.class() == *c)
    }

    pub(crate) fn check(&self, t: &Transcript) -> Result<()> {
        if self.accepts(t) {
            Ok(())
        } else {
            Err(Error::invalid(format!("transcript {t} is not in the grammar")))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Topology {
    pub states_per_word: usize,
    pub silence: bool,
    pub silence_states: usize,
    /// Components per state after splitting; a power of two.
    pub mixtures: usize,
    /// Viterbi iterations run at each mixture count.
    pub iterations_per_stage: usize,
    /// Relative to the global per-dimension variance.
    pub variance_floor: f64,
    /// Split offset in standard deviations.
    pub split_perturbation: f64,
    pub min_self_loop: f64,
}

impl Default for Topology {
    fn default() -> Self {
        Self {
            states_per_word: 6,
            silence: true,
            silence_states: 3,
            mixtures: 2,
            iterations_per_stage: 4,
            variance_floor: 1e-3,
            split_perturbation: 0.2,
            min_self_loop: 1e-3,
        }
    }
}

impl Topology {
    pub fn validate(&self) -> Result<()> {
        if self.states_per_word == 0 || (self.silence && self.silence_states == 0) {
            return Err(Error::invalid("HMMs need at least one state"));
        }
        if !self.mixtures.is_power_of_two() {
            return Err(Error::invalid("mixture count must be a power of two"));
        }
        if self.iterations_per_stage == 0 {
            return Err(Error::invalid("at least one iteration per stage"));
        }
        if !(self.variance_floor > 0.0 && self.min_self_loop > 0.0 && self.min_self_loop < 0.5) {
            return Err(Error::invalid("variance floor and transition floor must be positive"));
        }
        Ok(())
    }

    pub fn total_iterations(&self) -> usize {
        (self.mixtures.trailing_zeros() as usize + 1) * self.iterations_per_stage
    }
}

/// Features of one utterance with its reference transcript.
#[derive(Clone, Debug)]
pub struct Utterance {
    pub features: FeatureMatrix,
    pub transcript: Transcript,
}

/// Model trained on the union of two training sets, labeled with both SNRs.
pub fn train_multicondition(
    set_a: (&[Utterance], f64),
    set_b: (&[Utterance], f64),
    grammar: &Grammar,
    topology: &Topology,
) -> Result<AcousticModel> {
    let mut data = set_a.0.to_vec();
    data.extend_from_slice(set_b.0);
    let mut m = train(&data, grammar, topology)?;
    m.train_snrs = vec![set_a.1.min(set_b.1), set_a.1.max(set_b.1)];
    m.train_snrs.dedup();
    Ok(m)
}

/// Reusable decoder for one model and grammar.
pub struct Decoder {
    compiled: CompiledModel,
    /// Model word index per slot alternative.
    words: Vec<Vec<(usize, WordId)>>,
    silence: Option<usize>,
    beam: f64,
}

/// Default decoder beam in natural-log units.
pub const DEFAULT_BEAM: f64 = 400.0;

impl Decoder {
    pub fn new(model: &AcousticModel, grammar: &Grammar) -> Result<Self> {
        model.validate()?;
        let words = grammar
            .slots()
            .into_iter()
            .map(|c| c.words().map(|w| Ok((model.word_index(w)?, w))).collect())
            .collect::<Result<_>>()?;
        let compiled = CompiledModel::new(model);
        let silence = compiled.silence;
        Ok(Self {
            compiled,
            words,
            silence,
            beam: DEFAULT_BEAM,
        })
    }

    /// Pruning beam; `f64::INFINITY` for the exact search.
    pub fn with_beam(mut self, beam: f64) -> Self {
        self.beam = beam;
        self
    }

    pub fn decode(&self, features: &FeatureMatrix) -> Result<Transcript> {
        let slots = with_silence(
            self.words
                .iter()
                .map(|alts| alts.iter().map(|a| a.0).collect())
                .collect(),
            self.silence,
        );
        let path = match search(&self.compiled, &slots, features, self.beam) {
            Err(Error::DegenerateData(_)) if self.beam.is_finite() => {
                search(&self.compiled, &slots, features, f64::INFINITY)?
            }
            r => r?,
        };
        let mut out = Vec::with_capacity(CLASS_COUNT);
        let offset = usize::from(self.silence.is_some());
        for (k, a) in path.visited() {
            if self.silence.is_some() && k % 2 == 0 {
                continue;
            }
            let slot = (k - offset) / (1 + offset);
            out.push(self.words[slot][a].1);
        }
        Ok(Transcript(out))
    }
}

/// Viterbi-best word sequence permitted by the grammar.
pub fn decode(model: &AcousticModel, features: &FeatureMatrix, grammar: &Grammar) -> Result<Transcript> {
    Decoder::new(model, grammar)?.decode(features)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreCounts {
    pub presented: usize,
    pub correct: usize,
}

impl ScoreCounts {
    pub fn rate(&self) -> f64 {
        if self.presented == 0 {
            0.0
        } else {
            self.correct as f64 / self.presented as f64
        }
    }
}

impl std::ops::Add for ScoreCounts {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self {
            presented: self.presented + o.presented,
            correct: self.correct + o.correct,
        }
    }
}

impl std::iter::Sum for ScoreCounts {
    fn sum<I: Iterator<Item = Self>>(it: I) -> Self {
        it.fold(Self::default(), |a, b| a + b)
    }
}

/// Positional word-identity comparison.
pub fn score(reference: &Transcript, hypothesis: &Transcript) -> Result<ScoreCounts> {
    if reference.len() != hypothesis.len() {
        return Err(Error::LengthMismatch {
            expected: reference.len(),
            actual: hypothesis.len(),
        });
    }
    Ok(ScoreCounts {
        presented: reference.len(),
        correct: reference
            .words()
            .iter()
            .zip(hypothesis.words())
            .filter(|(a, b)| a == b)
            .count(),
    })
}

#[cfg(test)]
mod tests;
