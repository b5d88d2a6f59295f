//! Exhaustive-grid simulation: recognition maps and SRT extraction.

mod map;
mod pipeline;

pub use map::{row_crossing, row_crossings, srt_from_map, Crossing, RecognitionMap, SrtEstimate};
pub use pipeline::{Pipeline, PipelineConfig, RecordedSet, Role, CACHE_DIR_ENV};

use crate::error::{Error, Result};
use crate::recognizer::{score, Decoder, ScoreCounts};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Sentences per training and per test SNR.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Counts {
    pub train: usize,
    pub test: usize,
}

impl Counts {
    pub const STANDARD: Counts = Counts { train: 960, test: 120 };

    pub fn new(train: usize, test: usize) -> Self {
        Self { train, test }
    }
}

/// Decode a recorded test set with a model and count correct words.
pub fn score_set(
    model: &crate::recognizer::AcousticModel,
    set: &RecordedSet,
    grammar: &crate::recognizer::Grammar,
) -> Result<ScoreCounts> {
    let dec = Decoder::new(model, grammar)?;
    let parts: Vec<ScoreCounts> = set
        .utterances
        .par_iter()
        .map(|u| score(&u.transcript, &dec.decode(&u.features)?))
        .collect::<Result<_>>()?;
    Ok(parts.into_iter().sum())
}

/// Train (or fetch) the model at `train_snr`, decode the test set at
/// `test_snr` and count correct words.
pub fn evaluate_cell(
    pipeline: &Pipeline,
    train_snr: f64,
    test_snr: f64,
    counts: Counts,
    seed: u64,
) -> Result<ScoreCounts> {
    let model = pipeline.model(Role::Train, train_snr, counts.train, seed)?;
    let test = pipeline.record(Role::Test, test_snr, counts.test, seed)?;
    score_set(&model, &test, &crate::recognizer::Grammar::Sentence)
}

/// Full train × test map.
pub fn run_grid(
    pipeline: &Pipeline,
    train_snrs: &[f64],
    test_snrs: &[f64],
    counts: Counts,
    seed: u64,
) -> Result<RecognitionMap> {
    if train_snrs.is_empty() || test_snrs.is_empty() {
        return Err(Error::invalid("grid needs at least one train and one test SNR"));
    }
    let mut map = RecognitionMap::new();
    fill(pipeline, &mut map, train_snrs, test_snrs, counts, seed)?;
    Ok(map)
}

fn fill(
    pipeline: &Pipeline,
    map: &mut RecognitionMap,
    train_snrs: &[f64],
    test_snrs: &[f64],
    counts: Counts,
    seed: u64,
) -> Result<()> {
    let cells: Vec<(f64, f64)> = train_snrs
        .iter()
        .flat_map(|&a| test_snrs.iter().map(move |&b| (a, b)))
        .filter(|&(a, b)| !map.is_evaluated(a, b))
        .collect();
    // distinct models and test sets first, so no job trains twice
    let mut rows: Vec<f64> = cells.iter().map(|c| c.0).collect();
    let mut tests: Vec<f64> = cells.iter().map(|c| c.1).collect();
    for v in [&mut rows, &mut tests] {
        v.sort_by(f64::total_cmp);
        v.dedup();
    }
    let models = rows
        .par_iter()
        .map(|&t| {
            let m = pipeline.model(Role::Train, t, counts.train, seed)?;
            // grid training sets are large and never reused
            pipeline.release(Role::Train, t, counts.train, seed);
            Ok(m)
        })
        .collect::<Result<Vec<_>>>()?;
    let sets = tests
        .par_iter()
        .map(|&t| pipeline.record(Role::Test, t, counts.test, seed))
        .collect::<Result<Vec<_>>>()?;
    let results: Vec<ScoreCounts> = cells
        .par_iter()
        .map(|&(a, b)| {
            let m = &models[rows.iter().position(|&r| r == a).unwrap_or(0)];
            let s = &sets[tests.iter().position(|&t| t == b).unwrap_or(0)];
            score_set(m, s, &crate::recognizer::Grammar::Sentence)
        })
        .collect::<Result<_>>()?;
    for ((a, b), c) in cells.into_iter().zip(results) {
        map.set(a, b, c)?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FadeConfig {
    pub counts: Counts,
    pub train_snr_count: usize,
    pub spacing_db: f64,
    /// Extend test SNRs downward until every row is below this rate.
    pub floor_rate: f64,
    pub max_extensions: usize,
    pub target: f64,
}

impl Default for FadeConfig {
    fn default() -> Self {
        Self {
            counts: Counts::STANDARD,
            train_snr_count: 11,
            spacing_db: 3.0,
            floor_rate: 0.25,
            max_extensions: 12,
            target: 0.5,
        }
    }
}

/// Training SNRs on the spacing grid, centered on `center` (rounded to the
/// nearest grid point).
pub fn standard_grid(center: f64, config: &FadeConfig) -> Vec<f64> {
    let c = (center / config.spacing_db).round() * config.spacing_db;
    let half = (config.train_snr_count as f64 - 1.0) / 2.0;
    (0..config.train_snr_count)
        .map(|i| c + (i as f64 - half.floor()) * config.spacing_db)
        .collect()
}

#[derive(Clone, Debug)]
pub struct FadeResult {
    pub map: RecognitionMap,
    pub srt: SrtEstimate,
    /// Recorded seconds over all sets.
    pub budget_s: f64,
}

/// Standard exhaustive simulation around `center`.
pub fn run_fade(pipeline: &Pipeline, center: f64, config: &FadeConfig, seed: u64) -> Result<FadeResult> {
    let train = standard_grid(center, config);
    let mut tests = train.clone();
    let mut map = run_grid(pipeline, &train, &tests, config.counts, seed)?;
    for _ in 0..config.max_extensions {
        let lowest = tests[0];
        let best = (0..train.len())
            .filter_map(|i| map.rate(train[i], lowest))
            .fold(0.0, f64::max);
        if best < config.floor_rate {
            break;
        }
        tests.insert(0, lowest - config.spacing_db);
        fill(pipeline, &mut map, &train, &tests[..1], config.counts, seed)?;
    }
    let srt = srt_from_map(&map, config.target)?;
    let budget_s = grid_budget(pipeline, train.len(), tests.len(), config.counts);
    Ok(FadeResult { map, srt, budget_s })
}

/// Recorded seconds of a full grid.
pub fn grid_budget(pipeline: &Pipeline, n_train: usize, n_test: usize, counts: Counts) -> f64 {
    let s = pipeline.item_seconds(Role::Train);
    (n_train * counts.train + n_test * counts.test) as f64 * s
}
