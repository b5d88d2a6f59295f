use super::{initial_estimate, Backend, DarfConfig, RowModel};
use crate::error::{Error, Result};
use crate::fade::{score_set, Pipeline, Role};
use crate::frontend::AudiogramProfile;
use crate::recognizer::{Grammar, ScoreCounts};
use rayon::prelude::*;

/// Simulation backend: records, trains and decodes through a pipeline.
pub struct PipelineBackend<'a> {
    pub pipeline: &'a Pipeline,
    pub seed: u64,
}

impl<'a> PipelineBackend<'a> {
    pub fn new(pipeline: &'a Pipeline, seed: u64) -> Self {
        Self { pipeline, seed }
    }
}

impl Backend for PipelineBackend<'_> {
    fn initial_estimate(&self) -> Result<f64> {
        let cfg = self.pipeline.config();
        let normal = AudiogramProfile::normal();
        initial_estimate(
            cfg.profile.as_ref().unwrap_or(&normal),
            self.pipeline.masker_level_db(),
            cfg.in_silence(),
        )
    }

    fn seconds(&self, role: Role, count: usize) -> f64 {
        count as f64 * self.pipeline.item_seconds(role)
    }

    fn approx_probe(&self, snr: f64, config: &DarfConfig) -> Result<ScoreCounts> {
        if config.presentations != self.pipeline.config().presentations {
            return Err(Error::Config(format!(
                "controller expects {} presentations, pipeline renders {}",
                config.presentations,
                self.pipeline.config().presentations
            )));
        }
        let model = self.pipeline.model(Role::ApproxTrain, snr, config.approx_train, self.seed)?;
        let test = self.pipeline.record(Role::ApproxTest, snr, config.approx_test, self.seed)?;
        score_set(&model, &test, &self.pipeline.grammar(Role::ApproxTest))
    }

    fn rates(&self, cells: &[(RowModel, f64)], config: &DarfConfig) -> Result<Vec<ScoreCounts>> {
        let p = self.pipeline;
        // record training sets first so pooled models find them
        let mut snrs: Vec<f64> = cells
            .iter()
            .flat_map(|(r, _)| match *r {
                RowModel::Single(t) => vec![t],
                RowModel::Pair(a, b) => vec![a, b],
            })
            .collect();
        snrs.sort_by(f64::total_cmp);
        snrs.dedup();
        snrs.par_iter()
            .map(|&t| p.record(Role::Train, t, config.n_train, self.seed).map(|_| ()))
            .collect::<Result<Vec<()>>>()?;
        // one job per distinct model and test set, then the decodes
        let mut rows: Vec<RowModel> = Vec::new();
        for (r, _) in cells {
            if !rows.contains(r) {
                rows.push(*r);
            }
        }
        let models = rows
            .par_iter()
            .map(|&row| match row {
                RowModel::Single(t) => p.model(Role::Train, t, config.n_train, self.seed),
                RowModel::Pair(a, b) => p.multicondition_model(a, b, config.n_train, self.seed),
            })
            .collect::<Result<Vec<_>>>()?;
        let mut tests: Vec<f64> = cells.iter().map(|c| c.1).collect();
        tests.sort_by(f64::total_cmp);
        tests.dedup();
        let sets = tests
            .par_iter()
            .map(|&t| p.record(Role::Test, t, config.n_test, self.seed))
            .collect::<Result<Vec<_>>>()?;
        cells
            .par_iter()
            .map(|(row, test)| {
                let m = &models[rows.iter().position(|r| r == row).unwrap_or(0)];
                let s = &sets[tests.iter().position(|t| t == test).unwrap_or(0)];
                score_set(m, s, &Grammar::Sentence)
            })
            .collect()
    }
}
