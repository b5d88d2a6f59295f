//! Benchmarks of the adaptive procedure against the grid reference.

mod scenario;
mod stats;

pub use scenario::{
    append_result, benefit, half_gain, manifest, read_results, ResultRecord, Runner, ScenarioConfig, RESULTS_HEADER,
};
pub use stats::{ast, compare, mean, median, propagate_sd, sd, AstRecord, StatsSummary};

use crate::darf::{DarfConfig, SrtResult};
use crate::error::{Error, Result};
use rayon::prelude::*;
use std::fmt::Write as _;

/// Repetitions below this are flagged as low confidence.
pub const MIN_CONFIDENT_REPS: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct SweepCell {
    pub n_train: usize,
    pub n_test: usize,
    pub reps: usize,
    /// Empty when read back from CSV.
    pub srts: Vec<f64>,
    pub mean_srt: f64,
    pub sd_srt: f64,
    /// Mean minus reference.
    pub delta_srt: f64,
    /// Mean recorded seconds, approximation included.
    pub mean_duration_s: f64,
    pub mean_approx_s: f64,
    pub ast: f64,
    pub low_confidence: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepTable {
    pub reference_srt: f64,
    pub cells: Vec<SweepCell>,
}

const SWEEP_HEADER: &str =
    "n_train,n_test,reps,mean_srt_db,sd_srt_db,delta_srt_db,mean_duration_s,mean_approx_s,ast,low_confidence";

/// Repeated adaptive runs per (train, test) count pair against a reference.
/// `run(n_train, n_test, rep)` performs one run.
pub fn sweep_counts<F>(
    run: F,
    train_counts: &[usize],
    test_counts: &[usize],
    reps: usize,
    reference: Option<f64>,
) -> Result<SweepTable>
where
    F: Fn(usize, usize, usize) -> Result<SrtResult> + Sync,
{
    if reps < 2 {
        return Err(Error::invalid("a sweep needs at least two repetitions"));
    }
    let reference = reference
        .filter(|r| r.is_finite())
        .ok_or_else(|| Error::Config("sweep needs a reference SRT".into()))?;
    if train_counts.is_empty() || test_counts.is_empty() {
        return Err(Error::invalid("sweep needs train and test counts"));
    }
    let jobs: Vec<(usize, usize, usize)> = train_counts
        .iter()
        .flat_map(|&a| test_counts.iter().flat_map(move |&b| (0..reps).map(move |r| (a, b, r))))
        .collect();
    let runs: Vec<(f64, f64, f64)> = jobs
        .par_iter()
        .map(|&(a, b, r)| {
            let res = run(a, b, r)?;
            Ok((res.srt, res.budget_s(), res.state.ledger.approx_s))
        })
        .collect::<Result<_>>()?;
    let mut cells = Vec::new();
    for (k, chunk) in runs.chunks(reps).enumerate() {
        let (n_train, n_test, _) = jobs[k * reps];
        let srts: Vec<f64> = chunk.iter().map(|c| c.0).collect();
        let dur: Vec<f64> = chunk.iter().map(|c| c.1).collect();
        let approx: Vec<f64> = chunk.iter().map(|c| c.2).collect();
        let (m, s) = (mean(&srts), sd(&srts));
        let t = mean(&dur);
        cells.push(SweepCell {
            n_train,
            n_test,
            reps,
            mean_srt: m,
            sd_srt: s,
            delta_srt: m - reference,
            mean_duration_s: t,
            mean_approx_s: mean(&approx),
            ast: ast(s, m - reference, t)?,
            low_confidence: reps < MIN_CONFIDENT_REPS,
            srts,
        });
    }
    Ok(SweepTable {
        reference_srt: reference,
        cells,
    })
}

/// [`sweep_counts`] over a scenario runner; repetition `r` uses seed `seed + r`.
pub fn sweep_runner(
    runner: &Runner,
    base: &DarfConfig,
    train_counts: &[usize],
    test_counts: &[usize],
    reps: usize,
    reference: Option<f64>,
    seed: u64,
) -> Result<SweepTable> {
    sweep_counts(
        |a, b, r| runner.darf(&base.clone().with_counts(a, b), seed + r as u64),
        train_counts,
        test_counts,
        reps,
        reference,
    )
}

impl SweepTable {
    pub fn to_csv(&self) -> String {
        let mut s = format!("# reference_srt_db={:.4}\n{SWEEP_HEADER}\n", self.reference_srt);
        for c in &self.cells {
            let _ = writeln!(
                s,
                "{},{},{},{:.4},{:.4},{:.4},{:.3},{:.3},{:.3},{}",
                c.n_train,
                c.n_test,
                c.reps,
                c.mean_srt,
                c.sd_srt,
                c.delta_srt,
                c.mean_duration_s,
                c.mean_approx_s,
                c.ast,
                c.low_confidence
            );
        }
        s
    }

    /// Summary columns only; individual SRTs are not stored in the CSV.
    pub fn from_csv(text: &str) -> Result<Self> {
        let bad = |m: &str| Error::Config(format!("sweep CSV: {m}"));
        let mut reference = f64::NAN;
        let mut cells = Vec::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            if let Some(r) = line.strip_prefix("# reference_srt_db=") {
                reference = r.parse().map_err(|_| bad("reference"))?;
                continue;
            }
            if line.starts_with('#') || line.starts_with("n_train") {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 10 {
                return Err(bad("row needs 10 fields"));
            }
            let u = |s: &str| s.parse::<usize>().map_err(|_| bad("integer"));
            let x = |s: &str| s.parse::<f64>().map_err(|_| bad("number"));
            cells.push(SweepCell {
                n_train: u(f[0])?,
                n_test: u(f[1])?,
                reps: u(f[2])?,
                srts: Vec::new(),
                mean_srt: x(f[3])?,
                sd_srt: x(f[4])?,
                delta_srt: x(f[5])?,
                mean_duration_s: x(f[6])?,
                mean_approx_s: x(f[7])?,
                ast: x(f[8])?,
                low_confidence: f[9] == "true",
            });
        }
        if cells.is_empty() {
            return Err(bad("no rows"));
        }
        Ok(Self {
            reference_srt: reference,
            cells,
        })
    }

    /// Cell with the lowest AST.
    pub fn best(&self) -> Option<&SweepCell> {
        self.cells.iter().min_by(|a, b| a.ast.total_cmp(&b.ast))
    }

    /// Three heatmaps over (train, test) counts: bias, duration and AST.
    pub fn to_svg(&self) -> String {
        let mut trains: Vec<usize> = self.cells.iter().map(|c| c.n_train).collect();
        let mut tests: Vec<usize> = self.cells.iter().map(|c| c.n_test).collect();
        for v in [&mut trains, &mut tests] {
            v.sort_unstable();
            v.dedup();
        }
        let cell = 44.0;
        let (left, top, gap) = (60.0, 40.0, 50.0);
        let pw = cell * tests.len() as f64;
        let ph = cell * trains.len() as f64;
        let width = left + 3.0 * (pw + gap);
        let height = top + ph + 50.0;
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="10">"#
        );
        let panels: [(&str, fn(&SweepCell) -> f64); 3] = [
            ("delta SRT / dB", |c| c.delta_srt),
            ("duration / min", |c| c.mean_duration_s / 60.0),
            ("AST", |c| c.ast),
        ];
        for (p, (title, value)) in panels.iter().enumerate() {
            let x0 = left + p as f64 * (pw + gap);
            let vals: Vec<f64> = self.cells.iter().map(value).collect();
            let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let _ = writeln!(s, r#"<text x="{x0}" y="20" font-size="12">{title}</text>"#);
            for c in &self.cells {
                let i = trains.iter().position(|&t| t == c.n_train).unwrap_or(0);
                let j = tests.iter().position(|&t| t == c.n_test).unwrap_or(0);
                let v = value(c);
                let g = if hi > lo { 255.0 * (1.0 - (v - lo) / (hi - lo)) } else { 200.0 };
                let g = g.round() as u8;
                let (x, y) = (x0 + j as f64 * cell, top + (trains.len() - 1 - i) as f64 * cell);
                let _ = writeln!(
                    s,
                    r##"<rect x="{x}" y="{y}" width="{cell}" height="{cell}" fill="rgb({g},{g},{g})" stroke="#888"/>"##
                );
                let ink = if g < 128 { "#fff" } else { "#000" };
                let _ = writeln!(
                    s,
                    r#"<text x="{}" y="{}" text-anchor="middle" fill="{ink}">{v:.1}</text>"#,
                    x + cell / 2.0,
                    y + cell * 0.6
                );
            }
            for (j, t) in tests.iter().enumerate() {
                let _ = writeln!(
                    s,
                    r#"<text x="{}" y="{}" text-anchor="middle">{t}</text>"#,
                    x0 + (j as f64 + 0.5) * cell,
                    top + ph + 14.0
                );
            }
            if p == 0 {
                for (i, t) in trains.iter().enumerate() {
                    let _ = writeln!(
                        s,
                        r#"<text x="{}" y="{}" text-anchor="end">{t}</text>"#,
                        x0 - 4.0,
                        top + (trains.len() - 1 - i) as f64 * cell + cell * 0.6
                    );
                }
            }
        }
        let _ = writeln!(
            s,
            r#"<text x="{left}" y="{}">test sentences (columns) x train sentences (rows)</text>"#,
            top + ph + 34.0
        );
        s.push_str("</svg>\n");
        s
    }
}

/// Text summary of a finished sweep.
pub fn report(table: &SweepTable) -> Result<String> {
    let best = table.best().ok_or_else(|| Error::invalid("empty sweep"))?;
    let mut s = String::new();
    let _ = writeln!(s, "reference SRT: {:.2} dB", table.reference_srt);
    let _ = writeln!(s, "durations include the approximation stage audio (listed separately)");
    for c in &table.cells {
        let _ = writeln!(
            s,
            "train {:>4} test {:>4}: delta {:+.2} dB, sd {:.2} dB, {:.1} min ({:.1} min approx), AST {:.1}{}",
            c.n_train,
            c.n_test,
            c.delta_srt,
            c.sd_srt,
            c.mean_duration_s / 60.0,
            c.mean_approx_s / 60.0,
            c.ast,
            if c.low_confidence { " [low confidence]" } else { "" }
        );
    }
    let _ = writeln!(
        s,
        "lowest AST: {:.1} at {} train / {} test sentences",
        best.ast, best.n_train, best.n_test
    );
    Ok(s)
}

#[cfg(test)]
mod tests;
