use crate::error::{Error, Result};
use crate::recognizer::ScoreCounts;
use std::fmt::Write as _;
use std::io::Write;

/// Sparse word-correct rates over (training SNR × test SNR).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RecognitionMap {
    train_snrs: Vec<f64>,
    test_snrs: Vec<f64>,
    /// Row-major over train × test; `None` where nothing was simulated.
    cells: Vec<Option<ScoreCounts>>,
}

fn insert_sorted(axis: &mut Vec<f64>, v: f64) -> (usize, bool) {
    match axis.iter().position(|&x| (x - v).abs() < 1e-9) {
        Some(i) => (i, false),
        None => {
            let i = axis.partition_point(|&x| x < v);
            axis.insert(i, v);
            (i, true)
        }
    }
}

impl RecognitionMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn train_snrs(&self) -> &[f64] {
        &self.train_snrs
    }

    pub fn test_snrs(&self) -> &[f64] {
        &self.test_snrs
    }

    fn idx(&self, i: usize, j: usize) -> usize {
        i * self.test_snrs.len() + j
    }

    pub fn add_train(&mut self, snr: f64) -> usize {
        let (i, new) = insert_sorted(&mut self.train_snrs, snr);
        if new {
            let n = self.test_snrs.len();
            let at = i * n;
            self.cells.splice(at..at, std::iter::repeat_n(None, n));
        }
        i
    }

    pub fn add_test(&mut self, snr: f64) -> usize {
        let old = self.test_snrs.len();
        let (j, new) = insert_sorted(&mut self.test_snrs, snr);
        if new {
            let rows = self.train_snrs.len();
            let mut cells = Vec::with_capacity(rows * (old + 1));
            for r in 0..rows {
                cells.extend_from_slice(&self.cells[r * old..r * old + j]);
                cells.push(None);
                cells.extend_from_slice(&self.cells[r * old + j..(r + 1) * old]);
            }
            self.cells = cells;
        }
        j
    }

    pub fn set(&mut self, train: f64, test: f64, counts: ScoreCounts) -> Result<()> {
        if counts.presented == 0 || counts.correct > counts.presented {
            return Err(Error::invalid("a map cell needs 0 <= correct <= presented, presented >= 1"));
        }
        let i = self.add_train(train);
        let j = self.add_test(test);
        let k = self.idx(i, j);
        self.cells[k] = Some(counts);
        Ok(())
    }

    pub fn counts(&self, train: f64, test: f64) -> Option<ScoreCounts> {
        let i = self.train_snrs.iter().position(|&x| (x - train).abs() < 1e-9)?;
        let j = self.test_snrs.iter().position(|&x| (x - test).abs() < 1e-9)?;
        self.cells[self.idx(i, j)]
    }

    pub fn rate(&self, train: f64, test: f64) -> Option<f64> {
        self.counts(train, test).map(|c| c.rate())
    }

    pub fn is_evaluated(&self, train: f64, test: f64) -> bool {
        self.counts(train, test).is_some()
    }

    pub fn evaluated_cells(&self) -> usize {
        self.cells.iter().filter(|c| c.is_some()).count()
    }

    /// Evaluated (test SNR, rate) pairs of row `i`, ascending.
    pub fn row(&self, i: usize) -> (Vec<f64>, Vec<f64>) {
        let mut snrs = Vec::new();
        let mut rates = Vec::new();
        for (j, &t) in self.test_snrs.iter().enumerate() {
            if let Some(c) = self.cells[self.idx(i, j)] {
                snrs.push(t);
                rates.push(c.rate());
            }
        }
        (snrs, rates)
    }

    /// Header row of test SNRs, one row per training SNR, NaN where not
    /// evaluated.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("train_snr_db");
        for t in &self.test_snrs {
            let _ = write!(s, ",{t}");
        }
        s.push('\n');
        for (i, tr) in self.train_snrs.iter().enumerate() {
            let _ = write!(s, "{tr}");
            for j in 0..self.test_snrs.len() {
                match self.cells[self.idx(i, j)] {
                    Some(c) => {
                        let _ = write!(s, ",{:.6}", c.rate());
                    }
                    None => s.push_str(",NaN"),
                }
            }
            s.push('\n');
        }
        s
    }

    /// Inverse of `to_csv`. Counts are not stored in the CSV, so cells are
    /// restored with a presentation count of 1e6.
    pub fn from_csv(text: &str) -> Result<Self> {
        let bad = |m: &str| Error::Config(format!("recognition map CSV: {m}"));
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| bad("empty"))?;
        let tests: Vec<f64> = header
            .split(',')
            .skip(1)
            .map(|v| v.trim().parse().map_err(|_| bad("bad test SNR")))
            .collect::<Result<_>>()?;
        let mut map = Self::new();
        for line in lines {
            let mut f = line.split(',');
            let tr: f64 = f
                .next()
                .unwrap_or("")
                .trim()
                .parse()
                .map_err(|_| bad("bad train SNR"))?;
            map.add_train(tr);
            let vals: Vec<&str> = f.collect();
            if vals.len() != tests.len() {
                return Err(bad("row length"));
            }
            for (t, v) in tests.iter().zip(vals) {
                map.add_test(*t);
                let r: f64 = v.trim().parse().map_err(|_| bad("bad rate"))?;
                if r.is_finite() {
                    if !(0.0..=1.0).contains(&r) {
                        return Err(bad("rate outside [0, 1]"));
                    }
                    let n = 1_000_000;
                    map.set(tr, *t, ScoreCounts {
                        presented: n,
                        correct: (r * n as f64).round() as usize,
                    })?;
                }
            }
        }
        Ok(map)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(self.to_csv().as_bytes())?;
        Ok(())
    }

    /// Gray-scale rendering; unevaluated cells show a checkerboard.
    pub fn to_svg(&self, title: &str) -> String {
        let cell = 28.0;
        let (left, top) = (70.0, 40.0);
        let (nr, nc) = (self.train_snrs.len(), self.test_snrs.len());
        let w = left + cell * nc as f64 + 20.0;
        let h = top + cell * nr as f64 + 50.0;
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="10">"#
        );
        s.push_str(
            r##"<defs><pattern id="checker" width="8" height="8" patternUnits="userSpaceOnUse"><rect width="8" height="8" fill="#fff"/><rect width="4" height="4" fill="#ccc"/><rect x="4" y="4" width="4" height="4" fill="#ccc"/></pattern></defs>
"##,
        );
        let _ = writeln!(s, r#"<text x="{left}" y="16" font-size="12">{}</text>"#, xml_escape(title));
        // highest training SNR on top
        for (ri, i) in (0..nr).rev().enumerate() {
            let y = top + ri as f64 * cell;
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
                left - 4.0,
                y + cell * 0.6,
                self.train_snrs[i]
            );
            for j in 0..nc {
                let x = left + j as f64 * cell;
                let fill = match self.cells[self.idx(i, j)] {
                    Some(c) => {
                        let g = (c.rate() * 255.0).round() as u8;
                        format!("rgb({g},{g},{g})")
                    }
                    None => "url(#checker)".to_string(),
                };
                let _ = writeln!(
                    s,
                    r##"<rect x="{x}" y="{y}" width="{cell}" height="{cell}" fill="{fill}" stroke="#888" stroke-width="0.5"/>"##
                );
            }
        }
        let yb = top + nr as f64 * cell + 14.0;
        for (j, t) in self.test_snrs.iter().enumerate() {
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{yb}" text-anchor="middle">{t}</text>"#,
                left + (j as f64 + 0.5) * cell
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">test SNR / dB</text>"#,
            left + cell * nc as f64 / 2.0,
            yb + 16.0
        );
        let _ = writeln!(
            s,
            r#"<text x="12" y="{}" transform="rotate(-90 12 {})" text-anchor="middle">train SNR / dB</text>"#,
            top + cell * nr as f64 / 2.0,
            top + cell * nr as f64 / 2.0
        );
        s.push_str("</svg>\n");
        s
    }
}

pub(crate) fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Where a row reaches the target rate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Crossing {
    At { snr: f64, interpolated: bool },
    /// Already above target at the lowest test SNR.
    BelowRange,
    /// Never reaches the target.
    AboveRange,
}

impl Crossing {
    pub fn snr(&self) -> Option<f64> {
        match self {
            Crossing::At { snr, .. } => Some(*snr),
            _ => None,
        }
    }
}

/// Lowest test SNR at which the row reaches `target`, linearly interpolated.
pub fn row_crossing(test_snrs: &[f64], rates: &[f64], target: f64) -> Crossing {
    assert_eq!(test_snrs.len(), rates.len(), "one rate per test SNR");
    let Some(first) = rates.first() else {
        return Crossing::AboveRange;
    };
    if *first == target {
        return Crossing::At {
            snr: test_snrs[0],
            interpolated: false,
        };
    }
    if *first > target {
        return Crossing::BelowRange;
    }
    for i in 1..rates.len() {
        if rates[i] == target {
            return Crossing::At {
                snr: test_snrs[i],
                interpolated: false,
            };
        }
        if rates[i] > target {
            let (r0, r1) = (rates[i - 1], rates[i]);
            let (s0, s1) = (test_snrs[i - 1], test_snrs[i]);
            return Crossing::At {
                snr: s0 + (target - r0) / (r1 - r0) * (s1 - s0),
                interpolated: true,
            };
        }
    }
    Crossing::AboveRange
}

#[derive(Clone, Debug, PartialEq)]
pub struct SrtEstimate {
    /// dB SNR, or dB SPL in silence.
    pub srt: f64,
    /// Training SNR(s) of the row(s) achieving it.
    pub rows: Vec<f64>,
    pub interpolated: bool,
    pub repetition: usize,
}

/// Per-row crossing of every evaluated row.
pub fn row_crossings(map: &RecognitionMap, target: f64) -> Vec<(f64, Crossing)> {
    (0..map.train_snrs().len())
        .filter_map(|i| {
            let (s, r) = map.row(i);
            (!s.is_empty()).then(|| (map.train_snrs()[i], row_crossing(&s, &r, target)))
        })
        .collect()
}

/// Minimum crossing over all rows.
pub fn srt_from_map(map: &RecognitionMap, target: f64) -> Result<SrtEstimate> {
    let crossings = row_crossings(map, target);
    let best = crossings
        .iter()
        .filter_map(|(_, c)| c.snr())
        .fold(f64::INFINITY, f64::min);
    if !best.is_finite() {
        return Err(Error::NotFound);
    }
    let mut rows = Vec::new();
    let mut interpolated = false;
    for (tr, c) in &crossings {
        if let Crossing::At { snr, interpolated: it } = c {
            if (snr - best).abs() < 1e-9 {
                rows.push(*tr);
                interpolated |= it;
            }
        }
    }
    Ok(SrtEstimate {
        srt: best,
        rows,
        interpolated,
        repetition: 0,
    })
}
