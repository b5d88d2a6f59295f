//! Data-reduced adaptive SRT search.

mod backend;
mod oracle;

pub use backend::PipelineBackend;
pub use oracle::{oracle_rate, OracleBackend, OracleSurface};

use crate::error::{Error, Result};
use crate::fade::{row_crossings, srt_from_map, Crossing, RecognitionMap, Role};
use crate::frontend::AudiogramProfile;
use crate::recognizer::ScoreCounts;
use crate::seed::snr_key;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;
use std::time::Instant;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DarfConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub approx_train: usize,
    pub approx_test: usize,
    pub presentations: usize,
    pub train_step_db: f64,
    pub test_step_db: f64,
    pub train_offsets_db: Vec<f64>,
    pub test_offsets_db: Vec<f64>,
    pub target: f64,
    pub max_region_updates: usize,
    pub approx_step_db: f64,
    /// Stop the approximation when a probe lies within target ± this.
    pub approx_window: f64,
    /// Two probes inside this rate range are interpolated.
    pub approx_pair_range: (f64, f64),
    pub max_approx_iterations: usize,
    /// Grid onto which the approximated SRT is rounded.
    pub region_grid_db: f64,
}

impl Default for DarfConfig {
    fn default() -> Self {
        Self {
            n_train: 120,
            n_test: 20,
            approx_train: 120,
            approx_test: 25,
            presentations: 3,
            train_step_db: 6.0,
            test_step_db: 3.0,
            train_offsets_db: vec![3.0, 9.0],
            test_offsets_db: vec![0.0, -3.0, -6.0, -9.0],
            target: 0.5,
            max_region_updates: 12,
            approx_step_db: 5.0,
            approx_window: 0.15,
            approx_pair_range: (0.25, 0.75),
            max_approx_iterations: 12,
            region_grid_db: 3.0,
        }
    }
}

impl DarfConfig {
    pub fn with_counts(mut self, n_train: usize, n_test: usize) -> Self {
        self.n_train = n_train;
        self.n_test = n_test;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if [self.n_train, self.n_test, self.approx_train, self.approx_test, self.presentations]
            .contains(&0)
        {
            return Err(Error::invalid("sentence and token counts must be positive"));
        }
        let positive = [self.train_step_db, self.test_step_db, self.approx_step_db, self.region_grid_db];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::invalid("SNR steps must be positive"));
        }
        if self.train_offsets_db.is_empty() || self.test_offsets_db.is_empty() {
            return Err(Error::invalid("initial region needs train and test offsets"));
        }
        if !(self.target > 0.0 && self.target < 1.0) {
            return Err(Error::invalid("target rate must lie in (0, 1)"));
        }
        let (lo, hi) = self.approx_pair_range;
        if !(lo < self.target && self.target < hi) || self.approx_window < 0.0 {
            return Err(Error::invalid("approximation range must bracket the target"));
        }
        if self.max_region_updates == 0 || self.max_approx_iterations == 0 {
            return Err(Error::invalid("safety caps must be positive"));
        }
        Ok(())
    }
}

/// A recognizer row: trained at one SNR, or pooled over two.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RowModel {
    Single(f64),
    Pair(f64, f64),
}

impl RowModel {
    /// Map row label; a pair is placed at its midpoint.
    pub fn label(&self) -> f64 {
        match *self {
            RowModel::Single(t) => t,
            RowModel::Pair(a, b) => 0.5 * (a + b),
        }
    }
}

/// Source of recognition rates for the controller.
pub trait Backend: Sync {
    fn initial_estimate(&self) -> Result<f64>;
    /// Recorded seconds of `count` items of `role`.
    fn seconds(&self, role: Role, count: usize) -> f64;
    /// Matched-SNR single-class probe.
    fn approx_probe(&self, snr: f64, config: &DarfConfig) -> Result<ScoreCounts>;
    /// Scores of sentence models against test sets.
    fn rates(&self, cells: &[(RowModel, f64)], config: &DarfConfig) -> Result<Vec<ScoreCounts>>;
}

/// Initial SRT guess from the audiogram below 1 kHz and the masker level.
pub fn initial_estimate(profile: &AudiogramProfile, masker_level_dbspl: f64, in_silence: bool) -> Result<f64> {
    let hl = profile.mean_spl_up_to(1000.0)?;
    if in_silence {
        Ok(hl.max(15.0))
    } else {
        if !masker_level_dbspl.is_finite() {
            return Err(Error::invalid("masker level must be finite"));
        }
        Ok(hl.max(masker_level_dbspl - 8.0) - masker_level_dbspl)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Init,
    Approx,
    Search,
    Multicondition,
    Done,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Init => "init",
            Phase::Approx => "approx",
            Phase::Search => "search",
            Phase::Multicondition => "multicondition",
            Phase::Done => "done",
        })
    }
}

/// Recorded seconds per role; each (role, SNR) set is counted once.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BudgetLedger {
    pub train_s: f64,
    pub test_s: f64,
    pub approx_s: f64,
    pub approx_iterations: usize,
    pub region_updates: usize,
    recorded: BTreeSet<(Role, i64)>,
}

impl BudgetLedger {
    /// Account for a set; returns false if it was already recorded.
    pub fn record(&mut self, role: Role, snr: f64, seconds: f64) -> bool {
        if !self.recorded.insert((role, snr_key(snr))) {
            return false;
        }
        match role {
            Role::Train => self.train_s += seconds,
            Role::Test => self.test_s += seconds,
            Role::ApproxTrain | Role::ApproxTest => self.approx_s += seconds,
        }
        true
    }

    pub fn is_recorded(&self, role: Role, snr: f64) -> bool {
        self.recorded.contains(&(role, snr_key(snr)))
    }

    pub fn recorded_sets(&self) -> usize {
        self.recorded.len()
    }

    pub fn total_s(&self) -> f64 {
        self.train_s + self.test_s + self.approx_s
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BudgetTotals {
    pub train_s: f64,
    pub test_s: f64,
    pub approx_s: f64,
    pub total_s: f64,
}

pub fn budget_total(ledger: &BudgetLedger) -> BudgetTotals {
    BudgetTotals {
        train_s: ledger.train_s,
        test_s: ledger.test_s,
        approx_s: ledger.approx_s,
        total_s: ledger.total_s(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ApproxRule {
    Window,
    Interpolated,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Direction {
    Up,
    Down,
}

/// Region update; `None` on both axes means stop.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct RegionAction {
    pub test: Option<Direction>,
    pub train: Option<Direction>,
}

impl RegionAction {
    pub const STOP: RegionAction = RegionAction { test: None, train: None };

    pub fn is_stop(&self) -> bool {
        self.test.is_none() && self.train.is_none()
    }
}

impl fmt::Display for RegionAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_stop() {
            return f.write_str("stop");
        }
        let mut parts = Vec::new();
        for (axis, d) in [("test", self.test), ("train", self.train)] {
            match d {
                Some(Direction::Up) => parts.push(format!("extend-{axis}-up")),
                Some(Direction::Down) => parts.push(format!("extend-{axis}-down")),
                None => {}
            }
        }
        f.write_str(&parts.join("+"))
    }
}

/// One step of the controller, for the run log.
#[derive(Clone, Debug, PartialEq)]
pub enum TraceEvent {
    Phase(Phase),
    Estimate(f64),
    Probe { snr: f64, rate: f64 },
    ApproxStop { estimate: f64, rule: ApproxRule },
    Region { train: Vec<f64>, test: Vec<f64> },
    Action(RegionAction),
    Pairs(Vec<(f64, f64)>),
    /// No pooled row crossed the target inside the recorded test range.
    NoMulticonditionCrossing,
    Result { srt: f64, pre_multicondition: f64 },
}

fn list(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(",")
}

impl fmt::Display for TraceEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TraceEvent::Phase(p) => write!(f, "phase {p}"),
            TraceEvent::Estimate(e) => write!(f, "estimate {e:.2}"),
            TraceEvent::Probe { snr, rate } => write!(f, "probe {snr:.2} rate {rate:.4}"),
            TraceEvent::ApproxStop { estimate, rule } => {
                let r = match rule {
                    ApproxRule::Window => "window",
                    ApproxRule::Interpolated => "interpolated",
                };
                write!(f, "approx {r} {estimate:.2}")
            }
            TraceEvent::Region { train, test } => write!(f, "region train {} test {}", list(train), list(test)),
            TraceEvent::Action(a) => write!(f, "action {a}"),
            TraceEvent::Pairs(p) => {
                let s: Vec<String> = p.iter().map(|(a, b)| format!("{a}/{b}")).collect();
                write!(f, "pairs {}", s.join(","))
            }
            TraceEvent::NoMulticonditionCrossing => write!(f, "multicondition no crossing"),
            TraceEvent::Result { srt, pre_multicondition } => {
                write!(f, "srt {srt:.2} pre {pre_multicondition:.2}")
            }
        }
    }
}

/// Controller state.
#[derive(Clone, Debug)]
pub struct DarfState {
    pub phase: Phase,
    pub train_snrs: Vec<f64>,
    pub test_snrs: Vec<f64>,
    /// Single-condition rows.
    pub map: RecognitionMap,
    /// Pooled rows, labeled by pair midpoint.
    pub multicondition: RecognitionMap,
    pub pairs: Vec<(f64, f64)>,
    pub ledger: BudgetLedger,
    pub trace: Vec<TraceEvent>,
    /// Elapsed seconds at each phase entry.
    pub phase_times: Vec<(Phase, f64)>,
    started: Instant,
}

impl DarfState {
    pub fn new() -> Self {
        Self {
            phase: Phase::Init,
            train_snrs: Vec::new(),
            test_snrs: Vec::new(),
            map: RecognitionMap::new(),
            multicondition: RecognitionMap::new(),
            pairs: Vec::new(),
            ledger: BudgetLedger::default(),
            trace: vec![TraceEvent::Phase(Phase::Init)],
            phase_times: vec![(Phase::Init, 0.0)],
            started: Instant::now(),
        }
    }

    fn enter(&mut self, phase: Phase) -> Result<()> {
        if phase <= self.phase {
            return Err(Error::invalid(format!("phase {phase} cannot follow {}", self.phase)));
        }
        self.phase = phase;
        self.trace.push(TraceEvent::Phase(phase));
        self.phase_times.push((phase, self.started.elapsed().as_secs_f64()));
        Ok(())
    }

    /// The run log, one event per line.
    pub fn trace_log(&self) -> String {
        self.trace.iter().map(|e| format!("{e}\n")).collect()
    }
}

impl Default for DarfState {
    fn default() -> Self {
        Self::new()
    }
}

fn interpolate(a: (f64, f64), b: (f64, f64), target: f64) -> f64 {
    if (b.1 - a.1).abs() < 1e-12 {
        0.5 * (a.0 + b.0)
    } else {
        a.0 + (target - a.1) / (b.1 - a.1) * (b.0 - a.0)
    }
}

/// Matched-SNR approximation of the SRT starting from the initial estimate.
pub fn approximate_srt(state: &mut DarfState, backend: &dyn Backend, config: &DarfConfig, start: f64) -> Result<f64> {
    state.enter(Phase::Approx)?;
    let (lo, hi) = config.approx_pair_range;
    let mut probes: Vec<(f64, f64)> = Vec::new();
    let mut x = start;
    for _ in 0..config.max_approx_iterations {
        let rate = backend.approx_probe(x, config)?.rate();
        state.ledger.approx_iterations += 1;
        state
            .ledger
            .record(Role::ApproxTrain, x, backend.seconds(Role::ApproxTrain, config.approx_train));
        state
            .ledger
            .record(Role::ApproxTest, x, backend.seconds(Role::ApproxTest, config.approx_test));
        state.trace.push(TraceEvent::Probe { snr: x, rate });
        probes.push((x, rate));

        let inside: Vec<(f64, f64)> = probes.iter().copied().filter(|p| p.1 > lo && p.1 < hi).collect();
        // interpolate only across a pair bracketing the target; two shallow
        // rates on one side would extrapolate far off the probed range
        let below = inside.iter().filter(|p| p.1 < config.target).max_by(|a, b| a.1.total_cmp(&b.1));
        let above = inside.iter().filter(|p| p.1 >= config.target).min_by(|a, b| a.1.total_cmp(&b.1));
        if let (Some(&a), Some(&b)) = (below, above) {
            let e = interpolate(a, b, config.target);
            state.trace.push(TraceEvent::ApproxStop {
                estimate: e,
                rule: ApproxRule::Interpolated,
            });
            return Ok(e);
        }
        if (rate - config.target).abs() <= config.approx_window {
            state.trace.push(TraceEvent::ApproxStop {
                estimate: x,
                rule: ApproxRule::Window,
            });
            return Ok(x);
        }
        let step = if rate < config.target {
            config.approx_step_db
        } else {
            -config.approx_step_db
        };
        let mut next = x + step;
        // once the target is bracketed, bisect instead of revisiting a probe
        let lower = probes.iter().filter(|p| p.1 < config.target).map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
        let upper = probes.iter().filter(|p| p.1 >= config.target).map(|p| p.0).fold(f64::INFINITY, f64::min);
        if lower.is_finite() && upper.is_finite() && lower < upper {
            next = 0.5 * (lower + upper);
        }
        x = next;
    }
    Err(Error::NonConvergence(config.max_approx_iterations))
}

/// Training and test SNRs around the (grid-rounded) estimate.
pub fn initial_region(estimate: f64, config: &DarfConfig) -> Result<(Vec<f64>, Vec<f64>)> {
    if !estimate.is_finite() {
        return Err(Error::invalid("estimate must be finite"));
    }
    let e = (estimate / config.region_grid_db).round() * config.region_grid_db + 0.0;
    let mut train: Vec<f64> = config.train_offsets_db.iter().map(|o| e + o).collect();
    let mut test: Vec<f64> = config.test_offsets_db.iter().map(|o| e + o).collect();
    train.sort_by(f64::total_cmp);
    test.sort_by(f64::total_cmp);
    Ok((train, test))
}

/// Next region update from the single-condition rows of `map`.
pub fn adapt_region(map: &RecognitionMap, config: &DarfConfig) -> RegionAction {
    let rows = map.train_snrs().len();
    let all_below = (0..rows).all(|i| map.row(i).1.iter().all(|&r| r < config.target));
    if all_below {
        // raising tests cannot help rows trained too low; follow with the
        // training SNRs when the top row comes closest to the target
        let peak = |i: usize| map.row(i).1.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let closest = (0..rows).max_by(|&a, &b| peak(a).total_cmp(&peak(b)));
        let up = rows > 1 && closest == Some(rows - 1);
        return RegionAction {
            test: Some(Direction::Up),
            train: up.then_some(Direction::Up),
        };
    }
    let crossings = row_crossings(map, config.target);
    let eff = |c: &Crossing| match c {
        Crossing::At { snr, .. } => *snr,
        Crossing::BelowRange => f64::NEG_INFINITY,
        Crossing::AboveRange => f64::INFINITY,
    };
    let best = crossings.iter().map(|(_, c)| eff(c)).fold(f64::INFINITY, f64::min);
    let best_rows: Vec<usize> = crossings
        .iter()
        .filter(|(_, c)| {
            let v = eff(c);
            v == best || (v - best).abs() < 1e-9
        })
        .filter_map(|(t, _)| map.train_snrs().iter().position(|x| x == t))
        .collect();
    let below = map.test_snrs().iter().filter(|&&t| t < best).count();
    let mut action = RegionAction::STOP;
    if below < 2 {
        action.test = Some(Direction::Down);
    }
    let interior = best_rows.iter().any(|&i| i > 0 && i + 1 < rows);
    if !interior {
        match best_rows.first() {
            Some(&i) if i + 1 == rows && rows > 1 => action.train = Some(Direction::Up),
            Some(&0) => action.train = Some(Direction::Down),
            _ => {}
        }
    }
    action
}

fn evaluate(
    state: &mut DarfState,
    backend: &dyn Backend,
    config: &DarfConfig,
    pooled: bool,
    cells: Vec<(RowModel, f64)>,
) -> Result<()> {
    if cells.is_empty() {
        return Ok(());
    }
    let counts = backend.rates(&cells, config)?;
    for ((row, test), c) in cells.into_iter().zip(counts) {
        let map = if pooled { &mut state.multicondition } else { &mut state.map };
        map.set(row.label(), test, c)?;
    }
    Ok(())
}

fn record_region(state: &mut DarfState, backend: &dyn Backend, config: &DarfConfig) {
    for &t in &state.train_snrs {
        state.ledger.record(Role::Train, t, backend.seconds(Role::Train, config.n_train));
    }
    for &t in &state.test_snrs {
        state.ledger.record(Role::Test, t, backend.seconds(Role::Test, config.n_test));
    }
}

/// Evaluate every region cell not yet in the map.
fn fill_region(state: &mut DarfState, backend: &dyn Backend, config: &DarfConfig) -> Result<()> {
    record_region(state, backend, config);
    let cells: Vec<(RowModel, f64)> = state
        .train_snrs
        .iter()
        .flat_map(|&a| state.test_snrs.iter().map(move |&b| (a, b)))
        .filter(|&(a, b)| !state.map.is_evaluated(a, b))
        .map(|(a, b)| (RowModel::Single(a), b))
        .collect();
    evaluate(state, backend, config, false, cells)
}

/// Adaptive region search; returns the single-condition SRT.
pub fn region_search(state: &mut DarfState, backend: &dyn Backend, config: &DarfConfig, estimate: f64) -> Result<f64> {
    state.enter(Phase::Search)?;
    let (train, test) = initial_region(estimate, config)?;
    state.train_snrs = train;
    state.test_snrs = test;
    state.trace.push(TraceEvent::Region {
        train: state.train_snrs.clone(),
        test: state.test_snrs.clone(),
    });
    fill_region(state, backend, config)?;
    loop {
        let action = adapt_region(&state.map, config);
        state.trace.push(TraceEvent::Action(action));
        if action.is_stop() {
            break;
        }
        if state.ledger.region_updates == config.max_region_updates {
            return Err(Error::SafetyCapExceeded(config.max_region_updates));
        }
        state.ledger.region_updates += 1;
        let (t_lo, t_hi) = (state.test_snrs[0], *state.test_snrs.last().unwrap_or(&0.0));
        match action.test {
            Some(Direction::Up) => state.test_snrs.push(t_hi + config.test_step_db),
            Some(Direction::Down) => state.test_snrs.insert(0, t_lo - config.test_step_db),
            None => {}
        }
        let (r_lo, r_hi) = (state.train_snrs[0], *state.train_snrs.last().unwrap_or(&0.0));
        match action.train {
            Some(Direction::Up) => state.train_snrs.push(r_hi + config.train_step_db),
            Some(Direction::Down) => state.train_snrs.insert(0, r_lo - config.train_step_db),
            None => {}
        }
        state.trace.push(TraceEvent::Region {
            train: state.train_snrs.clone(),
            test: state.test_snrs.clone(),
        });
        fill_region(state, backend, config)?;
    }
    Ok(srt_from_map(&state.map, config.target)?.srt)
}

/// Pooled models over adjacent recorded training SNRs, tested against all
/// recorded test SNRs. Records nothing new.
pub fn multicondition_eval(state: &mut DarfState, backend: &dyn Backend, config: &DarfConfig) -> Result<()> {
    if state.train_snrs.len() < 2 {
        return Err(Error::invalid("multicondition training needs two recorded training SNRs"));
    }
    state.enter(Phase::Multicondition)?;
    let pairs: Vec<(f64, f64)> = state.train_snrs.windows(2).map(|w| (w[0], w[1])).collect();
    state.trace.push(TraceEvent::Pairs(pairs.clone()));
    let cells = pairs
        .iter()
        .flat_map(|&(a, b)| state.test_snrs.iter().map(move |&t| (RowModel::Pair(a, b), t)))
        .filter(|(r, t)| !state.multicondition.is_evaluated(r.label(), *t))
        .collect();
    state.pairs = pairs;
    evaluate(state, backend, config, true, cells)
}

#[derive(Clone, Debug)]
pub struct SrtResult {
    pub srt: f64,
    pub pre_multicondition_srt: f64,
    pub state: DarfState,
}

impl SrtResult {
    pub fn budget_s(&self) -> f64 {
        self.state.ledger.total_s()
    }

    /// Approximation probes plus region updates.
    pub fn iterations(&self) -> usize {
        self.state.ledger.approx_iterations + self.state.ledger.region_updates
    }
}

/// Full procedure: estimate, approximation, region search, multicondition.
/// The SRT is the lowest pooled-row crossing, or the search SRT when no
/// pooled row crosses the target.
pub fn run_darf(backend: &dyn Backend, config: &DarfConfig) -> Result<SrtResult> {
    config.validate()?;
    let mut state = DarfState::new();
    let start = backend.initial_estimate()?;
    state.trace.push(TraceEvent::Estimate(start));
    let approx = approximate_srt(&mut state, backend, config, start)?;
    let pre = region_search(&mut state, backend, config, approx)?;
    multicondition_eval(&mut state, backend, config)?;
    // without a pooled crossing the search estimate stands
    let srt = match srt_from_map(&state.multicondition, config.target) {
        Ok(e) => e.srt,
        Err(Error::NotFound) => {
            state.trace.push(TraceEvent::NoMulticonditionCrossing);
            pre
        }
        Err(e) => return Err(e),
    };
    state.trace.push(TraceEvent::Result {
        srt,
        pre_multicondition: pre,
    });
    state.enter(Phase::Done)?;
    Ok(SrtResult {
        srt,
        pre_multicondition_srt: pre,
        state,
    })
}
