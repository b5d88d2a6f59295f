use crate::darf::{run_darf, Backend as _, DarfConfig, OracleBackend, OracleSurface, PipelineBackend, SrtResult};
use crate::device::{DeviceDescriptor, DeviceKind, GainParams};
use crate::error::{Error, Result};
use crate::fade::{run_fade, srt_from_map, standard_grid, FadeConfig, Pipeline, PipelineConfig, RecognitionMap};
use crate::frontend::AudiogramProfile;
use crate::recognizer::ScoreCounts;
use crate::signal::{LayoutTag, MaskerKind, MaskerSpec, SceneLayout};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

/// One simulation condition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub id: String,
    /// `stationary`, `fluctuating`, `babble` or `silence`.
    pub masker: String,
    pub masker_level_db: f64,
    pub layout: String,
    /// `NH`, `N3`, or a path to an audiogram table.
    pub profile: String,
    pub level_uncertainty_db: Option<f64>,
    pub device: String,
    /// `none` or `half-gain`.
    pub fitting: String,
    pub repetitions: usize,
    /// FADE reference for sweeps; simulated when absent.
    pub reference_srt_db: Option<f64>,
    pub darf: DarfConfig,
    pub fade: FadeConfig,
    /// Answer from this surface instead of simulating.
    pub oracle: Option<OracleSurface>,
    pub oracle_initial_estimate_db: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            id: "default".into(),
            masker: "stationary".into(),
            masker_level_db: 65.0,
            layout: "S0N0".into(),
            profile: "NH".into(),
            level_uncertainty_db: None,
            device: "identity".into(),
            fitting: "none".into(),
            repetitions: 8,
            reference_srt_db: None,
            darf: DarfConfig::default(),
            fade: FadeConfig::default(),
            oracle: None,
            oracle_initial_estimate_db: -8.0,
        }
    }
}

/// Half of the hearing loss at each band's geometric center.
pub fn half_gain(profile: &AudiogramProfile, crossovers_hz: &[f64]) -> Vec<f64> {
    let mut edges = vec![125.0];
    edges.extend_from_slice(crossovers_hz);
    edges.push(8000.0);
    edges
        .windows(2)
        .map(|w| 0.5 * profile.threshold_hl_at((w[0] * w[1]).sqrt()).max(0.0))
        .collect()
}

impl ScenarioConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let s: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// All settings, defaults included.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).unwrap_or_default()
    }

    pub fn validate(&self) -> Result<()> {
        self.masker_kind()?;
        self.layout_tag()?;
        self.device_descriptor(None)?;
        if !matches!(self.fitting.as_str(), "none" | "half-gain") {
            return Err(Error::Config(format!("unknown fitting {:?}", self.fitting)));
        }
        if self.repetitions == 0 {
            return Err(Error::Config("repetitions must be positive".into()));
        }
        self.darf.validate()?;
        if let Some(o) = &self.oracle {
            o.validate()?;
        }
        Ok(())
    }

    pub fn masker_kind(&self) -> Result<MaskerKind> {
        self.masker.parse()
    }

    pub fn layout_tag(&self) -> Result<LayoutTag> {
        self.layout.parse()
    }

    /// `None` for normal hearing.
    pub fn audiogram(&self, base: &Path) -> Result<Option<AudiogramProfile>> {
        let p = match self.profile.as_str() {
            "NH" | "nh" | "normal" => return Ok(None),
            "N3" | "n3" => AudiogramProfile::n3(),
            path => {
                let p = PathBuf::from(path);
                AudiogramProfile::load(&if p.is_absolute() { p } else { base.join(p) })?
            }
        };
        Ok(Some(match self.level_uncertainty_db {
            Some(ul) => p.with_level_uncertainty(ul),
            None => p,
        }))
    }

    pub fn device_descriptor(&self, profile: Option<&AudiogramProfile>) -> Result<DeviceDescriptor> {
        let d: DeviceDescriptor = self.device.parse()?;
        if self.fitting != "half-gain" {
            return Ok(d);
        }
        let Some(p) = profile else {
            return Ok(d);
        };
        Ok(match d.kind {
            DeviceKind::Gain(g) => DeviceDescriptor::new(DeviceKind::Gain(GainParams {
                gains_db: half_gain(p, &g.crossovers_hz),
                crossovers_hz: g.crossovers_hz,
            })),
            DeviceKind::Compressor(mut c) => {
                c.gains_db = half_gain(p, &c.crossovers_hz);
                DeviceDescriptor::compressor(c)
            }
            _ => d,
        })
    }

    pub fn pipeline_config(&self, base: &Path) -> Result<PipelineConfig> {
        let profile = self.audiogram(base)?;
        Ok(PipelineConfig {
            masker: MaskerSpec::new(self.masker_kind()?, self.masker_level_db),
            layout: SceneLayout::new(self.layout_tag()?),
            device: self.device_descriptor(profile.as_ref())?,
            profile,
            presentations: self.darf.presentations,
            ..PipelineConfig::default()
        })
    }

    /// Same condition apart from device and fitting.
    pub fn same_condition(&self, other: &Self) -> bool {
        let strip = |s: &Self| Self {
            id: String::new(),
            device: String::new(),
            fitting: String::new(),
            reference_srt_db: None,
            ..s.clone()
        };
        strip(self) == strip(other)
    }
}

/// Hearing-aid benefit in dB, positive when the aided SRT is lower.
pub fn benefit(unaided: (&ScenarioConfig, f64), aided: (&ScenarioConfig, f64)) -> Result<f64> {
    if !unaided.0.same_condition(aided.0) {
        return Err(Error::ScenarioMismatch(format!(
            "{} and {} differ in more than the device",
            unaided.0.id, aided.0.id
        )));
    }
    Ok(unaided.1 - aided.1)
}

/// Executes a scenario against the simulation or its oracle.
pub enum Runner {
    Pipeline(Box<Pipeline>),
    Oracle(OracleSurface, f64),
}

impl Runner {
    pub fn new(scenario: &ScenarioConfig, base: &Path) -> Result<Self> {
        scenario.validate()?;
        match &scenario.oracle {
            Some(o) => Ok(Runner::Oracle(o.clone(), scenario.oracle_initial_estimate_db)),
            None => Ok(Runner::Pipeline(Box::new(Pipeline::new(scenario.pipeline_config(base)?)?))),
        }
    }

    pub fn hash(&self) -> String {
        match self {
            Runner::Pipeline(p) => p.hash().to_string(),
            Runner::Oracle(o, _) => format!("oracle:{}", toml::to_string(o).unwrap_or_default().replace('\n', ";")),
        }
    }

    pub fn pipeline(&self) -> Option<&Pipeline> {
        match self {
            Runner::Pipeline(p) => Some(p),
            Runner::Oracle(..) => None,
        }
    }

    pub fn darf(&self, config: &DarfConfig, seed: u64) -> Result<SrtResult> {
        match self {
            Runner::Pipeline(p) => run_darf(&PipelineBackend::new(p, seed), config),
            Runner::Oracle(o, e) => run_darf(&OracleBackend::new(o.clone(), *e).with_binomial(5, seed), config),
        }
    }

    /// Exhaustive-grid SRT centered on the initial estimate.
    pub fn fade(&self, config: &FadeConfig, seed: u64) -> Result<(RecognitionMap, f64)> {
        match self {
            Runner::Pipeline(p) => {
                let center = PipelineBackend::new(p, seed).initial_estimate()?;
                let r = run_fade(p, center, config, seed)?;
                Ok((r.map, r.srt.srt))
            }
            Runner::Oracle(o, e) => {
                let train = standard_grid(*e, config);
                let mut map = RecognitionMap::new();
                let mut tests = train.clone();
                for _ in 0..=config.max_extensions {
                    for &tr in &train {
                        for &te in &tests {
                            if !map.is_evaluated(tr, te) {
                                let n = 1_000_000;
                                let c = ScoreCounts {
                                    presented: n,
                                    correct: (o.rate(tr, te) * n as f64).round() as usize,
                                };
                                map.set(tr, te, c)?;
                            }
                        }
                    }
                    let low = tests[0];
                    if train.iter().filter_map(|&t| map.rate(t, low)).fold(0.0, f64::max) < config.floor_rate {
                        break;
                    }
                    tests.insert(0, low - config.spacing_db);
                }
                let srt = srt_from_map(&map, config.target)?.srt;
                Ok((map, srt))
            }
        }
    }
}

pub const RESULTS_HEADER: &str = "scenario_id,seed,srt_db,srt_pre_multicondition_db,budget_s,iterations,wall_s";

/// One line of the results file.
#[derive(Clone, Debug, PartialEq)]
pub struct ResultRecord {
    pub scenario_id: String,
    pub seed: u64,
    pub srt_db: f64,
    pub srt_pre_multicondition_db: f64,
    pub budget_s: f64,
    pub iterations: usize,
    /// Run time of a real-time recording setup: the recorded seconds.
    pub wall_s: f64,
}

impl ResultRecord {
    pub fn from_result(scenario_id: &str, seed: u64, r: &SrtResult) -> Self {
        Self {
            scenario_id: scenario_id.to_string(),
            seed,
            srt_db: r.srt,
            srt_pre_multicondition_db: r.pre_multicondition_srt,
            budget_s: r.budget_s(),
            iterations: r.iterations(),
            wall_s: r.budget_s(),
        }
    }

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{:.4},{:.4},{:.3},{},{:.3}",
            self.scenario_id.replace(',', ";"),
            self.seed,
            self.srt_db,
            self.srt_pre_multicondition_db,
            self.budget_s,
            self.iterations,
            self.wall_s
        )
    }

    pub fn parse_row(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 7 {
            return Err(Error::Config(format!("results row needs 7 fields: {line:?}")));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| Error::Config(format!("bad number {s:?}")));
        Ok(Self {
            scenario_id: f[0].to_string(),
            seed: f[1].parse().map_err(|_| Error::Config("bad seed".into()))?,
            srt_db: num(f[2])?,
            srt_pre_multicondition_db: num(f[3])?,
            budget_s: num(f[4])?,
            iterations: f[5].parse().map_err(|_| Error::Config("bad iterations".into()))?,
            wall_s: num(f[6])?,
        })
    }
}

/// Append a record, writing the header to a new file.
pub fn append_result(path: &Path, record: &ResultRecord) -> Result<()> {
    let fresh = !path.exists() || std::fs::metadata(path)?.len() == 0;
    let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    if fresh {
        writeln!(f, "{RESULTS_HEADER}")?;
    }
    writeln!(f, "{}", record.to_csv_row())?;
    Ok(())
}

pub fn read_results(text: &str) -> Result<Vec<ResultRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with("scenario_id"))
        .map(ResultRecord::parse_row)
        .collect()
}

/// Plain-text provenance of one run.
pub fn manifest(scenario: &ScenarioConfig, hash: &str, seed: u64, result: &SrtResult) -> String {
    let st = &result.state;
    let mut s = String::new();
    let _ = writeln!(s, "pipeline_hash = {hash}");
    let _ = writeln!(s, "seed = {seed}");
    let _ = writeln!(s, "\n[config]\n{}", scenario.to_toml());
    let _ = writeln!(s, "[phases]");
    for (p, t) in &st.phase_times {
        let _ = writeln!(s, "{p} at {t:.3} s");
    }
    let _ = writeln!(s, "\n[budget]");
    let _ = writeln!(s, "approx_s = {:.3}", st.ledger.approx_s);
    let _ = writeln!(s, "train_s = {:.3}", st.ledger.train_s);
    let _ = writeln!(s, "test_s = {:.3}", st.ledger.test_s);
    let _ = writeln!(s, "multicondition_s = 0");
    let _ = writeln!(s, "total_s = {:.3}", st.ledger.total_s());
    let _ = writeln!(s, "approx_iterations = {}", st.ledger.approx_iterations);
    let _ = writeln!(s, "region_updates = {}", st.ledger.region_updates);
    let _ = writeln!(s, "\n[trace]\n{}", st.trace_log());
    s
}
