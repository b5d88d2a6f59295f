//! Python bindings: scenarios, oracle surfaces, adaptive and grid runs, statistics.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use srtlab::bench::{self, Runner as CoreRunner, ScenarioConfig};
use srtlab::darf::{self, DarfConfig, OracleBackend};
use srtlab::Error;
use std::path::Path;

fn err(e: Error) -> PyErr {
    match e {
        Error::InvalidParameter(_) | Error::Config(_) | Error::LengthMismatch { .. } | Error::ScenarioMismatch(_) => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

#[pyclass(name = "OracleSurface", from_py_object)]
#[derive(Clone)]
struct PyOracle(darf::OracleSurface);

#[pymethods]
impl PyOracle {
    #[new]
    #[pyo3(signature = (slope, m0, alpha, t_opt, chance = 0.1, approx_offset_db = 0.0))]
    fn new(slope: f64, m0: f64, alpha: f64, t_opt: f64, chance: f64, approx_offset_db: f64) -> PyResult<Self> {
        let s = darf::OracleSurface {
            slope,
            m0,
            alpha,
            t_opt,
            chance,
            approx_offset_db,
        };
        s.validate().map_err(err)?;
        Ok(Self(s))
    }

    #[staticmethod]
    fn worked_example() -> Self {
        Self(darf::OracleSurface::worked_example())
    }

    fn rate(&self, train: f64, test: f64) -> f64 {
        self.0.rate(train, test)
    }

    #[pyo3(signature = (train, target = 0.5))]
    fn crossing(&self, train: f64, target: f64) -> Option<f64> {
        self.0.crossing(train, target)
    }

    fn __repr__(&self) -> String {
        let s = &self.0;
        format!(
            "OracleSurface(slope={}, m0={}, alpha={}, t_opt={}, chance={}, approx_offset_db={})",
            s.slope, s.m0, s.alpha, s.t_opt, s.chance, s.approx_offset_db
        )
    }
}

#[pyclass(name = "SrtResult", frozen)]
struct PySrtResult {
    #[pyo3(get)]
    srt: f64,
    #[pyo3(get)]
    pre_multicondition_srt: f64,
    #[pyo3(get)]
    budget_s: f64,
    #[pyo3(get)]
    approx_s: f64,
    #[pyo3(get)]
    iterations: usize,
    #[pyo3(get)]
    trace: String,
    /// Recognition map of the search region as CSV.
    #[pyo3(get)]
    map_csv: String,
}

impl From<darf::SrtResult> for PySrtResult {
    fn from(r: darf::SrtResult) -> Self {
        Self {
            srt: r.srt,
            pre_multicondition_srt: r.pre_multicondition_srt,
            budget_s: r.budget_s(),
            approx_s: r.state.ledger.approx_s,
            iterations: r.iterations(),
            trace: r.state.trace_log(),
            map_csv: r.state.map.to_csv(),
        }
    }
}

#[pymethods]
impl PySrtResult {
    fn __repr__(&self) -> String {
        format!(
            "SrtResult(srt={:.2}, pre_multicondition_srt={:.2}, budget_s={:.1}, iterations={})",
            self.srt, self.pre_multicondition_srt, self.budget_s, self.iterations
        )
    }
}

fn darf_config(n_train: Option<usize>, n_test: Option<usize>) -> DarfConfig {
    let d = DarfConfig::default();
    let (a, b) = (n_train.unwrap_or(d.n_train), n_test.unwrap_or(d.n_test));
    d.with_counts(a, b)
}

#[pyclass(name = "Scenario", from_py_object)]
#[derive(Clone)]
struct PyScenario(ScenarioConfig);

#[pymethods]
impl PyScenario {
    #[new]
    #[pyo3(signature = (toml = ""))]
    fn new(toml: &str) -> PyResult<Self> {
        ScenarioConfig::parse(toml).map(Self).map_err(err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        ScenarioConfig::load(Path::new(path)).map(Self).map_err(err)
    }

    fn to_toml(&self) -> String {
        self.0.to_toml()
    }

    #[getter]
    fn id(&self) -> String {
        self.0.id.clone()
    }

    fn with_oracle(&self, surface: PyOracle, initial_estimate_db: f64) -> Self {
        let mut s = self.0.clone();
        s.oracle = Some(surface.0);
        s.oracle_initial_estimate_db = initial_estimate_db;
        Self(s)
    }
}

#[pyclass(name = "Runner")]
struct PyRunner {
    inner: CoreRunner,
    darf: DarfConfig,
    fade: srtlab::fade::FadeConfig,
}

#[pymethods]
impl PyRunner {
    /// Builds the simulation (or oracle) for a scenario; relative profile
    /// paths resolve against `base`.
    #[new]
    #[pyo3(signature = (scenario, base = "."))]
    fn new(py: Python<'_>, scenario: PyScenario, base: &str) -> PyResult<Self> {
        let s = scenario.0;
        let inner = py.detach(|| CoreRunner::new(&s, Path::new(base))).map_err(err)?;
        Ok(Self {
            inner,
            darf: s.darf,
            fade: s.fade,
        })
    }

    #[getter]
    fn hash(&self) -> String {
        self.inner.hash()
    }

    #[pyo3(signature = (seed, n_train = None, n_test = None))]
    fn darf(&self, py: Python<'_>, seed: u64, n_train: Option<usize>, n_test: Option<usize>) -> PyResult<PySrtResult> {
        let cfg = self.darf.clone().with_counts(
            n_train.unwrap_or(self.darf.n_train),
            n_test.unwrap_or(self.darf.n_test),
        );
        py.detach(|| self.inner.darf(&cfg, seed)).map(Into::into).map_err(err)
    }

    /// Grid reference: (map as CSV, SRT in dB).
    fn fade(&self, py: Python<'_>, seed: u64) -> PyResult<(String, f64)> {
        py.detach(|| self.inner.fade(&self.fade, seed))
            .map(|(m, s)| (m.to_csv(), s))
            .map_err(err)
    }

    /// Sweep over sentence counts; returns the table as CSV.
    #[pyo3(signature = (train_counts, test_counts, reps, reference, seed = 1))]
    fn sweep(
        &self,
        py: Python<'_>,
        train_counts: Vec<usize>,
        test_counts: Vec<usize>,
        reps: usize,
        reference: Option<f64>,
        seed: u64,
    ) -> PyResult<String> {
        py.detach(|| bench::sweep_runner(&self.inner, &self.darf, &train_counts, &test_counts, reps, reference, seed))
            .map(|t| t.to_csv())
            .map_err(err)
    }
}

/// Adaptive run against an oracle surface; noise-free unless `seed` is given.
#[pyfunction]
#[pyo3(signature = (surface, initial_estimate_db, seed = None, n_train = None, n_test = None))]
fn run_darf_oracle(
    surface: PyOracle,
    initial_estimate_db: f64,
    seed: Option<u64>,
    n_train: Option<usize>,
    n_test: Option<usize>,
) -> PyResult<PySrtResult> {
    let mut b = OracleBackend::new(surface.0, initial_estimate_db);
    if let Some(s) = seed {
        b = b.with_binomial(5, s);
    }
    darf::run_darf(&b, &darf_config(n_train, n_test)).map(Into::into).map_err(err)
}

/// Initial SRT estimate from an audiogram (`NH`, `N3` or a table path).
#[pyfunction]
#[pyo3(signature = (profile, masker_level_db, in_silence = false))]
fn initial_estimate(profile: &str, masker_level_db: f64, in_silence: bool) -> PyResult<f64> {
    use srtlab::frontend::AudiogramProfile;
    let p = match profile {
        "NH" | "nh" | "normal" => AudiogramProfile::normal(),
        "N3" | "n3" => AudiogramProfile::n3(),
        path => AudiogramProfile::load(Path::new(path)).map_err(err)?,
    };
    darf::initial_estimate(&p, masker_level_db, in_silence).map_err(err)
}

#[pyfunction]
fn ast(s: f64, b: f64, t: f64) -> PyResult<f64> {
    bench::ast(s, b, t).map_err(err)
}

/// (rmse, bias, r2 or None, n)
#[pyfunction]
fn compare(pred: Vec<f64>, reference: Vec<f64>) -> PyResult<(f64, f64, Option<f64>, usize)> {
    let s = bench::compare(&pred, &reference).map_err(err)?;
    Ok((s.rmse, s.bias, s.r2, s.n))
}

#[pyfunction]
fn propagate_sd(s_aided: f64, s_unaided: f64) -> f64 {
    bench::propagate_sd(s_aided, s_unaided)
}

#[pyfunction]
fn benefit(unaided: PyScenario, srt_unaided: f64, aided: PyScenario, srt_aided: f64) -> PyResult<f64> {
    bench::benefit((&unaided.0, srt_unaided), (&aided.0, srt_aided)).map_err(err)
}

#[pymodule]
fn srtlab_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyOracle>()?;
    m.add_class::<PySrtResult>()?;
    m.add_class::<PyScenario>()?;
    m.add_class::<PyRunner>()?;
    m.add_function(wrap_pyfunction!(run_darf_oracle, m)?)?;
    m.add_function(wrap_pyfunction!(initial_estimate, m)?)?;
    m.add_function(wrap_pyfunction!(ast, m)?)?;
    m.add_function(wrap_pyfunction!(compare, m)?)?;
    m.add_function(wrap_pyfunction!(propagate_sd, m)?)?;
    m.add_function(wrap_pyfunction!(benefit, m)?)?;
    Ok(())
}
