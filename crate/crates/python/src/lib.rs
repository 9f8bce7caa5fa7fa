//! Python bindings. Structured results cross the boundary as JSON strings.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use cellfree::channel::{build_simlike_statistics, sample_ensemble, CsiEnsemble};
use cellfree::duality::{subgradient_ascent, sum_power_feasibility, AscentOptions, FeasibilityProblem};
use cellfree::experiment::{self, ExperimentSpec, PowerMode};
use cellfree::precoders::PrecoderKind;
use cellfree::scenario::{self, GeometryConfig, NetworkScenario};

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

#[pyclass(name = "Scenario", module = "pycellfree")]
struct Scenario(NetworkScenario);

#[pymethods]
impl Scenario {
    /// Draws a scenario; `geometry` is an optional TOML table of geometry fields.
    #[staticmethod]
    #[pyo3(signature = (seed, geometry=None))]
    fn generate(seed: u64, geometry: Option<&str>) -> PyResult<Self> {
        let cfg: GeometryConfig = match geometry {
            Some(text) => toml::from_str(text).map_err(err)?,
            None => GeometryConfig::default(),
        };
        cfg.validate().map_err(err)?;
        scenario::generate_scenario(&cfg, seed).map(Scenario).map_err(err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        NetworkScenario::from_json(text).map(Scenario).map_err(err)
    }

    fn to_json(&self) -> PyResult<String> {
        self.0.to_json().map_err(err)
    }

    #[getter]
    fn num_aps(&self) -> usize {
        self.0.num_aps
    }

    #[getter]
    fn num_ues(&self) -> usize {
        self.0.num_ues
    }

    #[getter]
    fn antennas(&self) -> usize {
        self.0.antennas
    }

    #[getter]
    fn clusters(&self) -> Vec<Vec<usize>> {
        self.0.clusters.clone()
    }

    #[getter]
    fn power_budgets(&self) -> Vec<f64> {
        self.0.power_budgets.clone()
    }

    /// Gains as a list of AP rows.
    #[getter]
    fn gains(&self) -> Vec<Vec<f64>> {
        self.0.gains.row_iter().map(|r| r.iter().copied().collect()).collect()
    }
}

#[pyclass(name = "Ensemble", module = "pycellfree")]
struct Ensemble(CsiEnsemble);

#[pymethods]
impl Ensemble {
    #[staticmethod]
    fn sample(scenario: PyRef<'_, Scenario>, samples: usize, seed: u64) -> PyResult<Self> {
        sample_ensemble(&build_simlike_statistics(&scenario.0), samples, seed).map(Ensemble).map_err(err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        CsiEnsemble::from_json(text).map(Ensemble).map_err(err)
    }

    fn to_json(&self) -> PyResult<String> {
        self.0.to_json().map_err(err)
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.0.seed
    }
}

/// Feasibility verdict for one drop, as JSON.
#[pyfunction]
#[pyo3(signature = (scenario, ensemble, gammas, precoder="local", mode="per_ap"))]
fn feasibility(
    scenario: PyRef<'_, Scenario>,
    ensemble: PyRef<'_, Ensemble>,
    gammas: Vec<f64>,
    precoder: &str,
    mode: &str,
) -> PyResult<String> {
    let kind = PrecoderKind::parse(precoder).map_err(err)?;
    let scn = &scenario.0;
    let problem = FeasibilityProblem::new(&ensemble.0, scn.clusters.clone(), gammas, scn.power_budgets.clone(), kind)
        .map_err(err)?;
    let opts = AscentOptions::default();
    let verdict = match PowerMode::parse(mode).map_err(err)? {
        PowerMode::PerAp => subgradient_ascent(&problem, &opts),
        PowerMode::SumPower => sum_power_feasibility(&problem, &opts.inner),
    }
    .map_err(err)?;
    serde_json::to_string(&verdict).map_err(err)
}

/// Runs a TOML experiment description and returns the results as JSON.
#[pyfunction]
fn run_experiment(config: &str) -> PyResult<String> {
    let spec = ExperimentSpec::from_toml(config).map_err(err)?;
    let res = experiment::run_experiment(&spec).map_err(err)?;
    serde_json::to_string(&res).map_err(err)
}

#[pyfunction]
fn rate_to_gamma(rate: f64) -> PyResult<f64> {
    experiment::rate_to_gamma(rate).map_err(err)
}

#[pyfunction]
fn dbm_to_milliwatts(dbm: f64) -> f64 {
    scenario::dbm_to_milliwatts(dbm)
}

#[pymodule]
fn pycellfree(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Scenario>()?;
    m.add_class::<Ensemble>()?;
    m.add_function(wrap_pyfunction!(feasibility, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(rate_to_gamma, m)?)?;
    m.add_function(wrap_pyfunction!(dbm_to_milliwatts, m)?)?;
    Ok(())
}
