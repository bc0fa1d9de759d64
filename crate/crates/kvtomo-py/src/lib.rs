//! Python bindings: configurations, meshes, cost evaluation, reconstruction
//! runs and the condition study.

use kvtomo::conditions::{tcc_study, StudySettings};
use kvtomo::experiments::data::mesh_checksum;
use kvtomo::experiments::{exact_dataset, prepare, run_experiment, run_table, ExcitationCase, ExperimentConfig,
    Prepared, ReconstructionResult, SolverSettings};
use kvtomo::fem::{build_disk_mesh, Mesh};
use kvtomo::solvers::StopReason;
use kvtomo::{Bounds, CellField, ElectrodeLayout, Error};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn py_err(e: Error) -> PyErr {
    match e.root() {
        Error::Config(_) | Error::Parse(_) | Error::InvalidInput(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn tag(v: &StopReason) -> String {
    serde_json::to_value(v).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()
}

/// One reconstruction setup. Build from TOML or JSON text; every field of
/// the library configuration is accepted.
#[pyclass(name = "Config", from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: ExperimentConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (formulation = "iat-aao", excitations = 1, delta = 0.0, seed = 0))]
    fn new(formulation: &str, excitations: usize, delta: f64, seed: u64) -> PyResult<Self> {
        let inner = ExperimentConfig {
            formulation: formulation.parse().map_err(py_err)?,
            excitations: ExcitationCase::Named(excitations),
            delta,
            seed,
            ..ExperimentConfig::default()
        };
        inner.validate().map_err(py_err)?;
        Ok(PyConfig { inner })
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        let inner: ExperimentConfig = toml::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        inner.validate().map_err(py_err)?;
        Ok(PyConfig { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        inner.validate().map_err(py_err)?;
        Ok(PyConfig { inner })
    }

    fn to_json(&self) -> String {
        serde_json::to_string(&self.inner).expect("configs serialize")
    }

    #[getter]
    fn formulation(&self) -> String {
        self.inner.formulation.to_string()
    }

    #[getter]
    fn excitations(&self) -> usize {
        self.inner.excitations.count()
    }

    #[getter]
    fn delta(&self) -> f64 {
        self.inner.delta
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn max_iters(&self) -> usize {
        match &self.inner.solver {
            SolverSettings::Gradient(g) => g.max_iters,
            SolverSettings::Newton(n) => n.max_iters,
        }
    }

    #[setter]
    fn set_max_iters(&mut self, k: usize) {
        match &mut self.inner.solver {
            SolverSettings::Gradient(g) => g.max_iters = k,
            SolverSettings::Newton(n) => n.max_iters = k,
        }
    }

    /// Mesh refinement: coarse rings, levels and inverse crime flag.
    #[pyo3(signature = (rings, coarse_level = 0, fine_level = 1, inverse_crime = false))]
    fn with_mesh(&self, rings: usize, coarse_level: usize, fine_level: usize, inverse_crime: bool) -> PyResult<Self> {
        let mut c = self.clone();
        c.inner.mesh.rings = rings;
        c.inner.mesh.coarse_level = coarse_level;
        c.inner.mesh.fine_level = fine_level;
        c.inner.mesh.inverse_crime = inverse_crime;
        c.inner.validate().map_err(py_err)?;
        Ok(c)
    }

    fn run_name(&self) -> String {
        self.inner.run_name()
    }

    fn __repr__(&self) -> String {
        format!("Config({})", self.to_json())
    }
}

/// Triangulated unit disk with electrode tags.
#[pyclass(name = "Mesh", frozen)]
struct PyMesh {
    inner: Mesh,
}

#[pymethods]
impl PyMesh {
    #[staticmethod]
    #[pyo3(signature = (rings, level = 0, electrodes = 8, coverage = 0.5, impedance = 0.1))]
    fn disk(rings: usize, level: usize, electrodes: usize, coverage: f64, impedance: f64) -> PyResult<Self> {
        let layout = ElectrodeLayout::equidistant(electrodes, coverage, impedance);
        Ok(PyMesh { inner: build_disk_mesh(rings, level, &layout).map_err(py_err)? })
    }

    #[getter]
    fn num_elements(&self) -> usize {
        self.inner.num_elements()
    }

    #[getter]
    fn num_nodes(&self) -> usize {
        self.inner.num_nodes()
    }

    #[getter]
    fn level(&self) -> usize {
        self.inner.level()
    }

    fn areas(&self) -> Vec<f64> {
        self.inner.areas().to_vec()
    }

    fn centroids(&self) -> Vec<[f64; 2]> {
        (0..self.inner.num_elements()).map(|e| self.inner.centroid(e)).collect()
    }

    fn checksum(&self) -> String {
        mesh_checksum(&self.inner)
    }
}

/// Reconstruction mesh, data and cost functional of a configuration.
#[pyclass(name = "Problem", frozen)]
struct PyProblem {
    inner: Prepared,
    formulation: String,
}

impl PyProblem {
    fn field(&self, sigma: Vec<f64>) -> PyResult<CellField> {
        if sigma.len() != self.inner.mesh.num_elements() {
            return Err(PyValueError::new_err(format!(
                "expected {} cell values, got {}",
                self.inner.mesh.num_elements(),
                sigma.len()
            )));
        }
        Ok(CellField { values: sigma })
    }
}

#[pymethods]
impl PyProblem {
    #[new]
    fn new(py: Python<'_>, config: PyConfig) -> PyResult<Self> {
        let formulation = config.inner.formulation.to_string();
        let inner = py.detach(|| prepare(&config.inner)).map_err(py_err)?;
        Ok(PyProblem { inner, formulation })
    }

    #[getter]
    fn formulation(&self) -> &str {
        &self.formulation
    }

    #[getter]
    fn eta(&self) -> f64 {
        self.inner.eta
    }

    #[getter]
    fn num_cells(&self) -> usize {
        self.inner.mesh.num_elements()
    }

    fn sigma_true(&self) -> Vec<f64> {
        self.inner.sigma_true.values.clone()
    }

    /// Cost at the state induced by a cellwise conductivity.
    fn cost(&self, sigma: Vec<f64>) -> PyResult<f64> {
        let x = self.inner.cost.state_from_sigma(&self.field(sigma)?).map_err(py_err)?;
        self.inner.cost.value(&x).map_err(py_err)
    }

    /// Conductivity block of the cost gradient at the same state.
    fn gradient(&self, sigma: Vec<f64>) -> PyResult<Vec<f64>> {
        let c = &self.inner.cost;
        let x = c.state_from_sigma(&self.field(sigma)?).map_err(py_err)?;
        let ev = c.evaluate(&x).map_err(py_err)?;
        let g = c.gradient(&x, &ev).map_err(py_err)?;
        Ok(g.sigma.map(|s| s.values).unwrap_or_default())
    }

    /// Sampled tangential cone study around the phantom, as JSON.
    #[pyo3(signature = (pairs = 100, radius = 0.5, sup_restarts = 10, sup_iterations = 30, seed = 0, c_tc = None))]
    #[allow(clippy::too_many_arguments)]
    fn tcc_study(
        &self,
        py: Python<'_>,
        pairs: usize,
        radius: f64,
        sup_restarts: usize,
        sup_iterations: usize,
        seed: u64,
        c_tc: Option<f64>,
    ) -> PyResult<String> {
        let settings = StudySettings { pairs, radius, sup_restarts, sup_iterations, seed };
        let study = py
            .detach(|| {
                let center = self.inner.cost.state_from_sigma(&self.inner.sigma_true)?;
                tcc_study(&self.inner.cost, &center, &settings, c_tc)
            })
            .map_err(py_err)?;
        Ok(serde_json::to_string(&study).expect("reports serialize"))
    }
}

#[pyclass(name = "Result", frozen)]
struct PyResult_ {
    inner: ReconstructionResult,
}

#[pymethods]
impl PyResult_ {
    #[getter]
    fn l2_error(&self) -> f64 {
        self.inner.l2_error
    }

    #[getter]
    fn iterations(&self) -> usize {
        self.inner.iterations
    }

    #[getter]
    fn eta(&self) -> f64 {
        self.inner.eta
    }

    #[getter]
    fn wall_time(&self) -> f64 {
        self.inner.wall_time
    }

    #[getter]
    fn stop_reason(&self) -> String {
        tag(&self.inner.report.stop_reason)
    }

    #[getter]
    fn sigma_final(&self) -> Vec<f64> {
        self.inner.sigma_final.values.clone()
    }

    #[getter]
    fn sigma_true(&self) -> Vec<f64> {
        self.inner.sigma_true.values.clone()
    }

    #[getter]
    fn cost_history(&self) -> Vec<f64> {
        self.inner.report.cost_history.clone()
    }

    fn __repr__(&self) -> String {
        format!(
            "Result(l2_error={:.6e}, iterations={}, stop_reason={})",
            self.inner.l2_error,
            self.inner.iterations,
            self.stop_reason()
        )
    }
}

/// Generates data, runs the configured solver and measures the error.
#[pyfunction]
fn run(py: Python<'_>, config: PyConfig) -> PyResult<PyResult_> {
    let inner = py.detach(|| run_experiment(&config.inner)).map_err(py_err)?;
    Ok(PyResult_ { inner })
}

/// Runs every configuration and returns the results table as CSV text.
#[pyfunction]
#[pyo3(signature = (configs, jobs = 0))]
fn run_csv(py: Python<'_>, configs: Vec<PyConfig>, jobs: usize) -> PyResult<String> {
    let cfgs: Vec<ExperimentConfig> = configs.into_iter().map(|c| c.inner).collect();
    let (table, _) = py.detach(|| run_table(&cfgs, jobs)).map_err(py_err)?;
    Ok(table.to_csv())
}

/// Noisy observations of a configuration in the data file text format.
#[pyfunction]
fn generate(py: Python<'_>, config: PyConfig) -> PyResult<String> {
    let ds = py.detach(|| exact_dataset(&config.inner)).map_err(py_err)?;
    Ok(ds.data_file(&config.inner).to_text())
}

#[pyfunction]
fn noise_budget(sq_norm: f64, delta: f64) -> PyResult<f64> {
    kvtomo::noise_budget(sq_norm, delta).map_err(py_err)
}

#[pyfunction]
fn project_box(values: Vec<f64>, lower: f64, upper: f64) -> PyResult<Vec<f64>> {
    let b = Bounds::new(lower, upper).map_err(py_err)?;
    Ok(kvtomo::base::project_box(&CellField { values }, &b).values)
}

#[pyfunction]
fn formulations() -> Vec<&'static str> {
    use kvtomo::functionals::Formulation::*;
    [IatAao, IatElimSigma, IatReduced, EitAao, EitElimSigma, EitReduced, GwfAaoLs, GwfAaoKv, GwfReduced]
        .map(|f| f.tag())
        .to_vec()
}

#[pymodule]
fn kvtomo_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyMesh>()?;
    m.add_class::<PyProblem>()?;
    m.add_class::<PyResult_>()?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(run_csv, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(noise_budget, m)?)?;
    m.add_function(wrap_pyfunction!(project_box, m)?)?;
    m.add_function(wrap_pyfunction!(formulations, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
