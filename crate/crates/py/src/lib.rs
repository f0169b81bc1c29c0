//! Python bindings. The extension module is named `sparse_quantile`.

use ndarray::{Array1, Array2};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand::SeedableRng as _;
use sparse_quantile::conformal;
use sparse_quantile::mio::{self, BnbOptions, EnumOptions};
use sparse_quantile::prox::{MultiStart, ThresholdScale};
use sparse_quantile::select::{self, Estimator, Fitter, Method};
use sparse_quantile::sim::{self, DgpConfig, StudyOptions};
use sparse_quantile::{Error, QuantileLevel};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::InvalidInput(_)
        | Error::DimensionMismatch { .. }
        | Error::InvalidQuantile(_)
        | Error::ConstantColumn(_)
        | Error::Csv { .. }
        | Error::Parse(_) => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn level(tau: f64) -> PyResult<QuantileLevel> {
    QuantileLevel::new(tau).map_err(to_py)
}

fn method(name: &str) -> PyResult<Method> {
    name.parse().map_err(to_py)
}

/// Design matrix with response and column names.
#[pyclass(name = "Dataset", module = "sparse_quantile", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyDataset {
    inner: sparse_quantile::Dataset,
}

#[pymethods]
impl PyDataset {
    #[new]
    #[pyo3(signature = (x, y, names=None))]
    fn new(x: Vec<Vec<f64>>, y: Vec<f64>, names: Option<Vec<String>>) -> PyResult<Self> {
        let n = x.len();
        let p = x.first().map_or(0, Vec::len);
        if x.iter().any(|r| r.len() != p) {
            return Err(PyValueError::new_err("rows of x have different lengths"));
        }
        let x = Array2::from_shape_vec((n, p), x.into_iter().flatten().collect()).map_err(|e| PyValueError::new_err(e.to_string()))?;
        let y = Array1::from(y);
        let inner = match names {
            Some(names) => sparse_quantile::Dataset::new(x, y, names),
            None => sparse_quantile::Dataset::from_arrays(x, y),
        }
        .map_err(to_py)?;
        Ok(Self { inner })
    }

    /// Reads a CSV with a header row; `response` names the outcome column.
    #[staticmethod]
    #[pyo3(signature = (path, response="y"))]
    fn from_csv(path: &str, response: &str) -> PyResult<Self> {
        Ok(Self { inner: sparse_quantile::io::read_csv(path, response).map_err(to_py)? })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn p(&self) -> usize {
        self.inner.p()
    }

    #[getter]
    fn names(&self) -> Vec<String> {
        self.inner.names().to_vec()
    }

    fn predict(&self, theta: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(self.inner.predict(&theta).map_err(to_py)?.to_vec())
    }

    fn __repr__(&self) -> String {
        format!("Dataset(n={}, p={})", self.inner.n(), self.inner.p())
    }
}

/// Output of every solver.
#[pyclass(name = "FitResult", module = "sparse_quantile", frozen, get_all, skip_from_py_object)]
#[derive(Clone)]
pub struct PyFitResult {
    theta: Vec<f64>,
    support: Vec<usize>,
    obj_unpenalized: f64,
    obj_penalized: f64,
    iterations: usize,
    converged: bool,
    wall_seconds: f64,
    gap: Option<f64>,
}

impl From<sparse_quantile::FitResult> for PyFitResult {
    fn from(f: sparse_quantile::FitResult) -> Self {
        Self {
            theta: f.theta,
            support: f.support,
            obj_unpenalized: f.obj_unpenalized,
            obj_penalized: f.obj_penalized,
            iterations: f.iterations,
            converged: f.converged,
            wall_seconds: f.wall_seconds,
            gap: f.gap,
        }
    }
}

#[pymethods]
impl PyFitResult {
    fn __repr__(&self) -> String {
        format!("FitResult(support={:?}, obj_penalized={})", self.support, self.obj_penalized)
    }
}

fn estimator(name: &str, seed: u64, restarts: usize, k0: usize, bound: f64, threshold: &str) -> PyResult<Estimator> {
    let mut est = Estimator::new(method(name)?);
    est.seed = seed;
    est.multi = MultiStart { restarts, ..est.multi };
    est.prox.k0 = k0;
    est.prox.bound = bound;
    est.prox.threshold = match threshold {
        "envelope" => ThresholdScale::Envelope,
        "direct" => ThresholdScale::Direct,
        other => return Err(PyValueError::new_err(format!("unknown threshold scaling '{other}'"))),
    };
    Ok(est)
}

/// Fits `method` at one tuning value: `c` for penalised methods, `q` for constrained ones.
#[pyfunction]
#[pyo3(signature = (data, method, candidate, tau=0.5, seed=0, restarts=50, k0=100, bound=10.0, threshold="envelope"))]
#[allow(clippy::too_many_arguments)]
fn fit(
    py: Python<'_>,
    data: &PyDataset,
    method: &str,
    candidate: f64,
    tau: f64,
    seed: u64,
    restarts: usize,
    k0: usize,
    bound: f64,
    threshold: &str,
) -> PyResult<PyFitResult> {
    let est = estimator(method, seed, restarts, k0, bound, threshold)?;
    let tau = level(tau)?;
    let d = &data.inner;
    py.detach(|| est.fit(d, tau, candidate)).map(Into::into).map_err(to_py)
}

/// Penalty `c * mean|y| * ln(p) / n`.
#[pyfunction]
fn lambda_from_c(c: f64, data: &PyDataset) -> f64 {
    select::lambda_from_c(c, &data.inner)
}

/// Exact l0-penalised fit by branch-and-bound or subset enumeration.
#[pyfunction]
#[pyo3(signature = (data, lam, k0, tau=0.5, bound=10.0, solver="bnb", time_limit=600.0, gap_tol=1e-6))]
#[allow(clippy::too_many_arguments)]
fn solve_exact(
    py: Python<'_>,
    data: &PyDataset,
    lam: f64,
    k0: usize,
    tau: f64,
    bound: f64,
    solver: &str,
    time_limit: f64,
    gap_tol: f64,
) -> PyResult<PyFitResult> {
    let tau = level(tau)?;
    let d = &data.inner;
    let res = match solver {
        "bnb" => {
            let model = mio::build_milp(d, tau, lam, k0, bound).map_err(to_py)?;
            let opts = BnbOptions { time_limit: std::time::Duration::from_secs_f64(time_limit), gap_tol };
            py.detach(|| mio::solve_bnb(&model, None, opts))
        }
        "enumerate" => py.detach(|| mio::solve_enumeration_with(d, tau, lam, k0, EnumOptions { bound: Some(bound), ..EnumOptions::default() })),
        other => return Err(PyValueError::new_err(format!("unknown solver '{other}'"))),
    };
    res.map(Into::into).map_err(to_py)
}

/// Unboxed subset enumeration of the l0-penalised problem.
#[pyfunction]
#[pyo3(signature = (data, lam, k0, tau=0.5))]
fn solve_enumeration(py: Python<'_>, data: &PyDataset, lam: f64, k0: usize, tau: f64) -> PyResult<PyFitResult> {
    let tau = level(tau)?;
    let d = &data.inner;
    py.detach(|| mio::solve_enumeration(d, tau, lam, k0)).map(Into::into).map_err(to_py)
}

/// CPLEX LP text of the mixed-integer model.
#[pyfunction]
#[pyo3(signature = (data, lam, k0, tau=0.5, bound=10.0))]
fn milp_lp_format(data: &PyDataset, lam: f64, k0: usize, tau: f64, bound: f64) -> PyResult<String> {
    Ok(mio::build_milp(&data.inner, level(tau)?, lam, k0, bound).map_err(to_py)?.to_lp_format())
}

/// Selects the tuning value on `valid`. Returns `(candidate, fit, risks)`
/// where `risks` holds one validation risk per grid point (`None` on failure).
#[pyfunction]
#[pyo3(signature = (train, valid, method, tau=0.5, seed=0, restarts=50, k0=100))]
#[allow(clippy::too_many_arguments)]
fn tune(
    py: Python<'_>,
    train: &PyDataset,
    valid: &PyDataset,
    method: &str,
    tau: f64,
    seed: u64,
    restarts: usize,
    k0: usize,
) -> PyResult<(f64, PyFitResult, Vec<(f64, Option<f64>)>)> {
    let est = estimator(method, seed, restarts, k0, 10.0, "envelope")?;
    let tau = level(tau)?;
    let grid = select::default_grid(est.kind(), train.inner.p(), k0);
    let (t, v) = (&train.inner, &valid.inner);
    let sel = py.detach(|| select::tune(&est, &grid, t, v, tau)).map_err(to_py)?;
    let risks = sel.table.rows.iter().map(|r| (r.candidate, r.validation_risk)).collect();
    Ok((sel.candidate, sel.fit.into(), risks))
}

/// Simulation study; returns one summary dict per method.
#[pyfunction]
#[pyo3(signature = (methods, p=10, s=5, reps=20, seed=0, n_train=100, n_valid=100, n_test=5000, restarts=50, tau=0.5, workers=1))]
#[allow(clippy::too_many_arguments)]
fn simulate<'py>(
    py: Python<'py>,
    methods: Vec<String>,
    p: usize,
    s: usize,
    reps: usize,
    seed: u64,
    n_train: usize,
    n_valid: usize,
    n_test: usize,
    restarts: usize,
    tau: f64,
    workers: usize,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let ests = methods.iter().map(|m| estimator(m, seed, restarts, 100, 10.0, "envelope")).collect::<PyResult<Vec<_>>>()?;
    let cfg = DgpConfig { n_train, n_valid, n_test, p, s, seed, ..DgpConfig::default() };
    let opts = StudyOptions { tau, workers, ..StudyOptions::default() };
    let report = py.detach(|| sim::run_study(&ests, &cfg, reps, seed, &opts)).map_err(to_py)?;
    report
        .summary
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("method", r.method.as_str())?;
            d.set_item("replications", r.replications)?;
            d.set_item("corr_sel", r.corr_sel)?;
            d.set_item("orac_sel", r.orac_sel)?;
            d.set_item("num_irrel", r.num_irrel)?;
            d.set_item("avg_sparsity", r.avg_sparsity)?;
            d.set_item("param_error", r.param_error)?;
            d.set_item("fit_error", r.fit_error)?;
            d.set_item("in_rr", r.in_rr)?;
            d.set_item("out_rr", r.out_rr)?;
            d.set_item("hamming", r.hamming)?;
            d.set_item("failures", r.failures)?;
            Ok(d)
        })
        .collect()
}

/// One random four-way split of split-conformal prediction.
#[pyfunction]
#[pyo3(signature = (data, method, alpha=0.1, seed=0, restarts=50))]
fn conformal_split<'py>(py: Python<'py>, data: &PyDataset, method: &str, alpha: f64, seed: u64, restarts: usize) -> PyResult<Bound<'py, PyDict>> {
    let est = estimator(method, seed, restarts, 100, 10.0, "envelope")?;
    let d = &data.inner;
    let out = py
        .detach(|| conformal::run_split(d, &est, alpha, &mut rand_chacha::ChaCha8Rng::seed_from_u64(seed)))
        .map_err(to_py)?;
    let dict = PyDict::new(py);
    dict.set_item("coverage", out.coverage.coverage)?;
    dict.set_item("mean_length", out.coverage.mean_length)?;
    dict.set_item("correction", out.model.correction)?;
    dict.set_item("theta_lo", out.model.theta_lo)?;
    dict.set_item("theta_hi", out.model.theta_hi)?;
    dict.set_item("candidates", out.candidates.to_vec())?;
    dict.set_item("sizes", out.sizes.to_vec())?;
    Ok(dict)
}

/// Check loss of the residual `r` at level `tau`.
#[pyfunction]
fn check_loss(r: f64, tau: f64) -> PyResult<f64> {
    Ok(sparse_quantile::loss::check_loss(r, 0.0, level(tau)?))
}

#[pymodule(name = "sparse_quantile")]
fn sparse_quantile_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyFitResult>()?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(lambda_from_c, m)?)?;
    m.add_function(wrap_pyfunction!(solve_exact, m)?)?;
    m.add_function(wrap_pyfunction!(solve_enumeration, m)?)?;
    m.add_function(wrap_pyfunction!(milp_lp_format, m)?)?;
    m.add_function(wrap_pyfunction!(tune, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(conformal_split, m)?)?;
    m.add_function(wrap_pyfunction!(check_loss, m)?)?;
    m.add("METHODS", Method::ALL.map(Method::as_str).to_vec())?;
    Ok(())
}
