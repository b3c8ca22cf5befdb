//! Python module `meanfield`: costs, lattice sums, `Gamma` and `g`
//! estimates, sampled convex functions and the mean-field solvers.
//!
//! Long computations release the interpreter lock. Custom costs call back
//! into Python and take it again for each evaluation.

use meanfield_core::config::{interaction_energy, AxisBox, PointConfiguration, RegularGrid};
use meanfield_core::convergence::run_convergence;
use meanfield_core::convex::{self, Extension, SampledConvexFunction};
use meanfield_core::cost::{CostFunction, CostSpec, Table};
use meanfield_core::error::Error;
use meanfield_core::gamma::{self, AnnealSchedule, GSolver, GammaEstimate};
use meanfield_core::lattice::{self, BravaisLattice};
use meanfield_core::meanfield::{self as mf, MeanFieldSolution, PotentialField};
use pyo3::create_exception;
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

create_exception!(meanfield, ResourceLimitError, PyRuntimeError, "A computation would exceed a configured cap.");
create_exception!(meanfield, PreconditionError, PyValueError, "A mathematical precondition does not hold.");

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Resource(_) => ResourceLimitError::new_err(e.to_string()),
        Error::Precondition(_) => PreconditionError::new_err(e.to_string()),
        Error::Io(_) | Error::Csv(_) => PyOSError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for meanfield_core::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

/// `"inf"`, `"chord"` or a number (affine slope).
fn extension(obj: &Bound<'_, PyAny>) -> PyResult<Extension> {
    if let Ok(slope) = obj.extract::<f64>() {
        return Ok(Extension::Affine { slope });
    }
    match obj.extract::<String>()?.as_str() {
        "inf" | "+inf" => Ok(Extension::PlusInfinity),
        "chord" => Ok(Extension::Chord),
        other => Err(PyValueError::new_err(format!("unknown extension '{other}'"))),
    }
}

fn solver(json: Option<&str>) -> PyResult<GSolver> {
    match json {
        None => Ok(GSolver::default()),
        Some(s) => serde_json::from_str(s).map_err(|e| PyValueError::new_err(format!("solver: {e}"))),
    }
}

/// Two-point cost `l(r)`.
#[pyclass(name = "Cost", module = "meanfield", frozen)]
struct PyCost(CostFunction);

#[pymethods]
impl PyCost {
    #[staticmethod]
    #[pyo3(signature = (s, r0 = 1.0))]
    fn riesz(s: f64, r0: f64) -> Self {
        PyCost(CostFunction::riesz_with_r0(s, r0))
    }

    #[staticmethod]
    fn hard_sphere() -> Self {
        PyCost(CostFunction::hard_sphere())
    }

    /// Level `m / 2` on `[0, 1)`, zero beyond.
    #[staticmethod]
    fn step(m: f64) -> Self {
        PyCost(CostFunction::step(m))
    }

    #[staticmethod]
    #[pyo3(signature = (r, values, r0 = 0.0))]
    fn tabulated(r: Vec<f64>, values: Vec<f64>, r0: f64) -> PyResult<Self> {
        Ok(PyCost(CostFunction::tabulated(Table::new(r, values).py()?, r0).py()?))
    }

    /// Wraps a Python callable `f(r) -> float`. Exceptions raised by `f`
    /// evaluate to NaN.
    #[staticmethod]
    #[pyo3(signature = (f, r0, finite_range = None, name = "custom"))]
    fn custom(f: Py<PyAny>, r0: f64, finite_range: Option<f64>, name: &str) -> PyResult<Self> {
        let eval = move |r: f64| {
            Python::attach(|py| f.bind(py).call1((r,)).and_then(|v| v.extract::<f64>()).unwrap_or(f64::NAN))
        };
        Ok(PyCost(CostFunction::custom(name, eval, r0, finite_range).py()?))
    }

    /// Builds a cost from a `{"kind": ..., "params": {...}}` JSON record.
    #[staticmethod]
    fn from_json(spec: &str) -> PyResult<Self> {
        let spec: CostSpec = serde_json::from_str(spec).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(PyCost(spec.build(None).py()?))
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.0.kind().tag()
    }

    #[getter]
    fn r0(&self) -> f64 {
        self.0.r0()
    }

    #[getter]
    fn finite_range(&self) -> Option<f64> {
        self.0.finite_range()
    }

    fn __call__(&self, r: f64) -> PyResult<f64> {
        self.0.eval(r).py()
    }

    fn upper_envelope(&self, r: f64) -> PyResult<f64> {
        self.0.upper_envelope(r).py()
    }

    /// Strict lower envelope in dimension `d`.
    fn lower_envelope(&self, r: f64, d: usize) -> PyResult<f64> {
        self.0.lower_envelope_strict(r, d).py()
    }

    /// Hypothesis report in dimension `d` as a JSON string.
    fn hypotheses(&self, d: usize) -> String {
        serde_json::to_string(&self.0.validate_hypotheses(d)).expect("report serializes")
    }

    fn satisfies_hypotheses(&self, d: usize) -> bool {
        self.0.validate_hypotheses(d).all_pass()
    }

    fn __repr__(&self) -> String {
        format!("Cost(kind={:?}, r0={})", self.0.kind().tag(), self.0.r0())
    }
}

/// Bravais lattice; `generator` is row-major with basis vectors as rows.
#[pyclass(name = "Lattice", module = "meanfield", frozen)]
struct PyLattice(BravaisLattice);

#[pymethods]
impl PyLattice {
    #[new]
    fn new(dim: usize, generator: Vec<f64>) -> PyResult<Self> {
        Ok(PyLattice(BravaisLattice::new(dim, generator).py()?))
    }

    #[staticmethod]
    fn cartesian(dim: usize) -> Self {
        PyLattice(BravaisLattice::cartesian(dim))
    }

    #[staticmethod]
    fn hexagonal() -> Self {
        PyLattice(BravaisLattice::hexagonal())
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    #[getter]
    fn covolume(&self) -> f64 {
        self.0.det_abs()
    }

    #[getter]
    fn a_min(&self) -> f64 {
        self.0.a_min()
    }
}

#[pyclass(name = "ZetaValue", module = "meanfield", frozen, get_all)]
struct PyZeta {
    value: f64,
    error: f64,
    certified: bool,
    cutoff: f64,
    terms: usize,
}

impl From<lattice::ZetaValue> for PyZeta {
    fn from(z: lattice::ZetaValue) -> Self {
        PyZeta { value: z.value, error: z.error, certified: z.certified, cutoff: z.cutoff, terms: z.terms }
    }
}

#[pymethods]
impl PyZeta {
    fn __repr__(&self) -> String {
        format!("ZetaValue(value={}, error={:e}, certified={})", self.value, self.error, self.certified)
    }
}

/// Sum of `l(r |x|)` over the nonzero lattice vectors.
#[pyfunction]
#[pyo3(signature = (cost, lattice, r, tol = 1e-9))]
fn epstein_zeta(py: Python<'_>, cost: &PyCost, lattice: &PyLattice, r: f64, tol: f64) -> PyResult<PyZeta> {
    py.detach(|| lattice::epstein_zeta(&cost.0, &lattice.0, r, tol)).py().map(Into::into)
}

#[pyfunction]
fn zeta_tail_bound(cost: &PyCost, lattice: &PyLattice, r: f64) -> PyResult<f64> {
    lattice::zeta_tail_bound(&cost.0, &lattice.0, r).py()
}

/// Finite point configuration with multiplicities in a half-open box.
#[pyclass(name = "Configuration", module = "meanfield", skip_from_py_object)]
#[derive(Clone)]
struct PyConfiguration(PointConfiguration);

#[pymethods]
impl PyConfiguration {
    #[new]
    fn new(lower: Vec<f64>, edges: Vec<f64>, points: Vec<Vec<f64>>) -> PyResult<Self> {
        let bbox = AxisBox::new(lower, edges).py()?;
        Ok(PyConfiguration(PointConfiguration::new(bbox, &points).py()?))
    }

    /// Points counted with multiplicity.
    #[getter]
    fn count(&self) -> u64 {
        self.0.count()
    }

    #[getter]
    fn sites(&self) -> usize {
        self.0.sites()
    }

    #[getter]
    fn points(&self) -> Vec<Vec<f64>> {
        self.0.points().map(<[f64]>::to_vec).collect()
    }

    #[getter]
    fn multiplicities(&self) -> Vec<u32> {
        self.0.multiplicities().to_vec()
    }

    #[pyo3(signature = (cost, eps = 1.0))]
    fn energy(&self, py: Python<'_>, cost: &PyCost, eps: f64) -> PyResult<f64> {
        py.detach(|| interaction_energy(&self.0, &cost.0, eps)).py()
    }

    fn __len__(&self) -> usize {
        self.0.count() as usize
    }
}

/// Best configuration found for `Gamma(lambda, Q_k)`.
#[pyclass(name = "GammaResult", module = "meanfield", frozen, get_all)]
struct PyGamma {
    lambda_: f64,
    k: f64,
    value: f64,
    value_per_volume: f64,
    method: String,
    configuration: PyConfiguration,
}

impl From<GammaEstimate> for PyGamma {
    fn from(g: GammaEstimate) -> Self {
        PyGamma {
            lambda_: g.lambda,
            k: g.k,
            value: g.value,
            value_per_volume: g.value_per_volume(),
            method: serde_json::to_value(g.method).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default(),
            configuration: PyConfiguration(g.config),
        }
    }
}

/// Exact grid optimum on `[0, k)` with step `h`; finite-range costs only.
#[pyfunction]
fn gamma_bruteforce_1d(py: Python<'_>, cost: &PyCost, lambda_: f64, k: f64, h: f64) -> PyResult<PyGamma> {
    py.detach(|| gamma::gamma_bruteforce_1d(&cost.0, lambda_, k, h)).py().map(Into::into)
}

/// Annealed estimate of `Gamma(lambda, [0, k)^dim)`. `schedule` is a JSON
/// object; omitted fields take their defaults.
#[pyfunction]
#[pyo3(signature = (cost, lambda_, k, dim, seed, schedule = None))]
fn gamma_anneal(
    py: Python<'_>,
    cost: &PyCost,
    lambda_: f64,
    k: f64,
    dim: usize,
    seed: u64,
    schedule: Option<&str>,
) -> PyResult<PyGamma> {
    let schedule: AnnealSchedule = match schedule {
        None => AnnealSchedule::default(),
        Some(s) => serde_json::from_str(s).map_err(|e| PyValueError::new_err(format!("schedule: {e}")))?,
    };
    py.detach(|| gamma::gamma_anneal(&cost.0, lambda_, k, dim, &schedule, seed)).py().map(Into::into)
}

#[pyclass(name = "GEstimate", module = "meanfield", frozen, get_all)]
struct PyGEstimate {
    lambda_: f64,
    g_value: f64,
    uncertainty: f64,
    replica_spread: f64,
    /// `(k, min value / k^d)` pairs.
    values_by_k: Vec<(f64, f64)>,
}

/// `g(lambda)` from the boxes `ks`. `solver` is a JSON object such as
/// `{"kind": "bruteforce_1d", "grid_step": 0.25}`; annealing by default.
#[pyfunction]
#[pyo3(signature = (cost, lambda_, ks, dim, replicas = 3, seed = 0, solver = None))]
#[allow(clippy::too_many_arguments)]
fn estimate_g(
    py: Python<'_>,
    cost: &PyCost,
    lambda_: f64,
    ks: Vec<f64>,
    dim: usize,
    replicas: usize,
    seed: u64,
    solver: Option<&str>,
) -> PyResult<PyGEstimate> {
    let solver = self::solver(solver)?;
    let est = py
        .detach(|| gamma::estimate_g_indexed(&cost.0, lambda_, 0, &ks, dim, replicas, &solver, seed))
        .py()?;
    Ok(PyGEstimate {
        lambda_: est.lambda,
        g_value: est.g_value,
        uncertainty: est.uncertainty,
        replica_spread: est.replica_spread(),
        values_by_k: est.values_by_k,
    })
}

/// Exact `g(lambda)` where one is known, else `None`.
#[pyfunction]
fn closed_form_g(cost: &PyCost, lambda_: f64, dim: usize) -> Option<f64> {
    gamma::closed_form_g(&cost.0, lambda_, dim)
}

/// Convex function sampled on a strictly increasing grid.
#[pyclass(name = "ConvexFunction", module = "meanfield", frozen)]
struct PyConvex(SampledConvexFunction);

#[pymethods]
impl PyConvex {
    /// `left` and `right` are `"inf"`, `"chord"` or an affine slope.
    #[new]
    #[pyo3(signature = (grid, values, left = None, right = None))]
    fn new(
        grid: Vec<f64>,
        values: Vec<f64>,
        left: Option<&Bound<'_, PyAny>>,
        right: Option<&Bound<'_, PyAny>>,
    ) -> PyResult<Self> {
        let left = left.map(extension).transpose()?.unwrap_or(Extension::PlusInfinity);
        let right = right.map(extension).transpose()?.unwrap_or(Extension::PlusInfinity);
        Ok(PyConvex(SampledConvexFunction::new(grid, values, left, right).py()?))
    }

    #[getter]
    fn grid(&self) -> Vec<f64> {
        self.0.grid().to_vec()
    }

    #[getter]
    fn values(&self) -> Vec<f64> {
        self.0.values().to_vec()
    }

    fn __call__(&self, x: f64) -> f64 {
        self.0.eval(x)
    }

    #[pyo3(signature = (tol = 1e-9))]
    fn is_convex(&self, tol: f64) -> bool {
        self.0.is_convex(tol)
    }

    /// Legendre transform sampled on `dual_grid`.
    fn legendre(&self, dual_grid: Vec<f64>) -> PyResult<PyConvex> {
        convex::legendre_transform_fast(&self.0, &dual_grid).py().map(PyConvex)
    }

    /// Lower convex envelope of the samples.
    fn convexify(&self) -> PyConvex {
        PyConvex(convex::convexify(&self.0))
    }
}

/// `f = g*` on `t_grid`.
#[pyfunction]
fn f_profile_from_g(g: &PyConvex, t_grid: Vec<f64>) -> PyResult<PyConvex> {
    convex::f_profile_from_g(&g.0, &t_grid).py().map(PyConvex)
}

#[pyfunction]
fn phi(lambda_: f64) -> f64 {
    convex::phi(lambda_)
}

#[pyfunction]
fn phi_star(t: f64) -> f64 {
    convex::phi_star(t)
}

#[pyfunction]
fn step_cost_profile(m: f64, t: f64) -> f64 {
    convex::step_cost_profile(m, t)
}

#[pyfunction]
fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    convex::linspace(a, b, n)
}

#[pyclass(name = "MeanFieldSolution", module = "meanfield", frozen, get_all)]
struct PySolution {
    centers: Vec<Vec<f64>>,
    potential: Vec<f64>,
    density: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    value: f64,
    mass: f64,
    multiplier: Option<f64>,
}

impl From<MeanFieldSolution> for PySolution {
    fn from(s: MeanFieldSolution) -> Self {
        PySolution {
            centers: (0..s.grid.len()).map(|i| s.grid.center(i)).collect(),
            mass: s.mass(),
            lo: s.intervals.iter().map(|i| i.lo).collect(),
            hi: s.intervals.iter().map(|i| i.hi).collect(),
            potential: s.potential,
            density: s.density,
            value: s.value,
            multiplier: s.multiplier,
        }
    }
}

fn potential(lower: Vec<f64>, edges: Vec<f64>, cells: Vec<usize>, u: &Bound<'_, PyAny>) -> PyResult<PotentialField> {
    let grid = RegularGrid::new(AxisBox::new(lower, edges).py()?, cells).py()?;
    if let Ok(c) = u.extract::<f64>() {
        return PotentialField::constant(grid, c).py();
    }
    if let Ok(values) = u.extract::<Vec<f64>>() {
        return PotentialField::new(grid, values).py();
    }
    let mut values = Vec::with_capacity(grid.len());
    for i in 0..grid.len() {
        values.push(u.call1((grid.center(i),))?.extract::<f64>()?);
    }
    PotentialField::new(grid, values).py()
}

/// Cellwise minimiser of `int U rho + f(rho)` over the box
/// `lower + [0, edges)` split into `cells`. `u` is a constant, one value per
/// cell (row-major) or a callable on cell centres; `fstar` is `f*`. With
/// `mass`, the total mass is prescribed.
#[pyfunction]
#[pyo3(signature = (lower, edges, cells, u, fstar, mass = None))]
fn solve_meanfield(
    py: Python<'_>,
    lower: Vec<f64>,
    edges: Vec<f64>,
    cells: Vec<usize>,
    u: &Bound<'_, PyAny>,
    fstar: &PyConvex,
    mass: Option<f64>,
) -> PyResult<PySolution> {
    let u = potential(lower, edges, cells, u)?;
    let sol = py.detach(|| match mass {
        Some(m) => mf::solve_meanfield_constrained(&u, &fstar.0, m),
        None => mf::solve_meanfield(&u, &fstar.0),
    });
    sol.py().map(Into::into)
}

#[pyclass(name = "ConvergenceResult", module = "meanfield", frozen, get_all)]
struct PyConvergence {
    eps: Vec<f64>,
    n_found: Vec<u64>,
    scaled_values: Vec<f64>,
    masses: Vec<f64>,
    mass_bounds: Vec<f64>,
    l1_distances: Vec<f64>,
    continuum_value: f64,
    mass_bounded: bool,
    final_gap: f64,
}

/// Discrete minimisers for each `eps` against the continuum solution.
#[pyfunction]
#[pyo3(signature = (lower, edges, cells, u, cost, eps, fstar, seed, schedule = None))]
#[allow(clippy::too_many_arguments)]
fn converge(
    py: Python<'_>,
    lower: Vec<f64>,
    edges: Vec<f64>,
    cells: Vec<usize>,
    u: &Bound<'_, PyAny>,
    cost: &PyCost,
    eps: Vec<f64>,
    fstar: &PyConvex,
    seed: u64,
    schedule: Option<&str>,
) -> PyResult<PyConvergence> {
    let u = potential(lower, edges, cells, u)?;
    let schedule: AnnealSchedule = match schedule {
        None => AnnealSchedule::default(),
        Some(s) => serde_json::from_str(s).map_err(|e| PyValueError::new_err(format!("schedule: {e}")))?,
    };
    let run = py.detach(|| run_convergence(&u, &cost.0, &eps, &fstar.0, &schedule, seed)).py()?;
    let col = |f: fn(&meanfield_core::convergence::EpsRecord) -> f64| run.records.iter().map(f).collect::<Vec<_>>();
    Ok(PyConvergence {
        eps: col(|r| r.eps),
        n_found: run.records.iter().map(|r| r.n_found).collect(),
        scaled_values: col(|r| r.scaled_value),
        masses: col(|r| r.mass),
        mass_bounds: col(|r| r.mass_bound),
        l1_distances: col(|r| r.l1_distance),
        continuum_value: run.continuum_value,
        mass_bounded: run.mass_bounded(),
        final_gap: run.final_gap(),
    })
}

#[pymodule]
fn meanfield(m: &Bound<'_, PyModule>) -> PyResult<()> {
    let py = m.py();
    m.add("ResourceLimitError", py.get_type::<ResourceLimitError>())?;
    m.add("PreconditionError", py.get_type::<PreconditionError>())?;
    m.add_class::<PyCost>()?;
    m.add_class::<PyLattice>()?;
    m.add_class::<PyZeta>()?;
    m.add_class::<PyConfiguration>()?;
    m.add_class::<PyGamma>()?;
    m.add_class::<PyGEstimate>()?;
    m.add_class::<PyConvex>()?;
    m.add_class::<PySolution>()?;
    m.add_class::<PyConvergence>()?;
    m.add_function(wrap_pyfunction!(epstein_zeta, m)?)?;
    m.add_function(wrap_pyfunction!(zeta_tail_bound, m)?)?;
    m.add_function(wrap_pyfunction!(gamma_bruteforce_1d, m)?)?;
    m.add_function(wrap_pyfunction!(gamma_anneal, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_g, m)?)?;
    m.add_function(wrap_pyfunction!(closed_form_g, m)?)?;
    m.add_function(wrap_pyfunction!(f_profile_from_g, m)?)?;
    m.add_function(wrap_pyfunction!(phi, m)?)?;
    m.add_function(wrap_pyfunction!(phi_star, m)?)?;
    m.add_function(wrap_pyfunction!(step_cost_profile, m)?)?;
    m.add_function(wrap_pyfunction!(linspace, m)?)?;
    m.add_function(wrap_pyfunction!(solve_meanfield, m)?)?;
    m.add_function(wrap_pyfunction!(converge, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
