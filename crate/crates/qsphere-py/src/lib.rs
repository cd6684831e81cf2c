use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;

use qsphere::config::RunConfig;
use qsphere::kernels::{kernel as eval_kernel, SignPair, SpectrumPoint};
use qsphere::lattice::{GradedFunction, LatticePoint, LatticeWindow};
use qsphere::qseries::{self, HyperSeriesSpec, QBase};
use qsphere::transform::{forward as eval_forward, SpectralGrid};
use qsphere::verify::{run_many, ProductSelection, Suite};
use qsphere::{Complex64, Error};

create_exception!(qsphere_py, QSphereError, PyException);

/// Raised as `QSphereError(name, message)`; `name` is the stable error name.
fn to_py(e: Error) -> PyErr {
    QSphereError::new_err((e.name(), e.to_string()))
}

fn config(q: f64, phase_provider: &str) -> Result<RunConfig, Error> {
    let cfg = RunConfig {
        q,
        phase_provider: phase_provider.to_string(),
        ..Default::default()
    };
    cfg.validate()?;
    Ok(cfg)
}

/// `(a; q)_n`, or `(a; q)_∞` when `n` is omitted.
#[pyfunction]
#[pyo3(signature = (a, q, n=None))]
fn qpoch(a: Complex64, q: f64, n: Option<usize>) -> PyResult<Complex64> {
    match n {
        Some(n) => Ok(qseries::qpoch_finite(a, Complex64::from(q), n)),
        None => {
            let qb = QBase::new(q).map_err(to_py)?;
            qseries::qpoch_infinite(a, q, &qb).map_err(to_py)
        }
    }
}

/// Basic hypergeometric series `rφs(upper; lower; q, z)` inside its disc of convergence.
#[pyfunction]
fn phi(upper: Vec<Complex64>, lower: Vec<Complex64>, q: f64, z: Complex64) -> PyResult<Complex64> {
    let qb = QBase::new(q).map_err(to_py)?;
    let spec = HyperSeriesSpec::new(upper, lower, Complex64::from(q), z).map_err(to_py)?;
    qseries::phi_series(&spec, &qb).map_err(to_py)
}

/// `₂φ₁(a, b; c; q, z)` continued to `|z| > 1`.
#[pyfunction]
fn phi21_continued(
    a: Complex64,
    b: Complex64,
    c: Complex64,
    q: f64,
    z: Complex64,
) -> PyResult<Complex64> {
    let qb = QBase::new(q).map_err(to_py)?;
    qseries::phi21_continued(a, b, c, q, z, &qb).map_err(to_py)
}

/// `K_j^{σ,τ}(p0; x)` at a principal point `x` or the discrete point `n`.
#[pyfunction]
#[pyo3(signature = (j, signs, p0, x=None, discrete_n=None, q=0.5, phase_provider="unit"))]
fn kernel(
    j: u8,
    signs: &str,
    p0: &str,
    x: Option<f64>,
    discrete_n: Option<u32>,
    q: f64,
    phase_provider: &str,
) -> PyResult<Complex64> {
    let run = || -> Result<Complex64, Error> {
        let signs: SignPair = signs.parse()?;
        let p0: LatticePoint = p0.parse()?;
        let point = match (x, discrete_n) {
            (Some(x), None) => SpectrumPoint::principal(x)?,
            (None, Some(n)) => SpectrumPoint::discrete(n)?,
            _ => return Err(Error::Input("give exactly one of x and discrete_n".into())),
        };
        let ctx = config(q, phase_provider)?.context()?;
        eval_kernel(j, signs, p0, &point, &ctx)
    };
    run().map_err(to_py)
}

/// Lattice points of the window `k ∈ [k_min, k_max]` in `[+-]q^k` form.
#[pyfunction]
fn lattice_points(k_min: i32, k_max: i32) -> PyResult<Vec<String>> {
    let w = LatticeWindow::new(k_min, k_max).map_err(to_py)?;
    Ok(w.points().iter().map(|p| p.to_string()).collect())
}

/// Spherical transform of a graded function given as JSON; returns the field as JSON.
#[pyfunction]
#[pyo3(signature = (function_json, nodes=64, n_max=4, phase_provider="unit"))]
fn forward(
    py: Python<'_>,
    function_json: &str,
    nodes: usize,
    n_max: u32,
    phase_provider: &str,
) -> PyResult<String> {
    let run = || -> Result<String, Error> {
        let f = GradedFunction::from_json(function_json)?;
        let ctx = config(f.q(), phase_provider)?.context()?;
        let grid = SpectralGrid::gauss(nodes, n_max)?;
        Ok(eval_forward(&f, &grid, &ctx)?.to_json(None))
    };
    py.detach(run).map_err(to_py)
}

/// The default run configuration as JSON.
#[pyfunction]
fn default_config() -> String {
    RunConfig::default().to_json()
}

/// Runs the named suites (all when omitted) and returns the JSON report.
#[pyfunction]
#[pyo3(signature = (suites=None, config_json=None))]
fn verify(
    py: Python<'_>,
    suites: Option<Vec<String>>,
    config_json: Option<&str>,
) -> PyResult<String> {
    let run = || -> Result<String, Error> {
        let cfg: RunConfig = match config_json {
            Some(s) => RunConfig::from_json(s)?,
            None => RunConfig::default(),
        };
        let suites: Vec<Suite> = match suites {
            Some(names) => names.iter().map(|s| s.parse()).collect::<Result<_, _>>()?,
            None => Suite::ALL.to_vec(),
        };
        Ok(run_many(&suites, &cfg, &ProductSelection::default())?.to_json())
    };
    py.detach(run).map_err(to_py)
}

#[pymodule]
fn qsphere_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("QSphereError", m.py().get_type::<QSphereError>())?;
    m.add_function(wrap_pyfunction!(qpoch, m)?)?;
    m.add_function(wrap_pyfunction!(phi, m)?)?;
    m.add_function(wrap_pyfunction!(phi21_continued, m)?)?;
    m.add_function(wrap_pyfunction!(kernel, m)?)?;
    m.add_function(wrap_pyfunction!(lattice_points, m)?)?;
    m.add_function(wrap_pyfunction!(forward, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    Ok(())
}
