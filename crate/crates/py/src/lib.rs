//! Python bindings. Matrices cross the boundary as nested lists of Python
//! `complex` numbers, row-major.

use mimo_pac::baselines;
use mimo_pac::channel;
use mimo_pac::ergodic::{rayleigh_sample, sample_rng};
use mimo_pac::oracle::{self, OracleConfig};
use mimo_pac::perantenna::{self, SolverOptions};
use mimo_pac::{ComplexMatrix, Error, InputCovariance};
use num_complex::Complex64;
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

fn to_py_err(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn rows_of(m: &ComplexMatrix) -> Vec<Vec<Complex64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn matrix_from_rows(rows: Vec<Vec<Complex64>>) -> PyResult<ComplexMatrix> {
    let m = rows.len();
    let n = rows.first().map_or(0, Vec::len);
    if m == 0 || n == 0 {
        return Err(PyValueError::new_err("matrix must be non-empty"));
    }
    if rows.iter().any(|r| r.len() != n) {
        return Err(PyValueError::new_err("all rows must have the same length"));
    }
    let flat: Vec<Complex64> = rows.into_iter().flatten().collect();
    Ok(ComplexMatrix::from_row_slice(m, n, &flat))
}

/// Full-rank `m x n` channel matrix.
#[pyclass(name = "ChannelMatrix", module = "mimopac", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyChannel {
    inner: channel::ChannelMatrix,
}

#[pymethods]
impl PyChannel {
    #[new]
    fn new(rows: Vec<Vec<Complex64>>) -> PyResult<Self> {
        let inner = channel::ChannelMatrix::new(matrix_from_rows(rows)?).map_err(to_py_err)?;
        Ok(Self { inner })
    }

    /// I.i.d. CN(0, 1) channel drawn from a seeded stream.
    #[staticmethod]
    #[pyo3(signature = (m, n, seed=0))]
    fn rayleigh(m: usize, n: usize, seed: u64) -> PyResult<Self> {
        if m == 0 || n == 0 {
            return Err(PyValueError::new_err("dimensions must be positive"));
        }
        let mut rng = sample_rng(seed, 0, 0);
        Ok(Self {
            inner: rayleigh_sample(m, n, &mut rng),
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: channel::ChannelMatrix::load(path).map_err(to_py_err)?,
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: channel::ChannelMatrix::from_json_str(text).map_err(to_py_err)?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json_string().map_err(to_py_err)
    }

    #[getter]
    fn m(&self) -> usize {
        self.inner.m()
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn shape(&self) -> (usize, usize) {
        (self.inner.m(), self.inner.n())
    }

    fn rows(&self) -> Vec<Vec<Complex64>> {
        rows_of(self.inner.h())
    }

    fn singular_values(&self) -> Vec<f64> {
        self.inner.svd().singulars.iter().copied().collect()
    }

    /// `log det(I + H Q H^H)` in nats.
    fn rate(&self, q: Vec<Vec<Complex64>>) -> PyResult<f64> {
        let q = InputCovariance::new(matrix_from_rows(q)?).map_err(to_py_err)?;
        channel::rate(&self.inner, &q).map_err(to_py_err)
    }

    fn __repr__(&self) -> String {
        format!("ChannelMatrix({}x{})", self.inner.m(), self.inner.n())
    }
}

/// Per-antenna power budgets.
#[pyclass(name = "PowerConstraint", module = "mimopac", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyPower {
    inner: channel::PowerConstraint,
}

#[pymethods]
impl PyPower {
    #[new]
    fn new(powers: Vec<f64>) -> PyResult<Self> {
        Ok(Self {
            inner: channel::PowerConstraint::new(powers).map_err(to_py_err)?,
        })
    }

    #[staticmethod]
    fn equal(n: usize, total: f64) -> PyResult<Self> {
        Ok(Self {
            inner: channel::PowerConstraint::equal(n, total).map_err(to_py_err)?,
        })
    }

    #[staticmethod]
    fn from_weights(weights: Vec<f64>, total: f64) -> PyResult<Self> {
        Ok(Self {
            inner: channel::PowerConstraint::from_weights(&weights, total).map_err(to_py_err)?,
        })
    }

    #[getter]
    fn powers(&self) -> Vec<f64> {
        self.inner.as_slice().to_vec()
    }

    #[getter]
    fn total(&self) -> f64 {
        self.inner.total()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("PowerConstraint({:?})", self.inner.as_slice())
    }
}

#[pyclass(name = "SolveReport", module = "mimopac", frozen, get_all)]
struct PySolveReport {
    q: Vec<Vec<Complex64>>,
    d_check: Vec<f64>,
    gap: f64,
    iterations: usize,
    rate: f64,
    dropped_modes: usize,
    converged: bool,
    rank: usize,
    /// `||M Q||_F`, or `None` when the solver did not attach KKT residuals.
    slackness: Option<f64>,
    /// Smallest eigenvalue of the dual slack matrix `M`.
    min_eig_m: Option<f64>,
    /// Duality gap at the starting point and after each iteration.
    gap_trace: Vec<f64>,
    /// Dual diagonal at the starting point and after each iteration.
    d_check_trace: Vec<Vec<f64>>,
}

#[pymethods]
impl PySolveReport {
    fn __repr__(&self) -> String {
        format!(
            "SolveReport(rate={:.6}, iterations={}, gap={:.2e}, converged={})",
            self.rate,
            self.iterations,
            self.gap,
            if self.converged { "True" } else { "False" }
        )
    }
}

/// Optimal input covariance under per-antenna power constraints.
#[pyfunction]
#[pyo3(signature = (channel, power, eps=perantenna::DEFAULT_EPS, max_iter=perantenna::DEFAULT_MAX_ITER, trace=false))]
fn opt_cov(
    py: Python<'_>,
    channel: &PyChannel,
    power: &PyPower,
    eps: f64,
    max_iter: usize,
    trace: bool,
) -> PyResult<PySolveReport> {
    let opts = SolverOptions {
        eps,
        max_iter,
        keep_trace: trace,
        diag_tol: None,
    };
    let r = py
        .detach(|| perantenna::opt_cov_with(&channel.inner, &power.inner, &opts))
        .map_err(to_py_err)?;
    Ok(PySolveReport {
        q: rows_of(r.q.matrix()),
        rank: r.rank(),
        d_check: r.d_check.clone(),
        gap: r.gap,
        iterations: r.iterations,
        rate: r.rate,
        dropped_modes: r.dropped_modes,
        converged: r.converged,
        slackness: r.kkt.as_ref().map(|k| k.slackness_norm),
        min_eig_m: r.kkt.as_ref().map(|k| k.psd_violation),
        gap_trace: r.trace.records.iter().map(|rec| rec.gap).collect(),
        d_check_trace: r.trace.records.iter().map(|rec| rec.d_check.clone()).collect(),
    })
}

/// Sum-power water-filling. Returns `(rate, water_level, Q)`.
#[pyfunction]
fn waterfill_sum(channel: &PyChannel, total_power: f64) -> PyResult<(f64, f64, Vec<Vec<Complex64>>)> {
    let w = baselines::waterfill_sum(&channel.inner, total_power).map_err(to_py_err)?;
    Ok((w.rate, w.water_level, rows_of(w.q.matrix())))
}

/// Rate of independent signalling `Q = diag(p)`.
#[pyfunction]
fn mac_rate(channel: &PyChannel, power: &PyPower) -> PyResult<f64> {
    baselines::mac_rate(&channel.inner, &power.inner).map_err(to_py_err)
}

/// Eigenbeam signalling that meets every budget exactly. Returns `None` when
/// no nonnegative eigenbeam powers exist, else `(rate, eigenbeam_powers)`.
#[pyfunction]
fn forced_eigenbeam(channel: &PyChannel, power: &PyPower) -> PyResult<Option<(f64, Vec<f64>)>> {
    let r = baselines::forced_eigenbeam(&channel.inner, &power.inner).map_err(to_py_err)?;
    Ok(r.lambda_q.map(|l| (r.rate, l)))
}

/// Closed-form single-receive-antenna optimum. Returns `(rate, Q)`.
#[pyfunction]
fn miso_closed_form(channel: &PyChannel, power: &PyPower) -> PyResult<(f64, Vec<Vec<Complex64>>)> {
    let s = baselines::miso_closed_form(channel.inner.h(), &power.inner).map_err(to_py_err)?;
    Ok((s.rate, rows_of(s.q.matrix())))
}

/// Projected-gradient reference solver. Returns `(rate, Q, converged)`.
#[pyfunction]
#[pyo3(signature = (channel, power, sum_power=false))]
fn pg_solve(
    py: Python<'_>,
    channel: &PyChannel,
    power: &PyPower,
    sum_power: bool,
) -> PyResult<(f64, Vec<Vec<Complex64>>, bool)> {
    let cfg = if sum_power {
        OracleConfig::sum()
    } else {
        OracleConfig::default()
    };
    let r = py
        .detach(|| oracle::pg_solve(&channel.inner, &power.inner, &cfg))
        .map_err(to_py_err)?;
    Ok((r.rate, rows_of(r.q.matrix()), r.converged))
}

#[pymodule]
fn mimopac(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyChannel>()?;
    m.add_class::<PyPower>()?;
    m.add_class::<PySolveReport>()?;
    m.add_function(wrap_pyfunction!(opt_cov, m)?)?;
    m.add_function(wrap_pyfunction!(waterfill_sum, m)?)?;
    m.add_function(wrap_pyfunction!(mac_rate, m)?)?;
    m.add_function(wrap_pyfunction!(forced_eigenbeam, m)?)?;
    m.add_function(wrap_pyfunction!(miso_closed_form, m)?)?;
    m.add_function(wrap_pyfunction!(pg_solve, m)?)?;
    Ok(())
}
