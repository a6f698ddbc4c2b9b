//! Python bindings for the low-rank kinetic solver.

use std::path::PathBuf;

use nalgebra::DMatrix;
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use ttkinetic::domain::{load_config as parse_config, SimConfig};
use ttkinetic::experiments;
use ttkinetic::fp_operator::{build_collision_tridiag, TridiagonalMatrix};
use ttkinetic::integrator::{Integrator, SimState};
use ttkinetic::moments::macro_from_moments;
use ttkinetic::sylvester::{self, Orientation};

create_exception!(ttkinetic_py, SolverError, PyException);

fn err(e: ttkinetic::Error) -> PyErr {
    match e {
        ttkinetic::Error::ConfigParse { .. } | ttkinetic::Error::Validation(_) | ttkinetic::Error::DimensionMismatch { .. } => {
            PyValueError::new_err(e.to_string())
        }
        other => SolverError::new_err(other.to_string()),
    }
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<DMatrix<f64>> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != m) {
        return Err(PyValueError::new_err("ragged matrix"));
    }
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

/// A low-rank simulation advanced step by step from Python.
#[pyclass(module = "ttkinetic_py")]
struct Simulation {
    cfg: SimConfig,
    integ: Integrator,
    state: SimState,
}

#[pymethods]
impl Simulation {
    /// Builds the initial state from a config document.
    #[new]
    fn new(config: &str) -> PyResult<Self> {
        let cfg = parse_config(config).map_err(err)?;
        let (integ, state) = experiments::initial_state(&cfg).map_err(err)?;
        Ok(Self { cfg, integ, state })
    }

    /// Advances `n` steps. The GIL is released while stepping.
    #[pyo3(signature = (n = 1))]
    fn step(&mut self, py: Python<'_>, n: usize) -> PyResult<()> {
        let integ = &self.integ;
        let mut state = self.state.clone();
        let out = py.detach(move || -> ttkinetic::Result<SimState> {
            for _ in 0..n {
                state = integ.time_step(&state)?;
            }
            Ok(state)
        });
        self.state = out.map_err(err)?;
        Ok(())
    }

    #[getter]
    fn t(&self) -> f64 {
        self.state.t
    }

    #[getter]
    fn step_index(&self) -> usize {
        self.state.step_index
    }

    #[getter]
    fn n_steps(&self) -> usize {
        self.cfg.n_steps()
    }

    #[getter]
    fn dt(&self) -> f64 {
        self.cfg.dt
    }

    fn x_nodes(&self) -> Vec<f64> {
        self.cfg.x_grid.nodes()
    }

    fn v_nodes(&self) -> Vec<f64> {
        self.cfg.v_grid.nodes()
    }

    fn config_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.cfg).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    /// One diagnostics row as a dict.
    fn diagnostics<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let row = experiments::diagnostics(&self.cfg, &self.state, 0.0).map_err(err)?;
        let d = PyDict::new(py);
        d.set_item("t", row.t)?;
        d.set_item("electric_energy", row.electric_energy)?;
        d.set_item("total_mass", row.total_mass)?;
        d.set_item("total_momentum_1", row.total_momentum_1)?;
        d.set_item("total_energy", row.total_energy)?;
        d.set_item("r1", row.r1)?;
        d.set_item("r2", row.r2)?;
        d.set_item("f_mass", row.f_mass)?;
        Ok(d)
    }

    /// Carried moments `(n, n u1, n u2, n u3, n|u|^2 + 3nT)` per spatial point.
    fn moments(&self) -> Vec<[f64; 5]> {
        self.state.moments.iter().map(|u| u.0).collect()
    }

    /// `(n, u1, T)` profiles over x.
    fn macro_profiles(&self) -> PyResult<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let mut out = (Vec::new(), Vec::new(), Vec::new());
        for u in &self.state.moments {
            let m = macro_from_moments(u).map_err(err)?;
            out.0.push(m.n);
            out.1.push(m.u[0]);
            out.2.push(m.t);
        }
        Ok(out)
    }

    fn electric_field(&self) -> Vec<f64> {
        self.state.fields.e.clone()
    }

    /// `∫ f dv2 dv3` over v1 at spatial point `j`.
    fn phase_density(&self, j: usize) -> PyResult<Vec<f64>> {
        let f = self
            .state
            .field
            .get(j)
            .ok_or_else(|| PyValueError::new_err(format!("point {j} out of range")))?;
        Ok(experiments::phase_density(f, &self.cfg.v_grid))
    }

    /// Full velocity tensor at point `j`, flattened with the last index fastest.
    fn dense_at(&self, j: usize) -> PyResult<Vec<f64>> {
        let f = self
            .state
            .field
            .get(j)
            .ok_or_else(|| PyValueError::new_err(format!("point {j} out of range")))?;
        Ok(f.to_full().map_err(err)?.data().to_vec())
    }

    /// Relative error against the exact solution, or None.
    fn relative_error(&self) -> PyResult<Option<f64>> {
        experiments::relative_error(&self.cfg, &self.state).map_err(err)
    }

    fn save_snapshot(&self, path: PathBuf) -> PyResult<()> {
        ttkinetic::snapshot::write_snapshot(&path, &self.state.field).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!(
            "Simulation(case={}, t={}, step={}/{})",
            self.cfg.case,
            self.state.t,
            self.state.step_index,
            self.cfg.n_steps()
        )
    }
}

/// Runs a config document to completion, writing artifacts; returns the summary as JSON text.
#[pyfunction]
fn run_case(py: Python<'_>, config: &str) -> PyResult<String> {
    let cfg = parse_config(config).map_err(err)?;
    let summary = py.detach(|| experiments::run_case(&cfg, None)).map_err(err)?;
    serde_json::to_string(&summary).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Damping rate from an energy series; returns `(gamma, slope, peak_times)`.
#[pyfunction]
#[pyo3(signature = (t, energy, window = None))]
fn damping_fit(t: Vec<f64>, energy: Vec<f64>, window: Option<(f64, f64)>) -> PyResult<(f64, f64, Vec<f64>)> {
    let fit = experiments::damping_fit(&t, &energy, window).map_err(err)?;
    Ok((fit.gamma, fit.slope, fit.peaks.iter().map(|p| p.0).collect()))
}

/// Collision matrix diagonals `(sub, diag, sup)` for weights `m`.
#[pyfunction]
fn collision_tridiag(m: Vec<f64>, temperature: f64, dv: f64) -> PyResult<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let j = build_collision_tridiag(&m, temperature, dv).map_err(err)?;
    Ok((j.sub().to_vec(), j.diag().to_vec(), j.sup().to_vec()))
}

/// Solves `Tᵀ X + X H = R` (`big_first`, `X` is `Nv × r`) or `Hᵀ X + X T = R`
/// (`X` is `r × Nv`), with tridiagonal `T` given by its diagonals.
#[pyfunction]
#[pyo3(signature = (sub, diag, sup, small, rhs, big_first = true))]
fn solve_sylvester(
    sub: Vec<f64>,
    diag: Vec<f64>,
    sup: Vec<f64>,
    small: Vec<Vec<f64>>,
    rhs: Vec<Vec<f64>>,
    big_first: bool,
) -> PyResult<Vec<Vec<f64>>> {
    let t = TridiagonalMatrix::new(sub, diag, sup).map_err(err)?;
    let orientation = if big_first { Orientation::BigFirst } else { Orientation::BigSecond };
    let x = sylvester::solve_matrix_sylvester(&t, &matrix(small)?, &matrix(rhs)?, orientation).map_err(err)?;
    Ok(rows(&x))
}

#[pymodule]
fn ttkinetic_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Simulation>()?;
    m.add_function(wrap_pyfunction!(run_case, m)?)?;
    m.add_function(wrap_pyfunction!(damping_fit, m)?)?;
    m.add_function(wrap_pyfunction!(collision_tridiag, m)?)?;
    m.add_function(wrap_pyfunction!(solve_sylvester, m)?)?;
    m.add("SolverError", m.py().get_type::<SolverError>())?;
    Ok(())
}
