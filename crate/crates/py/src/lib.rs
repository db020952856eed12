//! Python bindings. Models, settings and damping are passed as the same JSON
//! documents the command-line runner reads; tables come back as CSV text
//! in the documented schemas, curves also as dicts of lists.

use nlmodal::cnma::{continue_branch, ContinuationSettings};
use nlmodal::io::{read_database, read_model_json, write_branch, write_curve, write_database};
use nlmodal::linmodal::LinearModalBasis;
use nlmodal::model::SecondOrderModel;
use nlmodal::synthesis::{ingest, DampingSpec, Interpolation, ResponseCurve, Rom, SynthesisOptions};
use nlmodal::validate::{hbm_frf, HbmSettings};
use nlmodal::{CVec, Complex64};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde::de::DeserializeOwned;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn solver_err(e: nlmodal::Error) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn model(json: &str) -> PyResult<SecondOrderModel> {
    read_model_json(json).and_then(|s| s.build()).map_err(value_err)
}

fn parse_or_default<T: DeserializeOwned + Default>(json: Option<&str>) -> PyResult<T> {
    match json {
        None => Ok(T::default()),
        Some(s) => serde_json::from_str(s).map_err(value_err),
    }
}

fn damping(json: Option<&str>) -> PyResult<Vec<DampingSpec>> {
    match json {
        None => Ok(Vec::new()),
        Some(s) => serde_json::from_str(s).map_err(value_err),
    }
}

fn force(n: usize, entries: Vec<(usize, f64, f64)>) -> PyResult<CVec> {
    let mut f = CVec::zeros(n);
    for (dof, re, im) in entries {
        if dof >= n {
            return Err(PyValueError::new_err(format!("force DOF {dof} out of range")));
        }
        f[dof] += Complex64::new(re, im);
    }
    Ok(f)
}

fn curve_dict<'py>(py: Python<'py>, c: &ResponseCurve, omega_ref: f64) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    let omega: Vec<f64> = c.rows.iter().map(|r| r.omega).collect();
    d.set_item("omega_norm", omega.iter().map(|w| w / omega_ref).collect::<Vec<_>>())?;
    d.set_item("omega", omega)?;
    d.set_item("amplitude", c.rows.iter().map(|r| r.amplitude).collect::<Vec<_>>())?;
    d.set_item(
        "amplitude_norm",
        c.rows.iter().map(|r| r.amplitude_norm).collect::<Vec<_>>(),
    )?;
    d.set_item("stable", c.rows.iter().map(|r| r.stable).collect::<Vec<_>>())?;
    let mut csv = Vec::new();
    write_curve(&mut csv, c, omega_ref).map_err(solver_err)?;
    d.set_item("csv", String::from_utf8(csv).expect("csv is utf-8"))?;
    Ok(d)
}

/// Linear eigenfrequencies of a model [rad/s].
#[pyfunction]
fn linear_frequencies(model_json: &str) -> PyResult<Vec<f64>> {
    let m = model(model_json)?;
    Ok(LinearModalBasis::from_model(&m)
        .map_err(value_err)?
        .omegas
        .as_slice()
        .to_vec())
}

/// Nonlinear mode branch over the normalization target range. Returns a
/// dict with `energy`, `omega0`, `damping`, `branch_csv` and, when the
/// modal amplitude is monotone, `database_csv`.
#[pyfunction]
#[pyo3(signature = (model_json, mode, target_min, target_max, settings_json=None))]
fn nma<'py>(
    py: Python<'py>,
    model_json: &str,
    mode: usize,
    target_min: f64,
    target_max: f64,
    settings_json: Option<&str>,
) -> PyResult<Bound<'py, PyDict>> {
    let m = model(model_json)?;
    let s: ContinuationSettings = parse_or_default(settings_json)?;
    let b = py
        .allow_threads(|| continue_branch(&m, mode, target_min, target_max, &s).and_then(|b| b.require_complete()))
        .map_err(solver_err)?;
    let omega_ref = LinearModalBasis::from_model(&m).map_err(value_err)?.omegas[0];
    let d = PyDict::new(py);
    d.set_item("energy", b.energies())?;
    d.set_item("omega0", b.omegas())?;
    d.set_item("damping", b.dampings())?;
    d.set_item("turning_points", b.turning_points.clone())?;
    let mut csv = Vec::new();
    write_branch(&mut csv, &b, omega_ref).map_err(solver_err)?;
    d.set_item("branch_csv", String::from_utf8(csv).expect("csv is utf-8"))?;
    if let Ok(db) = ingest(&b, &m, Interpolation::Cubic) {
        let mut csv = Vec::new();
        write_database(&mut csv, &db).map_err(solver_err)?;
        d.set_item("database_csv", String::from_utf8(csv).expect("csv is utf-8"))?;
    }
    Ok(d)
}

/// Reduced-model forced response from a database table.
#[pyfunction]
#[allow(clippy::too_many_arguments)]
#[pyo3(signature = (model_json, database_csv, force_entries, omega_min, omega_max, damping_json=None, options_json=None))]
fn frf<'py>(
    py: Python<'py>,
    model_json: &str,
    database_csv: &str,
    force_entries: Vec<(usize, f64, f64)>,
    omega_min: f64,
    omega_max: f64,
    damping_json: Option<&str>,
    options_json: Option<&str>,
) -> PyResult<Bound<'py, PyDict>> {
    let m = model(model_json)?;
    let db = read_database(database_csv.as_bytes(), Interpolation::Cubic).map_err(value_err)?;
    let opts: SynthesisOptions = parse_or_default(options_json)?;
    let damp = damping(damping_json)?;
    let f1 = force(m.n_dof(), force_entries)?;
    let rom = Rom::new(&db, &m, &damp, &opts).map_err(value_err)?;
    let curve = rom.frf(&f1, omega_min, omega_max).map_err(solver_err)?;
    let omega_ref = LinearModalBasis::from_model(&m).map_err(value_err)?.omegas[0];
    curve_dict(py, &curve, omega_ref)
}

/// Reference harmonic balance forced response.
#[pyfunction]
#[pyo3(signature = (model_json, force_entries, omega_min, omega_max, damping_json=None, settings_json=None))]
fn hbm<'py>(
    py: Python<'py>,
    model_json: &str,
    force_entries: Vec<(usize, f64, f64)>,
    omega_min: f64,
    omega_max: f64,
    damping_json: Option<&str>,
    settings_json: Option<&str>,
) -> PyResult<Bound<'py, PyDict>> {
    let m = model(model_json)?;
    let s: HbmSettings = parse_or_default(settings_json)?;
    let damp = damping(damping_json)?;
    let f1 = force(m.n_dof(), force_entries)?;
    let c = py
        .allow_threads(|| hbm_frf(&m, &f1, omega_min, omega_max, &damp, &s))
        .map_err(solver_err)?;
    let omega_ref = LinearModalBasis::from_model(&m).map_err(value_err)?.omegas[0];
    curve_dict(py, &c.curve, omega_ref)
}

/// Limit cycles of the reduced model as `(amplitude, omega, probe_amplitude, stable)`.
#[pyfunction]
#[pyo3(signature = (model_json, database_csv, damping_json=None, options_json=None))]
fn lco(
    model_json: &str,
    database_csv: &str,
    damping_json: Option<&str>,
    options_json: Option<&str>,
) -> PyResult<Vec<(f64, f64, f64, bool)>> {
    let m = model(model_json)?;
    let db = read_database(database_csv.as_bytes(), Interpolation::Cubic).map_err(value_err)?;
    let opts: SynthesisOptions = parse_or_default(options_json)?;
    let damp = damping(damping_json)?;
    let rom = Rom::new(&db, &m, &damp, &opts).map_err(value_err)?;
    let cycles = rom.lco().map_err(solver_err)?;
    Ok(cycles
        .iter()
        .map(|c| (c.amplitude, c.omega, c.probe_amplitude, c.stable))
        .collect())
}

#[pymodule]
fn nlmodal_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", nlmodal::VERSION)?;
    m.add_function(wrap_pyfunction!(linear_frequencies, m)?)?;
    m.add_function(wrap_pyfunction!(nma, m)?)?;
    m.add_function(wrap_pyfunction!(frf, m)?)?;
    m.add_function(wrap_pyfunction!(hbm, m)?)?;
    m.add_function(wrap_pyfunction!(lco, m)?)?;
    Ok(())
}
