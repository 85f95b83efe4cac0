//! Python bindings: geometry, gate timing, the reduced two-qubit model,
//! decay and charge fits, and the optical rate model.

use nvregsim_core::algebra::{process_fidelity, CMat};
use nvregsim_core::benchmarking::{coherence_limit as core_coherence_limit, epc_from_p, extract_epg2q as core_extract_epg2q, fit_decay as core_fit_decay};
use nvregsim_core::charge::{fit_poisson_mixture as core_fit_mixture, MixtureObjective, PhotonHistogram};
use nvregsim_core::geometry;
use nvregsim_core::hamiltonian::ang;
use nvregsim_core::photophysics::{spam_column_mean, MixingScope, PumpProtocol};
use nvregsim_core::propagation::ReducedModel;
use nvregsim_core::sequences::{self, build_sqrt_zz, zz_phase_unitary, PulseShape};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn py_err(e: nvregsim_core::Error) -> PyErr {
    use nvregsim_core::Error as E;
    match e {
        E::Degenerate { .. } | E::Fit(_) | E::Numeric(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn shape(rabi: Option<f64>) -> PulseShape {
    rabi.map_or(PulseShape::ideal(), PulseShape::sine)
}

/// Rows of complex entries.
fn rows(m: &CMat) -> Vec<Vec<(f64, f64)>> {
    (0..m.nrows()).map(|r| (0..m.ncols()).map(|c| (m[(r, c)].re, m[(r, c)].im)).collect()).collect()
}

/// Field magnitude (MHz) and tilt (deg) from two ODMR lines.
#[pyfunction]
#[pyo3(signature = (nu1, nu2, d = 2870.0, e = 0.0))]
fn solve_field_from_odmr<'py>(py: Python<'py>, nu1: f64, nu2: f64, d: f64, e: f64) -> PyResult<Bound<'py, PyDict>> {
    let s = geometry::solve_field_from_odmr(nu1, nu2, d, e).map_err(py_err)?;
    let out = PyDict::new(py);
    out.set_item("omega_e", s.omega_e)?;
    out.set_item("theta", s.theta)?;
    out.set_item("theta_alt", s.theta_alt)?;
    out.set_item("b_mag_gauss", s.b_mag())?;
    out.set_item("refined", s.refined)?;
    Ok(out)
}

#[pyfunction]
#[pyo3(signature = (omega_e, theta, phi = 0.0, d = 2870.0, e = 0.0))]
fn forward_transitions(omega_e: f64, theta: f64, phi: f64, d: f64, e: f64) -> (f64, f64) {
    geometry::forward_transitions(omega_e, theta, phi, d, e)
}

/// τ2 (ns) of the instantaneous-pulse gate.
#[pyfunction]
fn ideal_tau2(nu_dip: f64, n_pi: usize) -> f64 {
    sequences::ideal_tau2(nu_dip, n_pi)
}

/// τ2 (ns) for finite pulses on the reduced model; `coupling` in MHz, positive.
#[pyfunction]
#[pyo3(signature = (coupling, tau1, n_pi, rabi = None, step_density = 20.0))]
fn reduced_tau2(coupling: f64, tau1: f64, n_pi: usize, rabi: Option<f64>, step_density: f64) -> PyResult<f64> {
    sequences::reduced_tau2(ang(coupling), tau1, n_pi, shape(rabi), step_density).map_err(py_err)
}

/// Two-qubit unitary of the √ZZ sequence on the reduced model, as rows of
/// (re, im) pairs in the basis |00>, |01>, |10>, |11>.
#[pyfunction]
#[pyo3(signature = (tau1, tau2, n_pi, coupling, delta1 = 0.0, delta2 = 0.0, rabi = None, step_density = 20.0))]
#[allow(clippy::too_many_arguments)]
fn sqrt_zz_unitary(tau1: f64, tau2: f64, n_pi: usize, coupling: f64, delta1: f64, delta2: f64, rabi: Option<f64>, step_density: f64) -> PyResult<Vec<Vec<(f64, f64)>>> {
    let seq = build_sqrt_zz(tau1, tau2, n_pi, shape(rabi)).map_err(py_err)?;
    let m = ReducedModel { delta1: ang(delta1), delta2: ang(delta2), g: ang(coupling) };
    Ok(rows(&m.propagate(&seq, step_density)))
}

/// 1 − process fidelity of the reduced-model gate against its analytic phase gate.
#[pyfunction]
#[pyo3(signature = (tau1, tau2, n_pi, coupling, delta1 = 0.0, delta2 = 0.0))]
fn sqrt_zz_oracle_infidelity(tau1: f64, tau2: f64, n_pi: usize, coupling: f64, delta1: f64, delta2: f64) -> PyResult<f64> {
    let seq = build_sqrt_zz(tau1, tau2, n_pi, PulseShape::ideal()).map_err(py_err)?;
    let g = ang(coupling);
    let u = ReducedModel { delta1: ang(delta1), delta2: ang(delta2), g }.propagate(&seq, 1.0);
    Ok(1.0 - process_fidelity(&u, &zz_phase_unitary(n_pi, g, tau2)))
}

#[pyfunction]
fn coherence_limit(t_gate_us: f64, t2_nv1_us: f64, t2_nv2_us: f64) -> PyResult<f64> {
    core_coherence_limit(t_gate_us, t2_nv1_us, t2_nv2_us).map_err(py_err)
}

#[pyfunction]
fn extract_epg2q(epc: f64, epc_1q: f64, gpc_2q: f64) -> PyResult<f64> {
    core_extract_epg2q(epc, epc_1q, gpc_2q).map_err(py_err)
}

#[pyfunction]
#[pyo3(name = "epc_from_p")]
fn epc(p: f64, n_qubits: usize) -> f64 {
    epc_from_p(p, n_qubits)
}

/// Fit y = y0 + a·p^n.
#[pyfunction]
#[pyo3(signature = (xs, ys, fix_y0 = None))]
fn fit_decay<'py>(py: Python<'py>, xs: Vec<f64>, ys: Vec<f64>, fix_y0: Option<f64>) -> PyResult<Bound<'py, PyDict>> {
    let r = core_fit_decay(&xs, &ys, fix_y0).map_err(py_err)?;
    let out = PyDict::new(py);
    out.set_item("p", r.p)?;
    out.set_item("p_sigma", r.p_sigma)?;
    out.set_item("a", r.a)?;
    out.set_item("y0", r.y0)?;
    out.set_item("converged", r.fit.converged)?;
    Ok(out)
}

/// Three-component Poisson mixture; `counts[n]` is the number of shots with n photons.
#[pyfunction]
#[pyo3(signature = (counts, window_ms = 2.9, objective = "ml"))]
fn fit_poisson_mixture<'py>(py: Python<'py>, counts: Vec<u64>, window_ms: f64, objective: &str) -> PyResult<Bound<'py, PyDict>> {
    let objective = match objective {
        "ml" => MixtureObjective::MaxLikelihood,
        "ls" => MixtureObjective::LeastSquares,
        o => return Err(PyValueError::new_err(format!("objective must be 'ml' or 'ls', got {o:?}"))),
    };
    let total_shots = counts.iter().sum();
    let f = core_fit_mixture(&PhotonHistogram { counts, total_shots, window_ms }, objective).map_err(py_err)?;
    let out = PyDict::new(py);
    out.set_item("lambdas", f.lambdas.to_vec())?;
    out.set_item("weights", f.weights.to_vec())?;
    out.set_item("lambda_sigmas", f.lambda_sigmas.to_vec())?;
    out.set_item("weight_sigmas", f.weight_sigmas.to_vec())?;
    out.set_item("degenerate", f.degenerate)?;
    Ok(out)
}

/// Initialization fidelities and SPAM loss of a tilted NV, averaged over both rate columns.
#[pyfunction]
#[pyo3(signature = (b_gauss, theta_deg, ground_only = false))]
fn spam_estimate<'py>(py: Python<'py>, b_gauss: f64, theta_deg: f64, ground_only: bool) -> PyResult<Bound<'py, PyDict>> {
    let scope = if ground_only { MixingScope::GroundOnly } else { MixingScope::GroundAndExcited };
    let s = spam_column_mean(b_gauss, theta_deg, scope, PumpProtocol::default()).map_err(py_err)?;
    let out = PyDict::new(py);
    out.set_item("f_init_b", s.f_init_b)?;
    out.set_item("f_init_0", s.f_init_0)?;
    out.set_item("infidelity_ratio", s.infidelity_ratio)?;
    out.set_item("relative_loss", s.relative_loss)?;
    Ok(out)
}

#[pymodule]
fn nvregsim(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(solve_field_from_odmr, m)?)?;
    m.add_function(wrap_pyfunction!(forward_transitions, m)?)?;
    m.add_function(wrap_pyfunction!(ideal_tau2, m)?)?;
    m.add_function(wrap_pyfunction!(reduced_tau2, m)?)?;
    m.add_function(wrap_pyfunction!(sqrt_zz_unitary, m)?)?;
    m.add_function(wrap_pyfunction!(sqrt_zz_oracle_infidelity, m)?)?;
    m.add_function(wrap_pyfunction!(coherence_limit, m)?)?;
    m.add_function(wrap_pyfunction!(extract_epg2q, m)?)?;
    m.add_function(wrap_pyfunction!(epc, m)?)?;
    m.add_function(wrap_pyfunction!(fit_decay, m)?)?;
    m.add_function(wrap_pyfunction!(fit_poisson_mixture, m)?)?;
    m.add_function(wrap_pyfunction!(spam_estimate, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_keep_layout_and_phase() {
        let u = zz_phase_unitary(8, ang(0.11289), sequences::ideal_tau2(0.11289, 8));
        let r = rows(&u);
        assert_eq!((r.len(), r[0].len()), (4, 4));
        assert!((r[1][1].0).abs() < 1e-12 && (r[1][1].1 - 1.0).abs() < 1e-12);
        assert_eq!(r[0][0], (1.0, 0.0));
    }

    #[test]
    fn missing_rabi_means_instantaneous() {
        assert_eq!(shape(None), PulseShape::ideal());
        assert_eq!(shape(Some(23.7)), PulseShape::sine(23.7));
    }
}
