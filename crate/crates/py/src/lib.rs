//! Python bindings for the vscstab stability workbench.

use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use vscstab::config::{parse_config, parse_methods};
use vscstab::sequence::SequenceModel;
use vscstab::sim::{classify_trace, sequence_spectrum, simulate as run_sim, PerturbKind, SimConfig, SimTrace};
use vscstab::stability::{self, find_iop, principal_iop, GridSettings, Method, StabilityVerdict, SweepParam};
use vscstab::tf::{CRational, C64};
use vscstab::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Config { .. } | Error::Parameter { .. } => PyValueError::new_err(e.to_string()),
        Error::Io(_) => PyOSError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn grid(f_min: f64, f_max: f64, n_points: usize) -> PyResult<GridSettings> {
    let g = GridSettings { f_min, f_max, n_points, ..GridSettings::default() };
    g.validate().map_err(to_py)?;
    Ok(g)
}

fn param(name: &str) -> PyResult<SweepParam> {
    SweepParam::parse(name).ok_or_else(|| PyValueError::new_err(format!("unknown sweep parameter `{name}`")))
}

fn methods(list: &str) -> PyResult<Vec<Method>> {
    parse_methods(list).ok_or_else(|| PyValueError::new_err(format!("unknown method list `{list}`")))
}

fn jw(f_hz: f64) -> C64 {
    C64::new(0.0, 2.0 * std::f64::consts::PI * f_hz)
}

/// A system and the bandwidth targets its gains were designed for, if any.
#[pyclass(name = "Scenario", frozen, skip_from_py_object, module = "vscstab_py")]
#[derive(Clone)]
struct PyScenario(stability::Scenario);

#[pymethods]
impl PyScenario {
    /// Reference circuit with gains designed for the given bandwidths.
    #[new]
    #[pyo3(signature = (scr = 3.0, cc_bw = 200.0, pll_bw = 13.0))]
    fn new(scr: f64, cc_bw: f64, pll_bw: f64) -> PyResult<Self> {
        stability::Scenario::reference(scr, cc_bw, pll_bw).map(PyScenario).map_err(to_py)
    }

    /// Scenario described by an INI run configuration.
    #[staticmethod]
    fn from_config(path: PathBuf) -> PyResult<Self> {
        parse_config(&path).map(|c| PyScenario(c.scenario)).map_err(to_py)
    }

    /// Copy with one sweep parameter set: pll_bw, cc_bw, scr or resistance.
    fn with_param(&self, name: &str, value: f64) -> PyResult<Self> {
        self.0.with(param(name)?, value).map(PyScenario).map_err(to_py)
    }

    fn model(&self) -> PyResult<PyModel> {
        self.0.model().map(PyModel).map_err(to_py)
    }

    #[getter]
    fn kp_cc(&self) -> f64 {
        self.0.params.ctrl.kp_cc
    }
    #[getter]
    fn ki_cc(&self) -> f64 {
        self.0.params.ctrl.ki_cc
    }
    #[getter]
    fn kp_pll(&self) -> f64 {
        self.0.params.ctrl.kp_pll
    }
    #[getter]
    fn ki_pll(&self) -> f64 {
        self.0.params.ctrl.ki_pll
    }
    #[getter]
    fn l_s(&self) -> f64 {
        self.0.params.circuit.l_s
    }
    #[getter]
    fn r_s(&self) -> f64 {
        self.0.params.circuit.r_s
    }
    #[getter]
    fn pll_bw(&self) -> Option<f64> {
        self.0.design.map(|d| d.pll_bw)
    }
    #[getter]
    fn cc_bw(&self) -> Option<f64> {
        self.0.design.map(|d| d.cc_bw)
    }

    /// Converter current at the operating point, PLL frame, pu.
    fn operating_current(&self) -> PyResult<C64> {
        self.0.params.operating_point().map(|op| op.i_c0).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        let p = &self.0.params;
        format!(
            "Scenario(l_s={:.6}, r_s={:.6}, kp_cc={:.6}, ki_cc={:.6}, kp_pll={:.6}, ki_pll={:.6})",
            p.circuit.l_s, p.circuit.r_s, p.ctrl.kp_cc, p.ctrl.ki_cc, p.ctrl.kp_pll, p.ctrl.ki_pll
        )
    }
}

/// Small-signal sequence model of one scenario.
#[pyclass(name = "Model", frozen, module = "vscstab_py")]
struct PyModel(SequenceModel);

impl PyModel {
    fn curve(&self, name: &str) -> PyResult<&CRational> {
        let m = &self.0;
        Ok(match name {
            "z_sigma" => &m.z_sigma,
            "h_i" => &m.h_i,
            "h_pll" => &m.h_pll,
            "g_pll" => &m.g_pll,
            "c_pll" => &m.c_pll,
            "z_grid_p" => &m.z_grid_p,
            "z_grid_n" => &m.z_grid_n,
            "d_pll" => &m.d_pll,
            "z_c_p" => &m.z_c_p,
            "z_c_n" => &m.z_c_n,
            "r" => &m.r,
            "gamma" => &m.gamma,
            "z_loop_p" => &m.z_loop_p,
            "z_loop_n" => &m.z_loop_n,
            _ => return Err(PyValueError::new_err(format!("unknown transfer function `{name}`"))),
        })
    }
}

#[pymethods]
impl PyModel {
    /// Value of a named transfer function at `f_hz` on the imaginary axis.
    fn eval(&self, name: &str, f_hz: f64) -> PyResult<C64> {
        self.curve(name)?.eval(jw(f_hz)).map_err(to_py)
    }

    /// Frequency response of a named transfer function.
    fn response(&self, name: &str, freqs: Vec<f64>) -> PyResult<Vec<C64>> {
        let x = self.curve(name)?;
        freqs.iter().map(|&f| x.eval(jw(f)).map_err(to_py)).collect()
    }

    /// Numerator and denominator coefficients, ascending powers of s.
    fn coefficients(&self, name: &str) -> PyResult<(Vec<C64>, Vec<C64>)> {
        let x = self.curve(name)?;
        Ok((x.num().coeffs().to_vec(), x.den().coeffs().to_vec()))
    }

    /// Eigenvalues of the minor loop gain at `f_hz`.
    fn gnc_eigenvalues(&self, f_hz: f64) -> PyResult<(C64, C64)> {
        self.0.gnc_eigenvalues(jw(f_hz)).map(|(a, b, _)| (a, b)).map_err(to_py)
    }

    /// Negative- to positive-sequence current ratio at `f_hz`.
    fn unbalance_ratio(&self, f_hz: f64) -> PyResult<f64> {
        self.0.unbalance_ratio(jw(f_hz)).map(|z| z.norm()).map_err(to_py)
    }

    /// Principal intrinsic oscillatory point as (frequency, damping), if any.
    #[pyo3(signature = (f_min = 1.0, f_max = 1000.0))]
    fn iop(&self, f_min: f64, f_max: f64) -> PyResult<Option<(f64, f64)>> {
        let iops = find_iop(&self.0.z_loop_p, f_min, f_max).map_err(to_py)?;
        Ok(principal_iop(&iops).map(|i| (i.f_hz, i.damping)))
    }

    /// Frequency-domain verdict: ap, gnc or gasin.
    #[pyo3(signature = (method = "ap", f_min = 0.1, f_max = 1000.0, n_points = 2000))]
    fn verdict(&self, method: &str, f_min: f64, f_max: f64, n_points: usize) -> PyResult<PyVerdict> {
        let m = match methods(method)?.as_slice() {
            [m] if *m != Method::Sim => *m,
            _ => return Err(PyValueError::new_err("expected one of ap, gnc, gasin")),
        };
        stability::verdict(&self.0, m, &grid(f_min, f_max, n_points)?).map(PyVerdict).map_err(to_py)
    }
}

#[pyclass(name = "Verdict", frozen, skip_from_py_object, module = "vscstab_py")]
#[derive(Clone)]
struct PyVerdict(StabilityVerdict);

#[pymethods]
impl PyVerdict {
    #[getter]
    fn method(&self) -> &'static str {
        self.0.method.name()
    }
    /// stable, marginal, unstable or inconclusive.
    #[getter]
    fn stable(&self) -> &'static str {
        self.0.stable.name()
    }
    #[getter]
    fn winding_p(&self) -> i64 {
        self.0.winding_p
    }
    #[getter]
    fn winding_n(&self) -> i64 {
        self.0.winding_n
    }
    #[getter]
    fn encirclements(&self) -> i64 {
        self.0.encirclements
    }
    #[getter]
    fn rhp_poles(&self) -> i64 {
        self.0.rhp_poles
    }
    #[getter]
    fn rhp_zeros(&self) -> i64 {
        self.0.rhp_zeros
    }
    #[getter]
    fn iop_hz(&self) -> Option<f64> {
        self.0.iop_hz
    }
    #[getter]
    fn damping(&self) -> Option<f64> {
        self.0.damping
    }
    #[getter]
    fn detail(&self) -> String {
        self.0.detail.clone()
    }

    fn __repr__(&self) -> String {
        format!("Verdict(method={}, stable={}, detail={:?})", self.0.method, self.0.stable.name(), self.0.detail)
    }
}

/// Recorded time-domain response.
#[pyclass(name = "Trace", frozen, module = "vscstab_py")]
struct PyTrace(SimTrace);

#[pymethods]
impl PyTrace {
    #[getter]
    fn t(&self) -> Vec<f64> {
        self.0.t.clone()
    }
    #[getter]
    fn i_d(&self) -> Vec<f64> {
        self.0.i_d.clone()
    }
    #[getter]
    fn i_q(&self) -> Vec<f64> {
        self.0.i_q.clone()
    }
    #[getter]
    fn theta_pll(&self) -> Vec<f64> {
        self.0.theta_pll.clone()
    }
    #[getter]
    fn u_g_mag(&self) -> Vec<f64> {
        self.0.u_g_mag.clone()
    }
    #[getter]
    fn diverged_at(&self) -> Option<f64> {
        self.0.diverged_at
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    /// (kind, sigma): damped, sustained or growing with the envelope growth rate.
    #[pyo3(signature = (window = 0.05))]
    fn classify(&self, window: f64) -> PyResult<(String, f64)> {
        let c = classify_trace(&self.0, window).map_err(to_py)?;
        Ok((format!("{:?}", c.kind).to_lowercase(), c.sigma))
    }

    /// Sequence content of the post-perturbation oscillation.
    #[pyo3(signature = (window = 0.5))]
    fn spectrum(&self, window: f64) -> PyResult<PySpectrum> {
        sequence_spectrum(&self.0, window).map(PySpectrum::from).map_err(to_py)
    }
}

#[pyclass(name = "Spectrum", frozen, get_all, module = "vscstab_py")]
struct PySpectrum {
    osc_freq: f64,
    i_p_mag: f64,
    i_n_mag: f64,
    f_u: f64,
    leakage: f64,
}

impl From<vscstab::sim::SequenceSpectrum> for PySpectrum {
    fn from(s: vscstab::sim::SequenceSpectrum) -> Self {
        PySpectrum { osc_freq: s.osc_freq, i_p_mag: s.i_p_mag, i_n_mag: s.i_n_mag, f_u: s.f_u, leakage: s.leakage }
    }
}

#[pymethods]
impl PySpectrum {
    fn __repr__(&self) -> String {
        format!("Spectrum(osc_freq={:.4}, f_u={:.4}, leakage={:.3e})", self.osc_freq, self.f_u, self.leakage)
    }
}

/// Verdicts over a list of parameter values, as (value, [Verdict]) pairs.
#[pyfunction]
#[pyo3(signature = (scenario, param_name, values, method_list = "ap,gnc,gasin", f_min = 0.1, f_max = 1000.0, n_points = 2000))]
#[allow(clippy::too_many_arguments)]
fn sweep(
    py: Python<'_>,
    scenario: &PyScenario,
    param_name: &str,
    values: Vec<f64>,
    method_list: &str,
    f_min: f64,
    f_max: f64,
    n_points: usize,
) -> PyResult<Vec<(f64, Vec<PyVerdict>)>> {
    let (p, ms, g) = (param(param_name)?, methods(method_list)?, grid(f_min, f_max, n_points)?);
    let rows = py.detach(|| stability::sweep(&scenario.0, p, &values, &ms, &g)).map_err(to_py)?;
    Ok(rows.into_iter().map(|r| (r.value, r.verdicts.into_iter().map(PyVerdict).collect())).collect())
}

/// Stable/unstable boundary of a parameter inside [lo, hi].
#[pyfunction]
#[pyo3(signature = (scenario, param_name, lo, hi, rtol = 1e-4, f_min = 0.1, f_max = 1000.0, n_points = 2000))]
#[allow(clippy::too_many_arguments)]
fn critical(
    py: Python<'_>,
    scenario: &PyScenario,
    param_name: &str,
    lo: f64,
    hi: f64,
    rtol: f64,
    f_min: f64,
    f_max: f64,
    n_points: usize,
) -> PyResult<f64> {
    let (p, g) = (param(param_name)?, grid(f_min, f_max, n_points)?);
    py.detach(|| stability::critical(&scenario.0, p, lo, hi, &g, rtol)).map_err(to_py)
}

/// Nonlinear averaged response to a step perturbation.
#[pyfunction]
#[pyo3(signature = (scenario, t_end = 2.0, dt = 5e-5, perturb_time = 0.05, perturb_kind = "grid-voltage", perturb_size = 0.01))]
fn simulate(
    py: Python<'_>,
    scenario: &PyScenario,
    t_end: f64,
    dt: f64,
    perturb_time: f64,
    perturb_kind: &str,
    perturb_size: f64,
) -> PyResult<PyTrace> {
    let kind = PerturbKind::parse(perturb_kind)
        .ok_or_else(|| PyValueError::new_err(format!("unknown perturbation `{perturb_kind}`")))?;
    let cfg = SimConfig { t_end, dt, perturb_time, perturb_kind: kind, perturb_size, ..SimConfig::default() };
    let p = scenario.0.params;
    py.detach(|| {
        let op = p.operating_point()?;
        run_sim(&p, &op, &cfg)
    })
    .map(PyTrace)
    .map_err(to_py)
}

#[pymodule]
pub fn vscstab_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyScenario>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyVerdict>()?;
    m.add_class::<PyTrace>()?;
    m.add_class::<PySpectrum>()?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(critical, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
