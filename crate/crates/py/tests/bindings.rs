//! The module driven from an embedded interpreter.

use std::ffi::CString;

use pyo3::prelude::*;
use pyo3::types::{PyDict, PyModule};

fn run(code: &str) -> PyResult<()> {
    Python::initialize();
    Python::attach(|py| {
        let m = PyModule::new(py, "vscstab_py")?;
        vscstab_py::vscstab_py(&m)?;
        let globals = PyDict::new(py);
        globals.set_item("vs", m)?;
        py.run(&CString::new(code).unwrap(), Some(&globals), None)
    })
}

#[test]
fn verdicts_follow_the_pll_bandwidth() {
    run(r#"
for bw, want in [(5.0, "stable"), (50.0, "unstable")]:
    m = vs.Scenario(3.0, 200.0, bw).model()
    for method in ["ap", "gnc", "gasin"]:
        v = m.verdict(method)
        assert v.stable == want, (bw, method, v)
"#)
    .unwrap();
}

#[test]
fn model_curves_are_mirrored_and_iop_exists() {
    run(r#"
m = vs.Scenario().model()
a = m.eval("z_loop_n", 37.0)
b = m.eval("z_loop_p", -37.0)
assert abs(a - b.conjugate()) <= 1e-12 * abs(a)
f, d = m.iop()
assert 50.0 < f < 90.0 and d > 0.0
l1, l2 = m.gnc_eigenvalues(f)
assert isinstance(l1, complex)
assert len(m.response("h_i", [1.0, 10.0, 100.0])) == 3
"#)
    .unwrap();
}

#[test]
fn sweep_critical_and_simulation() {
    run(r#"
s = vs.Scenario()
rows = vs.sweep(s, "pll_bw", [5.0, 50.0], "ap")
assert [r[1][0].stable for r in rows] == ["stable", "unstable"]
c = vs.critical(s, "pll_bw", 2.0, 80.0, rtol=1e-3)
assert 13.1 < c < 13.4, c
tr = vs.simulate(s.with_param("pll_bw", 30.0), t_end=1.0)
kind, sigma = tr.classify()
assert kind == "growing" and sigma > 0.5
assert tr.spectrum().f_u > 0.3
"#)
    .unwrap();
}

#[test]
fn errors_map_to_python_exceptions() {
    run(r#"
try:
    vs.Scenario(-1.0, 200.0, 13.0)
    raise AssertionError("negative scr accepted")
except ValueError:
    pass
try:
    vs.Scenario().with_param("bogus", 1.0)
    raise AssertionError("unknown parameter accepted")
except ValueError:
    pass
try:
    vs.Scenario().model().verdict("sim")
    raise AssertionError("sim accepted as a frequency-domain method")
except ValueError:
    pass
"#)
    .unwrap();
}
