//! Strategies and helpers shared by the randomized suites.
#![allow(dead_code)]

use std::f64::consts::PI;

use proptest::prelude::*;
use vscstab::model::{design_gains, BaseQuantities, CircuitParams, SystemParams};
use vscstab::sequence::SequenceModel;
use vscstab::tf::{CPoly, CRational, C64};

pub fn cplx() -> impl Strategy<Value = C64> {
    (-3.0..3.0f64, -3.0..3.0f64).prop_map(|(a, b)| C64::new(a, b))
}

pub fn poly(max_deg: usize) -> impl Strategy<Value = CPoly> {
    prop::collection::vec(cplx(), 1..=max_deg + 1).prop_map(CPoly::new)
}

pub fn rational() -> impl Strategy<Value = CRational> {
    (poly(4), poly(4))
        .prop_filter("nonzero denominator", |(_, d)| !d.is_zero())
        .prop_map(|(n, d)| CRational::new(n, d).unwrap())
}

pub fn rel(a: C64, b: C64) -> f64 {
    (a - b).norm() / a.norm().max(b.norm()).max(1e-300)
}

pub fn poly_close(a: &CPoly, b: &CPoly, tol: f64) -> bool {
    let n = a.coeffs().len().max(b.coeffs().len());
    let scale = a.norm_inf().max(b.norm_inf()).max(1e-300);
    (0..n).all(|k| {
        let x = a.coeffs().get(k).copied().unwrap_or_default();
        let y = b.coeffs().get(k).copied().unwrap_or_default();
        (x - y).norm() <= tol * scale
    })
}

/// Reference circuit with random grid strength, loading, damping and controller targets.
pub fn system() -> impl Strategy<Value = SystemParams> {
    (1.8..10.0f64, 100.0..400.0f64, 0.5..80.0f64, 0.1..0.6f64, 0.0..0.05f64).prop_map(|(scr, cc, pll, i, r)| {
        let mut circuit = CircuitParams::reference(scr);
        circuit.r_s = r;
        let ctrl = design_gains(cc, pll, 0.707, &circuit, 1.0).unwrap();
        SystemParams { base: BaseQuantities::default(), circuit, ctrl, i_ref: C64::new(i, 0.0) }
    })
}

pub fn jw(f_hz: f64) -> C64 {
    C64::new(0.0, 2.0 * PI * f_hz)
}

/// Log-spaced frequencies over 0.1 Hz to 1 kHz.
pub fn log_grid(n: usize) -> Vec<f64> {
    (0..n).map(|k| 10f64.powf(-1.0 + 4.0 * k as f64 / (n - 1) as f64)).collect()
}

/// Maximum relative gap between the rational loop impedance and its pointwise
/// coupling form over `n` log-spaced frequencies, with the number of points
/// where both could be evaluated.
pub fn ratio_form_gap(m: &SequenceModel, n: usize) -> (f64, usize) {
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for f in log_grid(n) {
        let s = jw(f);
        let (Ok(a), Ok(b)) = (m.z_loop_p.eval(s), m.z_loop_p_pointwise(s)) else { continue };
        worst = worst.max(rel(a, b));
        checked += 1;
    }
    (worst, checked)
}

/// Largest |r| and the largest relative gap between z_loop_p and H_i + Z_Σ
/// over 1 Hz to 1 kHz after scaling the PLL gains by `eps`.
pub fn decoupling_gap(p: &SystemParams, eps: f64) -> (f64, f64) {
    let mut q = *p;
    q.ctrl.kp_pll *= eps;
    q.ctrl.ki_pll *= eps;
    let m = SequenceModel::from_params(&q).unwrap();
    let direct = &m.h_i + &m.z_sigma;
    let (mut r_max, mut gap): (f64, f64) = (0.0, 0.0);
    for f in log_grid(40).into_iter().filter(|&f| f >= 1.0) {
        let s = jw(f);
        r_max = r_max.max(m.r.eval(s).unwrap().norm());
        gap = gap.max(rel(m.z_loop_p.eval(s).unwrap(), direct.eval(s).unwrap()));
    }
    (r_max, gap)
}
