//! Time-domain simulator against the linear sequence model.

use std::f64::consts::PI;

use vscstab::model::SystemParams;
use vscstab::sequence::SequenceModel;
use vscstab::sim::{classify_trace, sequence_spectrum, simulate, SimConfig, SimTrace, TraceKind};
use vscstab::stability::{find_iop, principal_iop};
use vscstab::tf::C64;

const WINDOW: f64 = 0.05;
const SPECTRUM_WINDOW: f64 = 0.5;

fn run(pll_bw: f64, cfg: &SimConfig) -> (SystemParams, SimTrace) {
    let p = SystemParams::reference(3.0, 200.0, pll_bw).unwrap();
    let op = p.operating_point().unwrap();
    let tr = simulate(&p, &op, cfg).unwrap();
    (p, tr)
}

#[test]
fn unperturbed_run_stays_at_equilibrium() {
    let cfg = SimConfig { perturb_size: 0.0, t_end: 0.5, ..SimConfig::default() };
    let (p, tr) = run(13.0, &cfg);
    let i0 = p.i_ref;
    let drift = tr.i_d.iter().zip(&tr.i_q).map(|(d, q)| (C64::new(*d, *q) - i0).norm()).fold(0.0, f64::max);
    assert!(drift < 1e-8, "drift {drift:e}");
    assert!(tr.diverged_at.is_none());
}

#[test]
fn growth_rate_converges_in_step_size() {
    for pll in [10.0, 20.0] {
        let cfg = SimConfig { t_end: 1.0, ..SimConfig::default() };
        let (_, a) = run(pll, &cfg);
        let (_, b) = run(pll, &SimConfig { dt: cfg.dt / 2.0, record_decimation: 2 * cfg.record_decimation, ..cfg });
        let sa = classify_trace(&a, WINDOW).unwrap().sigma;
        let sb = classify_trace(&b, WINDOW).unwrap().sigma;
        assert!((sa - sb).abs() < 0.02 * sb.abs(), "pll {pll}: {sa} vs {sb}");
    }
}

/// Rightmost oscillatory closed-loop pole: the zero of z_loop_p nearest the axis.
fn dominant_pole(m: &SequenceModel) -> C64 {
    m.z_loop_p
        .num()
        .roots()
        .unwrap()
        .into_iter()
        .filter(|z| z.im > 2.0 * PI * 2.0 && z.im < 2.0 * PI * 200.0)
        .max_by(|a, b| a.re.total_cmp(&b.re))
        .unwrap()
}

#[test]
fn growth_rate_matches_linear_pole() {
    for pll in [10.0, 20.0] {
        let (p, tr) = run(pll, &SimConfig::default());
        let pole = dominant_pole(&SequenceModel::from_params(&p).unwrap());
        let sigma = classify_trace(&tr, WINDOW).unwrap().sigma;
        assert!((sigma - pole.re).abs() < 0.05 * pole.re.abs(), "pll {pll}: {sigma} vs {}", pole.re);
    }
}

#[test]
fn thirty_hertz_pll_grows() {
    let (_, tr) = run(30.0, &SimConfig::default());
    assert_eq!(classify_trace(&tr, WINDOW).unwrap().kind, TraceKind::Growing);
}

#[test]
fn five_hertz_pll_is_damped() {
    let (_, tr) = run(5.0, &SimConfig { t_end: 1.0, ..SimConfig::default() });
    assert_eq!(classify_trace(&tr, WINDOW).unwrap().kind, TraceKind::Damped);
}

#[test]
fn oscillation_frequency_matches_iop() {
    let (p, tr) = run(13.2, &SimConfig::default());
    let spec = sequence_spectrum(&tr, SPECTRUM_WINDOW).unwrap();
    let m = SequenceModel::from_params(&p).unwrap();
    let iop = principal_iop(&find_iop(&m.z_loop_p, 1.0, 1000.0).unwrap()).unwrap();
    assert!((spec.osc_freq - iop.f_hz).abs() < 0.02 * iop.f_hz, "{} vs {}", spec.osc_freq, iop.f_hz);
}

#[test]
fn unbalance_matches_linear_ratio_and_rises_with_bandwidth() {
    let mut f_u = Vec::new();
    for pll in [13.2, 30.0] {
        let (p, tr) = run(pll, &SimConfig::default());
        let spec = sequence_spectrum(&tr, SPECTRUM_WINDOW).unwrap();
        let m = SequenceModel::from_params(&p).unwrap();
        let linear = m.unbalance_ratio(dominant_pole(&m)).unwrap().norm();
        assert!((spec.f_u - linear).abs() < 0.05 * linear, "pll {pll}: {} vs {linear}", spec.f_u);
        f_u.push(spec.f_u);
    }
    assert!(f_u[1] > f_u[0], "{f_u:?}");
}
