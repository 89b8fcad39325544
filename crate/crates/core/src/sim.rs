//! Averaged nonlinear time-domain model of the grid-tied converter.
//!
//! States: the circuit current in the stationary frame, the complex current-PI
//! integrator and the PLL angle and integrator. Measurements are rotated into
//! the PLL frame by `e^{−jθ}` and the voltage command back by `e^{jθ}`.

use std::f64::consts::PI;
use std::ops::{Add, Mul};

use crate::error::{Error, Result};
use crate::model::{OperatingPoint, SystemParams};
use crate::stability::{Method, Stability, StabilityVerdict};
use crate::tf::C64;

/// Trip level for the current magnitude.
pub const DIVERGENCE_LIMIT: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PerturbKind {
    GridVoltage,
    CurrentRef,
}

impl PerturbKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "grid-voltage" | "grid_voltage" => Some(PerturbKind::GridVoltage),
            "current-ref" | "current_ref" => Some(PerturbKind::CurrentRef),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimConfig {
    pub dt: f64,
    pub t_end: f64,
    pub perturb_time: f64,
    pub perturb_kind: PerturbKind,
    /// Relative step size; 0.01 is a 1 % step.
    pub perturb_size: f64,
    pub record_decimation: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: 5e-5,
            t_end: 2.0,
            perturb_time: 0.05,
            perturb_kind: PerturbKind::GridVoltage,
            perturb_size: 0.01,
            record_decimation: 4,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt <= 1e-4) {
            return Err(Error::Parameter { name: "dt", msg: format!("need 0 < dt <= 1e-4 s, got {}", self.dt) });
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(Error::Parameter { name: "t_end", msg: format!("must be positive, got {}", self.t_end) });
        }
        if !(self.perturb_time >= 0.0 && self.perturb_time < self.t_end) {
            return Err(Error::Parameter {
                name: "perturb_time",
                msg: format!("need 0 <= perturb_time < t_end, got {}", self.perturb_time),
            });
        }
        if !self.perturb_size.is_finite() {
            return Err(Error::Parameter { name: "perturb_size", msg: "must be finite".into() });
        }
        if self.record_decimation == 0 {
            return Err(Error::Parameter { name: "record_decimation", msg: "must be at least 1".into() });
        }
        Ok(())
    }
}

/// Decimated simulation record. `theta_pll` is the PLL angle relative to the
/// synchronous reference `ω_s·t`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SimTrace {
    pub t: Vec<f64>,
    pub i_d: Vec<f64>,
    pub i_q: Vec<f64>,
    pub theta_pll: Vec<f64>,
    pub u_g_mag: Vec<f64>,
    pub x_cc: Vec<C64>,
    pub z_pll: Vec<f64>,
    pub omega_s: f64,
    pub perturb_time: f64,
    /// Time at which `|i|` exceeded the trip level or a state became non-finite.
    pub diverged_at: Option<f64>,
}

impl SimTrace {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    fn sample_dt(&self) -> f64 {
        if self.t.len() < 2 {
            0.0
        } else {
            (self.t[self.t.len() - 1] - self.t[0]) / (self.t.len() - 1) as f64
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct State {
    i: C64,
    x: C64,
    theta: f64,
    z: f64,
}

impl Add for State {
    type Output = State;
    fn add(self, o: State) -> State {
        State { i: self.i + o.i, x: self.x + o.x, theta: self.theta + o.theta, z: self.z + o.z }
    }
}

impl Mul<f64> for State {
    type Output = State;
    fn mul(self, k: f64) -> State {
        State { i: self.i * k, x: self.x * k, theta: self.theta * k, z: self.z * k }
    }
}

impl State {
    fn is_finite(&self) -> bool {
        self.i.is_finite() && self.x.is_finite() && self.theta.is_finite() && self.z.is_finite()
    }
}

struct Plant {
    r_sigma: f64,
    l_sigma: f64,
    r_ts: f64,
    l_ts: f64,
    l_f: f64,
    kp_cc: f64,
    ki_cc: f64,
    kp_pll: f64,
    ki_pll: f64,
    u_nom: f64,
    omega_s: f64,
}

struct Inputs {
    u_s: f64,
    i_ref: C64,
}

impl Plant {
    fn new(p: &SystemParams) -> Self {
        let w = p.omega_s();
        Plant {
            r_sigma: p.circuit.r_sigma(),
            l_sigma: p.circuit.l_sigma() / w,
            r_ts: p.circuit.r_ts(),
            l_ts: p.circuit.l_ts() / w,
            l_f: p.circuit.l_filter / w,
            kp_cc: p.ctrl.kp_cc,
            ki_cc: p.ctrl.ki_cc,
            kp_pll: p.ctrl.kp_pll,
            ki_pll: p.ctrl.ki_pll,
            u_nom: p.ctrl.u_s_mag,
            omega_s: w,
        }
    }

    /// Derivative and PCC voltage.
    fn eval(&self, t: f64, s: &State, inp: &Inputs) -> (State, C64) {
        let rot = C64::from_polar(1.0, s.theta);
        let i_pll = s.i * rot.conj();
        let err = inp.i_ref - i_pll;
        let u_c = self.kp_cc * self.l_f * err + s.x;
        let u_s = C64::from_polar(inp.u_s, self.omega_s * t);
        let di = (u_c * rot - self.r_sigma * s.i - u_s) / self.l_sigma;
        let u_g = u_s + self.r_ts * s.i + self.l_ts * di;
        let e = (u_g * rot.conj()).im / self.u_nom;
        let d = State {
            i: di,
            x: self.ki_cc * self.l_f * err,
            theta: self.omega_s + self.kp_pll * e + s.z,
            z: self.ki_pll * e,
        };
        (d, u_g)
    }
}

fn initial_state(p: &SystemParams, op: &OperatingPoint) -> State {
    let delta = op.delta_pll0;
    let i0 = op.i_c0;
    State {
        i: i0 * C64::from_polar(1.0, delta),
        x: op.u_s0_pll + C64::new(p.circuit.r_sigma(), p.circuit.l_sigma()) * i0,
        theta: delta,
        z: 0.0,
    }
}

/// Fixed-step RK4 integration from the operating point. Returns the trace up
/// to the divergence trip if one occurs.
pub fn simulate(params: &SystemParams, op: &OperatingPoint, cfg: &SimConfig) -> Result<SimTrace> {
    params.validate()?;
    cfg.validate()?;
    let plant = Plant::new(params);
    let mut st = initial_state(params, op);
    let steps = (cfg.t_end / cfg.dt).round() as usize;
    let mut trace = SimTrace { omega_s: plant.omega_s, perturb_time: cfg.perturb_time, ..SimTrace::default() };
    let inputs = |t: f64| {
        let on = t >= cfg.perturb_time;
        let k = if on { 1.0 + cfg.perturb_size } else { 1.0 };
        match cfg.perturb_kind {
            PerturbKind::GridVoltage => Inputs { u_s: params.ctrl.u_s_mag * k, i_ref: params.i_ref },
            PerturbKind::CurrentRef => Inputs { u_s: params.ctrl.u_s_mag, i_ref: params.i_ref * k },
        }
    };
    let record = |trace: &mut SimTrace, t: f64, st: &State| {
        let (_, u_g) = plant.eval(t, st, &inputs(t));
        let i_pll = st.i * C64::from_polar(1.0, -st.theta);
        trace.t.push(t);
        trace.i_d.push(i_pll.re);
        trace.i_q.push(i_pll.im);
        trace.theta_pll.push(st.theta - plant.omega_s * t);
        trace.u_g_mag.push(u_g.norm());
        trace.x_cc.push(st.x);
        trace.z_pll.push(st.z);
    };
    record(&mut trace, 0.0, &st);
    let h = cfg.dt;
    for k in 0..steps {
        let t = k as f64 * h;
        // the step input is sampled once per step so it lands on a grid point
        let inp = inputs(t + 0.5 * h * 1e-9);
        let (k1, _) = plant.eval(t, &st, &inp);
        let (k2, _) = plant.eval(t + 0.5 * h, &(st + k1 * (0.5 * h)), &inp);
        let (k3, _) = plant.eval(t + 0.5 * h, &(st + k2 * (0.5 * h)), &inp);
        let (k4, _) = plant.eval(t + h, &(st + k3 * h), &inp);
        st = st + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        let t_next = (k + 1) as f64 * h;
        if !st.is_finite() || st.i.norm() > DIVERGENCE_LIMIT {
            trace.diverged_at = Some(t_next);
            break;
        }
        if (k + 1) % cfg.record_decimation == 0 {
            record(&mut trace, t_next, &st);
        }
    }
    Ok(trace)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TraceKind {
    Damped,
    Sustained,
    Growing,
}

impl TraceKind {
    pub fn stability(&self) -> Stability {
        match self {
            TraceKind::Damped => Stability::Stable,
            TraceKind::Sustained => Stability::Marginal,
            TraceKind::Growing => Stability::Unstable,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceClass {
    pub kind: TraceKind,
    /// Fitted envelope growth rate (1/s); NaN when too few windows survive.
    pub sigma: f64,
    /// No oscillation above 1e-6 pu was found.
    pub quiet: bool,
}

pub const GROWTH_TOL: f64 = 0.5;
/// Shortest window used when refitting a fast-growing response.
const MIN_WINDOW: f64 = 0.01;

/// RMS of `y` about its least-squares line.
fn detrended_rms(t: &[f64], y: &[f64]) -> f64 {
    let n = t.len() as f64;
    let tm = t.iter().sum::<f64>() / n;
    let ym = y.iter().sum::<f64>() / n;
    let (mut sty, mut stt) = (0.0, 0.0);
    for (a, b) in t.iter().zip(y) {
        sty += (a - tm) * (b - ym);
        stt += (a - tm) * (a - tm);
    }
    let slope = if stt > 0.0 { sty / stt } else { 0.0 };
    let ss: f64 = t.iter().zip(y).map(|(a, b)| (b - ym - slope * (a - tm)).powi(2)).sum();
    (ss / n).sqrt()
}

fn line_fit(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let xm = x.iter().sum::<f64>() / n;
    let ym = y.iter().sum::<f64>() / n;
    let num: f64 = x.iter().zip(y).map(|(a, b)| (a - xm) * (b - ym)).sum();
    let den: f64 = x.iter().map(|a| (a - xm).powi(2)).sum();
    num / den
}

/// Envelope growth rate of the post-perturbation oscillation in `i_d`, from
/// the detrended RMS of consecutive windows of length `window` seconds.
pub fn classify_trace(trace: &SimTrace, window: f64) -> Result<TraceClass> {
    classify_trace_tol(trace, window, GROWTH_TOL)
}

pub fn classify_trace_tol(trace: &SimTrace, window: f64, tol: f64) -> Result<TraceClass> {
    let dt = trace.sample_dt();
    if !(window > 0.0) || dt <= 0.0 {
        return Err(Error::Parameter { name: "window", msg: "window and trace must be non-empty".into() });
    }
    let per = (window / dt).round() as usize;
    let start = trace.t.iter().position(|&t| t > trace.perturb_time).unwrap_or(trace.t.len());
    let n_win = (trace.t.len() - start) / per.max(1);
    if trace.diverged_at.is_none() && n_win < 3 {
        return Err(Error::Parameter {
            name: "window",
            msg: format!("trace holds {n_win} windows after the perturbation, need 3"),
        });
    }
    // the first window carries the non-oscillatory step response
    let skip = usize::from(n_win >= 4);
    let rms: Vec<(f64, f64)> = (skip..n_win)
        .map(|w| {
            let a = start + w * per;
            (trace.t[a + per / 2], detrended_rms(&trace.t[a..a + per], &trace.i_d[a..a + per]))
        })
        .collect();
    // only the linear part of the response and windows above the numerical floor enter the fit
    let nonlinear = rms.iter().position(|&(_, r)| r > LINEAR_LIMIT);
    let linear = &rms[..nonlinear.unwrap_or(rms.len())];
    let peak = linear.iter().map(|w| w.1).fold(0.0, f64::max);
    let (centres, logs): (Vec<f64>, Vec<f64>) =
        linear.iter().filter(|w| w.1 > 1e-4 * peak).map(|&(t, r)| (t, r.ln())).unzip();
    let sigma = if centres.len() >= 2 { line_fit(&centres, &logs) } else { f64::NAN };
    let growing = |s: f64| s > tol || s.is_nan();
    let left = trace.diverged_at.is_some() || nonlinear.is_some();
    if sigma.is_nan() && left && window / 2.0 >= MIN_WINDOW {
        // fast growth: refit on shorter windows
        return classify_trace_tol(trace, window / 2.0, tol);
    }
    if trace.diverged_at.is_some() || (nonlinear.is_some() && growing(sigma)) {
        return Ok(TraceClass { kind: TraceKind::Growing, sigma, quiet: false });
    }
    if peak < 1e-6 {
        return Ok(TraceClass { kind: TraceKind::Damped, sigma, quiet: true });
    }
    let kind = if sigma < -tol {
        TraceKind::Damped
    } else if sigma > tol {
        TraceKind::Growing
    } else {
        TraceKind::Sustained
    };
    Ok(TraceClass { kind, sigma, quiet: false })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SequenceSpectrum {
    pub osc_freq: f64,
    pub i_p_mag: f64,
    pub i_n_mag: f64,
    pub f_u: f64,
    /// Side-bin energy relative to the two main bins.
    pub leakage: f64,
    /// Analysis window actually used, seconds.
    pub t_start: f64,
    pub t_stop: f64,
}

/// Deviation level beyond which a growing trace is no longer treated as linear.
const LINEAR_LIMIT: f64 = 0.1;
const MAX_LEAKAGE: f64 = 0.2;
/// Time allowed for the non-oscillatory step response before spectra are taken.
const SETTLE: f64 = 0.05;

fn dft_at(t: &[f64], y: &[C64], f: f64) -> C64 {
    let n = y.len() as f64;
    t.iter().zip(y).map(|(&tk, &yk)| yk * C64::from_polar(1.0, -2.0 * PI * f * tk)).sum::<C64>() / n
}

fn hann_peak(t: &[f64], y: &[f64], f_lo: f64, f_hi: f64) -> f64 {
    let n = y.len();
    let mean = y.iter().sum::<f64>() / n as f64;
    let w: Vec<C64> = y
        .iter()
        .enumerate()
        .map(|(k, v)| C64::new((v - mean) * (0.5 - 0.5 * (2.0 * PI * k as f64 / (n - 1) as f64).cos()), 0.0))
        .collect();
    let span = t[n - 1] - t[0];
    let df = 0.25 / span;
    let mut best = (f_lo, 0.0);
    let mut f = f_lo;
    while f <= f_hi {
        let a = dft_at(t, &w, f).norm();
        if a > best.1 {
            best = (f, a);
        }
        f += df;
    }
    // golden-section polish within one coarse step
    let (mut a, mut b) = (best.0 - df, best.0 + df);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..40 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if dft_at(t, &w, c).norm() > dft_at(t, &w, d).norm() {
            b = d;
        } else {
            a = c;
        }
    }
    0.5 * (a + b)
}

/// Positive- and negative-sequence oscillation currents at `f₁ ± f_osc` in
/// the stationary frame, taken over an integer number of oscillation periods
/// at most `window` long, starting shortly after the perturbation. For growing
/// traces the window ends before the deviation leaves the linear range.
pub fn sequence_spectrum(trace: &SimTrace, window: f64) -> Result<SequenceSpectrum> {
    let dt = trace.sample_dt();
    if !(window > 0.0) || dt <= 0.0 {
        return Err(Error::Parameter { name: "window", msg: "window and trace must be non-empty".into() });
    }
    let start = trace.t.iter().position(|&t| t > trace.perturb_time).unwrap_or(trace.t.len());
    let n_all = trace.t.len();
    if n_all - start < 16 {
        return Err(Error::WindowQuality("no samples after the perturbation".into()));
    }
    let pre = start.saturating_sub(1);
    let reference = (trace.i_d[pre], trace.i_q[pre]);
    let mut stop = n_all;
    for k in start..n_all {
        let dev = ((trace.i_d[k] - reference.0).powi(2) + (trace.i_q[k] - reference.1).powi(2)).sqrt();
        if dev > LINEAR_LIMIT {
            stop = k;
            break;
        }
    }
    let settle = (SETTLE / dt).round() as usize;
    let lo = (start + settle).min(stop);
    let stop = stop.min(lo + (window / dt).round() as usize);
    if stop - lo < 16 {
        return Err(Error::WindowQuality("linear part of the trace is too short".into()));
    }
    let f_nyq = 0.5 / dt;
    let f_osc = hann_peak(&trace.t[lo..stop], &trace.i_d[lo..stop], 2.0, (500.0f64).min(0.8 * f_nyq));
    let periods = ((stop - lo) as f64 * dt * f_osc).floor();
    if periods < 2.0 {
        return Err(Error::WindowQuality(format!("window holds {periods} periods of {f_osc:.2} Hz")));
    }
    let n = ((periods / f_osc) / dt).round() as usize;
    let a = stop - n;
    let t = &trace.t[a..stop];
    // dq deviation, envelope-compensated, then rotated to the stationary frame
    let dev: Vec<C64> = (a..stop).map(|k| C64::new(trace.i_d[k], trace.i_q[k])).collect();
    let m = dev.iter().sum::<C64>() / n as f64;
    let seg_rms = |v: &[C64]| (v.iter().map(|z| (z - m).norm_sqr()).sum::<f64>() / v.len() as f64).sqrt();
    let half = n / 2;
    let (r1, r2) = (seg_rms(&dev[..half]), seg_rms(&dev[half..]));
    let sigma = if r1 > 0.0 && r2 > 0.0 { (r2 / r1).ln() / (t[half + (n - half) / 2] - t[half / 2]) } else { 0.0 };
    let f1 = trace.omega_s / (2.0 * PI);
    let y: Vec<C64> = (0..n)
        .map(|k| {
            let tk = t[k];
            let env = (-sigma * (tk - t[0])).exp();
            (dev[k] - m) * env * C64::from_polar(1.0, trace.omega_s * tk + trace.theta_pll[a + k])
        })
        .collect();
    let i_p = dft_at(t, &y, f1 + f_osc);
    let i_n = dft_at(t, &y, f1 - f_osc);
    let bin = 1.0 / (n as f64 * dt);
    let side: f64 = [f1 + f_osc - bin, f1 + f_osc + bin, f1 - f_osc - bin, f1 - f_osc + bin]
        .iter()
        .map(|&f| dft_at(t, &y, f).norm_sqr())
        .sum();
    let main = i_p.norm_sqr() + i_n.norm_sqr();
    if main < 1e-24 {
        return Err(Error::WindowQuality("no oscillation in the window".into()));
    }
    let leakage = side / main;
    if leakage > MAX_LEAKAGE {
        return Err(Error::WindowQuality(format!("side-bin energy {:.1}% of the main bins", 100.0 * leakage)));
    }
    Ok(SequenceSpectrum {
        osc_freq: f_osc,
        i_p_mag: i_p.norm(),
        i_n_mag: i_n.norm(),
        f_u: i_n.norm() / i_p.norm(),
        leakage,
        t_start: t[0],
        t_stop: t[n - 1],
    })
}

/// Classification of a simulated step response as a verdict. The reported
/// frequency is the dq-frame oscillation frequency taken over
/// `spectrum_window`.
pub fn sim_verdict(
    params: &SystemParams,
    cfg: &SimConfig,
    window: f64,
    spectrum_window: f64,
) -> Result<StabilityVerdict> {
    let op = params.operating_point()?;
    let trace = simulate(params, &op, cfg)?;
    let class = classify_trace(&trace, window)?;
    let spec = sequence_spectrum(&trace, spectrum_window).ok();
    let mut detail = format!("sigma={:.4}/s", class.sigma);
    if let Some(t) = trace.diverged_at {
        detail.push_str(&format!(" diverged at {t:.4} s"));
    }
    if class.quiet {
        detail.push_str(" quiet");
    }
    Ok(StabilityVerdict {
        method: Method::Sim,
        stable: class.kind.stability(),
        winding_p: 0,
        winding_n: 0,
        encirclements: 0,
        rhp_poles: 0,
        rhp_zeros: 0,
        iop_hz: spec.map(|s| s.osc_freq),
        damping: None,
        detail,
    })
}
