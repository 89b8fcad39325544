//! Frequency loci, winding numbers and stability verdicts.
//!
//! Verdicts close the Nyquist contour: a small right-hand indentation around
//! the origin, the positive imaginary axis up to `2π·f_max`, a large
//! right-half-plane arc and the negative imaginary axis. With `W` the
//! counterclockwise winding of the loop function about its critical point and
//! `P` its right-half-plane pole count (the clockwise winding of its
//! denominator along the same contour), the closed loop has `Z = P − W`
//! right-half-plane zeros.

use std::f64::consts::PI;
use std::fmt;

use crate::error::{Error, Result};
use crate::model::{design_gains, SystemParams};
use crate::sequence::{gasin_loop, SequenceModel};
use crate::tf::{CPoly, CRational, C64};

const ONE: C64 = C64::new(1.0, 0.0);

/// Frequency grid and classification settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSettings {
    pub f_min: f64,
    pub f_max: f64,
    /// Base points per half axis, logarithmically spaced.
    pub n_points: usize,
    pub max_depth: u32,
    /// `|damping| < marginal_eps` at the IOP classifies as marginal.
    pub marginal_eps: f64,
}

impl Default for GridSettings {
    fn default() -> Self {
        GridSettings { f_min: 0.1, f_max: 1000.0, n_points: 2000, max_depth: 20, marginal_eps: 1e-3 }
    }
}

impl GridSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.f_min > 0.0 && self.f_min < self.f_max && self.f_max.is_finite()) {
            return Err(Error::Parameter {
                name: "fmin",
                msg: format!("need 0 < fmin < fmax, got {} and {}", self.f_min, self.f_max),
            });
        }
        if self.n_points < 16 {
            return Err(Error::Parameter { name: "npoints", msg: format!("need at least 16, got {}", self.n_points) });
        }
        if !(self.marginal_eps >= 0.0) {
            return Err(Error::Parameter { name: "marginal_eps", msg: "must be >= 0".into() });
        }
        Ok(())
    }
}

/// Angle step that triggers refinement; the hard limit is twice this.
const REFINE_STEP: f64 = PI / 4.0;
const MAX_STEP: f64 = PI / 2.0;

fn wrap(a: f64) -> f64 {
    let mut x = a % (2.0 * PI);
    if x > PI {
        x -= 2.0 * PI;
    } else if x <= -PI {
        x += 2.0 * PI;
    }
    x
}

fn step_angle(a: C64, b: C64, about: C64) -> f64 {
    wrap((b - about).arg() - (a - about).arg())
}

/// Sampled frequency response along the positive imaginary axis.
#[derive(Clone, Debug, PartialEq)]
pub struct Locus {
    pub freqs: Vec<f64>,
    pub values: Vec<C64>,
    pub label: String,
    /// Grid frequencies skipped because they hit a pole.
    pub skipped: Vec<f64>,
}

fn log_grid(f_min: f64, f_max: f64, n: usize) -> Vec<f64> {
    let (a, b) = (f_min.ln(), f_max.ln());
    (0..n).map(|k| (a + (b - a) * k as f64 / (n - 1) as f64).exp()).collect()
}

/// Samples `f(jω)` on a log grid and bisects wherever the angle about `about`
/// jumps by `π/4` or more, or `Im f` changes sign, up to `max_depth` levels.
pub fn sample_fn<F>(f: F, label: &str, about: C64, grid: &GridSettings) -> Result<Locus>
where
    F: Fn(C64) -> Result<C64>,
{
    grid.validate()?;
    let eval = |hz: f64| f(C64::new(0.0, 2.0 * PI * hz));
    let mut out = Locus { freqs: Vec::new(), values: Vec::new(), label: label.to_string(), skipped: Vec::new() };
    let mut prev: Option<(f64, C64)> = None;
    for hz in log_grid(grid.f_min, grid.f_max, grid.n_points) {
        let v = match eval(hz) {
            Ok(v) if v.is_finite() => v,
            Ok(_) | Err(Error::Pole(_)) => {
                out.skipped.push(hz);
                continue;
            }
            Err(e) => return Err(e),
        };
        if let Some((f0, v0)) = prev {
            refine(&eval, (f0, v0), (hz, v), about, grid.max_depth, &mut out)?;
        }
        out.freqs.push(hz);
        out.values.push(v);
        prev = Some((hz, v));
    }
    Ok(out)
}

fn refine<E>(eval: &E, a: (f64, C64), b: (f64, C64), about: C64, depth: u32, out: &mut Locus) -> Result<()>
where
    E: Fn(f64) -> Result<C64>,
{
    let needs = step_angle(a.1, b.1, about).abs() >= REFINE_STEP || (a.1.im > 0.0) != (b.1.im > 0.0);
    if !needs || depth == 0 {
        return Ok(());
    }
    let mid = (a.0 * b.0).sqrt();
    if mid <= a.0 || mid >= b.0 {
        return Ok(());
    }
    let v = match eval(mid) {
        Ok(v) if v.is_finite() => v,
        Ok(_) | Err(Error::Pole(_)) => {
            out.skipped.push(mid);
            return Ok(());
        }
        Err(e) => return Err(e),
    };
    refine(eval, a, (mid, v), about, depth - 1, out)?;
    out.freqs.push(mid);
    out.values.push(v);
    refine(eval, (mid, v), b, about, depth - 1, out)
}

pub fn sample_locus(x: &CRational, f_min: f64, f_max: f64, n: usize) -> Result<Locus> {
    let grid = GridSettings { f_min, f_max, n_points: n, ..GridSettings::default() };
    sample_fn(|s| x.eval(s), "locus", C64::new(0.0, 0.0), &grid)
}

/// Signed number of times the curve crosses the ray `about + t·(−1)`, `t > 0`
/// (counterclockwise positive). For a closed curve this is its winding number.
pub fn winding_number(locus: &Locus, about: C64) -> Result<i64> {
    if locus.values.is_empty() {
        return Ok(0);
    }
    let mut total = 0.0;
    for (k, w) in locus.values.windows(2).enumerate() {
        let d = step_angle(w[0], w[1], about);
        if d.abs() >= MAX_STEP {
            return Err(Error::UnreliableWinding { step: d.abs(), f_hz: locus.freqs[k] });
        }
        total += d;
    }
    let th0 = (locus.values[0] - about).arg();
    let k = |th: f64| ((th + PI) / (2.0 * PI)).floor() as i64;
    Ok(k(th0 + total) - k(th0))
}

#[derive(Clone, Copy, Debug)]
enum Segment {
    NegAxis,
    Indent,
    PosAxis,
    Arc,
}

fn contour_point(seg: Segment, t: f64, grid: &GridSettings) -> C64 {
    let eps = 2.0 * PI * grid.f_min;
    let big = 2.0 * PI * grid.f_max;
    match seg {
        Segment::NegAxis => C64::new(0.0, -big * (eps / big).powf(t)),
        Segment::Indent => C64::from_polar(eps, -PI / 2.0 + PI * t),
        Segment::PosAxis => C64::new(0.0, eps * (big / eps).powf(t)),
        Segment::Arc => C64::from_polar(big, PI / 2.0 - PI * t),
    }
}

/// Counterclockwise winding of `g` about the origin along the closed contour.
pub fn contour_winding<G>(g: G, grid: &GridSettings) -> Result<i64>
where
    G: Fn(C64) -> Result<C64>,
{
    grid.validate()?;
    let segments = [
        (Segment::NegAxis, grid.n_points),
        (Segment::Indent, 65),
        (Segment::PosAxis, grid.n_points),
        (Segment::Arc, 257),
    ];
    let origin = C64::new(0.0, 0.0);
    let eval = |s: C64| -> Result<C64> {
        match g(s) {
            Ok(v) if v.is_finite() && v != origin => Ok(v),
            Ok(_) | Err(Error::Pole(_)) => Err(Error::Inconclusive(format!(
                "pole or zero on the contour at |s|/2π = {:.6} Hz",
                s.norm() / (2.0 * PI)
            ))),
            Err(e) => Err(e),
        }
    };
    let mut total = 0.0;
    let mut first: Option<C64> = None;
    let mut last: Option<C64> = None;
    for (seg, n) in segments {
        let mut prev: Option<(f64, C64)> = None;
        for k in 0..n {
            let t = k as f64 / (n - 1) as f64;
            let v = eval(contour_point(seg, t, grid))?;
            if let Some((t0, v0)) = prev {
                total += refined_angle(&eval, seg, (t0, v0), (t, v), grid, grid.max_depth)?;
            } else if let Some(l) = last {
                // segment joins: same point in s, values agree
                total += step_angle(l, v, origin);
            }
            if first.is_none() {
                first = Some(v);
            }
            prev = Some((t, v));
            last = Some(v);
        }
    }
    if let (Some(a), Some(b)) = (last, first) {
        total += step_angle(a, b, origin);
    }
    let w = total / (2.0 * PI);
    let r = w.round();
    if (w - r).abs() > 0.25 {
        return Err(Error::Inconclusive(format!("contour winding {w:.3} is not integral")));
    }
    Ok(r as i64)
}

fn refined_angle<E>(
    eval: &E,
    seg: Segment,
    a: (f64, C64),
    b: (f64, C64),
    grid: &GridSettings,
    depth: u32,
) -> Result<f64>
where
    E: Fn(C64) -> Result<C64>,
{
    let d = step_angle(a.1, b.1, C64::new(0.0, 0.0));
    if d.abs() < REFINE_STEP {
        return Ok(d);
    }
    if depth == 0 {
        if d.abs() >= MAX_STEP {
            let s = contour_point(seg, a.0, grid);
            return Err(Error::UnreliableWinding { step: d.abs(), f_hz: s.norm() / (2.0 * PI) });
        }
        return Ok(d);
    }
    let tm = 0.5 * (a.0 + b.0);
    let vm = eval(contour_point(seg, tm, grid))?;
    Ok(refined_angle(eval, seg, a, (tm, vm), grid, depth - 1)?
        + refined_angle(eval, seg, (tm, vm), b, grid, depth - 1)?)
}

/// Right-half-plane roots of `p` inside the truncated contour.
pub fn rhp_count(p: &CPoly, grid: &GridSettings) -> Result<i64> {
    Ok(-contour_winding(|s| Ok(p.eval(s)), grid)?)
}

/// A zero crossing of `Im f(jω)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Iop {
    pub f_hz: f64,
    /// `Re f` at the crossing.
    pub damping: f64,
    /// `Im f` increasing with frequency (series resonance).
    pub upward: bool,
}

/// All sign changes of `Im f(jω)` on `[f_min, f_max]`, bisected to 1e-6
/// relative frequency. Sign changes through a pole are discarded.
pub fn find_iop_fn<F>(f: F, f_min: f64, f_max: f64) -> Result<Vec<Iop>>
where
    F: Fn(C64) -> Result<C64>,
{
    if !(f_min > 0.0 && f_min < f_max) {
        return Err(Error::Parameter { name: "fmin", msg: "need 0 < fmin < fmax".into() });
    }
    let eval = |hz: f64| f(C64::new(0.0, 2.0 * PI * hz));
    let freqs = log_grid(f_min, f_max, 4000);
    let mut pts: Vec<(f64, C64)> = Vec::with_capacity(freqs.len());
    for hz in freqs {
        match eval(hz) {
            Ok(v) if v.is_finite() => pts.push((hz, v)),
            Ok(_) | Err(Error::Pole(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    let mut out = Vec::new();
    for w in pts.windows(2) {
        let ((fa, va), (fb, vb)) = (w[0], w[1]);
        if (va.im > 0.0) == (vb.im > 0.0) {
            continue;
        }
        let upward = vb.im > va.im;
        let (mut lo, mut hi, mut vlo) = (fa, fb, va);
        let mut vm = va;
        while (hi - lo) > 1e-7 * lo {
            let mid = 0.5 * (lo + hi);
            vm = match eval(mid) {
                Ok(v) if v.is_finite() => v,
                _ => break,
            };
            if (vm.im > 0.0) == (vlo.im > 0.0) {
                lo = mid;
                vlo = vm;
            } else {
                hi = mid;
            }
        }
        let through_pole = vm.norm() > 10.0 * va.norm().max(vb.norm());
        if through_pole {
            continue;
        }
        let root = 0.5 * (lo + hi);
        let v = eval(root).unwrap_or(vm);
        out.push(Iop { f_hz: root, damping: v.re, upward });
    }
    Ok(out)
}

pub fn find_iop(x: &CRational, f_min: f64, f_max: f64) -> Result<Vec<Iop>> {
    find_iop_fn(|s| x.eval(s), f_min, f_max)
}

/// The oscillation point used for margins: the lowest-frequency series
/// resonance.
pub fn principal_iop(iops: &[Iop]) -> Option<Iop> {
    iops.iter().copied().filter(|i| i.upward).min_by(|a, b| a.f_hz.total_cmp(&b.f_hz))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    Ap,
    Gnc,
    Gasin,
    Sim,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Ap => "AP",
            Method::Gnc => "GNC",
            Method::Gasin => "GASIN",
            Method::Sim => "SIM",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stability {
    Stable,
    Marginal,
    Unstable,
    Inconclusive,
}

impl Stability {
    pub fn name(&self) -> &'static str {
        match self {
            Stability::Stable => "stable",
            Stability::Marginal => "marginal",
            Stability::Unstable => "unstable",
            Stability::Inconclusive => "inconclusive",
        }
    }
}

impl fmt::Display for Stability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StabilityVerdict {
    pub method: Method,
    pub stable: Stability,
    /// Per-curve counts about the critical point over positive frequencies.
    pub winding_p: i64,
    pub winding_n: i64,
    /// Closed-contour winding `W`, open-loop RHP poles `P`, closed-loop `Z = P − W`.
    pub encirclements: i64,
    pub rhp_poles: i64,
    pub rhp_zeros: i64,
    pub iop_hz: Option<f64>,
    pub damping: Option<f64>,
    pub detail: String,
}

fn classify(z: i64, damping: Option<f64>, eps: f64) -> Stability {
    if z < 0 {
        return Stability::Inconclusive;
    }
    if damping.is_some_and(|d| d.abs() < eps) {
        return Stability::Marginal;
    }
    if z == 0 {
        Stability::Stable
    } else {
        Stability::Unstable
    }
}

fn inconclusive(method: Method, e: &Error) -> StabilityVerdict {
    StabilityVerdict {
        method,
        stable: Stability::Inconclusive,
        winding_p: 0,
        winding_n: 0,
        encirclements: 0,
        rhp_poles: 0,
        rhp_zeros: 0,
        iop_hz: None,
        damping: None,
        detail: e.to_string(),
    }
}

fn downgrade(method: Method, r: Result<StabilityVerdict>) -> Result<StabilityVerdict> {
    match r {
        Err(e @ (Error::UnreliableWinding { .. } | Error::Inconclusive(_))) => Ok(inconclusive(method, &e)),
        other => other,
    }
}

/// Verdict from a SISO loop impedance `x` with the origin as critical point.
fn siso_verdict(method: Method, x: &CRational, x_n: &CRational, grid: &GridSettings) -> Result<StabilityVerdict> {
    let w = contour_winding(|s| x.eval(s), grid)?;
    let p = rhp_count(x.den(), grid)?;
    let z = p - w;
    let origin = C64::new(0.0, 0.0);
    let wp = winding_number(&sample_fn(|s| x.eval(s), "p", origin, grid)?, origin)?;
    let wn = winding_number(&sample_fn(|s| x_n.eval(s), "n", origin, grid)?, origin)?;
    let iop = principal_iop(&find_iop(x, grid.f_min.max(1.0).min(grid.f_max / 2.0), grid.f_max)?);
    let damping = iop.map(|i| i.damping);
    Ok(StabilityVerdict {
        method,
        stable: classify(z, damping, grid.marginal_eps),
        winding_p: wp,
        winding_n: wn,
        encirclements: w,
        rhp_poles: p,
        rhp_zeros: z,
        iop_hz: iop.map(|i| i.f_hz),
        damping,
        detail: format!("W={w} P={p} Z={z}"),
    })
}

/// Argument Principle on the augmented loop impedance.
pub fn ap_verdict(model: &SequenceModel, grid: &GridSettings) -> Result<StabilityVerdict> {
    downgrade(Method::Ap, siso_verdict(Method::Ap, &model.z_loop_p, &model.z_loop_n, grid))
}

/// Generalized Schur-complement loop of the source/converter interconnection.
pub fn gasin_verdict(model: &SequenceModel, grid: &GridSettings) -> Result<StabilityVerdict> {
    let (zp, zn) = gasin_loop(&model.gasin_input())?;
    downgrade(Method::Gasin, siso_verdict(Method::Gasin, &zp, &zn, grid))
}

/// Eigenvalue loci of the minor-loop gain over the positive frequency grid,
/// ordered by continuity.
pub fn eigen_loci(model: &SequenceModel, grid: &GridSettings) -> Result<(Locus, Locus)> {
    grid.validate()?;
    let mut l1 = Locus { freqs: Vec::new(), values: Vec::new(), label: "lambda1".into(), skipped: Vec::new() };
    let mut l2 = Locus { label: "lambda2".into(), ..l1.clone() };
    let critical = C64::new(-1.0, 0.0);
    // refine on the product so both branches are resolved about −1
    let det = sample_fn(
        |s| {
            let (a, b, _) = model.gnc_eigenvalues(s)?;
            Ok((ONE + a) * (ONE + b))
        },
        "det",
        C64::new(0.0, 0.0),
        grid,
    )?;
    let mut freqs = det.freqs.clone();
    let coarse = sample_fn(|s| Ok(model.gnc_eigenvalues(s)?.0), "l", critical, grid)?;
    freqs.extend(coarse.freqs);
    freqs.sort_by(|a, b| a.total_cmp(b));
    freqs.dedup();
    for hz in freqs {
        let s = C64::new(0.0, 2.0 * PI * hz);
        let (a, b, _) = match model.gnc_eigenvalues(s) {
            Ok(x) => x,
            Err(Error::Pole(_)) => continue,
            Err(e) => return Err(e),
        };
        let (a, b) = match (l1.values.last(), l2.values.last()) {
            (Some(&pa), Some(&pb)) if (a - pa).norm() + (b - pb).norm() > (b - pa).norm() + (a - pb).norm() => (b, a),
            _ => (a, b),
        };
        l1.freqs.push(hz);
        l1.values.push(a);
        l2.freqs.push(hz);
        l2.values.push(b);
    }
    l1.skipped = det.skipped.clone();
    l2.skipped = det.skipped;
    Ok((l1, l2))
}

/// Real-axis crossing of an eigenvalue locus closest to −1, with the
/// distance scaled to impedance units by `|H_i|`.
fn gnc_margin(model: &SequenceModel, loci: &[&Locus]) -> Option<(f64, f64)> {
    let mut best: Option<(f64, f64, f64)> = None;
    for locus in loci {
        for k in 1..locus.values.len() {
            let (va, vb) = (locus.values[k - 1], locus.values[k]);
            if (va.im > 0.0) == (vb.im > 0.0) {
                continue;
            }
            let t = va.im / (va.im - vb.im);
            let re = va.re + t * (vb.re - va.re);
            let hz = locus.freqs[k - 1] + t * (locus.freqs[k] - locus.freqs[k - 1]);
            let dist = (re + 1.0).abs();
            if best.is_none_or(|b| dist < b.2) {
                let h = model.h_i.eval(C64::new(0.0, 2.0 * PI * hz)).map(|h| h.norm()).unwrap_or(f64::NAN);
                best = Some((hz, (re + 1.0) * h, dist));
            }
        }
    }
    best.map(|(hz, d, _)| (hz, d))
}

/// Generalized Nyquist criterion on the eigenvalue loci of the minor loop.
pub fn gnc_verdict(model: &SequenceModel, grid: &GridSettings) -> Result<StabilityVerdict> {
    downgrade(Method::Gnc, gnc_inner(model, grid))
}

fn gnc_inner(model: &SequenceModel, grid: &GridSettings) -> Result<StabilityVerdict> {
    let w = contour_winding(
        |s| {
            let (a, b, _) = model.gnc_eigenvalues(s)?;
            Ok((ONE + a) * (ONE + b))
        },
        grid,
    )?;
    let rd = model.return_difference()?;
    let p = rhp_count(rd.den(), grid)?;
    let z = p - w;
    let (l1, l2) = eigen_loci(model, grid)?;
    let critical = C64::new(-1.0, 0.0);
    let wp = winding_number(&l1, critical).unwrap_or(0);
    let wn = winding_number(&l2, critical).unwrap_or(0);
    let band: Vec<Locus> = [&l1, &l2]
        .iter()
        .map(|l| {
            let keep: Vec<usize> = (0..l.freqs.len()).filter(|&k| l.freqs[k] >= grid.f_min.max(1.0)).collect();
            Locus {
                freqs: keep.iter().map(|&k| l.freqs[k]).collect(),
                values: keep.iter().map(|&k| l.values[k]).collect(),
                label: l.label.clone(),
                skipped: vec![],
            }
        })
        .collect();
    let margin = gnc_margin(model, &[&band[0], &band[1]]);
    let damping = margin.map(|m| m.1);
    Ok(StabilityVerdict {
        method: Method::Gnc,
        stable: classify(z, damping, grid.marginal_eps),
        winding_p: wp,
        winding_n: wn,
        encirclements: w,
        rhp_poles: p,
        rhp_zeros: z,
        iop_hz: margin.map(|m| m.0),
        damping,
        detail: format!("W={w} P={p} Z={z}"),
    })
}

pub fn verdict(model: &SequenceModel, method: Method, grid: &GridSettings) -> Result<StabilityVerdict> {
    match method {
        Method::Ap => ap_verdict(model, grid),
        Method::Gnc => gnc_verdict(model, grid),
        Method::Gasin => gasin_verdict(model, grid),
        Method::Sim => Err(Error::Parameter { name: "method", msg: "SIM verdicts come from the simulator".into() }),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepParam {
    PllBw,
    Scr,
    Resistance,
    CcBw,
}

impl SweepParam {
    pub fn name(&self) -> &'static str {
        match self {
            SweepParam::PllBw => "pll_bw",
            SweepParam::Scr => "scr",
            SweepParam::Resistance => "resistance",
            SweepParam::CcBw => "cc_bw",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "pll_bw" => Some(SweepParam::PllBw),
            "scr" => Some(SweepParam::Scr),
            "resistance" | "r" => Some(SweepParam::Resistance),
            "cc_bw" => Some(SweepParam::CcBw),
            _ => None,
        }
    }
}

/// Bandwidth targets the controller gains were designed for.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Design {
    pub cc_bw: f64,
    pub pll_bw: f64,
    pub pll_damping: f64,
}

/// A base system and, when the gains came from bandwidth targets, the targets.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scenario {
    pub params: SystemParams,
    pub design: Option<Design>,
}

impl Scenario {
    pub fn reference(scr: f64, cc_bw: f64, pll_bw: f64) -> Result<Self> {
        Ok(Scenario {
            params: SystemParams::reference(scr, cc_bw, pll_bw)?,
            design: Some(Design { cc_bw, pll_bw, pll_damping: 0.707 }),
        })
    }

    /// The system with one parameter changed. Bandwidth parameters re-design
    /// the corresponding gains on the base circuit; circuit parameters leave
    /// the controller untouched. `resistance` is added to the grid-side
    /// series resistance of the base circuit.
    pub fn with(&self, param: SweepParam, value: f64) -> Result<Scenario> {
        let mut p = self.params;
        let mut design = self.design;
        match param {
            SweepParam::Scr => {
                if !(value > 0.0) {
                    return Err(Error::Parameter { name: "scr", msg: format!("must be positive, got {value}") });
                }
                p.circuit.l_s = 1.0 / value;
            }
            SweepParam::Resistance => {
                if !(value >= 0.0) {
                    return Err(Error::Parameter { name: "resistance", msg: format!("must be >= 0, got {value}") });
                }
                p.circuit.r_s = self.params.circuit.r_s + value;
            }
            SweepParam::PllBw | SweepParam::CcBw => {
                let mut d = self.design.ok_or(Error::Parameter {
                    name: "pll_bw",
                    msg: "bandwidth sweeps need gains designed from bandwidths".into(),
                })?;
                if param == SweepParam::PllBw {
                    d.pll_bw = value;
                } else {
                    d.cc_bw = value;
                }
                let g = design_gains(d.cc_bw, d.pll_bw, d.pll_damping, &p.circuit, p.ctrl.u_s_mag)?;
                if param == SweepParam::PllBw {
                    p.ctrl.kp_pll = g.kp_pll;
                    p.ctrl.ki_pll = g.ki_pll;
                } else {
                    p.ctrl.kp_cc = g.kp_cc;
                    p.ctrl.ki_cc = g.ki_cc;
                }
                design = Some(d);
            }
        }
        Ok(Scenario { params: p, design })
    }

    pub fn model(&self) -> Result<SequenceModel> {
        SequenceModel::from_params(&self.params)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub param: SweepParam,
    pub value: f64,
    pub verdicts: Vec<StabilityVerdict>,
}

/// Runs the requested frequency-domain verdicts at every value. Points are
/// evaluated concurrently; rows keep the input order.
pub fn sweep(
    base: &Scenario,
    param: SweepParam,
    values: &[f64],
    methods: &[Method],
    grid: &GridSettings,
) -> Result<Vec<SweepRow>> {
    let run = |value: f64| -> Result<SweepRow> {
        let model = base.with(param, value)?.model()?;
        let verdicts = methods
            .iter()
            .filter(|m| **m != Method::Sim)
            .map(|&m| verdict(&model, m, grid))
            .collect::<Result<Vec<_>>>()?;
        Ok(SweepRow { param, value, verdicts })
    };
    let workers = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1).min(values.len().max(1));
    let mut slots: Vec<Option<Result<SweepRow>>> = (0..values.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let chunk = values.len().div_ceil(workers.max(1)).max(1);
        for (vals, out) in values.chunks(chunk).zip(slots.chunks_mut(chunk)) {
            let run = &run;
            scope.spawn(move || {
                for (v, slot) in vals.iter().zip(out.iter_mut()) {
                    *slot = Some(run(*v));
                }
            });
        }
    });
    slots.into_iter().map(|s| s.expect("every sweep slot is filled")).collect()
}

fn is_stable_ap(base: &Scenario, param: SweepParam, value: f64, grid: &GridSettings) -> Result<bool> {
    let v = ap_verdict(&base.with(param, value)?.model()?, grid)?;
    match v.rhp_zeros {
        z if v.stable == Stability::Inconclusive || z < 0 => {
            Err(Error::Inconclusive(format!("{} = {value}: {}", param.name(), v.detail)))
        }
        0 => Ok(true),
        _ => Ok(false),
    }
}

/// Stable/unstable boundary of `param` in `[lo, hi]`, bisected to `rtol`
/// relative width. The interval is first scanned for a unique transition.
pub fn critical(base: &Scenario, param: SweepParam, lo: f64, hi: f64, grid: &GridSettings, rtol: f64) -> Result<f64> {
    if !(lo < hi) {
        return Err(Error::Parameter { name: "critical", msg: format!("need lo < hi, got {lo} and {hi}") });
    }
    let n = 17;
    let pts: Vec<f64> = (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect();
    let flags = pts.iter().map(|&v| is_stable_ap(base, param, v, grid)).collect::<Result<Vec<_>>>()?;
    let transitions: Vec<usize> = (1..n).filter(|&k| flags[k] != flags[k - 1]).collect();
    if transitions.len() != 1 {
        return Err(Error::AmbiguousBoundary(transitions.iter().map(|&k| 0.5 * (pts[k - 1] + pts[k])).collect()));
    }
    let k = transitions[0];
    let (mut a, mut b) = (pts[k - 1], pts[k]);
    let fa = flags[k - 1];
    while (b - a) > rtol * 0.5 * (a + b).abs() {
        let m = 0.5 * (a + b);
        if is_stable_ap(base, param, m, grid)? == fa {
            a = m;
        } else {
            b = m;
        }
    }
    Ok(0.5 * (a + b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn locus_of(values: Vec<C64>) -> Locus {
        let n = values.len();
        Locus { freqs: (0..n).map(|k| k as f64 + 1.0).collect(), values, label: "t".into(), skipped: vec![] }
    }

    #[test]
    fn unit_circle_once() {
        let pts: Vec<C64> = (0..=64).map(|k| C64::from_polar(1.0, 2.0 * PI * k as f64 / 64.0)).collect();
        assert_eq!(winding_number(&locus_of(pts.clone()), c(0.0, 0.0)).unwrap(), 1);
        let rev: Vec<C64> = pts.into_iter().rev().collect();
        assert_eq!(winding_number(&locus_of(rev), c(0.0, 0.0)).unwrap(), -1);
    }

    #[test]
    fn point_outside_hull() {
        let pts: Vec<C64> = (0..=64).map(|k| C64::from_polar(1.0, 2.0 * PI * k as f64 / 64.0)).collect();
        assert_eq!(winding_number(&locus_of(pts), c(5.0, 0.3)).unwrap(), 0);
    }

    #[test]
    fn coarse_curve_is_rejected() {
        let pts = vec![c(1.0, 0.0), c(-1.0, 0.1), c(1.0, 0.0)];
        assert!(matches!(winding_number(&locus_of(pts), c(0.0, 0.0)), Err(Error::UnreliableWinding { .. })));
    }

    #[test]
    fn constant_locus() {
        let l = sample_locus(&CRational::constant(c(2.0, -1.0)), 1.0, 10.0, 16).unwrap();
        assert!(l.values.iter().all(|v| *v == c(2.0, -1.0)));
    }

    #[test]
    fn locus_of_s_climbs_imaginary_axis() {
        let l = sample_locus(&CRational::s(), 1.0, 10.0, 16).unwrap();
        assert!(l.values.iter().all(|v| v.re == 0.0 && v.im > 0.0));
        assert!(l.values.windows(2).all(|w| w[1].im > w[0].im));
        assert!(l.freqs.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn contour_counts_rhp_roots() {
        let grid = GridSettings { n_points: 200, ..GridSettings::default() };
        let p = CPoly::from_roots(ONE, &[c(50.0, 300.0), c(50.0, -300.0), c(-10.0, 5.0), c(2000.0, 0.0)]);
        assert_eq!(rhp_count(&p, &grid).unwrap(), 3);
        // outside the truncated contour
        let far = CPoly::from_roots(ONE, &[c(1e5, 0.0)]);
        assert_eq!(rhp_count(&far, &grid).unwrap(), 0);
    }

    #[test]
    fn inductive_impedance_has_no_iop() {
        let x = CRational::from_poly(CPoly::from_real(&[0.0, 0.3]));
        assert!(find_iop(&x, 0.1, 1000.0).unwrap().is_empty());
    }

    #[test]
    fn series_rlc_iop() {
        // R + sL + 1/(sC) resonates at 1/(2π√(LC))
        let (r, l, cap) = (0.2, 1e-3, 1e-4);
        let x = CRational::new(CPoly::from_real(&[1.0, r * cap, l * cap]), CPoly::from_real(&[0.0, cap])).unwrap();
        let iops = find_iop(&x, 1.0, 10_000.0).unwrap();
        assert_eq!(iops.len(), 1);
        let f0 = 1.0 / (2.0 * PI * (l * cap).sqrt());
        assert!((iops[0].f_hz - f0).abs() / f0 < 1e-6);
        assert!((iops[0].damping - r).abs() < 1e-9);
        assert!(iops[0].upward);
    }

    #[test]
    fn frozen_pll_iop_is_damped() {
        let s = Scenario::reference(3.0, 200.0, 0.0).unwrap();
        let m = s.model().unwrap();
        let x = &m.h_i + &m.z_sigma;
        let iops = find_iop(&x, 0.1, 1000.0).unwrap();
        assert_eq!(iops.len(), 1);
        assert!(iops[0].damping > 0.0);
    }

    #[test]
    fn reference_verdicts_at_known_bandwidths() {
        let grid = GridSettings::default();
        for (bw, expect) in [(5.0, Stability::Stable), (50.0, Stability::Unstable)] {
            let m = Scenario::reference(3.0, 200.0, bw).unwrap().model().unwrap();
            for method in [Method::Ap, Method::Gnc, Method::Gasin] {
                let v = verdict(&m, method, &grid).unwrap();
                assert_eq!(v.stable, expect, "{bw} Hz {method}: {v:?}");
            }
        }
    }

    #[test]
    fn scaling_leaves_verdict_unchanged() {
        let grid = GridSettings { n_points: 500, ..GridSettings::default() };
        let m = Scenario::reference(3.0, 200.0, 20.0).unwrap().model().unwrap();
        let x = &m.z_loop_p;
        let y = x.scale(c(7.5, 0.0));
        let wx = contour_winding(|s| x.eval(s), &grid).unwrap();
        let wy = contour_winding(|s| y.eval(s), &grid).unwrap();
        assert_eq!(wx, wy);
        let ix = principal_iop(&find_iop(x, 1.0, 1000.0).unwrap()).unwrap();
        let iy = principal_iop(&find_iop(&y, 1.0, 1000.0).unwrap()).unwrap();
        assert!((ix.f_hz - iy.f_hz).abs() < 1e-6 * ix.f_hz);
    }

    #[test]
    fn refinement_invariance() {
        let m = Scenario::reference(3.0, 200.0, 50.0).unwrap().model().unwrap();
        let g1 = GridSettings { n_points: 1000, ..GridSettings::default() };
        let g2 = GridSettings { n_points: 2000, ..GridSettings::default() };
        let a = ap_verdict(&m, &g1).unwrap();
        let b = ap_verdict(&m, &g2).unwrap();
        assert_eq!((a.winding_p, a.winding_n, a.encirclements), (b.winding_p, b.winding_n, b.encirclements));
    }

    #[test]
    fn sweep_keeps_order_and_gains() {
        let base = Scenario::reference(3.0, 200.0, 50.0).unwrap();
        let rows = sweep(&base, SweepParam::Scr, &[5.0, 3.0, 2.0], &[Method::Ap], &GridSettings::default()).unwrap();
        assert_eq!(rows.iter().map(|r| r.value).collect::<Vec<_>>(), vec![5.0, 3.0, 2.0]);
        let s = base.with(SweepParam::Scr, 2.0).unwrap();
        assert_eq!(s.params.ctrl, base.params.ctrl);
        assert!((s.params.circuit.l_s - 0.5).abs() < 1e-15);
    }

    #[test]
    fn resistance_adds_to_grid_side() {
        let base = Scenario::reference(3.0, 200.0, 50.0).unwrap();
        let s = base.with(SweepParam::Resistance, 0.02).unwrap();
        assert!((s.params.circuit.r_sigma() - 0.02).abs() < 1e-15);
    }

    #[test]
    fn explicit_gains_refuse_bandwidth_sweep() {
        let mut base = Scenario::reference(3.0, 200.0, 50.0).unwrap();
        base.design = None;
        assert!(base.with(SweepParam::PllBw, 5.0).is_err());
    }
}
