//! Polynomials and rational functions of the Laplace variable with complex
//! coefficients.
//!
//! Coefficients are stored in ascending powers of `s`. The conjugation used
//! throughout the sequence models acts on coefficients only, so that
//! `conj_coeff(X)(s) = conj(X(conj(s)))`.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

/// Relative tolerance for treating two coefficient vectors as identical.
pub const COINCIDENCE_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct CPoly {
    c: Vec<C64>,
}

impl CPoly {
    pub fn new(mut coeffs: Vec<C64>) -> Self {
        while coeffs.len() > 1 && coeffs.last() == Some(&ZERO) {
            coeffs.pop();
        }
        if coeffs.is_empty() {
            coeffs.push(ZERO);
        }
        CPoly { c: coeffs }
    }

    pub fn from_real(coeffs: &[f64]) -> Self {
        Self::new(coeffs.iter().map(|&x| C64::new(x, 0.0)).collect())
    }

    pub fn zero() -> Self {
        CPoly { c: vec![ZERO] }
    }

    pub fn constant(k: C64) -> Self {
        Self::new(vec![k])
    }

    /// The monomial `s`.
    pub fn s() -> Self {
        CPoly { c: vec![ZERO, ONE] }
    }

    /// `gain · Π (s − r)`.
    pub fn from_roots(gain: C64, roots: &[C64]) -> Self {
        let mut p = CPoly::constant(gain);
        for &r in roots {
            p = &p * &CPoly::new(vec![-r, ONE]);
        }
        p
    }

    pub fn coeffs(&self) -> &[C64] {
        &self.c
    }

    pub fn is_zero(&self) -> bool {
        self.c.iter().all(|z| *z == ZERO)
    }

    /// Degree; the zero polynomial reports 0.
    pub fn degree(&self) -> usize {
        self.c.len() - 1
    }

    pub fn leading(&self) -> C64 {
        *self.c.last().unwrap()
    }

    pub fn eval(&self, s: C64) -> C64 {
        self.c.iter().rev().fold(ZERO, |acc, &a| acc * s + a)
    }

    /// `Σ |c_k| |s|^k`, the scale against which rounding in `eval` is judged.
    pub fn eval_scale(&self, s: C64) -> f64 {
        let r = s.norm();
        self.c.iter().rev().fold(0.0, |acc, a| acc * r + a.norm())
    }

    pub fn conj_coeff(&self) -> Self {
        CPoly { c: self.c.iter().map(|z| z.conj()).collect() }
    }

    pub fn scale(&self, k: C64) -> Self {
        Self::new(self.c.iter().map(|&z| z * k).collect())
    }

    pub fn derivative(&self) -> Self {
        if self.c.len() == 1 {
            return CPoly::zero();
        }
        Self::new(self.c.iter().enumerate().skip(1).map(|(k, &z)| z * k as f64).collect())
    }

    pub fn norm_inf(&self) -> f64 {
        self.c.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn is_real(&self, tol: f64) -> bool {
        let n = self.norm_inf().max(f64::MIN_POSITIVE);
        self.c.iter().all(|z| z.im.abs() <= tol * n)
    }

    /// `Some(k)` when `self = k · other` coefficient-wise within `tol`.
    pub fn proportional(&self, other: &CPoly, tol: f64) -> Option<C64> {
        if self.degree() != other.degree() || other.is_zero() {
            return None;
        }
        let k = self.leading() / other.leading();
        let scale = self.norm_inf().max(other.norm_inf() * k.norm());
        let ok = self.c.iter().zip(&other.c).all(|(a, b)| (a - k * b).norm() <= tol * scale);
        ok.then_some(k)
    }

    /// Synthetic division by `(s − r)`; returns quotient and remainder.
    pub fn deflate(&self, r: C64) -> (CPoly, C64) {
        let n = self.c.len();
        if n == 1 {
            return (CPoly::zero(), self.c[0]);
        }
        let mut q = vec![ZERO; n - 1];
        let mut acc = ZERO;
        for k in (1..n).rev() {
            acc = acc * r + self.c[k];
            q[k - 1] = acc;
        }
        let rem = acc * r + self.c[0];
        (CPoly::new(q), rem)
    }

    /// Quotient by `(s − r)` for a known root `r`, taking whichever of the
    /// forward and backward recurrences reproduces `self` more closely.
    pub fn deflate_root(&self, r: C64) -> CPoly {
        let forward = self.deflate(r).0;
        if r == ZERO || self.c.len() == 1 {
            return forward;
        }
        let n = self.c.len();
        let mut b = vec![ZERO; n - 1];
        b[0] = -self.c[0] / r;
        for k in 1..n - 1 {
            b[k] = (b[k - 1] - self.c[k]) / r;
        }
        let backward = CPoly::new(b);
        let lin = CPoly::new(vec![-r, ONE]);
        let err = |q: &CPoly| (&(&lin * q) - self).norm_inf();
        if err(&backward) < err(&forward) {
            backward
        } else {
            forward
        }
    }

    /// All complex roots (Aberth–Ehrlich, Newton-polished).
    pub fn roots(&self) -> Result<Vec<C64>> {
        if self.is_zero() {
            return Err(Error::Degenerate("roots of the zero polynomial".into()));
        }
        let mut zeros_at_origin = 0;
        while zeros_at_origin < self.c.len() - 1 && self.c[zeros_at_origin] == ZERO {
            zeros_at_origin += 1;
        }
        let p = CPoly::new(self.c[zeros_at_origin..].to_vec());
        let mut out = vec![ZERO; zeros_at_origin];
        out.extend(aberth(&p)?);
        Ok(out)
    }
}

fn aberth(p: &CPoly) -> Result<Vec<C64>> {
    let n = p.degree();
    if n == 0 {
        return Ok(vec![]);
    }
    if n == 1 {
        return Ok(vec![-p.c[0] / p.c[1]]);
    }
    let dp = p.derivative();
    let radius = (p.c[0].norm() / p.leading().norm()).powf(1.0 / n as f64).max(1e-300);
    let mut z: Vec<C64> = (0..n)
        .map(|k| {
            let phi = 2.0 * std::f64::consts::PI * k as f64 / n as f64 + 0.4;
            C64::from_polar(radius, phi)
        })
        .collect();
    let mut done = vec![false; n];
    for _ in 0..2000 {
        for i in 0..n {
            if done[i] {
                continue;
            }
            let pv = p.eval(z[i]);
            if pv.norm() <= 4.0 * f64::EPSILON * p.eval_scale(z[i]) {
                done[i] = true;
                continue;
            }
            let ratio = pv / dp.eval(z[i]);
            let sum: C64 = (0..n).filter(|&j| j != i).map(|j| ONE / (z[i] - z[j])).sum();
            let w = ratio / (ONE - ratio * sum);
            if !w.is_finite() {
                continue;
            }
            z[i] -= w;
            if w.norm() <= 1e-15 * z[i].norm() {
                done[i] = true;
            }
        }
        if done.iter().all(|&d| d) {
            break;
        }
    }
    for zi in z.iter_mut() {
        for _ in 0..3 {
            let d = dp.eval(*zi);
            if d == ZERO {
                break;
            }
            let step = p.eval(*zi) / d;
            if !step.is_finite() || step.norm() > 1e-6 * zi.norm().max(1.0) {
                break;
            }
            *zi -= step;
        }
    }
    let worst = z.iter().map(|&zi| p.eval(zi).norm() / p.eval_scale(zi).max(f64::MIN_POSITIVE)).fold(0.0, f64::max);
    if !worst.is_finite() || worst > 1e-8 {
        return Err(Error::RootsNotConverged(n));
    }
    Ok(z)
}

impl Add for &CPoly {
    type Output = CPoly;
    fn add(self, o: &CPoly) -> CPoly {
        let n = self.c.len().max(o.c.len());
        CPoly::new(
            (0..n).map(|k| self.c.get(k).copied().unwrap_or(ZERO) + o.c.get(k).copied().unwrap_or(ZERO)).collect(),
        )
    }
}

impl Sub for &CPoly {
    type Output = CPoly;
    fn sub(self, o: &CPoly) -> CPoly {
        self + &(-o)
    }
}

impl Neg for &CPoly {
    type Output = CPoly;
    fn neg(self) -> CPoly {
        CPoly { c: self.c.iter().map(|z| -z).collect() }
    }
}

impl Mul for &CPoly {
    type Output = CPoly;
    fn mul(self, o: &CPoly) -> CPoly {
        let mut c = vec![ZERO; self.c.len() + o.c.len() - 1];
        for (i, a) in self.c.iter().enumerate() {
            for (j, b) in o.c.iter().enumerate() {
                c[i + j] += a * b;
            }
        }
        CPoly::new(c)
    }
}

macro_rules! forward_owned {
    ($t:ty, $tr:ident, $m:ident) => {
        impl $tr for $t {
            type Output = $t;
            fn $m(self, o: $t) -> $t {
                (&self).$m(&o)
            }
        }
    };
}
forward_owned!(CPoly, Add, add);
forward_owned!(CPoly, Sub, sub);
forward_owned!(CPoly, Mul, mul);

impl fmt::Display for CPoly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let terms: Vec<String> = self
            .c
            .iter()
            .enumerate()
            .filter(|(_, z)| **z != ZERO)
            .map(|(k, z)| match k {
                0 => format!("({z})"),
                1 => format!("({z})s"),
                _ => format!("({z})s^{k}"),
            })
            .collect();
        if terms.is_empty() {
            write!(f, "0")
        } else {
            write!(f, "{}", terms.join(" + "))
        }
    }
}

/// `num/den`, with `den` kept monic.
#[derive(Clone, Debug, PartialEq)]
pub struct CRational {
    num: CPoly,
    den: CPoly,
}

impl CRational {
    pub fn new(num: CPoly, den: CPoly) -> Result<Self> {
        if den.is_zero() {
            return Err(Error::DivisionByZero);
        }
        let k = ONE / den.leading();
        Ok(CRational { num: num.scale(k), den: den.scale(k) })
    }

    pub fn from_poly(p: CPoly) -> Self {
        CRational { num: p, den: CPoly::constant(ONE) }
    }

    pub fn constant(k: C64) -> Self {
        Self::from_poly(CPoly::constant(k))
    }

    pub fn s() -> Self {
        Self::from_poly(CPoly::s())
    }

    pub fn num(&self) -> &CPoly {
        &self.num
    }

    pub fn den(&self) -> &CPoly {
        &self.den
    }

    pub fn is_zero(&self) -> bool {
        self.num.is_zero()
    }

    pub fn eval(&self, s: C64) -> Result<C64> {
        let d = self.den.eval(s);
        if d.norm() <= 1e-14 * self.den.eval_scale(s) {
            return Err(Error::Pole(s));
        }
        Ok(self.num.eval(s) / d)
    }

    pub fn conj_coeff(&self) -> Self {
        CRational { num: self.num.conj_coeff(), den: self.den.conj_coeff() }
    }

    pub fn scale(&self, k: C64) -> Self {
        CRational { num: self.num.scale(k), den: self.den.clone() }
    }

    pub fn inv(&self) -> Result<Self> {
        if self.num.is_zero() {
            return Err(Error::DivisionByZero);
        }
        CRational::new(self.den.clone(), self.num.clone())
    }

    pub fn div(&self, o: &CRational) -> Result<Self> {
        Ok(self * &o.inv()?)
    }

    /// Divides out `(s − r)` from numerator and denominator for every `r`
    /// that is a root of both within `tol` (relative to the evaluation scale).
    /// Returns the reduced rational and the number of factors removed.
    pub fn cancel_roots(&self, roots: &[C64], tol: f64) -> (Self, usize) {
        let mut order: Vec<C64> = roots.to_vec();
        order.sort_by(|a, b| a.norm().total_cmp(&b.norm()));
        let mut num = self.num.clone();
        let mut den = self.den.clone();
        let mut removed = 0;
        for r in order {
            if num.degree() == 0 || den.degree() == 0 {
                break;
            }
            let nr = num.eval(r).norm() <= tol * num.eval_scale(r);
            let dr = den.eval(r).norm() <= tol * den.eval_scale(r);
            if nr && dr {
                num = num.deflate_root(r);
                den = den.deflate_root(r);
                removed += 1;
            }
        }
        (CRational::new(num, den).expect("deflated denominator is nonzero"), removed)
    }

    /// Cancels the factor `f` from both sides as many times as it divides both.
    pub fn cancel_factor(&self, f: &CPoly, tol: f64) -> Result<(Self, usize)> {
        if f.degree() == 0 {
            return Ok((self.clone(), 0));
        }
        let roots = f.roots()?;
        let mut cur = self.clone();
        let mut total = 0;
        loop {
            let (next, k) = cur.cancel_roots(&roots, tol);
            total += k;
            if k < roots.len() {
                // Partial removals are kept; a full pass is needed to continue.
                return Ok((next, total));
            }
            cur = next;
        }
    }

    /// Removes numerator/denominator root pairs closer than `tol` relative
    /// distance. Approximate cancellation is never automatic.
    pub fn minreal(&self, tol: f64) -> Result<Self> {
        if self.num.is_zero() || self.num.degree() == 0 || self.den.degree() == 0 {
            return Ok(self.clone());
        }
        let mut zr = self.num.roots()?;
        let mut pr = self.den.roots()?;
        let mut kept_z = Vec::new();
        while let Some(z) = zr.pop() {
            let best = pr
                .iter()
                .enumerate()
                .map(|(i, p)| (i, (z - p).norm() / p.norm().max(z.norm()).max(1.0)))
                .min_by(|a, b| a.1.total_cmp(&b.1));
            match best {
                Some((i, d)) if d <= tol => {
                    pr.swap_remove(i);
                }
                _ => kept_z.push(z),
            }
        }
        let num = CPoly::from_roots(self.num.leading(), &kept_z);
        let den = CPoly::from_roots(self.den.leading(), &pr);
        CRational::new(num, den)
    }

    /// Coefficient-wise comparison after normalisation.
    pub fn approx_eq(&self, o: &CRational, tol: f64) -> bool {
        self.num.proportional(&o.num, tol).is_some_and(|k| (k - ONE).norm() <= tol)
            && self.den.proportional(&o.den, tol).is_some_and(|k| (k - ONE).norm() <= tol)
            || (self.num.is_zero() && o.num.is_zero())
    }
}

impl Add for &CRational {
    type Output = CRational;
    fn add(self, o: &CRational) -> CRational {
        if o.num.is_zero() {
            return self.clone();
        }
        if self.num.is_zero() {
            return o.clone();
        }
        if let Some(k) = o.den.proportional(&self.den, COINCIDENCE_TOL) {
            // o = o.num / (k · self.den)
            let num = &self.num + &o.num.scale(ONE / k);
            return CRational::new(num, self.den.clone()).unwrap();
        }
        let num = &(&self.num * &o.den) + &(&o.num * &self.den);
        CRational::new(num, &self.den * &o.den).unwrap()
    }
}

impl Neg for &CRational {
    type Output = CRational;
    fn neg(self) -> CRational {
        CRational { num: -&self.num, den: self.den.clone() }
    }
}

impl Sub for &CRational {
    type Output = CRational;
    fn sub(self, o: &CRational) -> CRational {
        self + &(-o)
    }
}

impl Mul for &CRational {
    type Output = CRational;
    fn mul(self, o: &CRational) -> CRational {
        if self.num.is_zero() || o.num.is_zero() {
            return CRational::constant(ZERO);
        }
        let mut a_num = self.num.clone();
        let mut a_den = self.den.clone();
        let mut b_num = o.num.clone();
        let mut b_den = o.den.clone();
        if a_num.degree() > 0 {
            if let Some(k) = a_num.proportional(&b_den, COINCIDENCE_TOL) {
                a_num = CPoly::constant(k);
                b_den = CPoly::constant(ONE);
            }
        }
        if b_num.degree() > 0 {
            if let Some(k) = b_num.proportional(&a_den, COINCIDENCE_TOL) {
                b_num = CPoly::constant(k);
                a_den = CPoly::constant(ONE);
            }
        }
        CRational::new(&a_num * &b_num, &a_den * &b_den).unwrap()
    }
}

forward_owned!(CRational, Add, add);
forward_owned!(CRational, Sub, sub);
forward_owned!(CRational, Mul, mul);

impl fmt::Display for CRational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] / [{}]", self.num, self.den)
    }
}
