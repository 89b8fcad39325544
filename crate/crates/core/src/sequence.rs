//! Coupled positive/negative sequence model of the converter and grid in the
//! PLL frame, the augmented (decoupled) loop impedances, the GNC loop-gain
//! eigenvalues and the generalized Schur-complement loop.
//!
//! Transfer functions are built directly in reduced form from a handful of
//! polynomials so that no spurious pole/zero pairs enter the Nyquist counts:
//!
//! * `G_pll = ng/dg`, `C_pll = nc/dg`, `jC_pll/2 = n/dg`, `q = dg + n`
//! * `Z_grid^p = Z_Σ·dg/q`, `D_pll = n/q`, `H_i = hn/s`
//! * `m = s·Z_Σ·dg + hn·q`, so that `Z_c^p + Z_grid^p = m/(s·q)`
//! * `v = dg + n + n*`, so that `1 − D_pll·D_pll* = dg·v/(q·q*)`

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::model::{OperatingPoint, SystemParams};
use crate::tf::{CPoly, CRational, C64};

const J: C64 = Complex64::new(0.0, 1.0);
const ONE: C64 = Complex64::new(1.0, 0.0);

/// Relative residual accepted when dividing out a known common factor.
pub const CANCEL_TOL: f64 = 1e-9;

/// Symmetrical decomposition of a dq pair into sequence components.
pub fn dq_to_sequence(u_d: C64, u_q: C64) -> (C64, C64) {
    ((u_d + J * u_q) * 0.5, (u_d - J * u_q) * 0.5)
}

pub fn sequence_to_dq(u_p: C64, u_n: C64) -> (C64, C64) {
    (u_p + u_n, -J * (u_p - u_n))
}

/// 2×2 complex matrix evaluated at one point of the Laplace plane.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FreqMatrix2 {
    pub entries: [[C64; 2]; 2],
    pub s: C64,
}

impl FreqMatrix2 {
    pub fn trace(&self) -> C64 {
        self.entries[0][0] + self.entries[1][1]
    }

    pub fn det(&self) -> C64 {
        let e = &self.entries;
        e[0][0] * e[1][1] - e[0][1] * e[1][0]
    }

    /// Roots of `λ² − tr·λ + det`.
    pub fn eigenvalues(&self) -> (C64, C64) {
        quadratic_pair(self.trace(), self.det())
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().flatten().all(|z| z.is_finite())
    }
}

fn quadratic_pair(tr: C64, det: C64) -> (C64, C64) {
    let half = tr * 0.5;
    let root = (half * half - det).sqrt();
    // avoid cancellation in the smaller root
    let l1 = if (half + root).norm() >= (half - root).norm() { half + root } else { half - root };
    let l2 = if l1.norm() > 0.0 { det / l1 } else { half - root };
    (l1, l2)
}

/// Entries of a 2×2 sequence-domain matrix of transfer functions.
#[derive(Clone, Debug, PartialEq)]
pub struct SeqMatrix {
    pub pp: CRational,
    pub pn: CRational,
    pub np: CRational,
    pub nn: CRational,
}

impl SeqMatrix {
    pub fn diag(p: CRational, n: CRational) -> Self {
        let zero = CRational::constant(C64::new(0.0, 0.0));
        SeqMatrix { pp: p, pn: zero.clone(), np: zero, nn: n }
    }

    pub fn eval(&self, s: C64) -> Result<FreqMatrix2> {
        Ok(FreqMatrix2 { entries: [[self.pp.eval(s)?, self.pn.eval(s)?], [self.np.eval(s)?, self.nn.eval(s)?]], s })
    }

    /// Entry numerators over one common denominator, the product of the
    /// distinct entry denominators.
    pub fn common_form(&self) -> ([[CPoly; 2]; 2], CPoly) {
        let entries = [&self.pp, &self.pn, &self.np, &self.nn];
        let mut distinct: Vec<CPoly> = Vec::new();
        let mut which = [None; 4];
        for (k, e) in entries.iter().enumerate() {
            let d = e.den();
            if d.degree() == 0 {
                continue;
            }
            match distinct.iter().position(|g| g.proportional(d, 1e-12).is_some()) {
                Some(i) => which[k] = Some(i),
                None => {
                    which[k] = Some(distinct.len());
                    distinct.push(d.clone());
                }
            }
        }
        let one = CPoly::constant(ONE);
        let common = distinct.iter().fold(one.clone(), |acc, d| &acc * d);
        let lift = |k: usize| {
            let e = entries[k];
            // den is monic; proportional dens are equal up to rounding
            let num = e.num().scale(ONE / e.den().leading());
            let others = distinct
                .iter()
                .enumerate()
                .filter(|(i, _)| Some(*i) != which[k])
                .fold(one.clone(), |acc, (_, d)| &acc * d);
            &num * &others
        };
        ([[lift(0), lift(1)], [lift(2), lift(3)]], common)
    }
}

/// Divides out each root of `factor` that is shared by numerator and
/// denominator, repeating while anything cancels.
fn reduce_by(mut x: CRational, factor: &CPoly) -> Result<CRational> {
    if factor.degree() == 0 {
        return Ok(x);
    }
    let roots = factor.roots()?;
    loop {
        let (next, k) = x.cancel_roots(&roots, CANCEL_TOL);
        x = next;
        if k == 0 {
            return Ok(x);
        }
    }
}

/// Source and load subsystems of a sequence-domain interconnection.
#[derive(Clone, Debug, PartialEq)]
pub struct GasinInput {
    pub z_source: SeqMatrix,
    pub z_load: SeqMatrix,
}

/// Generalized loop impedances seen by a positive (negative) sequence
/// voltage injection: the Schur complements of the interconnected matrix.
///
/// Factors of the input denominators that appear on both sides of the result
/// are divided out exactly.
pub fn gasin_loop(input: &GasinInput) -> Result<(CRational, CRational)> {
    let (a_s, e_s) = input.z_source.common_form();
    let (a_l, e_l) = input.z_load.common_form();
    let a: Vec<Vec<CPoly>> =
        (0..2).map(|i| (0..2).map(|j| &(&a_s[i][j] * &e_l) + &(&a_l[i][j] * &e_s)).collect()).collect();
    if a[0][0].is_zero() || a[1][1].is_zero() {
        return Err(Error::Degenerate("identically zero diagonal in the interconnection".into()));
    }
    let e = &e_s * &e_l;
    let det = &(&a[0][0] * &a[1][1]) - &(&a[0][1] * &a[1][0]);
    let zp = CRational::new(det.clone(), &e * &a[1][1])?;
    let zn = CRational::new(det, &e * &a[0][0])?;
    Ok((reduce_by(zp, &e)?, reduce_by(zn, &e)?))
}

/// Polynomial building blocks of the reduced model.
#[derive(Clone, Debug, PartialEq)]
pub struct Parts {
    /// `Z_Σ(s) = L_Σ(s + jω_s) + R_Σ`
    pub z_sigma: CPoly,
    /// `H_i = hn/s`
    pub hn: CPoly,
    pub ng: CPoly,
    pub dg: CPoly,
    pub n: CPoly,
    pub q: CPoly,
    pub m: CPoly,
    pub v: CPoly,
}

/// Transfer-function set of the linearized converter–grid system.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceModel {
    pub params: SystemParams,
    pub op: OperatingPoint,
    pub parts: Parts,
    pub h_i: CRational,
    pub h_pll: CRational,
    pub g_pll: CRational,
    pub c_pll: CRational,
    pub z_sigma: CRational,
    pub z_grid_p: CRational,
    pub z_grid_n: CRational,
    pub d_pll: CRational,
    pub z_c_p: CRational,
    pub z_c_n: CRational,
    /// Coupling ratio folded into the augmented loop impedances.
    pub r: CRational,
    pub gamma: CRational,
    pub z_loop_p: CRational,
    pub z_loop_n: CRational,
    /// Coupled source matrix seen from the converter terminal.
    pub z_source: SeqMatrix,
}

impl SequenceModel {
    pub fn build(params: &SystemParams, op: &OperatingPoint) -> Result<Self> {
        params.validate()?;
        let ws = params.omega_s();
        let c = &params.circuit;
        let k = &params.ctrl;
        let u = k.u_s_mag;
        let l_sigma = c.l_sigma() / ws;
        let l_f = c.l_filter / ws;
        let km = c.k_m();

        let z_sigma = CPoly::new(vec![C64::new(c.r_sigma(), ws * l_sigma), C64::new(l_sigma, 0.0)]);
        let hn = CPoly::from_real(&[l_f * k.ki_cc, l_f * k.kp_cc]);
        let ng = CPoly::from_real(&[k.ki_pll / u, k.kp_pll / u]);
        let a = km * op.delta_pll0.cos() * u;
        let b = km + 1.0;
        let dg = &ng.scale(C64::new(a, 0.0)) + &CPoly::from_real(&[0.0, 0.0, b]);
        let nc = &CPoly::new(vec![-op.u_s0_pll, l_sigma * op.i_c0]).scale(J) * &ng;
        let n = nc.scale(J * 0.5);
        let q = &dg + &n;
        if q.is_zero() {
            return Err(Error::Degenerate("1 + jC_pll/2 vanishes identically".into()));
        }
        let s = CPoly::s();
        let m = &(&s * &(&z_sigma * &dg)) + &(&hn * &q);
        let v = &(&dg + &n) + &n.conj_coeff();

        let h_i = CRational::new(hn.clone(), s.clone())?;
        let h_pll = CRational::new(ng.clone(), s.clone())?;
        let g_pll = CRational::new(ng.clone(), dg.clone())?;
        let c_pll = CRational::new(nc, dg.clone())?;
        let zs = CRational::from_poly(z_sigma.clone());
        let frozen = ng.is_zero();

        let (z_grid_p, d_pll, z_loop_p, r, gamma, z_source) = if frozen {
            let zero = CRational::constant(C64::new(0.0, 0.0));
            let zl = CRational::new(&(&s * &z_sigma) + &hn, s.clone())?;
            (zs.clone(), zero.clone(), zl, zero, CRational::constant(ONE), SeqMatrix::diag(zs.clone(), zs.conj_coeff()))
        } else {
            let mc = m.conj_coeff();
            let nn = &n * &n.conj_coeff();
            let hh = &hn * &hn.conj_coeff();
            let loop_num = &(&m * &mc) - &(&nn * &hh);
            let z_src = SeqMatrix {
                pp: CRational::new(&q.conj_coeff() * &z_sigma, v.clone())?,
                pn: CRational::new(&n * &z_sigma.conj_coeff(), v.clone())?,
                np: CRational::new(&n.conj_coeff() * &z_sigma, v.clone())?,
                nn: CRational::new(&q * &z_sigma.conj_coeff(), v.clone())?,
            };
            (
                CRational::new(&z_sigma * &dg, q.clone())?,
                CRational::new(n.clone(), q.clone())?,
                CRational::new(loop_num, &(&s * &q) * &mc)?,
                CRational::new(&nn * &hh, &m * &mc)?,
                CRational::new(&q * &q.conj_coeff(), &dg * &v)?,
                z_src,
            )
        };
        let z_loop_n = z_loop_p.conj_coeff();
        Ok(SequenceModel {
            params: *params,
            op: *op,
            parts: Parts { z_sigma, hn, ng, dg, n, q, m, v },
            z_grid_n: z_grid_p.conj_coeff(),
            z_c_p: h_i.clone(),
            z_c_n: h_i.conj_coeff(),
            h_i,
            h_pll,
            g_pll,
            c_pll,
            z_sigma: zs,
            z_grid_p,
            d_pll,
            r,
            gamma,
            z_loop_p,
            z_loop_n,
            z_source,
        })
    }

    pub fn from_params(params: &SystemParams) -> Result<Self> {
        let op = params.operating_point()?;
        Self::build(params, &op)
    }

    /// Augmented negative-sequence loop impedance built from the negative
    /// network's own transfer functions instead of by conjugation.
    pub fn z_loop_n_from_negative_network(&self) -> Result<CRational> {
        let p = &self.parts;
        if p.ng.is_zero() {
            let zs_n = p.z_sigma.conj_coeff();
            let hn_n = p.hn.conj_coeff();
            return CRational::new(&(&CPoly::s() * &zs_n) + &hn_n, CPoly::s());
        }
        // negative network: Z_Σ*, H_i*, coupling D*, so n ↦ n*, q ↦ q*
        let zs_n = p.z_sigma.conj_coeff();
        let hn_n = p.hn.conj_coeff();
        let n_n = p.n.conj_coeff();
        let q_n = p.q.conj_coeff();
        let dg_n = p.dg.conj_coeff();
        let s = CPoly::s();
        let m_n = &(&s * &(&zs_n * &dg_n)) + &(&hn_n * &q_n);
        let num = &(&m_n * &m_n.conj_coeff()) - &(&(&n_n * &n_n.conj_coeff()) * &(&hn_n * &hn_n.conj_coeff()));
        CRational::new(num, &(&s * &q_n) * &m_n.conj_coeff())
    }

    /// Augmented loop impedance from the coupling-source definition: the
    /// negative network is solved pointwise for `u_c^n` under a positive
    /// sequence current, and `D_pll·u_c^n/i_c^p` is added to the sum of the
    /// positive-sequence impedances.
    pub fn z_loop_p_pointwise(&self, s: C64) -> Result<C64> {
        let zc_p = self.z_c_p.eval(s)?;
        let zc_n = self.z_c_n.eval(s)?;
        let zg_p = self.z_grid_p.eval(s)?;
        let zg_n = self.z_grid_n.eval(s)?;
        let d = self.d_pll.eval(s)?;
        let d_c = self.d_pll.conj_coeff().eval(s)?;
        let i_p = ONE;
        let u_p = -zc_p * i_p;
        // u_n = Z_grid^n i_n + D* u_p and u_n = −Z_c^n i_n
        let u_n = d_c * zc_n * u_p / (zc_n + zg_n);
        let z_couple = d * u_n / i_p;
        Ok(zc_p + zg_p + z_couple)
    }

    /// Ratio `i_n/i_p` of the negative-sequence current induced through the
    /// PLL coupling to the positive-sequence current driving it.
    pub fn unbalance_ratio(&self, s: C64) -> Result<C64> {
        let zc_p = self.z_c_p.eval(s)?;
        let den = self.z_c_n.eval(s)? + self.z_grid_n.eval(s)?;
        if den == C64::new(0.0, 0.0) {
            return Err(Error::Pole(s));
        }
        Ok(self.d_pll.conj_coeff().eval(s)? * zc_p / den)
    }

    /// Coupled source matrix at `s` (includes the `γ` prefactor).
    pub fn source_matrix(&self, s: C64) -> Result<FreqMatrix2> {
        self.z_source.eval(s)
    }

    /// Converter matrix `diag(H_i, H_i*)`.
    pub fn converter_matrix(&self) -> SeqMatrix {
        SeqMatrix::diag(self.z_c_p.clone(), self.z_c_n.clone())
    }

    /// Minor-loop gain `Z_source · Z_conv⁻¹` at `s`.
    pub fn minor_loop(&self, s: C64) -> Result<FreqMatrix2> {
        let src = self.source_matrix(s)?;
        let hp = self.z_c_p.eval(s)?;
        let hn = self.z_c_n.eval(s)?;
        if hp.norm() == 0.0 || hn.norm() == 0.0 || !hp.is_finite() || !hn.is_finite() {
            return Err(Error::Pole(s));
        }
        let e = src.entries;
        Ok(FreqMatrix2 { entries: [[e[0][0] / hp, e[0][1] / hn], [e[1][0] / hp, e[1][1] / hn]], s })
    }

    /// Eigenvalues of the minor-loop gain, plus whether the closed-form
    /// expression `½(γa + γa* ± √(γ²(a+a*)² − 4aa*))` with `a = Z_grid^p/H_i`
    /// reproduces them to 1e-6 relative.
    pub fn gnc_eigenvalues(&self, s: C64) -> Result<(C64, C64, bool)> {
        let (l1, l2) = self.minor_loop(s)?.eigenvalues();
        let (a1, a2) = self.gnc_eigenvalues_closed_form(s)?;
        let scale = l1.norm().max(l2.norm()).max(f64::MIN_POSITIVE);
        let close = |x: C64, y: C64| (x - y).norm() <= 1e-6 * scale;
        let agrees = (close(l1, a1) && close(l2, a2)) || (close(l1, a2) && close(l2, a1));
        Ok((l1, l2, agrees))
    }

    /// The closed-form eigenvalue pair without the `γ` factor on `aa*`.
    pub fn gnc_eigenvalues_closed_form(&self, s: C64) -> Result<(C64, C64)> {
        let a = self.z_grid_p.eval(s)? / self.h_i.eval(s)?;
        let ac = self.z_grid_n.eval(s)? / self.z_c_n.eval(s)?;
        let g = self.gamma.eval(s)?;
        let root = (g * g * (a + ac) * (a + ac) - 4.0 * a * ac).sqrt();
        Ok((0.5 * (g * (a + ac) + root), 0.5 * (g * (a + ac) - root)))
    }

    /// Interconnection used by the generalized Schur-complement loop: the
    /// coupled source against the converter.
    pub fn gasin_input(&self) -> GasinInput {
        GasinInput { z_source: self.z_source.clone(), z_load: self.converter_matrix() }
    }

    /// Reduced `det(I + Z_source·Z_conv⁻¹)` as a rational function.
    pub fn return_difference(&self) -> Result<CRational> {
        let (a_s, e_s) = self.z_source.common_form();
        let (a_l, e_l) = self.converter_matrix().common_form();
        let a: Vec<Vec<CPoly>> =
            (0..2).map(|i| (0..2).map(|j| &(&a_s[i][j] * &e_l) + &(&a_l[i][j] * &e_s)).collect()).collect();
        let det_a = &(&a[0][0] * &a[1][1]) - &(&a[0][1] * &a[1][0]);
        let det_l = &(&a_l[0][0] * &a_l[1][1]) - &(&a_l[0][1] * &a_l[1][0]);
        if det_l.is_zero() {
            return Err(Error::Degenerate("singular converter matrix".into()));
        }
        let x = CRational::new(det_a, &(&e_s * &e_s) * &det_l)?;
        reduce_by(x, &e_s)
    }
}
