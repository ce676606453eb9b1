//! Archimedean generator families, their inverses and derivative suites.
//!
//! Closed-form parameter derivatives are available for Clayton and Gumbel.
//! Frank and Joe provide the generator, its inverse, `phi'` and the Kendall
//! tau maps; their higher-order work goes through [`crate::series`].

mod stirling;
mod tau;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{arg, HacError, Result};

pub use stirling::{
    falling_factorial, s_nk, stirling_first, stirling_second, table as stirling_table, SnkTable,
    StirlingTable, DEFAULT_MAX_DIM,
};
pub use tau::TauGrid;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Clayton,
    Gumbel,
    Frank,
    Joe,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = HacError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "clayton" => Ok(Family::Clayton),
            "gumbel" => Ok(Family::Gumbel),
            "frank" => Ok(Family::Frank),
            "joe" => Ok(Family::Joe),
            other => Err(HacError::Parse(format!("unknown generator family '{other}'"))),
        }
    }
}

/// Parameter derivatives of `psi` at fixed `t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PsiThetaDerivs {
    /// d psi / d theta
    pub dtheta: f64,
    /// d^2 psi / d theta^2
    pub d2theta: f64,
    /// d^2 psi / d theta dt
    pub dtheta_dt: f64,
}

/// Derivative suite of the inverse generator `phi` at fixed `u`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhiDerivs {
    pub value: f64,
    /// d phi / du
    pub d1: f64,
    /// d^2 phi / du^2
    pub d2: f64,
    /// d phi / d theta
    pub dtheta: f64,
    /// d^2 phi / d theta^2
    pub d2theta: f64,
    /// d^2 phi / d theta du
    pub dtheta_du: f64,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::Clayton, Family::Gumbel, Family::Frank, Family::Joe];

    pub fn name(&self) -> &'static str {
        match self {
            Family::Clayton => "clayton",
            Family::Gumbel => "gumbel",
            Family::Frank => "frank",
            Family::Joe => "joe",
        }
    }

    /// Lower end of the parameter domain (independence limit).
    pub fn lower(&self) -> f64 {
        match self {
            Family::Clayton | Family::Frank => 0.0,
            Family::Gumbel | Family::Joe => 1.0,
        }
    }

    /// Whether the lower end belongs to the domain.
    pub fn lower_closed(&self) -> bool {
        matches!(self, Family::Gumbel | Family::Joe)
    }

    pub fn in_domain(&self, theta: f64) -> bool {
        theta.is_finite()
            && if self.lower_closed() { theta >= self.lower() } else { theta > self.lower() }
    }

    pub fn check(&self, theta: f64) -> Result<()> {
        if self.in_domain(theta) {
            Ok(())
        } else {
            Err(HacError::Domain { family: self.name().into(), theta })
        }
    }

    /// Families with closed-form parameter derivatives.
    pub fn has_analytic_derivatives(&self) -> bool {
        matches!(self, Family::Clayton | Family::Gumbel)
    }

    /// Shift `gamma` in `phi_0(psi_s(t)) = (gamma + t)^alpha - gamma`.
    pub(crate) fn gamma_shift(&self) -> f64 {
        match self {
            Family::Clayton => 1.0,
            _ => 0.0,
        }
    }

    fn unsupported(&self, what: &str) -> HacError {
        HacError::Unsupported(format!("{what} has no closed form for the {} family", self.name()))
    }

    /// Generator `psi_theta(t)`.
    pub fn psi(&self, theta: f64, t: f64) -> Result<f64> {
        self.check(theta)?;
        if !(t >= 0.0) {
            return arg(format!("generator argument t={t} must be non-negative"));
        }
        Ok(self.psi_unchecked(theta, t))
    }

    pub(crate) fn psi_unchecked(&self, theta: f64, t: f64) -> f64 {
        match self {
            Family::Clayton => (t.ln_1p() * (-1.0 / theta)).exp(),
            Family::Gumbel => (-t.powf(1.0 / theta)).exp(),
            Family::Frank => {
                let p = -(-theta).exp_m1();
                let a = p * (-t).exp();
                if a < 0.5 {
                    -(-a).ln_1p() / theta
                } else {
                    -(-(-t).exp_m1() + (-(theta + t)).exp()).ln() / theta
                }
            }
            Family::Joe => 1.0 - (-(-t).exp_m1()).powf(1.0 / theta),
        }
    }

    /// Inverse generator `phi_theta(u)`.
    pub fn phi(&self, theta: f64, u: f64) -> Result<f64> {
        self.check(theta)?;
        check_unit(u)?;
        Ok(self.phi_unchecked(theta, u))
    }

    pub(crate) fn phi_unchecked(&self, theta: f64, u: f64) -> f64 {
        match self {
            Family::Clayton => (-theta * u.ln()).exp_m1(),
            Family::Gumbel => (-u.ln()).powf(theta),
            Family::Frank => {
                let r = (-theta * u).exp() * (-theta * (1.0 - u)).exp_m1() / -(-theta).exp_m1();
                -r.ln_1p()
            }
            Family::Joe => -(-(1.0 - u).powf(theta)).ln_1p(),
        }
    }

    /// `d phi / du`, available for every family.
    pub fn phi_prime(&self, theta: f64, u: f64) -> Result<f64> {
        self.check(theta)?;
        check_unit(u)?;
        Ok(self.phi_prime_unchecked(theta, u))
    }

    pub(crate) fn phi_prime_unchecked(&self, theta: f64, u: f64) -> f64 {
        match self {
            Family::Clayton => -theta * (-(theta + 1.0) * u.ln()).exp(),
            Family::Gumbel => -theta * (-u.ln()).powf(theta - 1.0) / u,
            Family::Frank => -theta / (theta * u).exp_m1(),
            Family::Joe => {
                let v = (1.0 - u).powf(theta);
                -theta * (1.0 - u).powf(theta - 1.0) / (1.0 - v)
            }
        }
    }

    /// k-th derivative of `psi` in `t` (Clayton and Gumbel).
    pub fn psi_t_deriv(&self, theta: f64, t: f64, k: usize) -> Result<f64> {
        self.check(theta)?;
        if !self.has_analytic_derivatives() {
            return Err(self.unsupported("the k-th generator derivative"));
        }
        if k < 1 {
            return arg("derivative order k must be at least 1");
        }
        if !(t > 0.0) {
            return arg(format!("generator argument t={t} must be positive"));
        }
        let kernel = PsiKernel::new(*self, theta, k)?;
        let mut out = vec![ScaledDeriv::default(); k + 1];
        kernel.eval_range(t, k, &mut out, false);
        Ok(out[k].sign * out[k].log_abs.exp())
    }

    /// `(psi_dot, psi_ddot, psi_dot')` for Clayton and Gumbel.
    pub fn psi_theta_derivs(&self, theta: f64, t: f64) -> Result<PsiThetaDerivs> {
        self.check(theta)?;
        let ok_t = match self {
            Family::Clayton => t >= 0.0,
            _ => t > 0.0,
        };
        if !ok_t {
            return arg(format!("generator argument t={t} is outside the supported range"));
        }
        match self {
            Family::Clayton => {
                let psi = self.psi_unchecked(theta, t);
                let l = t.ln_1p();
                let d1 = psi * l / (theta * theta);
                let d2 = d1 * (l / (theta * theta) - 2.0 / theta);
                let psi_t = -psi / (theta * (1.0 + t));
                let dt = psi_t * (l / (theta * theta) - 1.0 / theta);
                Ok(PsiThetaDerivs { dtheta: d1, d2theta: d2, dtheta_dt: dt })
            }
            Family::Gumbel => {
                let psi = self.psi_unchecked(theta, t);
                let lt = t.ln();
                let tr = t.powf(1.0 / theta);
                let d1 = psi * tr * lt / (theta * theta);
                let d2 = d1 * ((tr - 1.0) * lt / (theta * theta) - 2.0 / theta);
                let psi_t = -psi * tr / (theta * t);
                let dt = psi_t * ((tr - 1.0) * lt / (theta * theta) - 1.0 / theta);
                Ok(PsiThetaDerivs { dtheta: d1, d2theta: d2, dtheta_dt: dt })
            }
            _ => Err(self.unsupported("the parameter derivative of psi")),
        }
    }

    /// Full derivative suite of `phi` for Clayton and Gumbel.
    pub fn phi_derivs(&self, theta: f64, u: f64) -> Result<PhiDerivs> {
        self.check(theta)?;
        check_unit(u)?;
        if !self.has_analytic_derivatives() {
            return Err(self.unsupported("the derivative suite of phi"));
        }
        Ok(self.phi_derivs_unchecked(theta, u))
    }

    pub(crate) fn phi_derivs_unchecked(&self, theta: f64, u: f64) -> PhiDerivs {
        let lu = u.ln();
        match self {
            Family::Clayton => {
                let upow = (-theta * lu).exp();
                let value = upow - 1.0;
                let d1 = -theta * upow / u;
                let d2 = -d1 * (theta + 1.0) / u;
                let dtheta = -upow * lu;
                let d2theta = -dtheta * lu;
                let dtheta_du = d1 * (1.0 / theta - lu);
                PhiDerivs { value, d1, d2, dtheta, d2theta, dtheta_du }
            }
            _ => {
                let m = -lu;
                let lm = m.ln();
                let value = m.powf(theta);
                let d1 = -theta * value / (m * u);
                let d2 = d1 / u * ((theta - 1.0) / lu - 1.0);
                let dtheta = value * lm;
                let d2theta = dtheta * lm;
                let dtheta_du = d1 * (1.0 / theta + lm);
                PhiDerivs { value, d1, d2, dtheta, d2theta, dtheta_du }
            }
        }
    }

    /// Kendall's tau of the bivariate copula with parameter `theta`.
    pub fn tau(&self, theta: f64) -> Result<f64> {
        self.check(theta)?;
        Ok(tau::tau_unchecked(*self, theta))
    }

    /// Parameter with Kendall's tau equal to `tau`.
    pub fn tau_inv(&self, tau: f64) -> Result<f64> {
        tau::tau_inv(*self, tau)
    }

    /// `d theta / d tau` at `theta`.
    pub fn dtheta_dtau(&self, theta: f64) -> Result<f64> {
        self.check(theta)?;
        tau::dtheta_dtau(*self, theta)
    }
}

fn check_unit(u: f64) -> Result<()> {
    if u > 0.0 && u <= 1.0 {
        Ok(())
    } else {
        arg(format!("copula argument u={u} must lie in (0,1]"))
    }
}

/// `psi^{(k)}` stored as `sign * exp(log_abs)` with the relative parameter
/// derivatives `r1 = d_theta f / f` and `r2 = d2_theta f / f`.
#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct ScaledDeriv {
    pub log_abs: f64,
    pub sign: f64,
    pub r1: f64,
    pub r2: f64,
}

/// Per-parameter cache for evaluating `psi^{(k)}(t)`, `k = 0..=k_max`, in log
/// scale (Clayton and Gumbel).
#[derive(Debug, Clone)]
pub(crate) struct PsiKernel {
    family: Family,
    theta: f64,
    k_max: usize,
    // Clayton: log|(beta)_k|, sum 1/(beta-m), sum 1/(beta-m)^2
    lff: Vec<f64>,
    s1: Vec<f64>,
    s2: Vec<f64>,
    // Gumbel: s_kj(1/theta) with derivatives
    snk: Option<SnkTable>,
}

impl PsiKernel {
    pub fn new(family: Family, theta: f64, k_max: usize) -> Result<Self> {
        family.check(theta)?;
        match family {
            Family::Clayton => {
                let beta = -1.0 / theta;
                let mut lff = vec![0.0; k_max + 1];
                let mut s1 = vec![0.0; k_max + 1];
                let mut s2 = vec![0.0; k_max + 1];
                for k in 1..=k_max {
                    let m = (k - 1) as f64;
                    lff[k] = lff[k - 1] + (1.0 / theta + m).ln();
                    s1[k] = s1[k - 1] + 1.0 / (beta - m);
                    s2[k] = s2[k - 1] + 1.0 / ((beta - m) * (beta - m));
                }
                Ok(PsiKernel { family, theta, k_max, lff, s1, s2, snk: None })
            }
            Family::Gumbel => {
                if k_max > stirling_table().max_n() {
                    return arg(format!("derivative order {k_max} exceeds the supported maximum"));
                }
                Ok(PsiKernel {
                    family,
                    theta,
                    k_max,
                    lff: vec![],
                    s1: vec![],
                    s2: vec![],
                    snk: Some(SnkTable::new(1.0 / theta, k_max)),
                })
            }
            _ => Err(family.unsupported("the log-scaled generator derivative")),
        }
    }

    /// Fills `out[k]` for `k = k_min..=k_max`. Relative parameter
    /// derivatives are only computed when `with_theta` is set.
    pub fn eval_range(&self, t: f64, k_min: usize, out: &mut [ScaledDeriv], with_theta: bool) {
        let theta = self.theta;
        match self.family {
            Family::Clayton => {
                let beta = -1.0 / theta;
                let l1 = t.ln_1p();
                let th2 = theta * theta;
                for k in k_min..=self.k_max {
                    let kf = k as f64;
                    let mut d = ScaledDeriv {
                        log_abs: self.lff[k] + (beta - kf) * l1,
                        sign: if k % 2 == 0 { 1.0 } else { -1.0 },
                        r1: 0.0,
                        r2: 0.0,
                    };
                    if with_theta {
                        let dd = self.s1[k] + l1;
                        d.r1 = dd / th2;
                        d.r2 = (dd * dd - self.s2[k]) / (th2 * th2) - 2.0 * dd / (th2 * theta);
                    }
                    out[k] = d;
                }
            }
            _ => {
                let snk = self.snk.as_ref().expect("gumbel kernel has a Stirling table");
                let rho = 1.0 / theta;
                let lx = t.ln();
                let xr = (rho * lx).exp();
                let e_r = -xr * lx;
                let e_rr = xr * lx * lx * (xr - 1.0);
                let th2 = theta * theta;
                for k in k_min..=self.k_max {
                    let (log_abs, sign, pr, prr) = if k == 0 {
                        (0.0, 1.0, 0.0, 0.0)
                    } else {
                        let kf = k as f64;
                        let mut m = f64::NEG_INFINITY;
                        for j in 1..=k {
                            let s = snk.get(k, j)[0];
                            if s != 0.0 {
                                m = m.max((j as f64 * rho - kf) * lx + s.abs().ln());
                            }
                        }
                        let (mut p, mut p1, mut p2) = (0.0, 0.0, 0.0);
                        for j in 1..=k {
                            let [s, s1, s2] = snk.get(k, j);
                            let sg = if j % 2 == 0 { 1.0 } else { -1.0 };
                            let w = ((j as f64 * rho - kf) * lx - m).exp() * sg;
                            let jl = j as f64 * lx;
                            p += w * s;
                            if with_theta {
                                p1 += w * (jl * s + s1);
                                p2 += w * (jl * jl * s + 2.0 * jl * s1 + s2);
                            }
                        }
                        (m + p.abs().ln(), p.signum(), p1 / p, p2 / p)
                    };
                    let mut d = ScaledDeriv { log_abs: -xr + log_abs, sign, r1: 0.0, r2: 0.0 };
                    if with_theta {
                        let f_r = e_r + pr;
                        let f_rr = e_rr + 2.0 * e_r * pr + prr;
                        d.r1 = -f_r / th2;
                        d.r2 = f_rr / (th2 * th2) + 2.0 * f_r / (th2 * theta);
                    }
                    out[k] = d;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests;
