//! Kendall's tau maps and their inverses.

use std::f64::consts::PI;
use std::sync::OnceLock;

use statrs::function::gamma::digamma;

use super::Family;
use crate::error::{arg, Result};

/// Knot table `(theta, tau)` used to bracket numerical inversion for families
/// without a closed-form inverse.
#[derive(Debug, Clone)]
pub struct TauGrid {
    pub family: Family,
    pub thetas: Vec<f64>,
    pub taus: Vec<f64>,
    pub tolerance: f64,
}

impl TauGrid {
    pub fn new(family: Family) -> Self {
        let lo = if family.lower_closed() { 0.0 } else { -3.0 };
        let hi = 4.0;
        let n = 141;
        let mut thetas = Vec::with_capacity(n + 1);
        if family.lower_closed() {
            thetas.push(family.lower());
        }
        for i in 0..n {
            let e = lo + (hi - lo) * i as f64 / (n - 1) as f64;
            let th = if family.lower_closed() { family.lower() + 10f64.powf(e) - 1.0 + 1e-3 } else { 10f64.powf(e) };
            thetas.push(th);
        }
        thetas.dedup_by(|a, b| a <= b);
        let taus = thetas.iter().map(|&t| tau_unchecked(family, t)).collect();
        TauGrid { family, thetas, taus, tolerance: 1e-12 }
    }

    pub fn shared(family: Family) -> &'static TauGrid {
        static FRANK: OnceLock<TauGrid> = OnceLock::new();
        static JOE: OnceLock<TauGrid> = OnceLock::new();
        static CLAYTON: OnceLock<TauGrid> = OnceLock::new();
        static GUMBEL: OnceLock<TauGrid> = OnceLock::new();
        let cell = match family {
            Family::Frank => &FRANK,
            Family::Joe => &JOE,
            Family::Clayton => &CLAYTON,
            Family::Gumbel => &GUMBEL,
        };
        cell.get_or_init(|| TauGrid::new(family))
    }

    /// Bracket `[theta_lo, theta_hi]` containing the inverse of `tau`.
    fn bracket(&self, tau: f64) -> (f64, f64) {
        let i = self.taus.partition_point(|&x| x < tau);
        if i == 0 {
            (self.family.lower(), self.thetas[0])
        } else if i == self.taus.len() {
            let mut hi = *self.thetas.last().unwrap();
            let mut lo = hi;
            while tau_unchecked(self.family, hi) < tau {
                lo = hi;
                hi *= 2.0;
            }
            (lo, hi)
        } else {
            (self.thetas[i - 1], self.thetas[i])
        }
    }

    /// Inverts tau by bisection inside the bracketing knots.
    pub fn invert(&self, tau: f64) -> f64 {
        let (mut lo, mut hi) = self.bracket(tau);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if tau_unchecked(self.family, mid) < tau {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

pub(super) fn tau_unchecked(family: Family, theta: f64) -> f64 {
    match family {
        Family::Clayton => theta / (theta + 2.0),
        Family::Gumbel => 1.0 - 1.0 / theta,
        Family::Frank => frank_tau(theta),
        Family::Joe => joe_tau(theta),
    }
}

fn frank_tau(theta: f64) -> f64 {
    if theta < 0.1 {
        let t2 = theta * theta;
        return theta * (1.0 / 9.0 - t2 * (1.0 / 900.0 - t2 * (1.0 / 52920.0 - t2 / 2721600.0)));
    }
    // tau = 1 - 4/theta (1 - D1(theta)), D1 the first Debye function
    let upper = theta.min(60.0);
    let integral = adaptive_simpson(&debye_integrand, 0.0, upper, 1e-13);
    let d1 = integral / theta;
    1.0 - 4.0 / theta * (1.0 - d1)
}

fn debye_integrand(t: f64) -> f64 {
    if t == 0.0 {
        1.0
    } else {
        t / t.exp_m1()
    }
}

fn joe_tau(theta: f64) -> f64 {
    // tau = 1 - (2/theta) F(2/theta), F(x) = (digamma(1+x) - digamma(2)) / (x - 1)
    let x = 2.0 / theta;
    let h = x - 1.0;
    let f = if h.abs() < 1e-4 {
        let zeta3 = 1.202_056_903_159_594_3;
        let d1 = PI * PI / 6.0 - 1.0;
        let d2 = 2.0 - 2.0 * zeta3;
        let d3 = PI.powi(4) / 15.0 - 6.0;
        d1 + h * d2 / 2.0 + h * h * d3 / 6.0
    } else {
        (digamma(1.0 + x) - digamma(2.0)) / h
    };
    1.0 - 2.0 / theta * f
}

pub(crate) fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
    }
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, tol, 40)
}

pub(super) fn tau_inv(family: Family, tau: f64) -> Result<f64> {
    if !(tau.is_finite() && tau >= 0.0 && tau < 1.0) {
        return arg(format!("Kendall's tau {tau} is outside the attainable range [0,1) of the {family} family"));
    }
    match family {
        Family::Clayton => {
            if tau == 0.0 {
                return arg("Kendall's tau 0 is not attainable by the Clayton family on (0,inf)");
            }
            Ok(2.0 * tau / (1.0 - tau))
        }
        Family::Gumbel => Ok(1.0 / (1.0 - tau)),
        Family::Frank => {
            if tau == 0.0 {
                return arg("Kendall's tau 0 is not attainable by the Frank family on (0,inf)");
            }
            Ok(TauGrid::shared(family).invert(tau))
        }
        Family::Joe => {
            if tau == 0.0 {
                return Ok(1.0);
            }
            Ok(TauGrid::shared(family).invert(tau))
        }
    }
}

pub(super) fn dtheta_dtau(family: Family, theta: f64) -> Result<f64> {
    match family {
        Family::Clayton => {
            let t = theta / (theta + 2.0);
            Ok(2.0 / ((1.0 - t) * (1.0 - t)))
        }
        Family::Gumbel => Ok(theta * theta),
        _ => {
            let h = 1e-4 * theta.max(1.0);
            let lo = (theta - h).max(if family.lower_closed() { family.lower() } else { theta / 2.0 });
            let hi = theta + h;
            let slope = (tau_unchecked(family, hi) - tau_unchecked(family, lo)) / (hi - lo);
            Ok(1.0 / slope)
        }
    }
}
