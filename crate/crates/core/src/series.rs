//! Truncated Taylor-series arithmetic.
//!
//! A [`Series`] holds normalized coefficients `c_k = f^{(k)}(x0) / k!` up to a
//! fixed order. Composition of generators through these series gives the
//! higher-order derivatives needed by the slow-path density for every family.

use crate::generators::Family;

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub c: Vec<f64>,
}

impl Series {
    pub fn constant(v: f64, order: usize) -> Self {
        let mut c = vec![0.0; order + 1];
        c[0] = v;
        Series { c }
    }

    /// `x0 + h`, the identity expanded at `x0`.
    pub fn variable(x0: f64, order: usize) -> Self {
        let mut s = Series::constant(x0, order);
        if order >= 1 {
            s.c[1] = 1.0;
        }
        s
    }

    pub fn order(&self) -> usize {
        self.c.len() - 1
    }

    pub fn value(&self) -> f64 {
        self.c[0]
    }

    /// k-th derivative at the expansion point.
    pub fn derivative(&self, k: usize) -> f64 {
        self.c[k] * factorial(k)
    }

    pub fn add(&self, o: &Series) -> Series {
        Series { c: self.c.iter().zip(&o.c).map(|(a, b)| a + b).collect() }
    }

    pub fn sub(&self, o: &Series) -> Series {
        Series { c: self.c.iter().zip(&o.c).map(|(a, b)| a - b).collect() }
    }

    pub fn scale(&self, s: f64) -> Series {
        Series { c: self.c.iter().map(|a| a * s).collect() }
    }

    pub fn add_const(&self, v: f64) -> Series {
        let mut r = self.clone();
        r.c[0] += v;
        r
    }

    pub fn mul(&self, o: &Series) -> Series {
        let n = self.c.len();
        let mut c = vec![0.0; n];
        for i in 0..n {
            if self.c[i] == 0.0 {
                continue;
            }
            for j in 0..n - i {
                c[i + j] += self.c[i] * o.c[j];
            }
        }
        Series { c }
    }

    pub fn exp(&self) -> Series {
        let n = self.c.len();
        let mut b = vec![0.0; n];
        b[0] = self.c[0].exp();
        for k in 1..n {
            let mut acc = 0.0;
            for j in 1..=k {
                acc += j as f64 * self.c[j] * b[k - j];
            }
            b[k] = acc / k as f64;
        }
        Series { c: b }
    }

    /// Natural logarithm; the constant term must be positive.
    pub fn ln(&self) -> Series {
        let n = self.c.len();
        let a0 = self.c[0];
        let mut b = vec![0.0; n];
        b[0] = a0.ln();
        for k in 1..n {
            let mut acc = 0.0;
            for j in 1..k {
                acc += j as f64 * b[j] * self.c[k - j];
            }
            b[k] = (self.c[k] - acc / k as f64) / a0;
        }
        Series { c: b }
    }

    /// `ln(1 + s)` computed without forming `1 + s` in the constant term.
    pub fn ln_1p(&self) -> Series {
        let mut r = self.add_const(1.0).ln();
        r.c[0] = self.c[0].ln_1p();
        r
    }

    /// `exp(s) - 1` with an accurate constant term.
    pub fn exp_m1(&self) -> Series {
        let mut r = self.exp();
        r.c[0] = self.c[0].exp_m1();
        r
    }

    /// Real power; the constant term must be positive.
    pub fn powf(&self, alpha: f64) -> Series {
        let n = self.c.len();
        let a0 = self.c[0];
        let mut b = vec![0.0; n];
        b[0] = a0.powf(alpha);
        for k in 1..n {
            let mut acc = 0.0;
            for j in 1..=k {
                acc += (alpha * j as f64 - (k - j) as f64) * self.c[j] * b[k - j];
            }
            b[k] = acc / (k as f64 * a0);
        }
        Series { c: b }
    }

    /// Powers `s^0 .. s^q_max` of a series with zero constant term.
    pub fn powers(&self, q_max: usize) -> Vec<Series> {
        let mut out = Vec::with_capacity(q_max + 1);
        out.push(Series::constant(1.0, self.order()));
        for q in 1..=q_max {
            let next = out[q - 1].mul(self);
            out.push(next);
        }
        out
    }
}

pub fn factorial(k: usize) -> f64 {
    (1..=k).fold(1.0, |a, b| a * b as f64)
}

/// Taylor expansion of `psi_theta(t0 + h)` in `h`.
pub fn psi_series(family: Family, theta: f64, t0: f64, order: usize) -> Series {
    let x = Series::variable(t0, order);
    match family {
        Family::Clayton => x.add_const(1.0).powf(-1.0 / theta),
        Family::Gumbel => x.powf(1.0 / theta).scale(-1.0).exp(),
        Family::Frank => {
            let p = -(-theta).exp_m1();
            x.scale(-1.0).exp().scale(-p).ln_1p().scale(-1.0 / theta)
        }
        Family::Joe => {
            let base = x.scale(-1.0).exp_m1().scale(-1.0);
            base.powf(1.0 / theta).scale(-1.0).add_const(1.0)
        }
    }
}

/// `phi_theta` applied to a series with constant term in `(0, 1]`.
pub fn phi_of_series(family: Family, theta: f64, s: &Series) -> Series {
    match family {
        Family::Clayton => {
            let mut r = s.powf(-theta).add_const(-1.0);
            r.c[0] = (-theta * s.c[0].ln()).exp_m1();
            r
        }
        Family::Gumbel => s.ln().scale(-1.0).powf(theta),
        Family::Frank => {
            let num = s.scale(-theta).exp_m1();
            num.scale(1.0 / (-theta).exp_m1()).ln().scale(-1.0)
        }
        Family::Joe => {
            let one_minus = s.scale(-1.0).add_const(1.0);
            let mut w = one_minus.clone();
            w.c[0] = 1.0 - s.c[0];
            w.powf(theta).scale(-1.0).ln_1p().scale(-1.0)
        }
    }
}
