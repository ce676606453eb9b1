//! Stirling numbers, falling factorials and the polynomials `s_nk(x)`.
//!
//! Exact tables are built once with arbitrary-precision integers. The
//! density code evaluates `s_nk` through a three-term recurrence that is
//! free of cancellation for `x` in `(0, 1]`; the Stirling-sum form is kept as
//! the reference definition.

use std::sync::OnceLock;

use num_bigint::BigInt;
use num_traits::{ToPrimitive, Zero};

use crate::error::{arg, Result};

/// Default maximum total dimension supported by the tables.
pub const DEFAULT_MAX_DIM: usize = 32;

/// Signed Stirling numbers of the first kind `s(n,k)` and second kind
/// `S(n,k)` for `0 <= k <= n <= max_n`.
#[derive(Debug, Clone)]
pub struct StirlingTable {
    max_n: usize,
    first: Vec<Vec<BigInt>>,
    second: Vec<Vec<BigInt>>,
    first_f64: Vec<Vec<f64>>,
    second_f64: Vec<Vec<f64>>,
}

impl StirlingTable {
    pub fn new(max_n: usize) -> Self {
        let mut first = vec![vec![BigInt::zero(); max_n + 1]; max_n + 1];
        let mut second = vec![vec![BigInt::zero(); max_n + 1]; max_n + 1];
        first[0][0] = BigInt::from(1);
        second[0][0] = BigInt::from(1);
        for n in 0..max_n {
            for k in 1..=n + 1 {
                // s(n+1,k) = s(n,k-1) - n s(n,k);  S(n+1,k) = S(n,k-1) + k S(n,k)
                let f = &first[n][k - 1] - BigInt::from(n) * &first[n][k];
                let s = &second[n][k - 1] + BigInt::from(k) * &second[n][k];
                first[n + 1][k] = f;
                second[n + 1][k] = s;
            }
        }
        let to_f = |t: &Vec<Vec<BigInt>>| -> Vec<Vec<f64>> {
            t.iter()
                .map(|row| row.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect())
                .collect()
        };
        let first_f64 = to_f(&first);
        let second_f64 = to_f(&second);
        StirlingTable { max_n, first, second, first_f64, second_f64 }
    }

    pub fn max_n(&self) -> usize {
        self.max_n
    }

    fn check(&self, n: usize, k: usize) -> Result<()> {
        if k > n {
            return arg(format!("Stirling index k={k} exceeds n={n}"));
        }
        if n > self.max_n {
            return arg(format!("Stirling index n={n} exceeds the configured maximum {}", self.max_n));
        }
        Ok(())
    }

    pub fn first(&self, n: usize, k: usize) -> Result<&BigInt> {
        self.check(n, k)?;
        Ok(&self.first[n][k])
    }

    pub fn second(&self, n: usize, k: usize) -> Result<&BigInt> {
        self.check(n, k)?;
        Ok(&self.second[n][k])
    }

    pub fn first_f64(&self, n: usize, k: usize) -> Result<f64> {
        self.check(n, k)?;
        Ok(self.first_f64[n][k])
    }

    pub fn second_f64(&self, n: usize, k: usize) -> Result<f64> {
        self.check(n, k)?;
        Ok(self.second_f64[n][k])
    }

    /// `s_nk(x) = sum_j x^j s(n,j) S(j,k)` or its first/second derivative in `x`.
    pub fn s_nk(&self, x: f64, n: usize, k: usize, order: u8) -> Result<f64> {
        self.check(n, k)?;
        if order > 2 {
            return arg("derivative order must be 0, 1 or 2");
        }
        let mut acc = 0.0;
        for j in k..=n {
            let coef = self.first_f64[n][j] * self.second_f64[j][k];
            acc += coef * power_deriv(x, j, order);
        }
        Ok(acc)
    }
}

/// Order-th derivative of `x^j`.
fn power_deriv(x: f64, j: usize, order: u8) -> f64 {
    match order {
        0 => x.powi(j as i32),
        1 => {
            if j == 0 {
                0.0
            } else {
                j as f64 * x.powi(j as i32 - 1)
            }
        }
        _ => {
            if j < 2 {
                0.0
            } else {
                (j * (j - 1)) as f64 * x.powi(j as i32 - 2)
            }
        }
    }
}

/// Shared tables sized for [`DEFAULT_MAX_DIM`] plus the two extra orders the
/// density derivatives need.
pub fn table() -> &'static StirlingTable {
    static TABLE: OnceLock<StirlingTable> = OnceLock::new();
    TABLE.get_or_init(|| StirlingTable::new(DEFAULT_MAX_DIM + 2))
}

pub fn stirling_first(n: usize, k: usize) -> Result<BigInt> {
    table().first(n, k).cloned()
}

pub fn stirling_second(n: usize, k: usize) -> Result<BigInt> {
    table().second(n, k).cloned()
}

pub fn s_nk(x: f64, n: usize, k: usize, order: u8) -> Result<f64> {
    table().s_nk(x, n, k, order)
}

/// Falling factorial `(x)_n = x (x-1) ... (x-n+1)` and its derivatives in `x`.
pub fn falling_factorial(x: f64, n: usize, order: u8) -> Result<f64> {
    if order > 2 {
        return arg("derivative order must be 0, 1 or 2");
    }
    let (mut p, mut p1, mut p2) = (1.0, 0.0, 0.0);
    for m in 0..n {
        let f = x - m as f64;
        p2 = p2 * f + 2.0 * p1;
        p1 = p1 * f + p;
        p *= f;
    }
    Ok(match order {
        0 => p,
        1 => p1,
        _ => p2,
    })
}

/// Values and first two `x`-derivatives of `s_nk(x)` for all `k <= n <= n_max`,
/// from the recurrence `s_{n+1,k} = (kx - n) s_{n,k} + x s_{n,k-1}`.
#[derive(Debug, Clone)]
pub struct SnkTable {
    n_max: usize,
    x: f64,
    vals: Vec<[f64; 3]>,
}

impl SnkTable {
    pub fn new(x: f64, n_max: usize) -> Self {
        let w = n_max + 1;
        let mut vals = vec![[0.0; 3]; w * w];
        vals[0] = [1.0, 0.0, 0.0];
        for n in 0..n_max {
            for k in 1..=n + 1 {
                let cur = vals[n * w + k];
                let prev = vals[n * w + k - 1];
                let c = k as f64 * x - n as f64;
                let kf = k as f64;
                let v0 = c * cur[0] + x * prev[0];
                let v1 = kf * cur[0] + c * cur[1] + prev[0] + x * prev[1];
                let v2 = 2.0 * kf * cur[1] + c * cur[2] + 2.0 * prev[1] + x * prev[2];
                vals[(n + 1) * w + k] = [v0, v1, v2];
            }
        }
        SnkTable { n_max, x, vals }
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    /// `[s_nk, s_nk', s_nk'']` at the table's `x`.
    #[inline]
    pub fn get(&self, n: usize, k: usize) -> [f64; 3] {
        self.vals[n * (self.n_max + 1) + k]
    }
}
