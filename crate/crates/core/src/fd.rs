//! Finite-difference stencils with per-coordinate one-sided or central steps.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Direction of the difference along one coordinate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Central,
    Forward,
    Backward,
}

impl Direction {
    fn sign(self) -> i8 {
        match self {
            Direction::Backward => -1,
            _ => 1,
        }
    }
}

/// Offsets, in multiples of each coordinate's step, that the stencil needs.
pub(crate) fn stencil_points(dirs: &[Direction]) -> Vec<Vec<i8>> {
    let p = dirs.len();
    let mut pts: Vec<Vec<i8>> = vec![vec![0; p]];
    let unit = |i: usize, m: i8| {
        let mut v = vec![0i8; p];
        v[i] = m;
        v
    };
    for i in 0..p {
        match dirs[i] {
            Direction::Central => {
                pts.push(unit(i, 1));
                pts.push(unit(i, -1));
            }
            d => {
                pts.push(unit(i, d.sign()));
                pts.push(unit(i, 2 * d.sign()));
            }
        }
        for j in 0..i {
            for a in side_offsets(dirs[i]) {
                for b in side_offsets(dirs[j]) {
                    let mut v = vec![0i8; p];
                    v[i] = a;
                    v[j] = b;
                    pts.push(v);
                }
            }
        }
    }
    pts.sort();
    pts.dedup();
    pts
}

fn side_offsets(d: Direction) -> Vec<i8> {
    match d {
        Direction::Central => vec![1, -1],
        d => vec![d.sign(), 0],
    }
}

/// Value, gradient and Hessian of `f` at `x` from the stencil defined by
/// positive step magnitudes and directions.
///
/// Diagonals use `[f(+h) - 2f + f(-h)] / h^2` (central) or
/// `[f(2sh) - 2f(sh) + f] / h^2` (one-sided, `s = +-1`); mixed entries use
/// the four-point product of the two coordinates' first differences.
pub(crate) fn derivatives<F>(f: F, x: &[f64], steps: &[f64], dirs: &[Direction]) -> Result<(f64, Vec<f64>, Vec<f64>)>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    use rayon::prelude::*;
    let p = x.len();
    let pts = stencil_points(dirs);
    let values: Vec<f64> = pts
        .par_iter()
        .map(|m| {
            let y: Vec<f64> = (0..p).map(|i| x[i] + m[i] as f64 * steps[i]).collect();
            f(&y)
        })
        .collect::<Result<_>>()?;
    let table: HashMap<&Vec<i8>, f64> = pts.iter().zip(values).collect();
    Ok(assemble(|m: &[i8]| table[&m.to_vec()], steps, dirs))
}

/// Combines stencil values into value, gradient and Hessian (row-major).
pub(crate) fn assemble(val: impl Fn(&[i8]) -> f64, steps: &[f64], dirs: &[Direction]) -> (f64, Vec<f64>, Vec<f64>) {
    let p = steps.len();
    let at = |pairs: &[(usize, i8)]| {
        let mut m = vec![0i8; p];
        for &(i, v) in pairs {
            m[i] = v;
        }
        val(&m)
    };
    let f0 = at(&[]);
    let mut grad = vec![0.0; p];
    let mut hess = vec![0.0; p * p];
    for i in 0..p {
        let h = steps[i];
        match dirs[i] {
            Direction::Central => {
                let (fp, fm) = (at(&[(i, 1)]), at(&[(i, -1)]));
                grad[i] = (fp - fm) / (2.0 * h);
                hess[i * p + i] = (fp - 2.0 * f0 + fm) / (h * h);
            }
            d => {
                let s = d.sign();
                let (f1, f2) = (at(&[(i, s)]), at(&[(i, 2 * s)]));
                grad[i] = s as f64 * (-3.0 * f0 + 4.0 * f1 - f2) / (2.0 * h);
                hess[i * p + i] = (f2 - 2.0 * f1 + f0) / (h * h);
            }
        }
        for j in 0..i {
            // first difference along i applied to first differences along j
            let (oi, oj) = (side_offsets(dirs[i]), side_offsets(dirs[j]));
            let v = at(&[(i, oi[0]), (j, oj[0])]) - at(&[(i, oi[0]), (j, oj[1])]) - at(&[(i, oi[1]), (j, oj[0])])
                + at(&[(i, oi[1]), (j, oj[1])]);
            let span = |d: Direction, h: f64| match d {
                Direction::Central => 2.0 * h,
                d => d.sign() as f64 * h,
            };
            let e = v / (span(dirs[i], steps[i]) * span(dirs[j], steps[j]));
            hess[i * p + j] = e;
            hess[j * p + i] = e;
        }
    }
    (f0, grad, hess)
}
