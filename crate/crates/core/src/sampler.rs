//! Exact sampling from HACs of any depth by nested frailties.
//!
//! The root draws a frailty `V_0` with Laplace transform `psi_0`. Each
//! internal child draws an inner frailty whose Laplace transform is
//! `exp(-V_parent * phi_parent(psi_child(t)))`, and leaves are set to
//! `psi_node(E / V_node)` with unit exponentials `E`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Exp1, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::data::DataMatrix;
use crate::error::{arg, HacError, Result};
use crate::generators::Family;
use crate::rng::stream;
use crate::tree::{collapse_with_map, require_in_space, Child, HacTree, ParamVector};

/// Largest inner-frailty summation count accepted for discrete families.
const MAX_COMPOUND: f64 = 1e8;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SampleBatch {
    pub data: DataMatrix,
    pub seed: u64,
    pub tree: HacTree,
    pub params: ParamVector,
}

/// Draws `n` rows from `C_theta`. Rows use independent streams of `seed`,
/// so the batch does not depend on thread scheduling.
pub fn sample(tree: &HacTree, theta: &ParamVector, n: usize, seed: u64) -> Result<SampleBatch> {
    require_in_space(tree, theta, 0.0)?;
    let collapsed = collapse_with_map(tree, theta, 0.0)?;
    let (ct, cp) = (&collapsed.tree, &collapsed.params);
    let d = tree.d();
    let mut values = vec![0.0; n * d];
    values
        .par_chunks_mut(d)
        .enumerate()
        .try_for_each(|(r, row)| {
            let mut rng = stream(seed, r as u64);
            draw_row(ct, cp, &mut rng, row)
        })?;
    Ok(SampleBatch { data: DataMatrix::new(n, d, values)?, seed, tree: tree.clone(), params: theta.clone() })
}

fn draw_row(tree: &HacTree, theta: &ParamVector, rng: &mut ChaCha8Rng, out: &mut [f64]) -> Result<()> {
    let fam = theta.family;
    let v0 = root_frailty(fam, theta.values[0], rng)?;
    visit(tree, theta, 0, v0, rng, out)
}

fn visit(tree: &HacTree, theta: &ParamVector, node: usize, v: f64, rng: &mut ChaCha8Rng, out: &mut [f64]) -> Result<()> {
    let fam = theta.family;
    let th = theta.values[node];
    for ch in tree.children(node) {
        match ch {
            Child::Leaf(l) => {
                let e: f64 = Exp1.sample(rng);
                let u = fam.psi_unchecked(th, e / v);
                out[l - 1] = nudge(u);
            }
            Child::Node(c) => {
                let vc = inner_frailty(fam, th, theta.values[*c], v, rng)?;
                visit(tree, theta, *c, vc, rng, out)?;
            }
        }
    }
    Ok(())
}

fn nudge(u: f64) -> f64 {
    if u <= 0.0 || u.is_nan() {
        f64::MIN_POSITIVE
    } else if u >= 1.0 {
        1.0 - f64::EPSILON / 2.0
    } else {
        u
    }
}

fn root_frailty(fam: Family, theta: f64, rng: &mut ChaCha8Rng) -> Result<f64> {
    Ok(match fam {
        Family::Clayton => Gamma::new(1.0 / theta, 1.0)
            .map_err(|e| HacError::Numeric(format!("gamma frailty: {e}")))?
            .sample(rng),
        Family::Gumbel => positive_stable(1.0 / theta, rng),
        Family::Frank => logarithmic(theta, rng),
        Family::Joe => sibuya(1.0 / theta, rng),
    })
}

fn inner_frailty(fam: Family, th_parent: f64, th_child: f64, v: f64, rng: &mut ChaCha8Rng) -> Result<f64> {
    let alpha = th_parent / th_child;
    if alpha >= 1.0 {
        return Ok(v);
    }
    match fam {
        Family::Gumbel => Ok(v.powf(1.0 / alpha) * positive_stable(alpha, rng)),
        Family::Clayton => Ok(tilted_stable_sum(alpha, v, rng)),
        Family::Frank | Family::Joe => {
            if fam == Family::Frank && v > MAX_COMPOUND {
                return Err(HacError::Unsupported(format!(
                    "unsupported nesting: inner frailty would sum {v:e} discrete draws"
                )));
            }
            if fam == Family::Joe {
                return sibuya_sum(alpha, v, rng);
            }
            let count = v as u64;
            let mut total = 0.0;
            {
                let pc = -(-th_child).exp_m1();
                let lpc = pc.ln();
                for _ in 0..count {
                    loop {
                        let k = sibuya(alpha, rng);
                        let u: f64 = rng.random();
                        if u.ln() <= (k - 1.0) * lpc {
                            total += k;
                            break;
                        }
                    }
                }
            }
            Ok(total)
        }
    }
}

/// Positive stable variate with Laplace transform `exp(-t^alpha)`,
/// `alpha` in `(0, 1]`, by the Kanter representation evaluated in log space.
pub fn positive_stable(alpha: f64, rng: &mut impl Rng) -> f64 {
    if alpha >= 1.0 {
        return 1.0;
    }
    let u = std::f64::consts::PI * rng.random::<f64>();
    let w: f64 = Exp1.sample(rng);
    let ls = (alpha * u).sin().ln() - u.sin().ln() / alpha + (1.0 - alpha) / alpha * (((1.0 - alpha) * u).sin().ln() - w.ln());
    ls.exp()
}

/// Sum of `ceil(v)` exponentially tilted stable pieces; the sum has Laplace
/// transform `exp(-v ((1+t)^alpha - 1))`.
fn tilted_stable_sum(alpha: f64, v: f64, rng: &mut ChaCha8Rng) -> f64 {
    let m = v.ceil().max(1.0);
    let scale = (v / m).powf(1.0 / alpha);
    let mut total = 0.0;
    for _ in 0..m as u64 {
        loop {
            let x = scale * positive_stable(alpha, rng);
            let u: f64 = rng.random();
            if u <= (-x).exp() {
                total += x;
                break;
            }
        }
    }
    total
}

/// Sibuya variate with `P(X > k) = prod_{j<=k} (1 - alpha/j)`.
pub fn sibuya(alpha: f64, rng: &mut impl Rng) -> f64 {
    if alpha >= 1.0 {
        return 1.0;
    }
    let u: f64 = rng.random();
    sibuya_inverse(alpha, 1.0 - u)
}

/// `ln P(X > k)` for the Sibuya law.
fn sibuya_ln_survival(alpha: f64, k: f64) -> f64 {
    ln_gamma(k + 1.0 - alpha) - ln_gamma(k + 1.0) - ln_gamma(1.0 - alpha)
}

/// Smallest `k` with `P(X > k) <= s`, from the asymptotic inverse corrected
/// by one exact survival evaluation.
fn sibuya_inverse(alpha: f64, s: f64) -> f64 {
    if s >= 1.0 - alpha {
        return 1.0;
    }
    let ginv = (-(s.ln() + ln_gamma(1.0 - alpha)) / alpha).exp();
    let fl = ginv.floor();
    if ginv > 1.0 / f64::EPSILON {
        return fl;
    }
    if fl < 1.0 || s.ln() < sibuya_ln_survival(alpha, fl) {
        (fl + 1.0).max(2.0)
    } else {
        fl
    }
}

/// Sum of `count` independent Sibuya variates. Small values are counted in
/// bulk with the conditional binomials `P(X = k | X >= k) = alpha / k`; the
/// remaining large values are drawn one by one from the tail.
fn sibuya_sum(alpha: f64, count: f64, rng: &mut ChaCha8Rng) -> Result<f64> {
    if alpha >= 1.0 {
        return Ok(count);
    }
    let mut rem = count as u64;
    let mut total = 0.0;
    let mut k = 1u64;
    while rem > k {
        if k as f64 > MAX_COMPOUND {
            return Err(HacError::Unsupported(format!(
                "unsupported nesting: inner frailty would sum {count:e} discrete draws"
            )));
        }
        let nk = Binomial::new(rem, alpha / k as f64)
            .map_err(|e| HacError::Numeric(format!("binomial draw: {e}")))?
            .sample(rng);
        total += k as f64 * nk as f64;
        rem -= nk;
        k += 1;
    }
    // remaining draws are conditioned on X >= k, that is X > k - 1
    let ln_tail = sibuya_ln_survival(alpha, (k - 1) as f64);
    for _ in 0..rem {
        let v: f64 = rng.random();
        let s = if k == 1 { 1.0 - v } else { (ln_tail + (1.0 - v).ln()).exp() };
        total += sibuya_inverse(alpha, s);
    }
    Ok(total)
}

/// Logarithmic-series variate with `P(X = k) = p^k / (-k ln(1-p))`,
/// `p = 1 - exp(-theta)` (Kemp's LK algorithm).
pub fn logarithmic(theta: f64, rng: &mut impl Rng) -> f64 {
    let p = -(-theta).exp_m1();
    let v: f64 = rng.random();
    if v >= p {
        return 1.0;
    }
    let u: f64 = rng.random();
    let q = -(-theta * u).exp_m1();
    if v <= q * q {
        let k = (1.0 + v.ln() / q.ln()).floor();
        return k.max(1.0);
    }
    if v <= q {
        2.0
    } else {
        1.0
    }
}

/// Column-wise ranks divided by `n + 1`, ties receiving average ranks.
pub fn pseudo_obs(data: &DataMatrix) -> Result<DataMatrix> {
    let (n, d) = (data.n(), data.d());
    if n < 2 {
        return arg("pseudo-observations need at least two rows");
    }
    let mut out = vec![0.0; n * d];
    for j in 0..d {
        let col = data.column(j);
        if col.iter().any(|x| !x.is_finite()) {
            return arg(format!("column {} contains non-finite values", j + 1));
        }
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&a, &b| col[a].total_cmp(&col[b]));
        if col[idx[0]] == col[idx[n - 1]] {
            return arg(format!("column {} is constant", j + 1));
        }
        let mut i = 0;
        while i < n {
            let mut k = i;
            while k + 1 < n && col[idx[k + 1]] == col[idx[i]] {
                k += 1;
            }
            let rank = (i + k) as f64 / 2.0 + 1.0;
            for &r in &idx[i..=k] {
                out[r * d + j] = rank / (n as f64 + 1.0);
            }
            i = k + 1;
        }
    }
    DataMatrix::new(n, d, out)
}
