//! Fisher information and its inverse `Sigma`: analytic observed information
//! for two-level Clayton and Gumbel HACs, finite differences with steps set on
//! the Kendall scale, Monte Carlo expectations, interior shifts for chains of
//! tight constraints and determinant scans.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::data::DataMatrix;
use crate::density::{Order, TwoLevelModel};
use crate::error::{arg, HacError, Result};
use crate::estimate::{sum_rows, DATA_EPS};
use crate::fd::{derivatives, stencil_points, Direction};
use crate::generators::Family;
use crate::sampler::sample;
use crate::tree::{validate_params, HacTree, ParamVector, TIGHT_TOL};

/// Default Kendall-scale step.
pub const DEFAULT_DELTA_TAU: f64 = 0.005;
/// Default Monte Carlo sample size.
pub const DEFAULT_MC_N: usize = 100_000;
/// Smallest admissible ratio of extreme eigenvalues.
pub const PD_RATIO: f64 = 1e-10;

/// Which fit the information is evaluated at.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalPoint {
    /// The null-constrained estimate.
    Null,
    /// The unconstrained estimate.
    Full,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Source {
    Observed { n: usize },
    MonteCarlo { n: usize, seed: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Analytic,
    FiniteDifference,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FisherEstimate {
    pub p: usize,
    /// Information matrix, row-major.
    pub information: Vec<f64>,
    /// Its inverse when positive definite, row-major.
    pub sigma: Option<Vec<f64>>,
    pub theta: ParamVector,
    pub at: Option<EvalPoint>,
    pub source: Source,
    pub method: Method,
    /// Step magnitudes per node (finite differences only).
    pub steps: Vec<f64>,
    pub directions: Vec<Direction>,
    /// Ratio of largest to smallest eigenvalue of the information.
    pub condition: f64,
    /// Ridge added to the diagonal before inversion, when requested.
    pub ridge: Option<f64>,
    /// Whether entries were averaged over parameter symmetries.
    pub symmetrized: bool,
}

impl FisherEstimate {
    pub fn information_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.p, self.p, &self.information)
    }

    pub fn sigma_matrix(&self) -> Option<DMatrix<f64>> {
        self.sigma.as_ref().map(|s| DMatrix::from_row_slice(self.p, self.p, s))
    }
}

/// Signed step `tau^{-1}(tau(theta) - delta_tau) - theta`, negative for
/// positive `delta_tau`.
pub fn kendall_step(family: Family, theta: f64, delta_tau: f64) -> Result<f64> {
    if delta_tau == 0.0 {
        return Ok(0.0);
    }
    let tau = family.tau(theta)?;
    let target = tau - delta_tau;
    let floor = if family.lower_closed() { 0.0 } else { f64::MIN_POSITIVE };
    if target < floor || target >= 1.0 {
        return arg(format!("Kendall tau {tau} minus step {delta_tau} leaves the {family} range"));
    }
    Ok(family.tau_inv(target)? - theta)
}

/// Whether every stencil point stays inside the parameter space.
fn infeasible_node(tree: &HacTree, theta: &ParamVector, steps: &[f64], dirs: &[Direction]) -> Result<Option<(usize, String)>> {
    for m in stencil_points(dirs) {
        let v: Vec<f64> = theta.values.iter().zip(&m).zip(steps).map(|((t, &k), h)| t + k as f64 * h).collect();
        let pv = ParamVector::new(theta.family, v);
        let mem = validate_params(tree, &pv, 0.0)?;
        if let Some(&i) = mem.domain_violations.first() {
            return Ok(Some((i, format!("evaluation point {:?} leaves the {} domain", pv.values, theta.family))));
        }
        if let Some(c) = mem.violated.first() {
            let node = if m[c.parent] != 0 { c.parent } else { c.child };
            return Ok(Some((node, format!("evaluation point {:?} breaks the ordering at {}", pv.values, tree.index(c.child)))));
        }
    }
    Ok(None)
}

/// Automatic directions: backward on parents of tight constraints, forward on
/// their children, central elsewhere; central nodes whose stencil would leave
/// the space are switched to the feasible one-sided direction.
pub fn auto_scheme(tree: &HacTree, theta: &ParamVector, steps: &[f64]) -> Result<Vec<Direction>> {
    let p = tree.num_params();
    let mem = validate_params(tree, theta, TIGHT_TOL)?;
    if !mem.in_space {
        return Err(HacError::OutsideCone(format!("{:?}", theta.values)));
    }
    let mut dirs = vec![Direction::Central; p];
    let mut fixed = vec![false; p];
    for c in &mem.tight {
        for (node, d) in [(c.parent, Direction::Backward), (c.child, Direction::Forward)] {
            if fixed[node] && dirs[node] != d {
                return Err(HacError::Scheme {
                    node: tree.index(node).to_string(),
                    reason: "node is tight with both its parent and a child; apply an interior shift first".into(),
                });
            }
            dirs[node] = d;
            fixed[node] = true;
        }
    }
    for _ in 0..=p {
        let Some((node, reason)) = infeasible_node(tree, theta, steps, &dirs)? else {
            return Ok(dirs);
        };
        if fixed[node] {
            return Err(HacError::Scheme { node: tree.index(node).to_string(), reason });
        }
        // move away from the nearest binding neighbour or domain edge
        let th = &theta.values;
        let below = tree.parent(node).map_or(th[node] - theta.family.lower(), |q| th[node] - th[q]);
        let above = tree.internal_children(node).iter().map(|&c| th[c] - th[node]).fold(f64::INFINITY, f64::min);
        dirs[node] = if below < above { Direction::Forward } else { Direction::Backward };
        fixed[node] = true;
    }
    Err(HacError::Scheme { node: tree.index(0).to_string(), reason: "no feasible stencil".into() })
}

/// Second differences of `f` (mean log-likelihood as a function of the
/// parameter vector) at `theta` with the given steps and directions.
pub fn fd_hessian<F>(f: F, tree: &HacTree, theta: &ParamVector, steps: &[f64], dirs: &[Direction]) -> Result<DMatrix<f64>>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    let p = tree.num_params();
    if steps.len() != p || dirs.len() != p {
        return arg("steps and directions must have one entry per node");
    }
    if let Some((node, reason)) = infeasible_node(tree, theta, steps, dirs)? {
        return Err(HacError::Scheme { node: tree.index(node).to_string(), reason });
    }
    let (_, _, h) = derivatives(f, &theta.values, steps, dirs)?;
    Ok(DMatrix::from_row_slice(p, p, &h))
}

/// Kendall-scale step magnitudes per node.
pub fn kendall_steps(theta: &ParamVector, delta_tau: f64) -> Result<Vec<f64>> {
    theta.values.iter().map(|&t| kendall_step(theta.family, t, delta_tau).map(f64::abs)).collect()
}

/// Mean negative Hessian of the log-density over `data`, analytic.
pub fn analytic_information(data: &DataMatrix, tree: &HacTree, theta: &ParamVector) -> Result<DMatrix<f64>> {
    let model = TwoLevelModel::new(tree, theta.family)?;
    let p = tree.num_params();
    let prep = model.prepare(&theta.values)?;
    let tot = sum_rows(data, p * p, |u, acc| {
        let e = prep.eval(u, Order::Hessian)?;
        for (a, h) in acc.iter_mut().zip(&e.hessian) {
            *a += h;
        }
        Ok(())
    })?;
    Ok(DMatrix::from_row_slice(p, p, &tot) / -(data.n() as f64))
}

/// Mean negative finite-difference Hessian over `data`, with the steps and
/// directions used.
pub fn fd_information(data: &DataMatrix, tree: &HacTree, theta: &ParamVector, delta_tau: f64) -> Result<(DMatrix<f64>, Vec<f64>, Vec<Direction>)> {
    let model = TwoLevelModel::new(tree, theta.family)?;
    let steps = kendall_steps(theta, delta_tau)?;
    let dirs = auto_scheme(tree, theta, &steps)?;
    let n = data.n() as f64;
    let f = |th: &[f64]| -> Result<f64> {
        let prep = model.prepare(th)?;
        Ok(sum_rows(data, 1, |u, acc| {
            acc[0] += prep.log_density(u)?;
            Ok(())
        })?[0]
            / n)
    };
    let h = fd_hessian(f, tree, theta, &steps, &dirs)?;
    Ok((-h, steps, dirs))
}

/// Averages `m` over the parameter permutations that leave the model
/// invariant at `theta`.
pub fn symmetrize(m: &DMatrix<f64>, tree: &HacTree, theta: &[f64]) -> (DMatrix<f64>, bool) {
    let perms = tree.symmetry_permutations(theta, 0.0);
    let p = m.nrows();
    let mut out = DMatrix::zeros(p, p);
    for q in &perms {
        for i in 0..p {
            for j in 0..p {
                out[(q[i], q[j])] += m[(i, j)];
            }
        }
    }
    out /= perms.len() as f64;
    let sym = (&out + out.transpose()) * 0.5;
    (sym, perms.len() > 1)
}

/// Checks positive definiteness and returns the inverse together with the
/// condition number; with `ridge` a flagged multiple of the identity is added
/// instead of failing.
pub fn invert_information(info: &DMatrix<f64>, ridge: bool) -> Result<(DMatrix<f64>, f64, Option<f64>)> {
    let p = info.nrows();
    let eig = SymmetricEigen::new(info.clone());
    let lmax = eig.eigenvalues.max();
    let lmin = eig.eigenvalues.min();
    let cond = if lmin > 0.0 { lmax / lmin } else { f64::INFINITY };
    if lmax > 0.0 && lmin > PD_RATIO * lmax && info.iter().all(|v| v.is_finite()) {
        let inv = info.clone().cholesky().map(|c| c.inverse()).ok_or_else(|| HacError::NotPositiveDefinite("Cholesky factorization failed".into()))?;
        return Ok((inv, cond, None));
    }
    if !ridge {
        return Err(HacError::NotPositiveDefinite(format!("eigenvalues range from {lmin:e} to {lmax:e}")));
    }
    let r = 1e-8 * info.trace() / p as f64;
    let shifted = info + DMatrix::identity(p, p) * r;
    let inv = shifted
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| HacError::NotPositiveDefinite(format!("still indefinite after a ridge of {r:e}; eigenvalues from {lmin:e} to {lmax:e}")))?;
    Ok((inv, cond, Some(r)))
}

/// Settings of [`sigma_hat`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SigmaOptions {
    pub method: Method,
    /// `Some((N, seed))` for a Monte Carlo sample from `C_theta`.
    pub monte_carlo: Option<(usize, u64)>,
    pub delta_tau: f64,
    pub at: Option<EvalPoint>,
    /// Average entries over parameter symmetries (done by default under the null).
    pub symmetrize: Option<bool>,
    pub ridge: bool,
}

impl Default for SigmaOptions {
    fn default() -> Self {
        SigmaOptions { method: Method::Analytic, monte_carlo: None, delta_tau: DEFAULT_DELTA_TAU, at: None, symmetrize: None, ridge: false }
    }
}

/// Estimates the information at `theta` from observed data or a Monte Carlo
/// sample and inverts it.
pub fn sigma_hat(data: Option<&DataMatrix>, tree: &HacTree, theta: &ParamVector, opts: &SigmaOptions) -> Result<FisherEstimate> {
    let (sample_data, source) = match (opts.monte_carlo, data) {
        (Some((n, seed)), _) => (sample(tree, theta, n, seed)?.data, Source::MonteCarlo { n, seed }),
        (None, Some(d)) => (d.clone(), Source::Observed { n: d.n() }),
        (None, None) => return arg("observed information needs data"),
    };
    let data = sample_data.clamped(DATA_EPS);
    let (info, steps, dirs) = match opts.method {
        Method::Analytic => (analytic_information(&data, tree, theta)?, vec![], vec![]),
        Method::FiniteDifference => fd_information(&data, tree, theta, opts.delta_tau)?,
    };
    let want_sym = opts.symmetrize.unwrap_or(opts.at == Some(EvalPoint::Null));
    let (info, symmetrized) = if want_sym { symmetrize(&info, tree, &theta.values) } else { ((&info + info.transpose()) * 0.5, false) };
    let (sigma, condition, ridge) = invert_information(&info, opts.ridge)?;
    // inversion round-off would otherwise break the enforced equalities
    let sigma = if symmetrized { symmetrize(&sigma, tree, &theta.values).0 } else { (&sigma + sigma.transpose()) * 0.5 };
    Ok(FisherEstimate {
        p: tree.num_params(),
        information: row_major(&info),
        sigma: Some(row_major(&sigma)),
        theta: theta.clone(),
        at: opts.at,
        source,
        method: opts.method,
        steps,
        directions: dirs,
        condition,
        ridge,
        symmetrized,
    })
}

pub(crate) fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut v = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            v.push(m[(i, j)]);
        }
    }
    v
}

/// Moves nodes of tight chains spanning three or more levels apart by
/// `g(n) |delta*|`: the top of a chain moves down, the bottom up and
/// intermediate levels proportionally, so every constraint becomes strict.
/// Shorter chains are left unchanged.
pub fn interior_shift(tree: &HacTree, theta: &ParamVector, n: usize, delta_tau: f64) -> Result<ParamVector> {
    interior_shift_with(tree, theta, 1.0 / (n as f64).sqrt(), delta_tau)
}

/// As [`interior_shift`] with an explicit factor `g`.
pub fn interior_shift_with(tree: &HacTree, theta: &ParamVector, g: f64, delta_tau: f64) -> Result<ParamVector> {
    let steps = kendall_steps(theta, delta_tau)?;
    shift_chains(tree, theta, g, &steps)
}

/// As [`interior_shift`] with explicit factor `g` and step magnitudes.
pub fn shift_chains(tree: &HacTree, theta: &ParamVector, g: f64, steps: &[f64]) -> Result<ParamVector> {
    let mem = validate_params(tree, theta, TIGHT_TOL)?;
    if !mem.in_space {
        return Err(HacError::OutsideCone(format!("{:?}", theta.values)));
    }
    let p = tree.num_params();
    let tight_to_parent: Vec<bool> = (0..p).map(|i| mem.tight.iter().any(|c| c.child == i)).collect();
    // level within the tight component and the component's root
    let mut level = vec![0usize; p];
    let mut top = (0..p).collect::<Vec<_>>();
    for i in 0..p {
        if tight_to_parent[i] {
            let q = tree.parent(i).unwrap();
            level[i] = level[q] + 1;
            top[i] = top[q];
        }
    }
    let mut depth = vec![0usize; p];
    for i in 0..p {
        depth[top[i]] = depth[top[i]].max(level[i]);
    }
    let mut out = theta.values.clone();
    for i in 0..p {
        let levels = depth[top[i]] + 1;
        if levels < 3 {
            continue;
        }
        let step = steps[i].abs();
        let pos = 2.0 * level[i] as f64 / (levels - 1) as f64 - 1.0;
        out[i] += g * step * pos;
    }
    let shifted = ParamVector::new(theta.family, out);
    let after = validate_params(tree, &shifted, 0.0)?;
    if !after.in_space {
        return Err(HacError::OutsideCone(format!("interior shift leaves the parameter space at {:?}", shifted.values)));
    }
    for c in &after.tight {
        if depth[top[c.child]] + 1 >= 3 {
            return Err(HacError::Numeric(format!("interior shift left {} tight", tree.index(c.child))));
        }
    }
    Ok(shifted)
}

/// One point of a determinant scan.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetPoint {
    pub theta0: f64,
    pub theta1: f64,
    /// Determinant of `Sigma`, `None` when the information is singular or
    /// non-finite.
    pub det_sigma: Option<f64>,
    pub det_information: f64,
}

/// Upper-triangular grid `o < theta0 <= theta1 <= o + width` with `k` values
/// per axis, `o` the lower end of the family's parameter range.
pub fn scan_grid(family: Family, k: usize, width: f64) -> Vec<(f64, f64)> {
    let o = family.lower();
    let vals: Vec<f64> = (1..=k).map(|i| o + width * i as f64 / k as f64).collect();
    let mut g = Vec::new();
    for &a in &vals {
        for &b in &vals {
            if a <= b {
                g.push((a, b));
            }
        }
    }
    g
}

/// `det(Sigma)` for the trivariate structure `{{1,2},3}` at each grid point,
/// from `n` Monte Carlo draws per point.
pub fn determinant_scan(family: Family, grid: &[(f64, f64)], n: usize, seed: u64, method: Method) -> Result<Vec<DetPoint>> {
    let tree = HacTree::from_json("[[1,2],3]")?;
    grid.iter()
        .enumerate()
        .map(|(k, &(a, b))| {
            let theta = ParamVector::new(family, vec![a, b]);
            let data = sample(&tree, &theta, n, crate::rng::derive_seed(&[seed, k as u64]))?.data.clamped(DATA_EPS);
            let info = match method {
                Method::Analytic => analytic_information(&data, &tree, &theta)?,
                Method::FiniteDifference => fd_information(&data, &tree, &theta, DEFAULT_DELTA_TAU)?.0,
            };
            let info = (&info + info.transpose()) * 0.5;
            let det_i = info.determinant();
            let det_sigma = invert_information(&info, false).ok().map(|(s, _, _)| s.determinant());
            Ok(DetPoint { theta0: a, theta1: b, det_sigma, det_information: det_i })
        })
        .collect()
}

#[cfg(test)]
mod tests;
