//! Constrained maximum-likelihood estimation over the cone parameter space.
//!
//! Parameters are optimized in gap coordinates `x`: `theta_root = lb + x_0`
//! and `theta_child = theta_parent + x_child`, so the cone becomes the box
//! `x >= 0` and hypothesis atoms fix single coordinates at zero.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::DataMatrix;
use crate::density::{Order, TwoLevelModel};
use crate::error::{arg, HacError, Result};
use crate::fd::{derivatives, Direction};
use crate::generators::Family;
use crate::tree::{Constraint, HacTree, Hypothesis, ParamVector};

/// Rows per block of the deterministic parallel reduction.
const CHUNK: usize = 64;
/// Observations are clamped this far inside the unit cube before fitting.
pub const DATA_EPS: f64 = 1e-12;

/// Solver settings.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FitOptions {
    pub max_iter: usize,
    /// Sup-norm bound on the projected gradient of the mean log-likelihood.
    pub grad_tol: f64,
    /// Bound on the relative change of the log-likelihood between iterations.
    pub rel_tol: f64,
    /// Perturbed starts in addition to the moment-based start.
    pub perturbed_starts: usize,
    /// Rows used for the pairwise-tau starting values.
    pub tau_rows: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { max_iter: 500, grad_tol: 1e-6, rel_tol: 1e-10, perturbed_starts: 4, tau_rows: 2000 }
    }
}

/// One start's end point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalOptimum {
    pub theta: Vec<f64>,
    pub loglik: f64,
    pub converged: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FitResult {
    pub theta: ParamVector,
    pub tree: HacTree,
    pub loglik: f64,
    pub n: usize,
    pub converged: bool,
    pub n_starts: usize,
    /// Cone constraints holding with equality at the optimum.
    pub active: Vec<Constraint>,
    /// Sup-norm of the projected gradient of the mean log-likelihood.
    pub proj_grad_norm: f64,
    pub iterations: usize,
    /// Distinct end points over all starts, best first.
    pub local_optima: Vec<LocalOptimum>,
    /// Hypothesis text, `None` for the unconstrained fit.
    pub hypothesis: Option<String>,
    /// Branch of a union hypothesis that attained the optimum.
    pub branch: Option<usize>,
    pub data_fingerprint: u64,
}

/// Sum of `f` over rows in fixed blocks, reduced in block order.
pub(crate) fn sum_rows<F>(data: &DataMatrix, width: usize, f: F) -> Result<Vec<f64>>
where
    F: Fn(&[f64], &mut [f64]) -> Result<()> + Sync,
{
    let n = data.n();
    let blocks: Vec<Vec<f64>> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|b| {
            let mut acc = vec![0.0; width];
            for r in b * CHUNK..((b + 1) * CHUNK).min(n) {
                f(data.row(r), &mut acc)?;
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let mut total = vec![0.0; width];
    for b in blocks {
        for (t, v) in total.iter_mut().zip(b) {
            *t += v;
        }
    }
    Ok(total)
}

/// Log-likelihood `sum_r ln c_theta(u_r)`.
pub fn loglik(data: &DataMatrix, tree: &HacTree, theta: &ParamVector) -> Result<f64> {
    let model = TwoLevelModel::new(tree, theta.family)?;
    model_loglik(&model, data, &theta.values)
}

fn model_loglik(model: &TwoLevelModel, data: &DataMatrix, theta: &[f64]) -> Result<f64> {
    let prep = model.prepare(theta)?;
    Ok(sum_rows(data, 1, |u, acc| {
        acc[0] += prep.log_density(u)?;
        Ok(())
    })?[0])
}

/// Log-likelihood with its gradient and Hessian (row-major), summed over rows.
pub fn loglik_derivs(model: &TwoLevelModel, data: &DataMatrix, theta: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let p = theta.len();
    let prep = model.prepare(theta)?;
    let tot = sum_rows(data, 1 + p + p * p, |u, acc| {
        let e = prep.eval(u, Order::Hessian)?;
        acc[0] += e.log_density;
        for i in 0..p {
            acc[1 + i] += e.score[i];
        }
        for k in 0..p * p {
            acc[1 + p + k] += e.hessian[k];
        }
        Ok(())
    })?;
    Ok((tot[0], tot[1..1 + p].to_vec(), tot[1 + p..].to_vec()))
}

/// Kendall's tau-a of two equally long samples.
pub fn kendall_tau(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    let mut s: i64 = 0;
    for i in 0..n {
        for j in i + 1..n {
            let a = (x[i] - x[j]) * (y[i] - y[j]);
            s += (a > 0.0) as i64 - (a < 0.0) as i64;
        }
    }
    s as f64 / (n as f64 * (n as f64 - 1.0) / 2.0)
}

/// Smallest parameter used by the optimizer.
pub fn lower_bound(family: Family) -> f64 {
    if family.lower_closed() {
        family.lower()
    } else {
        family.lower() + 1e-6
    }
}

/// Maps between gap coordinates and parameters for one tree.
struct Gaps {
    parent: Vec<Option<usize>>,
    lb: f64,
}

impl Gaps {
    fn new(tree: &HacTree, family: Family) -> Self {
        Gaps { parent: (0..tree.num_params()).map(|i| tree.parent(i)).collect(), lb: lower_bound(family) }
    }

    /// Preorder guarantees parents precede children.
    fn theta(&self, x: &[f64]) -> Vec<f64> {
        let mut th = vec![0.0; x.len()];
        for i in 0..x.len() {
            th[i] = x[i] + self.parent[i].map_or(self.lb, |p| th[p]);
        }
        th
    }

    fn x(&self, th: &[f64]) -> Vec<f64> {
        (0..th.len()).map(|i| (th[i] - self.parent[i].map_or(self.lb, |p| th[p])).max(0.0)).collect()
    }

    /// `J[i][j] = d theta_i / d x_j`: one when `j` is `i` or an ancestor.
    fn jacobian(&self) -> DMatrix<f64> {
        let p = self.parent.len();
        let mut j = DMatrix::zeros(p, p);
        for i in 0..p {
            let mut a = Some(i);
            while let Some(k) = a {
                j[(i, k)] = 1.0;
                a = self.parent[k];
            }
        }
        j
    }
}

/// Objective: mean negative log-likelihood in the free gap coordinates.
struct Problem<'a> {
    model: &'a TwoLevelModel,
    data: &'a DataMatrix,
    gaps: Gaps,
    jac: DMatrix<f64>,
    free: Vec<usize>,
    p: usize,
    analytic: bool,
}

struct Eval {
    f: f64,
    g: DVector<f64>,
    h: DMatrix<f64>,
}

impl Problem<'_> {
    fn full_x(&self, y: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.p];
        for (k, &i) in self.free.iter().enumerate() {
            x[i] = y[k];
        }
        x
    }

    fn value(&self, y: &[f64]) -> f64 {
        let th = self.gaps.theta(&self.full_x(y));
        match model_loglik(self.model, self.data, &th) {
            Ok(v) if v.is_finite() => -v / self.data.n() as f64,
            _ => f64::INFINITY,
        }
    }

    fn eval(&self, y: &[f64]) -> Result<Eval> {
        let m = self.free.len();
        let n = self.data.n() as f64;
        if self.analytic {
            let th = self.gaps.theta(&self.full_x(y));
            let (f, g, h) = loglik_derivs(self.model, self.data, &th)?;
            let p = self.p;
            let g = DVector::from_vec(g);
            let h = DMatrix::from_row_slice(p, p, &h);
            let jf = self.jac.select_columns(&self.free);
            let gx = jf.transpose() * g;
            let hx = jf.transpose() * h * &jf;
            let e = Eval { f: -f / n, g: -gx / n, h: -hx / n };
            if !e.f.is_finite() || e.g.iter().chain(e.h.iter()).any(|v| !v.is_finite()) {
                return Err(HacError::Numeric("non-finite log-likelihood derivatives".into()));
            }
            return Ok(e);
        }
        let step = 1e-4;
        let dirs: Vec<Direction> =
            y.iter().map(|&v| if v < 2.0 * step { Direction::Forward } else { Direction::Central }).collect();
        let (f, g, h) = derivatives(
            |z: &[f64]| {
                let v = self.value(z);
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(HacError::Numeric("non-finite log-likelihood".into()))
                }
            },
            y,
            &vec![step; m],
            &dirs,
        )?;
        Ok(Eval { f, g: DVector::from_vec(g), h: DMatrix::from_row_slice(m, m, &h) })
    }
}

struct StartOutcome {
    y: Vec<f64>,
    f: f64,
    converged: bool,
    pg: f64,
    iterations: usize,
}

fn projected_gradient(y: &[f64], g: &DVector<f64>) -> Vec<f64> {
    y.iter().zip(g.iter()).map(|(&v, &gi)| if v <= 0.0 && gi > 0.0 { 0.0 } else { gi }).collect()
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, b| a.max(b.abs()))
}

/// Newton direction on the free set with eigenvalue-floored Hessian.
fn newton_direction(e: &Eval, inactive: &[usize]) -> Vec<f64> {
    let m = e.g.len();
    let mut d = vec![0.0; m];
    if inactive.is_empty() {
        return d;
    }
    let h = e.h.select_rows(inactive).select_columns(inactive);
    let g = DVector::from_iterator(inactive.len(), inactive.iter().map(|&i| e.g[i]));
    let eig = SymmetricEigen::new(h);
    let lmax = eig.eigenvalues.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    let floor = (lmax * 1e-8).max(1e-12);
    let lam = eig.eigenvalues.map(|l| l.abs().max(floor));
    let q = &eig.eigenvectors;
    let step = -(q * DMatrix::from_diagonal(&lam.map(|l| 1.0 / l)) * q.transpose() * g);
    for (k, &i) in inactive.iter().enumerate() {
        d[i] = step[k];
    }
    d
}

fn run_start(pr: &Problem, y0: Vec<f64>, opts: &FitOptions) -> Result<StartOutcome> {
    let mut y: Vec<f64> = y0.into_iter().map(|v| v.max(0.0)).collect();
    let mut e = pr.eval(&y)?;
    let mut last_change = f64::INFINITY;
    for it in 0..opts.max_iter {
        let pg = projected_gradient(&y, &e.g);
        let pgn = sup(&pg);
        if pgn <= opts.grad_tol && last_change <= opts.rel_tol {
            return Ok(StartOutcome { y, f: e.f, converged: true, pg: pgn, iterations: it });
        }
        // coordinates held at the bound
        let bound_eps = 1e-12;
        let inactive: Vec<usize> = (0..y.len()).filter(|&i| !(y[i] <= bound_eps && e.g[i] > 0.0)).collect();
        let mut d = newton_direction(&e, &inactive);
        if d.iter().zip(e.g.iter()).map(|(a, b)| a * b).sum::<f64>() >= 0.0 {
            d = pg.iter().map(|g| -g).collect();
        }
        let mut accepted = None;
        for attempt in 0..2 {
            let mut t = 1.0;
            for _ in 0..60 {
                let yt: Vec<f64> = y.iter().zip(&d).map(|(a, b)| (a + t * b).max(0.0)).collect();
                let ft = pr.value(&yt);
                let decrease: f64 = e.g.iter().zip(yt.iter().zip(&y)).map(|(g, (a, b))| g * (a - b)).sum();
                if ft.is_finite() && ft <= e.f + 1e-4 * decrease.min(0.0) && yt != y {
                    accepted = Some((yt, ft));
                    break;
                }
                t *= 0.5;
            }
            if accepted.is_some() || attempt == 1 {
                break;
            }
            d = pg.iter().map(|g| -g).collect();
        }
        let Some((yn, fnew)) = accepted else {
            return Ok(StartOutcome { y, f: e.f, converged: pgn <= opts.grad_tol, pg: pgn, iterations: it });
        };
        last_change = (e.f - fnew).abs() / e.f.abs().max(1.0);
        y = yn;
        e = pr.eval(&y)?;
    }
    let pgn = sup(&projected_gradient(&y, &e.g));
    Ok(StartOutcome { y, f: e.f, converged: false, pg: pgn, iterations: opts.max_iter })
}

/// Method-of-moments start: average pairwise tau grouped by lowest common
/// ancestor, inverted and projected onto the cone.
pub fn moment_start(data: &DataMatrix, tree: &HacTree, family: Family, rows: usize) -> Result<Vec<f64>> {
    let n = data.n();
    let step = n.div_ceil(rows.max(2)).max(1);
    let idx: Vec<usize> = (0..n).step_by(step).collect();
    let cols: Vec<Vec<f64>> = (0..data.d()).map(|j| idx.iter().map(|&r| data.row(r)[j]).collect()).collect();
    let p = tree.num_params();
    let mut sums = vec![0.0; p];
    let mut counts = vec![0usize; p];
    for i in 1..=data.d() {
        for j in i + 1..=data.d() {
            let node = tree.lca(i, j)?;
            sums[node] += kendall_tau(&cols[i - 1], &cols[j - 1]);
            counts[node] += 1;
        }
    }
    let lb = lower_bound(family);
    let mut th = vec![lb; p];
    for i in 0..p {
        let tau = (sums[i] / counts[i].max(1) as f64).clamp(0.02, 0.95);
        th[i] = family.tau_inv(tau)?.max(lb);
        if let Some(par) = tree.parent(i) {
            th[i] = th[i].max(th[par]);
        }
    }
    Ok(th)
}

fn perturbed_starts(x: &[f64], count: usize) -> Vec<Vec<f64>> {
    let rules: [fn(usize, f64) -> f64; 4] = [
        |_, v| 0.5 * v,
        |_, v| 1.5 * v + 0.05,
        |i, v| if i == 0 { v } else { 0.0 },
        |i, v| if i == 0 { v } else { 2.0 * v + 0.1 },
    ];
    (0..count).map(|k| x.iter().enumerate().map(|(i, &v)| rules[k % 4](i, v) * (1.0 + (k / 4) as f64 * 0.25)).collect()).collect()
}

struct BranchFit {
    theta: Vec<f64>,
    loglik: f64,
    converged: bool,
    pg: f64,
    iterations: usize,
    optima: Vec<LocalOptimum>,
    starts: usize,
}

fn fit_branch(model: &TwoLevelModel, data: &DataMatrix, tree: &HacTree, fixed: &[usize], opts: &FitOptions) -> Result<BranchFit> {
    let family = model.family();
    let gaps = Gaps::new(tree, family);
    let p = tree.num_params();
    let free: Vec<usize> = (0..p).filter(|i| !fixed.contains(i)).collect();
    let pr = Problem { model, data, jac: gaps.jacobian(), gaps, free: free.clone(), p, analytic: family.has_analytic_derivatives() };
    let x0 = pr.gaps.x(&moment_start(data, tree, family, opts.tau_rows)?);
    let mut starts = vec![x0.clone()];
    starts.extend(perturbed_starts(&x0, opts.perturbed_starts));
    let ys: Vec<Vec<f64>> = starts.iter().map(|x| free.iter().map(|&i| x[i]).collect()).collect();
    let outcomes: Vec<Result<StartOutcome>> = ys.into_par_iter().map(|y| run_start(&pr, y, opts)).collect();
    let mut good: Vec<StartOutcome> = Vec::new();
    let mut errors = Vec::new();
    for o in outcomes {
        match o {
            Ok(s) if s.f.is_finite() => good.push(s),
            Ok(_) => errors.push("non-finite objective".to_string()),
            Err(e) => errors.push(e.to_string()),
        }
    }
    if good.is_empty() {
        return Err(HacError::NonConvergence(format!("all {} starts failed: {}", starts.len(), errors.join("; "))));
    }
    // best value first; earlier starts win exact ties
    let mut order: Vec<usize> = (0..good.len()).collect();
    order.sort_by(|&a, &b| good[a].f.total_cmp(&good[b].f).then(a.cmp(&b)));
    let n = data.n() as f64;
    let mut optima: Vec<LocalOptimum> = Vec::new();
    for &k in &order {
        let th = pr.gaps.theta(&pr.full_x(&good[k].y));
        let ll = -good[k].f * n;
        let dup = optima.iter().any(|o| (o.loglik - ll).abs() <= 1e-6 * n.max(1.0) && o.theta.iter().zip(&th).all(|(a, b)| (a - b).abs() <= 1e-4));
        if !dup {
            optima.push(LocalOptimum { theta: th, loglik: ll, converged: good[k].converged });
        }
    }
    let best = &good[order[0]];
    if !good.iter().any(|s| s.converged) {
        return Err(HacError::NonConvergence(format!(
            "no start converged within {} iterations; best loglik {} with projected gradient {:e}",
            opts.max_iter,
            -best.f * n,
            best.pg
        )));
    }
    Ok(BranchFit {
        theta: optima[0].theta.clone(),
        loglik: -best.f * n,
        converged: best.converged,
        pg: best.pg,
        iterations: best.iterations,
        optima,
        starts: starts.len(),
    })
}

/// Maximum-likelihood fit over the cone parameter space, or over the part of
/// it where `hypothesis` holds (union hypotheses are fitted branch-wise and
/// the best branch is returned).
pub fn mle(data: &DataMatrix, tree: &HacTree, family: Family, hypothesis: Option<&Hypothesis>, opts: &FitOptions) -> Result<FitResult> {
    let p = tree.num_params();
    if data.d() != tree.d() {
        return arg(format!("data have {} columns but the tree has {} leaves", data.d(), tree.d()));
    }
    if data.n() < p + 1 {
        return arg(format!("{} rows cannot identify {p} parameters", data.n()));
    }
    data.check_interior()?;
    let fingerprint = data.fingerprint();
    let data = data.clamped(DATA_EPS);
    let model = TwoLevelModel::new(tree, family)?;
    let branches: Vec<Vec<usize>> = match hypothesis {
        None => vec![vec![]],
        Some(h) => h.branches.iter().map(|b| b.iter().map(|a| a.child).collect()).collect(),
    };
    let fits: Vec<Result<BranchFit>> = branches.par_iter().map(|fixed| fit_branch(&model, &data, tree, fixed, opts)).collect();
    let mut best: Option<(usize, BranchFit)> = None;
    let mut errors = Vec::new();
    let tie = 1e-10 * data.n() as f64;
    for (b, f) in fits.into_iter().enumerate() {
        match f {
            Ok(f) => {
                let better = match &best {
                    None => true,
                    Some((bb, cur)) => {
                        f.loglik > cur.loglik + tie
                            || (f.loglik > cur.loglik - tie && branches[b].len() < branches[*bb].len())
                    }
                };
                if better {
                    best = Some((b, f));
                }
            }
            Err(e) => errors.push(e.to_string()),
        }
    }
    let Some((b, fit)) = best else {
        return Err(HacError::NonConvergence(errors.join("; ")));
    };
    let theta = ParamVector::new(family, fit.theta);
    let gaps = Gaps::new(tree, family);
    let x = gaps.x(&theta.values);
    let active = tree.edges().into_iter().filter(|&(_, c)| x[c] <= 1e-12).map(|(parent, child)| Constraint { parent, child }).collect();
    Ok(FitResult {
        theta,
        tree: tree.clone(),
        loglik: fit.loglik,
        n: data.n(),
        converged: fit.converged,
        n_starts: fit.starts * branches.len(),
        active,
        proj_grad_norm: fit.pg,
        iterations: fit.iterations,
        local_optima: fit.optima,
        hypothesis: hypothesis.map(|h| h.text.clone()),
        branch: hypothesis.map(|_| b),
        data_fingerprint: fingerprint,
    })
}
