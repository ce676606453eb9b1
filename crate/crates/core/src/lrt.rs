//! Likelihood-ratio tests of structural hypotheses on the boundary of the
//! cone parameter space: the statistic, Mahalanobis projections onto local
//! cones, the Monte Carlo null of the limit `q(Z_o) - q(Z_full)`, closed-form
//! chi-bar-squared mixtures, conditional tests, the hybrid nuisance null and
//! local power curves.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::data::DataMatrix;
use crate::error::{arg, HacError, Result};
use crate::estimate::{mle, FitOptions, FitResult};
use crate::fisher::{sigma_hat, EvalPoint, FisherEstimate, Method, SigmaOptions};
use crate::generators::Family;
use crate::rng::stream;
use crate::tree::{local_cones, local_cones_forced, validate_params, Cone, ConeUnion, Constraint, HacTree, Hypothesis, ParamVector, TIGHT_TOL};

/// Statistics at or below this value count as exactly zero.
pub const ZERO_TOL: f64 = 1e-8;
/// Default number of Monte Carlo replicates of the limit law.
pub const DEFAULT_REPLICATES: usize = 5000;
/// Largest number of inequalities whose faces are enumerated.
const MAX_FACE_ROWS: usize = 20;
/// Replicates drawn from one random stream.
const MC_CHUNK: usize = 1024;

/// Result of projecting `z` onto a cone in the `Sigma^{-1}` metric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub z: Vec<f64>,
    pub z_star: Vec<f64>,
    /// `(z - z*)' Sigma^{-1} (z - z*)`.
    pub q: f64,
    /// Inequalities held with equality by the optimal face.
    pub face: Vec<usize>,
    /// Dimension of the optimal face's span.
    pub face_dim: usize,
    /// Branch of a cone union attaining the minimum.
    pub branch: usize,
}

/// One face of a cone with its precomputed projection operator.
#[derive(Clone, Debug)]
struct Face {
    tight: Vec<usize>,
    /// `N (N' Sigma^{-1} N)^{-1} N' Sigma^{-1}` for an orthonormal basis `N`
    /// of the face's linear span.
    map: DMatrix<f64>,
    dim: usize,
}

/// Exact Mahalanobis projection onto one polyhedral cone by face enumeration.
#[derive(Clone, Debug)]
pub struct Projector {
    cone: Cone,
    faces: Vec<Face>,
    /// `Sigma^{-1}`.
    prec: DMatrix<f64>,
}

fn check_pd(sigma: &DMatrix<f64>) -> Result<()> {
    if sigma.nrows() != sigma.ncols() {
        return arg("Sigma must be square");
    }
    if Cholesky::<f64, Dyn>::new(sigma.clone()).is_none() || sigma.iter().any(|v| !v.is_finite()) {
        return Err(HacError::NotPositiveDefinite("Sigma".into()));
    }
    Ok(())
}

/// Greedy selection of linearly independent rows with an orthonormal basis
/// of their span.
fn row_basis(rows: &[Vec<f64>]) -> (Vec<usize>, Vec<DVector<f64>>) {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut keep = Vec::new();
    for (k, r) in rows.iter().enumerate() {
        let v = DVector::from_column_slice(r);
        let norm0 = v.norm();
        if norm0 == 0.0 {
            continue;
        }
        let v = reorthogonalize(v, &basis);
        if v.norm() > 1e-10 * norm0 {
            basis.push(v.normalize());
            keep.push(k);
        }
    }
    (keep, basis)
}

/// Two Gram-Schmidt passes against an orthonormal set.
fn reorthogonalize(mut v: DVector<f64>, basis: &[DVector<f64>]) -> DVector<f64> {
    for _ in 0..2 {
        for b in basis {
            let c = b.dot(&v);
            v -= b * c;
        }
    }
    v
}

/// Orthonormal basis of the orthogonal complement of `basis` in `R^p`.
fn complement(p: usize, basis: &[DVector<f64>]) -> Vec<DVector<f64>> {
    let mut all = basis.to_vec();
    let mut out = Vec::new();
    for j in 0..p {
        if all.len() == p {
            break;
        }
        let v = reorthogonalize(DVector::from_fn(p, |i, _| if i == j { 1.0 } else { 0.0 }), &all);
        if v.norm() > 1e-8 {
            let v = v.normalize();
            all.push(v.clone());
            out.push(v);
        }
    }
    out
}

/// Rank of a set of row vectors.
pub fn rank(rows: &[Vec<f64>]) -> usize {
    row_basis(rows).0.len()
}

impl Projector {
    pub fn new(cone: &Cone, sigma: &DMatrix<f64>) -> Result<Self> {
        check_pd(sigma)?;
        if sigma.nrows() != cone.dim {
            return arg(format!("Sigma is {}x{} but the cone lives in dimension {}", sigma.nrows(), sigma.ncols(), cone.dim));
        }
        if cone.inequalities.len() > MAX_FACE_ROWS {
            return Err(HacError::Unsupported(format!("{} active inequalities are too many to enumerate faces", cone.inequalities.len())));
        }
        let p = cone.dim;
        let prec = sigma.clone().cholesky().expect("checked positive definite").inverse();
        let mut faces = Vec::new();
        for tight in cone.faces() {
            let all: Vec<Vec<f64>> = cone.equalities.iter().cloned().chain(tight.iter().map(|&i| cone.inequalities[i].clone())).collect();
            let null = complement(p, &row_basis(&all).1);
            let k = null.len();
            let map = if k == 0 {
                DMatrix::zeros(p, p)
            } else {
                let n = DMatrix::from_columns(&null);
                let np = n.transpose() * &prec;
                let m = (&np * &n).try_inverse().ok_or_else(|| HacError::Numeric("singular face system".into()))?;
                &n * m * np
            };
            faces.push(Face { tight, map, dim: k });
        }
        Ok(Projector { cone: cone.clone(), faces, prec })
    }

    pub fn cone(&self) -> &Cone {
        &self.cone
    }

    pub fn project(&self, z: &[f64]) -> Projection {
        let zv = DVector::from_column_slice(z);
        let scale = z.iter().fold(1.0f64, |a, b| a.max(b.abs()));
        let mut best: Option<(f64, DVector<f64>, usize)> = None;
        for (k, f) in self.faces.iter().enumerate() {
            let (zs, q) = if f.dim == zv.len() {
                (zv.clone(), 0.0)
            } else {
                let zs = &f.map * &zv;
                let r = &zv - &zs;
                let q = r.dot(&(&self.prec * &r));
                (zs, q)
            };
            let feasible = self.cone.inequalities.iter().enumerate().all(|(i, a)| {
                f.tight.contains(&i) || a.iter().zip(zs.iter()).map(|(x, y)| x * y).sum::<f64>() <= 1e-10 * scale
            });
            if feasible && best.as_ref().is_none_or(|b| q < b.0 - 1e-14 * scale * scale) {
                best = Some((q.max(0.0), zs, k));
            }
        }
        // the apex face (all inequalities tight) is always feasible
        let (q, zs, k) = best.expect("apex face is feasible");
        Projection { z: z.to_vec(), z_star: zs.iter().copied().collect(), q, face: self.faces[k].tight.clone(), face_dim: self.faces[k].dim, branch: 0 }
    }
}

/// Projector onto a union of cones: the best branch wins.
#[derive(Clone, Debug)]
pub struct UnionProjector {
    branches: Vec<Projector>,
}

impl UnionProjector {
    pub fn new(union: &ConeUnion, sigma: &DMatrix<f64>) -> Result<Self> {
        if union.branches.is_empty() {
            return arg("empty cone union");
        }
        Ok(UnionProjector { branches: union.branches.iter().map(|c| Projector::new(c, sigma)).collect::<Result<_>>()? })
    }

    pub fn project(&self, z: &[f64]) -> Projection {
        let mut best: Option<Projection> = None;
        for (b, pr) in self.branches.iter().enumerate() {
            let mut p = pr.project(z);
            p.branch = b;
            if best.as_ref().is_none_or(|x| p.q < x.q) {
                best = Some(p);
            }
        }
        best.unwrap()
    }
}

/// Projection of `z` onto `cone` in the `Sigma^{-1}` metric.
pub fn project(z: &[f64], cone: &Cone, sigma: &DMatrix<f64>) -> Result<Projection> {
    if z.len() != cone.dim {
        return arg("z does not match the cone dimension");
    }
    Ok(Projector::new(cone, sigma)?.project(z))
}

/// `max(0, 2 (l_full - l_null))` after checking both fits describe the same
/// data, tree and family.
pub fn lrt_statistic(fit_null: &FitResult, fit_full: &FitResult) -> Result<f64> {
    if fit_null.tree != fit_full.tree
        || fit_null.theta.family != fit_full.theta.family
        || fit_null.data_fingerprint != fit_full.data_fingerprint
        || fit_null.n != fit_full.n
    {
        return Err(HacError::Provenance("the two fits differ in data, tree or family".into()));
    }
    let l = 2.0 * (fit_full.loglik - fit_null.loglik);
    if l < -ZERO_TOL.max(1e-10 * fit_full.loglik.abs()) {
        return Err(HacError::Numeric(format!("unconstrained fit is worse than the constrained one by {}", -l / 2.0)));
    }
    Ok(l.max(0.0))
}

/// One draw of the limit law.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NullDraw {
    pub l: f64,
    /// `face_dim(Z_full) - face_dim(Z_null)`.
    pub nu: isize,
}

/// Draws of `L = q(Z_o) - q(Z_full)` for `Z ~ N(h, Sigma)`.
pub fn simulate_limit(sigma: &DMatrix<f64>, a: &Cone, a_null: &ConeUnion, h: &[f64], replicates: usize, seed: u64) -> Result<Vec<NullDraw>> {
    let p = sigma.nrows();
    if h.len() != p {
        return arg("mean vector does not match Sigma");
    }
    let chol = Cholesky::new(sigma.clone()).ok_or_else(|| HacError::NotPositiveDefinite("Sigma".into()))?;
    let l = chol.l();
    let full = Projector::new(a, sigma)?;
    let null = UnionProjector::new(a_null, sigma)?;
    let chunks: Vec<Vec<NullDraw>> = (0..replicates.div_ceil(MC_CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut rng = stream(seed, c as u64);
            let count = MC_CHUNK.min(replicates - c * MC_CHUNK);
            (0..count)
                .map(|_| {
                    let e = DVector::from_iterator(p, (0..p).map(|_| rng.sample::<f64, _>(StandardNormal)));
                    let z: Vec<f64> = (&l * e).iter().zip(h).map(|(a, b)| a + b).collect();
                    let pf = full.project(&z);
                    let pn = null.project(&z);
                    let v = (pn.q - pf.q).max(0.0);
                    NullDraw { l: v, nu: pf.face_dim as isize - pn.face_dim as isize }
                })
                .collect()
        })
        .collect();
    Ok(chunks.into_iter().flatten().collect())
}

/// Monte Carlo p-value `(1 + #{L >= L_n}) / (M + 1)`.
pub fn mc_null_pvalue(l_n: f64, sigma: &DMatrix<f64>, a: &Cone, a_null: &ConeUnion, h: &[f64], replicates: usize, seed: u64) -> Result<f64> {
    if replicates == 0 {
        return arg("at least one replicate is needed");
    }
    let draws = simulate_limit(sigma, a, a_null, h, replicates, seed)?;
    let l_n = if l_n <= ZERO_TOL { 0.0 } else { l_n };
    let exceed = draws.iter().filter(|d| d.l >= l_n || (l_n == 0.0)).count();
    Ok((1 + exceed) as f64 / (replicates + 1) as f64)
}

/// Geometries with closed-form limit laws.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Setting {
    /// Two parameters, `theta_0 = theta_1`.
    Cor1,
    /// Twin clusters, `theta_0 = theta_1 = theta_2`.
    Cor2,
    /// Twin clusters, `theta_0` equal to either child (conservative law).
    Cor3,
    /// `theta_0 = theta_1` with a distinct nuisance parameter.
    Cor4,
    /// `theta_0 = theta_1` with a nuisance parameter tied to the root.
    Cor5,
}

/// Mixture `sum_k w_k chi^2_{df_k}` with `df = 0` a point mass at zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureLaw {
    pub weights: Vec<f64>,
    pub dfs: Vec<usize>,
    pub beta: Option<f64>,
    pub setting: Setting,
    /// The law bounds the true one from above rather than matching it.
    pub conservative: bool,
}

/// `(s00 - 2 s01 + s12) / (s00 - 2 s01 + s11)`, clamped to `[-1, 1]`.
pub fn beta(sigma: &DMatrix<f64>) -> Result<f64> {
    if sigma.nrows() != 3 || sigma.ncols() != 3 {
        return arg("beta needs a 3x3 Sigma");
    }
    let num = sigma[(0, 0)] - 2.0 * sigma[(0, 1)] + sigma[(1, 2)];
    let den = sigma[(0, 0)] - 2.0 * sigma[(0, 1)] + sigma[(1, 1)];
    if !(den > 0.0) {
        return Err(HacError::Numeric(format!("beta denominator {den} is not positive")));
    }
    Ok((num / den).clamp(-1.0, 1.0))
}

pub fn mixture_law(setting: Setting, sigma: Option<&DMatrix<f64>>) -> Result<MixtureLaw> {
    let dim = |need: usize| -> Result<()> {
        match sigma {
            Some(s) if s.nrows() != need || s.ncols() != need => arg(format!("{setting:?} needs a {need}x{need} Sigma")),
            _ => Ok(()),
        }
    };
    let half = |setting, conservative| MixtureLaw { weights: vec![0.5, 0.5], dfs: vec![0, 1], beta: None, setting, conservative };
    match setting {
        Setting::Cor1 => {
            dim(2)?;
            Ok(half(setting, false))
        }
        Setting::Cor3 => {
            dim(3)?;
            Ok(half(setting, true))
        }
        Setting::Cor4 => {
            dim(3)?;
            Ok(half(setting, false))
        }
        Setting::Cor2 | Setting::Cor5 => {
            let s = sigma.ok_or_else(|| HacError::Argument(format!("{setting:?} needs Sigma")))?;
            dim(3)?;
            let b = beta(s)?;
            let b = if b.abs() < 1e-12 { 0.0 } else { b };
            let angle = b.acos() / (2.0 * std::f64::consts::PI);
            let g0 = if setting == Setting::Cor2 {
                angle
            } else {
                if b < -1e-12 {
                    return Err(HacError::Unsupported(format!("beta = {b} is negative; use the Monte Carlo null")));
                }
                0.25 + angle
            };
            Ok(MixtureLaw { weights: vec![g0, 0.5, (0.5 - g0).max(0.0)], dfs: vec![0, 1, 2], beta: Some(b), setting, conservative: false })
        }
    }
}

fn chi2_sf(df: usize, x: f64) -> f64 {
    ChiSquared::new(df as f64).expect("positive degrees of freedom").sf(x)
}

/// `P(L > l_n)` under a mixture law; one at `l_n = 0`.
pub fn mixture_pvalue(law: &MixtureLaw, l_n: f64) -> f64 {
    if l_n <= ZERO_TOL {
        return 1.0;
    }
    law.weights.iter().zip(&law.dfs).filter(|(_, &df)| df > 0).map(|(w, &df)| w * chi2_sf(df, l_n)).sum::<f64>().clamp(0.0, 1.0)
}

/// Outcome of the conditional test.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionalOutcome {
    /// Hypothesis equalities not already active at the unconstrained fit.
    pub nu: usize,
    /// Some relevant gap lay just above the tightness tolerance.
    pub ambiguous: bool,
    pub p_value: f64,
    /// Level used for the decision (adjusted in the exact variant).
    pub alpha: f64,
    pub reject: bool,
}

fn rows_for(p: usize, cs: impl IntoIterator<Item = (usize, usize)>) -> Vec<Vec<f64>> {
    cs.into_iter()
        .map(|(a, b)| {
            let mut r = vec![0.0; p];
            r[a] = 1.0;
            r[b] = -1.0;
            r
        })
        .collect()
}

/// Extra constraints `rank([T; H]) - rank(T)` with `T` the constraints tight
/// at `theta` (within `tol`), minimized over hypothesis branches.
pub fn extra_constraints(tree: &HacTree, hypothesis: &Hypothesis, theta: &ParamVector, tol: f64) -> Result<usize> {
    let p = tree.num_params();
    let m = validate_params(tree, theta, tol)?;
    let t = rows_for(p, m.tight.iter().map(|c| (c.parent, c.child)));
    let rt = rank(&t);
    Ok(hypothesis
        .branches
        .iter()
        .map(|b| {
            let mut all = t.clone();
            all.extend(rows_for(p, b.iter().map(|a| (a.parent, a.child))));
            rank(&all) - rt
        })
        .min()
        .unwrap_or(0))
}

/// Conditional test: compare `L_n` with `chi^2_nu`, `nu` the number of
/// hypothesis equalities not active at the unconstrained fit; never rejects
/// when `nu = 0`. With `gamma0`, the level becomes `alpha / (1 - gamma0)`.
pub fn conditional_test(fit_full: &FitResult, fit_null: &FitResult, hypothesis: &Hypothesis, alpha: f64, gamma0: Option<f64>) -> Result<ConditionalOutcome> {
    let l = lrt_statistic(fit_null, fit_full)?;
    let tree = &fit_full.tree;
    let nu_strict = extra_constraints(tree, hypothesis, &fit_full.theta, TIGHT_TOL)?;
    let nu_loose = extra_constraints(tree, hypothesis, &fit_full.theta, 100.0 * TIGHT_TOL)?;
    let nu = nu_strict.min(nu_loose);
    let alpha_used = match gamma0 {
        Some(g) if (0.0..1.0).contains(&g) => alpha / (1.0 - g),
        Some(g) => return arg(format!("gamma0 = {g} must lie in [0, 1)")),
        None => alpha,
    };
    let p_value = if nu == 0 || l <= ZERO_TOL { 1.0 } else { chi2_sf(nu, l) };
    Ok(ConditionalOutcome { nu, ambiguous: nu_strict != nu_loose, p_value, alpha: alpha_used, reject: nu > 0 && p_value < alpha_used })
}

/// Nodes not mentioned by the hypothesis, excluding the root.
pub fn default_nuisance(tree: &HacTree, hypothesis: &Hypothesis) -> Vec<usize> {
    let used = hypothesis.nodes();
    (1..tree.num_params()).filter(|i| !used.contains(i)).collect()
}

/// Mean vector of the hybrid null: `sqrt(n)` times the null-fit gaps of
/// nuisance nodes, accumulated down the tree, zero elsewhere.
pub fn hybrid_mean(tree: &HacTree, theta_null: &[f64], nuisance: &[usize], n: usize) -> Vec<f64> {
    let p = tree.num_params();
    let mut h = vec![0.0; p];
    let rn = (n as f64).sqrt();
    for i in 1..p {
        if nuisance.contains(&i) {
            let q = tree.parent(i).unwrap();
            h[i] = h[q] + rn * (theta_null[i] - theta_null[q]);
        }
    }
    h
}

/// Hybrid nuisance null: the Monte Carlo null at the null fit with nuisance
/// constraints treated as tight and `Z` centred at [`hybrid_mean`].
pub fn hybrid_pvalue(
    fit_full: &FitResult,
    fit_null: &FitResult,
    sigma: &DMatrix<f64>,
    hypothesis: &Hypothesis,
    nuisance: &[usize],
    replicates: usize,
    seed: u64,
) -> Result<f64> {
    let l = lrt_statistic(fit_null, fit_full)?;
    let tree = &fit_null.tree;
    let forced: Vec<Constraint> = nuisance.iter().map(|&c| Constraint { parent: tree.parent(c).unwrap(), child: c }).collect();
    let (a, a_null) = local_cones_forced(tree, hypothesis, &fit_null.theta, TIGHT_TOL, &forced)?;
    let h = hybrid_mean(tree, &fit_null.theta.values, nuisance, fit_null.n);
    mc_null_pvalue(l, sigma, &a, &a_null, &h, replicates, seed)
}

/// One point of a local power curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerPoint {
    pub h_prime: f64,
    pub h: Vec<f64>,
    pub power: f64,
    /// Monte Carlo standard error of `power`.
    pub se: f64,
    /// Exact `P(L = 0)` for a single equality between two coordinates.
    pub atom_zero: Option<f64>,
}

/// Local mean `h = h' e d theta / d tau` of the limit under Kendall-scale
/// departures from `theta`.
pub fn local_mean(family: Family, theta: &[f64], e: &[f64], h_prime: f64) -> Result<Vec<f64>> {
    theta.iter().zip(e).map(|(&t, &ei)| Ok(h_prime * ei * family.dtheta_dtau(t)?)).collect()
}

/// Power `P(L > c_alpha)` with `c_alpha` the `1 - 2 alpha` quantile of
/// `chi^2_1`, for `Z ~ N(h(h'), Sigma)` and the local cones of `hypothesis`
/// at `theta`. Replicates share seeds across grid points.
#[allow(clippy::too_many_arguments)]
pub fn power_curve(
    tree: &HacTree,
    theta: &ParamVector,
    hypothesis: &Hypothesis,
    e: &[f64],
    h_grid: &[f64],
    alpha: f64,
    sigma: &DMatrix<f64>,
    replicates: usize,
    seed: u64,
) -> Result<Vec<PowerPoint>> {
    if !(alpha > 0.0 && alpha < 0.5) {
        return arg("alpha must lie in (0, 0.5)");
    }
    if e.len() != tree.num_params() {
        return arg("direction e must have one entry per node");
    }
    let c_alpha = ChiSquared::new(1.0).unwrap().inverse_cdf(1.0 - 2.0 * alpha);
    let (a, a_null) = local_cones(tree, hypothesis, theta, TIGHT_TOL)?;
    let single = hypothesis.branches.len() == 1 && hypothesis.branches[0].len() == 1;
    h_grid
        .iter()
        .map(|&hp| {
            let h = local_mean(theta.family, &theta.values, e, hp)?;
            let draws = simulate_limit(sigma, &a, &a_null, &h, replicates, seed)?;
            let power = draws.iter().filter(|d| d.l > c_alpha).count() as f64 / replicates as f64;
            let atom_zero = if single {
                let at = hypothesis.branches[0][0];
                let (i, j) = (at.parent, at.child);
                let var = sigma[(i, i)] + sigma[(j, j)] - 2.0 * sigma[(i, j)];
                Some(Normal::new(0.0, 1.0).unwrap().cdf(-(h[j] - h[i]) / var.sqrt()))
            } else {
                None
            };
            Ok(PowerPoint { h_prime: hp, h, power, se: (power * (1.0 - power) / replicates as f64).sqrt(), atom_zero })
        })
        .collect()
}

/// Reference law used by [`run_test`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestMethod {
    /// Monte Carlo null of the limit law.
    Mc,
    /// Closed-form mixture of a recognized geometry.
    Mixture,
    /// Conditional chi-squared test.
    Conditional,
    /// Monte Carlo null with the hybrid nuisance mean.
    Hybrid,
}

impl std::str::FromStr for TestMethod {
    type Err = HacError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mc" => Ok(TestMethod::Mc),
            "mixture" => Ok(TestMethod::Mixture),
            "conditional" => Ok(TestMethod::Conditional),
            "hybrid" => Ok(TestMethod::Hybrid),
            _ => Err(HacError::Parse(format!("unknown test method '{s}'"))),
        }
    }
}

/// Recognizes closed-form geometries from the tree, the hypothesis and the
/// tight set at the null fit.
pub fn detect_setting(tree: &HacTree, hypothesis: &Hypothesis, theta_null: &[f64]) -> Option<Setting> {
    if !tree.is_two_level() {
        return None;
    }
    let kids = tree.internal_children(0);
    let atoms_are_root = hypothesis.branches.iter().flatten().all(|a| a.parent == 0);
    if !atoms_are_root {
        return None;
    }
    match kids.len() {
        1 if hypothesis.branches.len() == 1 && hypothesis.branches[0].len() == 1 => Some(Setting::Cor1),
        2 => {
            let twins = tree.leaf_count(kids[0]) == tree.leaf_count(kids[1]);
            let b = &hypothesis.branches;
            if b.len() == 1 && b[0].len() == 2 && twins {
                Some(Setting::Cor2)
            } else if b.len() == 2 && b.iter().all(|x| x.len() == 1) && twins {
                Some(Setting::Cor3)
            } else if b.len() == 1 && b[0].len() == 1 {
                let other = if b[0][0].child == kids[0] { kids[1] } else { kids[0] };
                if (theta_null[other] - theta_null[0]).abs() <= TIGHT_TOL {
                    twins.then_some(Setting::Cor5)
                } else {
                    Some(Setting::Cor4)
                }
            } else {
                None
            }
        }
        _ => None,
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LrtOptions {
    pub alpha: f64,
    pub replicates: usize,
    pub seed: u64,
    pub fit: FitOptions,
    pub sigma: SigmaOptions,
    /// Use `alpha / (1 - gamma0)` in the conditional test.
    pub exact_conditional: bool,
    /// Nuisance nodes for the hybrid null (default: nodes outside the hypothesis).
    pub nuisance: Option<Vec<usize>>,
}

impl LrtOptions {
    /// Defaults suited to `family`: analytic information where available.
    pub fn for_family(family: Family) -> Self {
        let method = if family.has_analytic_derivatives() { Method::Analytic } else { Method::FiniteDifference };
        LrtOptions {
            alpha: 0.05,
            replicates: DEFAULT_REPLICATES,
            seed: 0,
            fit: FitOptions::default(),
            sigma: SigmaOptions { method, at: Some(EvalPoint::Null), ..SigmaOptions::default() },
            exact_conditional: false,
            nuisance: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LrtResult {
    pub statistic: f64,
    pub p_value: f64,
    pub method: TestMethod,
    pub reject: bool,
    pub alpha: f64,
    pub setting: Option<Setting>,
    pub law: Option<MixtureLaw>,
    pub replicates: Option<usize>,
    pub seed: Option<u64>,
    pub conditional: Option<ConditionalOutcome>,
    pub fit_null: FitResult,
    pub fit_full: FitResult,
    pub sigma: Option<FisherEstimate>,
    pub cones: Option<(Cone, ConeUnion)>,
    pub warnings: Vec<String>,
}

/// Unconstrained fit, repaired when the constrained optimum is better (it is
/// feasible for the unconstrained problem too).
pub fn fit_pair(data: &DataMatrix, tree: &HacTree, family: Family, hypothesis: &Hypothesis, opts: &FitOptions) -> Result<(FitResult, FitResult)> {
    let null = mle(data, tree, family, Some(hypothesis), opts)?;
    let mut full = mle(data, tree, family, None, opts)?;
    if full.loglik < null.loglik {
        full.theta = null.theta.clone();
        full.loglik = null.loglik;
        full.active = null.active.clone();
    }
    Ok((null, full))
}

/// Fits both models, estimates `Sigma` when needed and computes the p-value
/// with the chosen reference law.
pub fn run_test(data: &DataMatrix, tree: &HacTree, family: Family, hypothesis: &Hypothesis, method: TestMethod, opts: &LrtOptions) -> Result<LrtResult> {
    let (fit_null, fit_full) = fit_pair(data, tree, family, hypothesis, &opts.fit)?;
    test_fits(fit_null, fit_full, data, hypothesis, method, opts)
}

/// As [`run_test`] for fits already computed on `data`.
pub fn test_fits(fit_null: FitResult, fit_full: FitResult, data: &DataMatrix, hypothesis: &Hypothesis, method: TestMethod, opts: &LrtOptions) -> Result<LrtResult> {
    let tree = fit_null.tree.clone();
    let statistic = lrt_statistic(&fit_null, &fit_full)?;
    let mut warnings = Vec::new();
    let mut out = LrtResult {
        statistic,
        p_value: 1.0,
        method,
        reject: false,
        alpha: opts.alpha,
        setting: detect_setting(&tree, hypothesis, &fit_null.theta.values),
        law: None,
        replicates: None,
        seed: None,
        conditional: None,
        fit_null: fit_null.clone(),
        fit_full: fit_full.clone(),
        sigma: None,
        cones: None,
        warnings: vec![],
    };
    let sigma_at = |theta: &ParamVector| -> Result<FisherEstimate> {
        let mut so = opts.sigma.clone();
        if so.at.is_none() {
            so.at = Some(EvalPoint::Null);
        }
        sigma_hat(Some(data), &tree, theta, &so)
    };
    let sigma_point = |at: Option<EvalPoint>| if at == Some(EvalPoint::Full) { &fit_full.theta } else { &fit_null.theta };
    let mut method = method;
    if method == TestMethod::Mixture {
        match out.setting {
            Some(s) => {
                let est = if matches!(s, Setting::Cor2 | Setting::Cor5) { Some(sigma_at(sigma_point(opts.sigma.at))?) } else { None };
                let sm = est.as_ref().map(|e| e.sigma_matrix().unwrap());
                match mixture_law(s, sm.as_ref()) {
                    Ok(law) => {
                        out.p_value = mixture_pvalue(&law, statistic);
                        if law.conservative {
                            warnings.push("reference law is a conservative upper bound".into());
                        }
                        out.law = Some(law);
                        out.sigma = est;
                    }
                    Err(HacError::Unsupported(msg)) => {
                        warnings.push(format!("{msg}; falling back to the Monte Carlo null"));
                        method = TestMethod::Mc;
                    }
                    Err(e) => return Err(e),
                }
            }
            None => {
                warnings.push("no closed-form law matches this geometry; falling back to the Monte Carlo null".into());
                method = TestMethod::Mc;
            }
        }
    }
    match method {
        TestMethod::Mixture => {}
        TestMethod::Mc => {
            let est = sigma_at(sigma_point(opts.sigma.at))?;
            let (a, an) = local_cones(&tree, hypothesis, &fit_null.theta, TIGHT_TOL)?;
            out.p_value = mc_null_pvalue(statistic, &est.sigma_matrix().unwrap(), &a, &an, &vec![0.0; tree.num_params()], opts.replicates, opts.seed)?;
            out.replicates = Some(opts.replicates);
            out.seed = Some(opts.seed);
            out.cones = Some((a, an));
            out.sigma = Some(est);
        }
        TestMethod::Hybrid => {
            let est = sigma_at(sigma_point(opts.sigma.at))?;
            let nuisance = opts.nuisance.clone().unwrap_or_else(|| default_nuisance(&tree, hypothesis));
            let forced: Vec<Constraint> = nuisance.iter().map(|&c| Constraint { parent: tree.parent(c).unwrap(), child: c }).collect();
            out.cones = Some(local_cones_forced(&tree, hypothesis, &fit_null.theta, TIGHT_TOL, &forced)?);
            out.p_value = hybrid_pvalue(&fit_full, &fit_null, &est.sigma_matrix().unwrap(), hypothesis, &nuisance, opts.replicates, opts.seed)?;
            out.replicates = Some(opts.replicates);
            out.seed = Some(opts.seed);
            out.sigma = Some(est);
        }
        TestMethod::Conditional => {
            let gamma0 = if opts.exact_conditional {
                let s = out.setting.ok_or_else(|| HacError::Unsupported("the exact conditional test needs a recognized geometry".into()))?;
                let est = if matches!(s, Setting::Cor2 | Setting::Cor5) { Some(sigma_at(sigma_point(opts.sigma.at))?) } else { None };
                let law = mixture_law(s, est.as_ref().map(|e| e.sigma_matrix().unwrap()).as_ref())?;
                out.sigma = est;
                Some(law.weights[0])
            } else {
                None
            };
            let c = conditional_test(&fit_full, &fit_null, hypothesis, opts.alpha, gamma0)?;
            if c.ambiguous {
                warnings.push(format!("tight set is ambiguous at the unconstrained fit; using nu = {}", c.nu));
            }
            out.p_value = c.p_value;
            out.reject = c.reject;
            out.alpha = c.alpha;
            out.conditional = Some(c);
        }
    }
    out.method = method;
    if method != TestMethod::Conditional {
        out.reject = out.p_value < opts.alpha;
    }
    out.warnings = warnings;
    Ok(out)
}
