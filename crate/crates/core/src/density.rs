//! Exact log-density of two-level HACs with its score and Hessian.
//!
//! For a root with leaf children and internal children `s` over `d_s` leaves,
//! the density is `c(u) = (-1)^d sum_k B_k Psi_k * prod(-phi'(u))`, where
//! `Psi_k = psi_0^{(k)}(t)`, `t = sum_s g_s(t_s) + sum_leaves phi_0(u)` and
//! `B_k` sums products of `a_{s q}(t_s)` over compositions `q`. Clayton and
//! Gumbel use closed forms for every `a_{s q}` and its parameter derivatives;
//! other families go through truncated Taylor series and support values only.

use nalgebra::DMatrix;

use crate::error::{arg, HacError, Result};
use crate::generators::{Family, PsiKernel, ScaledDeriv, SnkTable};
use crate::series::{factorial, phi_of_series, psi_series, Series};
use crate::tree::{Child, HacTree};

/// How many derivatives to compute.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Order {
    Value,
    Score,
    Hessian,
}

#[derive(Clone, Debug)]
struct Cluster {
    param: usize,
    cols: Vec<usize>,
}

/// Two-level model: structure and family, independent of parameter values.
#[derive(Clone, Debug)]
pub struct TwoLevelModel {
    family: Family,
    tree: HacTree,
    d: usize,
    p: usize,
    k_min: usize,
    clusters: Vec<Cluster>,
    root_leaves: Vec<usize>,
    /// Compositions over clusters, bucketed by `k - k_min`, flattened with
    /// stride `clusters.len()`, lexicographic within each bucket.
    compositions: Vec<Vec<u8>>,
}

/// Log-density with optional score and Hessian (row-major `p x p`).
#[derive(Clone, Debug, PartialEq)]
pub struct DensityEval {
    pub log_density: f64,
    pub score: Vec<f64>,
    pub hessian: Vec<f64>,
}

impl TwoLevelModel {
    pub fn new(tree: &HacTree, family: Family) -> Result<Self> {
        if !tree.is_two_level() {
            return Err(HacError::Unsupported(format!("the exact density covers trees with at most two levels, {tree} is deeper")));
        }
        let mut clusters = Vec::new();
        let mut root_leaves = Vec::new();
        for ch in tree.children(0) {
            match ch {
                Child::Leaf(l) => root_leaves.push(l - 1),
                Child::Node(n) => clusters.push(Cluster { param: *n, cols: tree.leaves_under(*n).iter().map(|l| l - 1).collect() }),
            }
        }
        let d = tree.d();
        if d > crate::generators::DEFAULT_MAX_DIM {
            return arg(format!("dimension {d} exceeds the supported maximum {}", crate::generators::DEFAULT_MAX_DIM));
        }
        let k_min = tree.child_count(0);
        let m = clusters.len();
        let mut compositions = vec![Vec::new(); d - k_min + 1];
        let sizes: Vec<usize> = clusters.iter().map(|c| c.cols.len()).collect();
        let mut q = vec![1u8; m];
        loop {
            let k = root_leaves.len() + q.iter().map(|&x| x as usize).sum::<usize>();
            compositions[k - k_min].extend_from_slice(&q);
            let mut done = true;
            let mut i = m;
            while i > 0 {
                i -= 1;
                if (q[i] as usize) < sizes[i] {
                    q[i] += 1;
                    for x in q.iter_mut().skip(i + 1) {
                        *x = 1;
                    }
                    done = false;
                    break;
                }
            }
            if done {
                break;
            }
        }
        Ok(TwoLevelModel { family, tree: tree.clone(), d, p: tree.num_params(), k_min, clusters, root_leaves, compositions })
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn tree(&self) -> &HacTree {
        &self.tree
    }

    pub fn num_params(&self) -> usize {
        self.p
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// Number of compositions with `sum q = k`.
    pub fn composition_count(&self, k: usize) -> usize {
        if k < self.k_min || k > self.d {
            0
        } else if self.clusters.is_empty() {
            (k == self.d) as usize
        } else {
            self.compositions[k - self.k_min].len() / self.clusters.len()
        }
    }

    fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.p {
            return arg(format!("expected {} parameters, got {}", self.p, theta.len()));
        }
        for &t in theta {
            self.family.check(t)?;
        }
        for c in &self.clusters {
            let (a, b) = (theta[0], theta[c.param]);
            if b < a - 1e-12 * a.abs().max(1.0) {
                return Err(HacError::OutsideCone(format!("theta{} = {b} is below the root parameter {a}", self.tree.index(c.param))));
            }
        }
        Ok(())
    }

    fn check_u(&self, u: &[f64]) -> Result<()> {
        if u.len() != self.d {
            return arg(format!("expected {} coordinates, got {}", self.d, u.len()));
        }
        for (i, &x) in u.iter().enumerate() {
            if !(x > 0.0 && x < 1.0) {
                return arg(format!("u[{}] = {x} is not strictly inside (0,1)", i + 1));
            }
        }
        Ok(())
    }

    /// Parameter-dependent caches shared by all observations.
    pub fn prepare(&self, theta: &[f64]) -> Result<Prepared<'_>> {
        self.check_theta(theta)?;
        let analytic = self.family.has_analytic_derivatives();
        let psi = if analytic { Some(PsiKernel::new(self.family, theta[0], self.d + 2)?) } else { None };
        let snk = if analytic {
            self.clusters.iter().map(|c| SnkTable::new(theta[0] / theta[c.param], c.cols.len())).collect()
        } else {
            Vec::new()
        };
        Ok(Prepared { model: self, theta: theta.to_vec(), psi, snk })
    }

    pub fn log_density(&self, theta: &[f64], u: &[f64]) -> Result<f64> {
        Ok(self.prepare(theta)?.eval(u, Order::Value)?.log_density)
    }

    pub fn score(&self, theta: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        Ok(self.prepare(theta)?.eval(u, Order::Score)?.score)
    }

    pub fn hessian(&self, theta: &[f64], u: &[f64]) -> Result<DMatrix<f64>> {
        let e = self.prepare(theta)?.eval(u, Order::Hessian)?;
        Ok(DMatrix::from_row_slice(self.p, self.p, &e.hessian))
    }

    /// Log-density through Taylor-series composition, valid for every family.
    pub fn log_density_series(&self, theta: &[f64], u: &[f64]) -> Result<f64> {
        self.check_theta(theta)?;
        self.check_u(u)?;
        series_log_density(self, theta, u)
    }
}

/// A model with parameter-dependent caches for one `theta`.
pub struct Prepared<'a> {
    model: &'a TwoLevelModel,
    theta: Vec<f64>,
    psi: Option<PsiKernel>,
    snk: Vec<SnkTable>,
}

/// Per-cluster `A_{s j}` values with parameter derivatives.
#[derive(Clone, Copy, Default)]
struct ADeriv {
    v: f64,
    d0: f64,
    ds: f64,
    d00: f64,
    d0s: f64,
    dss: f64,
}

/// Compensated (Neumaier) accumulator.
#[derive(Clone, Copy, Default)]
struct Acc {
    sum: f64,
    comp: f64,
}

impl Acc {
    #[inline]
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }
    fn total(&self) -> f64 {
        self.sum + self.comp
    }
}

impl Prepared<'_> {
    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn log_density(&self, u: &[f64]) -> Result<f64> {
        Ok(self.eval(u, Order::Value)?.log_density)
    }

    pub fn eval(&self, u: &[f64], order: Order) -> Result<DensityEval> {
        let model = self.model;
        model.check_u(u)?;
        if self.psi.is_none() {
            if order > Order::Value {
                return Err(HacError::Unsupported(format!(
                    "analytic parameter derivatives are not available for the {} family",
                    model.family
                )));
            }
            let v = series_log_density(model, &self.theta, u)?;
            return Ok(DensityEval { log_density: v, score: vec![], hessian: vec![] });
        }
        self.eval_analytic(u, order)
    }

    fn eval_analytic(&self, u: &[f64], order: Order) -> Result<DensityEval> {
        let model = self.model;
        let fam = model.family;
        let p = model.p;
        let m = model.clusters.len();
        let th = &self.theta;
        let th0 = th[0];
        let gamma = fam.gamma_shift();
        let want1 = order >= Order::Score;
        let want2 = order >= Order::Hessian;

        let mut ln_b2 = 0.0;
        let mut dln_b2 = vec![0.0; p];
        let mut d2ln_b2 = vec![0.0; p];

        // t and its parameter derivatives
        let mut t = 0.0;
        let mut t0 = 0.0;
        let mut t00 = 0.0;
        let mut ts = vec![0.0; m];
        let mut t0s = vec![0.0; m];
        let mut tss = vec![0.0; m];

        for &col in &model.root_leaves {
            let pd = fam.phi_derivs_unchecked(th0, u[col]);
            t += pd.value;
            t0 += pd.dtheta;
            t00 += pd.d2theta;
            ln_b2 += (-pd.d1).ln();
            dln_b2[0] += pd.dtheta_du / pd.d1;
            d2ln_b2[0] -= 1.0 / (th0 * th0);
        }

        // a-function tables per cluster, indexed [s][j], j = 1..=d_s
        let mut a_tab: Vec<Vec<ADeriv>> = Vec::with_capacity(m);
        for (s, cl) in model.clusters.iter().enumerate() {
            let ths = th[cl.param];
            let n = cl.cols.len();
            let (mut ti, mut tdot, mut tddot) = (0.0, 0.0, 0.0);
            for &col in &cl.cols {
                let pd = fam.phi_derivs_unchecked(ths, u[col]);
                ti += pd.value;
                tdot += pd.dtheta;
                tddot += pd.d2theta;
                ln_b2 += (-pd.d1).ln();
                dln_b2[cl.param] += pd.dtheta_du / pd.d1;
                d2ln_b2[cl.param] -= 1.0 / (ths * ths);
            }
            let alpha = th0 / ths;
            let a0 = 1.0 / ths;
            let a_s = -th0 / (ths * ths);
            let a0s = -1.0 / (ths * ths);
            let ass = 2.0 * th0 / (ths * ths * ths);
            let w = gamma + ti;
            let l = w.ln();
            let snk = &self.snk[s];
            let mut row = vec![ADeriv::default(); n + 1];
            for (j, slot) in row.iter_mut().enumerate().skip(1) {
                let jf = j as f64;
                let e = jf * alpha - n as f64;
                let we = (e * l).exp();
                let [sv, s1, s2] = snk.get(n, j);
                let a = we * sv;
                let mut ad = ADeriv { v: a, ..ADeriv::default() };
                if want1 {
                    let a_al = jf * l * a + we * s1;
                    let a_t = e / w * a;
                    ad.d0 = a_al * a0;
                    ad.ds = a_al * a_s + a_t * tdot;
                    if want2 {
                        let a_alal = jf * jf * l * l * a + 2.0 * jf * l * we * s1 + we * s2;
                        let a_tt = e * (e - 1.0) / (w * w) * a;
                        let a_tal = (jf * a + e * a_al) / w;
                        ad.d00 = a_alal * a0 * a0;
                        ad.d0s = a_alal * a0 * a_s + a_al * a0s + a_tal * tdot * a0;
                        ad.dss = a_alal * a_s * a_s + a_al * ass + 2.0 * a_tal * a_s * tdot + a_tt * tdot * tdot + a_t * tddot;
                    }
                }
                *slot = ad;
            }
            a_tab.push(row);

            let wa = (alpha * l).exp();
            t += wa - gamma;
            if want1 {
                let g_al = wa * l;
                let g_w = alpha * wa / w;
                t0 += g_al * a0;
                ts[s] = g_al * a_s + g_w * tdot;
                if want2 {
                    let g_alal = wa * l * l;
                    let g_ww = alpha * (alpha - 1.0) * wa / (w * w);
                    let g_alw = wa / w * (1.0 + alpha * l);
                    t00 += g_alal * a0 * a0;
                    t0s[s] = g_alal * a0 * a_s + g_al * a0s + g_alw * a0 * tdot;
                    tss[s] = g_alal * a_s * a_s + g_al * ass + 2.0 * g_alw * a_s * tdot + g_ww * tdot * tdot + g_w * tddot;
                }
            }
        }

        // psi_0^{(k)}(t), k = k_min..=d+2, log-scaled
        let d = model.d;
        let kmin = model.k_min;
        let mut psi = vec![ScaledDeriv::default(); d + 3];
        let kernel = self.psi.as_ref().unwrap();
        let kmax_used = if want2 { d + 2 } else if want1 { d + 1 } else { d };
        let mut tmp = vec![ScaledDeriv::default(); d + 3];
        kernel.eval_range(t, kmin, &mut tmp, want1);
        psi[kmin..=kmax_used].copy_from_slice(&tmp[kmin..=kmax_used]);
        let scale = (kmin..=d).map(|k| psi[k].log_abs).fold(f64::NEG_INFINITY, f64::max);
        let val = |k: usize| psi[k].sign * (psi[k].log_abs - scale).exp();

        let mut total = Acc::default();
        let mut grad = vec![Acc::default(); p];
        let mut hess = vec![0.0; p * p];
        let mut pe = vec![0.0; m];

        for k in kmin..=d {
            // B_k and its derivatives
            let comps = &model.compositions[k - kmin];
            let mut b = 0.0;
            let mut bg = vec![0.0; p];
            let mut bh = vec![0.0; p * p];
            if m == 0 {
                b = 1.0;
            } else {
                for q in comps.chunks(m) {
                    let ad: Vec<ADeriv> = (0..m).map(|s| a_tab[s][q[s] as usize]).collect();
                    let prod: f64 = ad.iter().map(|x| x.v).product();
                    b += prod;
                    if !want1 {
                        continue;
                    }
                    for s in 0..m {
                        pe[s] = (0..m).filter(|&l| l != s).map(|l| ad[l].v).product();
                    }
                    for s in 0..m {
                        let ps = model.clusters[s].param;
                        bg[0] += ad[s].d0 * pe[s];
                        bg[ps] += ad[s].ds * pe[s];
                        if want2 {
                            bh[0] += ad[s].d00 * pe[s];
                            bh[ps * p + ps] += ad[s].dss * pe[s];
                            bh[ps] += ad[s].d0s * pe[s];
                            for l in 0..m {
                                if l == s {
                                    continue;
                                }
                                let pe2: f64 = (0..m).filter(|&r| r != s && r != l).map(|r| ad[r].v).product();
                                let pl = model.clusters[l].param;
                                bh[0] += ad[s].d0 * ad[l].d0 * pe2;
                                bh[ps] += ad[l].d0 * ad[s].ds * pe2;
                                bh[ps * p + pl] += ad[s].ds * ad[l].ds * pe2;
                            }
                        }
                    }
                }
            }
            // Psi_k and its derivatives
            let f = val(k);
            let term = b * f;
            total.add(term);
            if !want1 {
                continue;
            }
            let f1 = val(k + 1);
            let mut pg = vec![0.0; p];
            pg[0] = f * psi[k].r1 + t0 * f1;
            for (s, cl) in model.clusters.iter().enumerate() {
                pg[cl.param] = ts[s] * f1;
            }
            for a in 0..p {
                grad[a].add(bg[a] * f + b * pg[a]);
            }
            if !want2 {
                continue;
            }
            let f2 = val(k + 2);
            let mut ph = vec![0.0; p * p];
            ph[0] = f * psi[k].r2 + 2.0 * t0 * f1 * psi[k + 1].r1 + t0 * t0 * f2 + t00 * f1;
            for (s, cs) in model.clusters.iter().enumerate() {
                let a = cs.param;
                ph[a] = ts[s] * f1 * psi[k + 1].r1 + t0 * ts[s] * f2 + t0s[s] * f1;
                for (r, cr) in model.clusters.iter().enumerate() {
                    let bb = cr.param;
                    ph[a * p + bb] = ts[s] * ts[r] * f2 + if r == s { tss[s] * f1 } else { 0.0 };
                }
            }
            // symmetrize the B and Psi Hessians from their upper parts
            for a in 0..p {
                for bb in 0..a {
                    bh[a * p + bb] = bh[bb * p + a];
                    ph[a * p + bb] = ph[bb * p + a];
                }
            }
            for a in 0..p {
                for bb in 0..p {
                    hess[a * p + bb] += bh[a * p + bb] * f + bg[a] * pg[bb] + bg[bb] * pg[a] + b * ph[a * p + bb];
                }
            }
        }

        let s_total = total.total();
        let sign = if d % 2 == 0 { 1.0 } else { -1.0 };
        let b1 = sign * s_total;
        if !(b1 > 0.0) || !b1.is_finite() {
            return Err(HacError::Numeric(format!("non-positive or non-finite density sum {b1:e} at u={u:?}, theta={th:?}")));
        }
        let log_density = b1.ln() + scale + ln_b2;
        if !log_density.is_finite() {
            return Err(HacError::Numeric(format!("non-finite log-density at u={u:?}, theta={th:?}")));
        }
        let mut score = Vec::new();
        let mut hessian = Vec::new();
        if want1 {
            let g: Vec<f64> = grad.iter().map(|a| a.total() / s_total).collect();
            score = g.iter().zip(&dln_b2).map(|(a, b)| a + b).collect();
            if want2 {
                hessian = vec![0.0; p * p];
                for a in 0..p {
                    for bb in 0..p {
                        hessian[a * p + bb] = hess[a * p + bb] / s_total - g[a] * g[bb];
                    }
                    hessian[a * p + a] += d2ln_b2[a];
                }
            }
            if score.iter().chain(&hessian).any(|x| !x.is_finite()) {
                return Err(HacError::Numeric(format!("non-finite derivative at u={u:?}, theta={th:?}")));
            }
        }
        Ok(DensityEval { log_density, score, hessian })
    }
}

fn series_log_density(model: &TwoLevelModel, theta: &[f64], u: &[f64]) -> Result<f64> {
    let fam = model.family;
    let th0 = theta[0];
    let m = model.clusters.len();
    let mut t = 0.0;
    let mut ln_b2 = 0.0;
    for &col in &model.root_leaves {
        t += fam.phi_unchecked(th0, u[col]);
        ln_b2 += (-fam.phi_prime_unchecked(th0, u[col])).ln();
    }
    let mut a_tab: Vec<Vec<f64>> = Vec::with_capacity(m);
    for cl in &model.clusters {
        let ths = theta[cl.param];
        let n = cl.cols.len();
        let mut ti = 0.0;
        for &col in &cl.cols {
            ti += fam.phi_unchecked(ths, u[col]);
            ln_b2 += (-fam.phi_prime_unchecked(ths, u[col])).ln();
        }
        let inner = psi_series(fam, ths, ti, n);
        let g = phi_of_series(fam, th0, &inner);
        t += g.c[0];
        let mut dg = g.clone();
        dg.c[0] = 0.0;
        let pw = dg.powers(n);
        let nf = factorial(n);
        let mut row = vec![0.0; n + 1];
        for q in 1..=n {
            row[q] = nf / factorial(q) * pw[q].c[n];
        }
        a_tab.push(row);
    }
    let d = model.d;
    let root: Series = psi_series(fam, th0, t, d);
    let mut total = Acc::default();
    for k in model.k_min..=d {
        let comps = &model.compositions[k - model.k_min];
        let b: f64 = if m == 0 {
            1.0
        } else {
            comps.chunks(m).map(|q| (0..m).map(|s| a_tab[s][q[s] as usize]).product::<f64>()).sum()
        };
        total.add(b * root.c[k] * factorial(k));
    }
    let sign = if d % 2 == 0 { 1.0 } else { -1.0 };
    let b1 = sign * total.total();
    if !(b1 > 0.0) || !b1.is_finite() {
        return Err(HacError::Numeric(format!("non-positive or non-finite density sum {b1:e} at u={u:?}, theta={theta:?}")));
    }
    Ok(b1.ln() + ln_b2)
}
