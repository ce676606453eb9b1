//! Simulation harness for the four hypothesis scenarios: seeded replicates,
//! rejection rates with binomial standard errors and table emission.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{arg, HacError, Result};
use crate::estimate::FitOptions;
use crate::fisher::{sigma_hat, EvalPoint, Method, SigmaOptions, DEFAULT_MC_N};
use crate::generators::Family;
use crate::lrt::{conditional_test, fit_pair, hybrid_pvalue, lrt_statistic, mixture_law, mixture_pvalue, Setting, DEFAULT_REPLICATES};
use crate::rng::derive_seed;
use crate::sampler::sample;
use crate::tree::{HacTree, Hypothesis, ParamVector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScenarioId {
    /// `theta_0 = theta_1` on `{{1,2},3}`.
    I,
    /// `theta_0 = theta_1 = theta_2` on `{{1,2},{3,4}}`.
    II,
    /// `theta_0` equal to `theta_1` or `theta_2` on `{{1,2},{3,4}}`.
    III,
    /// `theta_0 = theta_1` on `{{1,2},{3,4}}` with `theta_2` a nuisance.
    IV,
}

impl std::str::FromStr for ScenarioId {
    type Err = HacError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "I" | "1" => Ok(ScenarioId::I),
            "II" | "2" => Ok(ScenarioId::II),
            "III" | "3" => Ok(ScenarioId::III),
            "IV" | "4" => Ok(ScenarioId::IV),
            _ => Err(HacError::Parse(format!("unknown scenario '{s}'"))),
        }
    }
}

impl std::fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{self:?}")
    }
}

impl ScenarioId {
    fn code(self) -> u64 {
        self as u64 + 1
    }

    pub fn tree(self) -> HacTree {
        let s = if self == ScenarioId::I { "[[1,2],3]" } else { "[[1,2],[3,4]]" };
        HacTree::from_json(s).expect("fixed tree")
    }

    pub fn hypothesis_text(self) -> &'static str {
        match self {
            ScenarioId::I | ScenarioId::IV => "(0,1)=(0)",
            ScenarioId::II => "(0,1)=(0)&(0,2)=(0)",
            ScenarioId::III => "(0,1)=(0)|(0,2)=(0)",
        }
    }

    pub fn hypothesis(self) -> Hypothesis {
        Hypothesis::parse(self.hypothesis_text(), &self.tree()).expect("fixed hypothesis")
    }

    /// Tests computed on every replicate, in output order.
    pub fn default_tests(self) -> Vec<TestKind> {
        match self {
            ScenarioId::I => vec![TestKind::Unconditional, TestKind::Conditional],
            ScenarioId::II => vec![TestKind::SigmaNullMc, TestKind::SigmaFullMc, TestKind::SigmaNullObserved, TestKind::SigmaFullObserved],
            ScenarioId::III => vec![TestKind::Union],
            ScenarioId::IV => vec![TestKind::Simplified, TestKind::Hybrid],
        }
    }
}

/// Test variants reported by the harness.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestKind {
    /// Half point mass, half `chi^2_1`.
    Unconditional,
    /// `chi^2_nu` given the tight set at the unconstrained fit.
    Conditional,
    /// Twin-cluster mixture with `Sigma` from a Monte Carlo sample at the null fit.
    SigmaNullMc,
    /// As above at the unconstrained fit.
    SigmaFullMc,
    /// Twin-cluster mixture with observed information at the null fit.
    SigmaNullObserved,
    /// As above at the unconstrained fit.
    SigmaFullObserved,
    /// Conservative half `chi^2_1` law for the union hypothesis.
    Union,
    /// Collapse the nuisance node into the root and use the two-parameter law.
    Simplified,
    /// Monte Carlo null centred at the scaled nuisance gap.
    Hybrid,
}

impl TestKind {
    pub fn name(self) -> &'static str {
        match self {
            TestKind::Unconditional => "unconditional",
            TestKind::Conditional => "conditional",
            TestKind::SigmaNullMc => "sigma-null-mc",
            TestKind::SigmaFullMc => "sigma-full-mc",
            TestKind::SigmaNullObserved => "sigma-null-observed",
            TestKind::SigmaFullObserved => "sigma-full-observed",
            TestKind::Union => "union",
            TestKind::Simplified => "simplified",
            TestKind::Hybrid => "hybrid",
        }
    }

    fn scenario(self) -> ScenarioId {
        match self {
            TestKind::Unconditional | TestKind::Conditional => ScenarioId::I,
            TestKind::Union => ScenarioId::III,
            TestKind::Simplified | TestKind::Hybrid => ScenarioId::IV,
            _ => ScenarioId::II,
        }
    }
}

impl std::str::FromStr for TestKind {
    type Err = HacError;
    fn from_str(s: &str) -> Result<Self> {
        [
            TestKind::Unconditional,
            TestKind::Conditional,
            TestKind::SigmaNullMc,
            TestKind::SigmaFullMc,
            TestKind::SigmaNullObserved,
            TestKind::SigmaFullObserved,
            TestKind::Union,
            TestKind::Simplified,
            TestKind::Hybrid,
        ]
        .into_iter()
        .find(|t| t.name() == s)
        .ok_or_else(|| HacError::Parse(format!("unknown test '{s}'")))
    }
}

/// A parameter configuration: Kendall taus per node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Case {
    pub label: char,
    pub taus: Vec<f64>,
    /// Whether the configuration satisfies the hypothesis.
    pub null: bool,
}

/// Cases of a scenario: each pattern crossed with the tau levels, departures
/// of `delta` added on the Kendall scale.
pub fn cases(scenario: ScenarioId, levels: &[f64], delta: f64) -> Vec<Case> {
    let patterns: Vec<(Vec<f64>, bool)> = match scenario {
        ScenarioId::I => vec![(vec![0.0, 0.0], true), (vec![0.0, 1.0], false)],
        ScenarioId::II => vec![(vec![0.0, 0.0, 0.0], true), (vec![0.0, 0.0, 1.0], false), (vec![0.0, 1.0, 1.0], false)],
        ScenarioId::III => vec![(vec![0.0, 0.0, 0.0], true), (vec![0.0, 0.0, 1.0], true), (vec![0.0, 1.0, 1.0], false)],
        ScenarioId::IV => vec![(vec![0.0, 0.0, 0.0], true), (vec![0.0, 0.0, 1.0], true), (vec![0.0, 1.0, 0.0], false), (vec![0.0, 1.0, 1.0], false)],
    };
    let mut out = Vec::new();
    for (pattern, null) in patterns {
        for &t in levels {
            let label = (b'a' + out.len() as u8) as char;
            out.push(Case { label, taus: pattern.iter().map(|k| t + k * delta).collect(), null });
        }
    }
    out
}

/// Parameters of `family` matching the case's Kendall taus.
pub fn case_params(family: Family, case: &Case) -> Result<ParamVector> {
    Ok(ParamVector::new(family, case.taus.iter().map(|&t| family.tau_inv(t)).collect::<Result<_>>()?))
}

/// Harness settings.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub scenario: ScenarioId,
    pub data_families: Vec<Family>,
    pub model_families: Vec<Family>,
    pub tau_levels: Vec<f64>,
    pub delta: f64,
    /// Case labels to run; empty means all.
    pub cases: Vec<char>,
    pub n_grid: Vec<usize>,
    pub replications: usize,
    pub alpha: f64,
    pub seed: u64,
    /// Tests to compute; empty means the scenario defaults.
    pub tests: Vec<TestKind>,
    /// Replicates of the limit law for Monte Carlo nulls.
    pub mc_replicates: usize,
    /// Sample size of Monte Carlo information estimates.
    pub sigma_mc_n: usize,
    pub fit: FitOptions,
}

impl ScenarioSpec {
    /// Desk-scale defaults: all three data and model families, full grids,
    /// 500 replications.
    pub fn new(scenario: ScenarioId) -> Self {
        let fams = vec![Family::Gumbel, Family::Clayton, Family::Frank];
        ScenarioSpec {
            scenario,
            data_families: fams.clone(),
            model_families: fams,
            tau_levels: vec![0.25, 0.5, 0.75],
            delta: 0.1,
            cases: vec![],
            n_grid: vec![32, 128, 512],
            replications: 500,
            alpha: 0.05,
            seed: 1,
            tests: vec![],
            mc_replicates: DEFAULT_REPLICATES,
            sigma_mc_n: DEFAULT_MC_N,
            fit: FitOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 || self.n_grid.is_empty() || self.data_families.is_empty() || self.model_families.is_empty() {
            return arg("scenario needs replications, sample sizes and families");
        }
        if !(self.alpha > 0.0 && self.alpha < 0.5) {
            return arg("alpha must lie in (0, 0.5)");
        }
        if let Some(t) = self.tests.iter().find(|t| t.scenario() != self.scenario) {
            return arg(format!("test {} does not belong to scenario {}", t.name(), self.scenario));
        }
        let all = cases(self.scenario, &self.tau_levels, self.delta);
        if let Some(c) = self.cases.iter().find(|c| !all.iter().any(|x| x.label == **c)) {
            return arg(format!("scenario {} has no case '{c}'", self.scenario));
        }
        for c in &all {
            if c.taus.iter().any(|&t| !(t > 0.0 && t < 1.0)) {
                return arg(format!("case {} has a Kendall tau outside (0, 1)", c.label));
            }
        }
        Ok(())
    }

    fn tests(&self) -> Vec<TestKind> {
        if self.tests.is_empty() {
            self.scenario.default_tests()
        } else {
            self.tests.clone()
        }
    }

    fn selected_cases(&self) -> Vec<Case> {
        cases(self.scenario, &self.tau_levels, self.delta).into_iter().filter(|c| self.cases.is_empty() || self.cases.contains(&c.label)).collect()
    }
}

/// Outcome of one test on one replicate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Outcome {
    Decision { reject: bool, p_value: f64 },
    /// The information estimate was not positive definite.
    NotPd,
    /// Fitting or another numerical step failed.
    Failed,
}

/// Rejection rate of one test in one cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub scenario: ScenarioId,
    pub test: TestKind,
    pub case: char,
    pub null: bool,
    pub data_family: Family,
    pub model_family: Family,
    pub n: usize,
    pub replications: usize,
    /// Replicates with a p-value.
    pub valid: usize,
    pub rejections: usize,
    pub not_pd: usize,
    pub failed: usize,
    /// Rejection rate among valid replicates, in percent.
    pub rate: f64,
    /// Binomial standard error of `rate`, in percent.
    pub se: f64,
}

/// Seed of replicate `rep` of a cell; model families share data.
pub fn replicate_seed(master: u64, scenario: ScenarioId, case: char, n: usize, data_family: Family, rep: usize) -> u64 {
    derive_seed(&[master, scenario.code(), case as u64, n as u64, data_family as u64, rep as u64])
}

fn sigma_method(family: Family) -> Method {
    if family.has_analytic_derivatives() {
        Method::Analytic
    } else {
        Method::FiniteDifference
    }
}

fn decide(p: f64, alpha: f64) -> Outcome {
    Outcome::Decision { reject: p < alpha, p_value: p }
}

fn numeric_outcome(e: &HacError) -> Outcome {
    match e {
        HacError::NotPositiveDefinite(_) => Outcome::NotPd,
        _ => Outcome::Failed,
    }
}

/// Runs every requested test on one replicate; tests share the data and fits.
pub fn run_replicate(spec: &ScenarioSpec, tests: &[TestKind], case: &Case, data_family: Family, model_family: Family, n: usize, rep: usize) -> Result<Vec<Outcome>> {
    let sc = spec.scenario;
    let seed = replicate_seed(spec.seed, sc, case.label, n, data_family, rep);
    let tree = sc.tree();
    let hyp = sc.hypothesis();
    let truth = case_params(data_family, case)?;
    let data = sample(&tree, &truth, n, seed)?.data;
    let needs_full_model = tests.iter().any(|t| *t != TestKind::Simplified);
    let fits = if needs_full_model { Some(fit_pair(&data, &tree, model_family, &hyp, &spec.fit)) } else { None };
    let mut out = Vec::with_capacity(tests.len());
    for (k, &t) in tests.iter().enumerate() {
        if t == TestKind::Simplified {
            out.push(simplified(spec, &data, model_family).unwrap_or_else(|e| numeric_outcome(&e)));
            continue;
        }
        let (null, full) = match fits.as_ref().unwrap() {
            Ok(f) => f,
            Err(_) => {
                out.push(Outcome::Failed);
                continue;
            }
        };
        let res: Result<Outcome> = (|| {
            let l = lrt_statistic(null, full)?;
            match t {
                TestKind::Unconditional | TestKind::Union => {
                    let setting = if t == TestKind::Union { Setting::Cor3 } else { Setting::Cor1 };
                    Ok(decide(mixture_pvalue(&mixture_law(setting, None)?, l), spec.alpha))
                }
                TestKind::Conditional => {
                    let c = conditional_test(full, null, &hyp, spec.alpha, None)?;
                    Ok(Outcome::Decision { reject: c.reject, p_value: c.p_value })
                }
                TestKind::SigmaNullMc | TestKind::SigmaFullMc | TestKind::SigmaNullObserved | TestKind::SigmaFullObserved => {
                    let at = if matches!(t, TestKind::SigmaNullMc | TestKind::SigmaNullObserved) { EvalPoint::Null } else { EvalPoint::Full };
                    let theta = if at == EvalPoint::Null { &null.theta } else { &full.theta };
                    let mc = matches!(t, TestKind::SigmaNullMc | TestKind::SigmaFullMc).then(|| (spec.sigma_mc_n, derive_seed(&[seed, 7, k as u64])));
                    let so = SigmaOptions { method: sigma_method(model_family), monte_carlo: mc, at: Some(at), ..SigmaOptions::default() };
                    let est = sigma_hat(Some(&data), &tree, theta, &so)?;
                    let law = mixture_law(Setting::Cor2, est.sigma_matrix().as_ref())?;
                    Ok(decide(mixture_pvalue(&law, l), spec.alpha))
                }
                TestKind::Hybrid => {
                    let so = SigmaOptions { method: sigma_method(model_family), at: Some(EvalPoint::Null), ..SigmaOptions::default() };
                    let est = sigma_hat(Some(&data), &tree, &null.theta, &so)?;
                    let p = hybrid_pvalue(full, null, &est.sigma_matrix().unwrap(), &hyp, &[2], spec.mc_replicates, derive_seed(&[seed, 11]))?;
                    Ok(decide(p, spec.alpha))
                }
                TestKind::Simplified => unreachable!(),
            }
        })();
        out.push(res.unwrap_or_else(|e| numeric_outcome(&e)));
    }
    Ok(out)
}

/// Nuisance node assumed tied to the root: fit `{{1,2},3,4}` and compare
/// with the `1 - 2 alpha` quantile of `chi^2_1`.
fn simplified(spec: &ScenarioSpec, data: &crate::data::DataMatrix, family: Family) -> Result<Outcome> {
    let tree = HacTree::from_json("[[1,2],3,4]")?;
    let hyp = Hypothesis::parse("(0,1)=(0)", &tree)?;
    let (null, full) = fit_pair(data, &tree, family, &hyp, &spec.fit)?;
    let l = lrt_statistic(&null, &full)?;
    let c = ChiSquared::new(1.0).unwrap().inverse_cdf(1.0 - 2.0 * spec.alpha);
    Ok(Outcome::Decision { reject: l > c, p_value: mixture_pvalue(&mixture_law(Setting::Cor1, None)?, l) })
}

/// Summarizes outcomes of one test across replicates.
pub fn summarize(outcomes: &[Outcome]) -> (usize, usize, usize, usize, f64, f64) {
    let mut valid = 0;
    let mut rej = 0;
    let mut not_pd = 0;
    let mut failed = 0;
    for o in outcomes {
        match o {
            Outcome::Decision { reject, .. } => {
                valid += 1;
                rej += *reject as usize;
            }
            Outcome::NotPd => not_pd += 1,
            Outcome::Failed => failed += 1,
        }
    }
    let p = if valid > 0 { rej as f64 / valid as f64 } else { f64::NAN };
    let se = if valid > 0 { (p * (1.0 - p) / valid as f64).sqrt() } else { f64::NAN };
    (valid, rej, not_pd, failed, 100.0 * p, 100.0 * se)
}

/// All replicates of one (case, data family, model family, n) cell, one
/// [`Cell`] per test, plus the raw outcomes (replicate-major).
pub fn run_cell(spec: &ScenarioSpec, case: &Case, data_family: Family, model_family: Family, n: usize) -> Result<(Vec<Cell>, Vec<Vec<Outcome>>)> {
    spec.validate()?;
    let tests = spec.tests();
    let raw: Vec<Vec<Outcome>> = (0..spec.replications)
        .into_par_iter()
        .map(|r| run_replicate(spec, &tests, case, data_family, model_family, n, r))
        .collect::<Result<_>>()?;
    let cells = tests
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let col: Vec<Outcome> = raw.iter().map(|r| r[k]).collect();
            let (valid, rejections, not_pd, failed, rate, se) = summarize(&col);
            Cell {
                scenario: spec.scenario,
                test: t,
                case: case.label,
                null: case.null,
                data_family,
                model_family,
                n,
                replications: spec.replications,
                valid,
                rejections,
                not_pd,
                failed,
                rate,
                se,
            }
        })
        .collect();
    Ok((cells, raw))
}

/// Every cell of the settings, in table order (case, model, data, n).
pub fn run_scenario(spec: &ScenarioSpec) -> Result<Vec<Cell>> {
    spec.validate()?;
    let mut cells = Vec::new();
    for case in spec.selected_cases() {
        for &m in &spec.model_families {
            for &d in &spec.data_families {
                for &n in &spec.n_grid {
                    cells.extend(run_cell(spec, &case, d, m, n)?.0);
                }
            }
        }
    }
    Ok(cells)
}

/// Long-format CSV, one row per cell and test.
pub fn cells_csv(cells: &[Cell]) -> String {
    let mut s = String::from("scenario,test,case,null,model_family,data_family,n,replications,valid,rejections,not_pd,failed,rate_pct,rate_rounded,se_pct\n");
    for c in cells {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{:.16e},{},{:.16e}\n",
            c.scenario,
            c.test.name(),
            c.case,
            c.null,
            c.model_family,
            c.data_family,
            c.n,
            c.replications,
            c.valid,
            c.rejections,
            c.not_pd,
            c.failed,
            c.rate,
            c.rate.round(),
            c.se
        ));
    }
    s
}

/// Wide table per test: blocks by case, rows by model family, columns by
/// data family and n, integer percent.
pub fn wide_table(cells: &[Cell], test: TestKind) -> String {
    let sel: Vec<&Cell> = cells.iter().filter(|c| c.test == test).collect();
    let mut cols: Vec<(Family, usize)> = Vec::new();
    let mut rows: Vec<(char, Family)> = Vec::new();
    for c in &sel {
        if !cols.contains(&(c.data_family, c.n)) {
            cols.push((c.data_family, c.n));
        }
        if !rows.contains(&(c.case, c.model_family)) {
            rows.push((c.case, c.model_family));
        }
    }
    let mut s = String::from("case,model");
    for (d, n) in &cols {
        s.push_str(&format!(",{d}_n{n}"));
    }
    s.push('\n');
    for (case, m) in rows {
        s.push_str(&format!("{case},{m}"));
        for (d, n) in &cols {
            match sel.iter().find(|c| c.case == case && c.model_family == m && c.data_family == *d && c.n == *n) {
                Some(c) if c.valid > 0 => s.push_str(&format!(",{}", c.rate.round() as i64)),
                _ => s.push_str(",NA"),
            }
        }
        s.push('\n');
    }
    s
}
