//! Command implementations: thin wrappers over the library.

use std::fmt::Write as _;

use hac_lrt::data::DataMatrix;
use hac_lrt::error::{HacError, Result};
use hac_lrt::estimate::{mle, FitOptions};
use hac_lrt::fisher::{determinant_scan, interior_shift, scan_grid, sigma_hat, EvalPoint, Method, SigmaOptions};
use hac_lrt::generators::Family;
use hac_lrt::lrt::{power_curve, run_test, LrtOptions, TestMethod};
use hac_lrt::sampler::sample;
use hac_lrt::scenario::{cells_csv, run_scenario, wide_table, ScenarioId, ScenarioSpec, TestKind};
use hac_lrt::tree::{HacTree, Hypothesis, ParamVector};
use serde::Serialize;

use crate::config::*;

/// Files produced by a command: the main output plus named side files.
pub struct Output {
    pub main: String,
    /// `(suffix, contents)` written to `<out><suffix>`.
    pub side: Vec<(String, String)>,
}

impl Output {
    fn main(s: String) -> Self {
        Output { main: s, side: vec![] }
    }
}

/// Seventeen significant digits, enough to round-trip any `f64`.
pub fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        x.to_string()
    }
}

fn json<T: Serialize>(v: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

fn parse_tree(s: &str) -> Result<HacTree> {
    let text = match s.strip_prefix('@') {
        Some(path) => std::fs::read_to_string(path)?,
        None => s.to_string(),
    };
    HacTree::from_json(text.trim())
}

fn parse_family(s: &str) -> Result<Family> {
    s.parse()
}

fn method(m: MethodArg, family: Family) -> Method {
    match m {
        MethodArg::Analytic => Method::Analytic,
        MethodArg::Fd => Method::FiniteDifference,
        MethodArg::Auto if family.has_analytic_derivatives() => Method::Analytic,
        MethodArg::Auto => Method::FiniteDifference,
    }
}

/// Reads a data CSV with a header row.
pub fn read_data(path: &str) -> Result<DataMatrix> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path).map_err(csv_err)?;
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let row = rec
            .iter()
            .map(|f| f.trim().parse::<f64>().map_err(|_| HacError::Parse(format!("row {}: '{f}' is not a number", i + 1))))
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    DataMatrix::from_rows(&rows)
}

fn csv_err(e: csv::Error) -> HacError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => HacError::Io(io),
        other => HacError::Parse(format!("{other:?}")),
    }
}

fn data_csv(d: &DataMatrix) -> String {
    let mut s = (1..=d.d()).map(|j| format!("u{j}")).collect::<Vec<_>>().join(",");
    s.push('\n');
    for r in d.rows() {
        s.push_str(&r.iter().map(|&x| num(x)).collect::<Vec<_>>().join(","));
        s.push('\n');
    }
    s
}

fn key_values(pairs: &[(&str, String)]) -> String {
    let mut s = String::from("key,value\n");
    for (k, v) in pairs {
        let _ = writeln!(s, "{k},{v}");
    }
    s
}

fn matrix_csv(p: usize, m: &[f64]) -> String {
    let mut s = (0..p).map(|j| format!("c{j}")).collect::<Vec<_>>().join(",");
    s.push('\n');
    for i in 0..p {
        s.push_str(&m[i * p..(i + 1) * p].iter().map(|&x| num(x)).collect::<Vec<_>>().join(","));
        s.push('\n');
    }
    s
}

pub fn run(cfg: &RunConfig) -> Result<Output> {
    let fmt = cfg.format;
    match &cfg.command {
        Command::Sample(a) => {
            let tree = parse_tree(&a.model.tree)?;
            let theta = ParamVector::new(parse_family(&a.model.family)?, a.theta.clone());
            let batch = sample(&tree, &theta, a.n, cfg.seed)?;
            let meta = serde_json::json!({ "tree": tree, "params": theta, "n": a.n, "seed": cfg.seed });
            Ok(match fmt {
                Format::Csv => Output { main: data_csv(&batch.data), side: vec![(".json".into(), json(&meta)?)] },
                Format::Json => Output::main(json(&batch)?),
            })
        }
        Command::Fit(a) => {
            let tree = parse_tree(&a.model.tree)?;
            let family = parse_family(&a.model.family)?;
            let data = read_data(&a.data)?;
            let hyp = a.hypothesis.as_deref().map(|h| Hypothesis::parse(h, &tree)).transpose()?;
            let fit = mle(&data, &tree, family, hyp.as_ref(), &FitOptions::default())?;
            Ok(Output::main(match fmt {
                Format::Json => json(&fit)?,
                Format::Csv => {
                    let mut pairs: Vec<(&str, String)> = vec![("loglik", num(fit.loglik)), ("n", fit.n.to_string()), ("converged", fit.converged.to_string())];
                    let names: Vec<String> = (0..fit.theta.values.len()).map(|i| format!("theta{i}")).collect();
                    for (nm, v) in names.iter().zip(&fit.theta.values) {
                        pairs.push((nm.as_str(), num(*v)));
                    }
                    key_values(&pairs)
                }
            }))
        }
        Command::Test(a) => {
            let tree = parse_tree(&a.model.tree)?;
            let family = parse_family(&a.model.family)?;
            let data = read_data(&a.data)?;
            let hyp = Hypothesis::parse(&a.hypothesis, &tree)?;
            let m: TestMethod = a.method.parse()?;
            let mut o = LrtOptions::for_family(family);
            o.alpha = a.alpha;
            o.replicates = a.replicates;
            o.seed = cfg.seed;
            o.exact_conditional = a.exact;
            o.nuisance = a.nuisance.clone();
            o.sigma = sigma_options(&a.sigma, family, cfg.seed);
            let r = run_test(&data, &tree, family, &hyp, m, &o)?;
            Ok(Output::main(match fmt {
                Format::Json => json(&r)?,
                Format::Csv => key_values(&[
                    ("statistic", num(r.statistic)),
                    ("p_value", num(r.p_value)),
                    ("method", format!("{:?}", r.method).to_lowercase()),
                    ("reject", r.reject.to_string()),
                    ("alpha", num(r.alpha)),
                    ("loglik_null", num(r.fit_null.loglik)),
                    ("loglik_full", num(r.fit_full.loglik)),
                ]),
            }))
        }
        Command::Sigma(a) => {
            let tree = parse_tree(&a.model.tree)?;
            let family = parse_family(&a.model.family)?;
            let mut theta = ParamVector::new(family, a.theta.clone());
            let data = a.data.as_deref().map(read_data).transpose()?;
            let n_eff = data.as_ref().map(|d| d.n()).unwrap_or(a.n);
            if a.interior_shift {
                theta = interior_shift(&tree, &theta, n_eff, a.delta_tau)?;
            }
            let so = SigmaOptions {
                method: method(a.method, family),
                monte_carlo: (a.source == SourceArg::MonteCarlo).then_some((a.n, cfg.seed)),
                delta_tau: a.delta_tau,
                at: None,
                symmetrize: Some(a.symmetrize),
                ridge: a.ridge,
            };
            let est = sigma_hat(data.as_ref(), &tree, &theta, &so)?;
            Ok(Output::main(match fmt {
                Format::Json => json(&est)?,
                Format::Csv => matrix_csv(est.p, est.sigma.as_ref().unwrap()),
            }))
        }
        Command::Power(a) => {
            let tree = parse_tree(&a.model.tree)?;
            let family = parse_family(&a.model.family)?;
            let p = tree.num_params();
            let theta = ParamVector::new(family, vec![family.tau_inv(a.tau)?; p]);
            let hyp = Hypothesis::parse(&a.hypothesis, &tree)?;
            let e = a.e.clone().unwrap_or_else(|| {
                let mut e = vec![0.0; p];
                if p > 1 {
                    e[1] = 1.0;
                }
                e
            });
            let so = SigmaOptions { method: method(a.method, family), monte_carlo: Some((a.sigma_n, cfg.seed)), at: Some(EvalPoint::Null), ..SigmaOptions::default() };
            let est = sigma_hat(None, &tree, &theta, &so)?;
            let pts = power_curve(&tree, &theta, &hyp, &e, &a.h_grid, a.alpha, &est.sigma_matrix().unwrap(), a.replicates, hac_lrt::rng::derive_seed(&[cfg.seed, 1]))?;
            Ok(Output::main(match fmt {
                Format::Json => json(&serde_json::json!({ "sigma": est, "points": pts }))?,
                Format::Csv => {
                    let mut s = String::from("h_prime,power,se,atom_zero");
                    for i in 0..p {
                        let _ = write!(s, ",h{i}");
                    }
                    s.push('\n');
                    for pt in &pts {
                        let _ = write!(s, "{},{},{},{}", num(pt.h_prime), num(pt.power), num(pt.se), pt.atom_zero.map(num).unwrap_or_else(|| "NA".into()));
                        for h in &pt.h {
                            let _ = write!(s, ",{}", num(*h));
                        }
                        s.push('\n');
                    }
                    s
                }
            }))
        }
        Command::Detscan(a) => {
            let family = parse_family(&a.family)?;
            let grid = scan_grid(family, a.k, a.width);
            let pts = determinant_scan(family, &grid, a.n, cfg.seed, method(a.method, family))?;
            Ok(Output::main(match fmt {
                Format::Json => json(&pts)?,
                Format::Csv => {
                    let mut s = String::from("theta0,theta1,det_sigma,det_information\n");
                    for p in &pts {
                        let _ = writeln!(s, "{},{},{},{}", num(p.theta0), num(p.theta1), p.det_sigma.map(num).unwrap_or_else(|| "NA".into()), num(p.det_information));
                    }
                    s
                }
            }))
        }
        Command::Scenario(a) => {
            let spec = scenario_spec(a, cfg.seed)?;
            let cells = run_scenario(&spec)?;
            let main = match fmt {
                Format::Json => json(&cells)?,
                Format::Csv => cells_csv(&cells),
            };
            let mut side = vec![];
            if a.wide {
                let tests: Vec<TestKind> = if spec.tests.is_empty() { spec.scenario.default_tests() } else { spec.tests.clone() };
                for t in tests {
                    side.push((format!(".{}.csv", t.name()), wide_table(&cells, t)));
                }
            }
            Ok(Output { main, side })
        }
        Command::Rerun(_) => Err(HacError::Argument("rerun manifests cannot nest".into())),
    }
}

fn sigma_options(s: &SigmaSettings, family: Family, seed: u64) -> SigmaOptions {
    SigmaOptions {
        method: method(s.sigma_method, family),
        monte_carlo: (s.sigma_source == SourceArg::MonteCarlo).then(|| (s.sigma_n, hac_lrt::rng::derive_seed(&[seed, 2]))),
        delta_tau: s.delta_tau,
        at: Some(match s.sigma_at {
            At::Null => EvalPoint::Null,
            At::Full => EvalPoint::Full,
        }),
        symmetrize: None,
        ridge: s.ridge,
    }
}

pub fn scenario_spec(a: &ScenarioArgs, seed: u64) -> Result<ScenarioSpec> {
    let id: ScenarioId = a.scenario.parse()?;
    let mut spec = ScenarioSpec::new(id);
    spec.data_families = a.data_families.iter().map(|s| parse_family(s)).collect::<Result<_>>()?;
    spec.model_families = a.model_families.iter().map(|s| parse_family(s)).collect::<Result<_>>()?;
    spec.cases = a.cases.clone().unwrap_or_default();
    spec.n_grid = a.n_grid.clone();
    spec.replications = a.replications;
    spec.alpha = a.alpha;
    spec.tau_levels = a.tau_levels.clone();
    spec.delta = a.delta;
    spec.tests = a.tests.as_ref().map(|t| t.iter().map(|s| s.parse()).collect::<Result<_>>()).transpose()?.unwrap_or_default();
    spec.mc_replicates = a.mc_replicates;
    spec.sigma_mc_n = a.sigma_n;
    spec.seed = seed;
    spec.validate()?;
    Ok(spec)
}
