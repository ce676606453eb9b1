//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit when any
//! criterion fails.

use hac_lrt::density::TwoLevelModel;
use hac_lrt::fisher::{determinant_scan, scan_grid, sigma_hat, EvalPoint, Method, SigmaOptions};
use hac_lrt::lrt::{local_mean, mixture_law, simulate_limit, NullDraw, Setting, ZERO_TOL};
use hac_lrt::scenario::{cases, cells_csv, run_cell, run_scenario, wide_table, Outcome, ScenarioId, ScenarioSpec, TestKind};
use hac_lrt::tree::{local_cones, Cone, ConeUnion, TIGHT_TOL};
use hac_lrt::{Family, HacTree, Hypothesis, ParamVector};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn row(p: usize, a: usize, b: usize) -> Vec<f64> {
    let mut r = vec![0.0; p];
    r[a] = 1.0;
    r[b] = -1.0;
    r
}

/// Max absolute deviation relative to the largest reference entry.
fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let den = b.iter().map(|x| x.abs()).fold(0.0, f64::max).max(1e-12);
    num / den
}

fn random_theta(rng: &mut ChaCha8Rng, fam: Family, tree: &HacTree) -> Vec<f64> {
    let p = tree.num_params();
    let tau0 = rng.random_range(0.05..0.5);
    let mut v = vec![fam.tau_inv(tau0).unwrap(); p];
    for c in 1..p {
        let parent_tau = fam.tau(v[tree.parent(c).unwrap()]).unwrap();
        v[c] = fam.tau_inv((parent_tau + rng.random_range(0.03..0.3)).min(0.85)).unwrap();
    }
    v
}

fn derivatives() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let trees = ["[[1,2],3]", "[[1,2],[3,4]]", "[[1,2,3],4,[5,6]]"];
    let mut worst = (0.0f64, 0.0f64);
    for fam in [Family::Clayton, Family::Gumbel] {
        for k in 0..200 {
            let tree = HacTree::from_json(trees[k % trees.len()]).unwrap();
            let model = TwoLevelModel::new(&tree, fam).unwrap();
            let th = random_theta(&mut rng, fam, &tree);
            let u: Vec<f64> = (0..tree.d()).map(|_| rng.random_range(0.02..0.98)).collect();
            let score = model.score(&th, &u).unwrap();
            let hess = model.hessian(&th, &u).unwrap();
            let p = th.len();
            let at = |i: usize, x: f64| {
                let mut t = th.clone();
                t[i] = x;
                t
            };
            let fd_score: Vec<f64> = (0..p)
                .map(|i| {
                    let h = 1e-5 * th[i];
                    let f = |x: f64| model.log_density(&at(i, x), &u).unwrap();
                    let d = |h: f64| (f(th[i] + h) - f(th[i] - h)) / (2.0 * h);
                    (4.0 * d(h / 2.0) - d(h)) / 3.0
                })
                .collect();
            let mut fd_hess = vec![0.0; p * p];
            for j in 0..p {
                let h = 1e-5 * th[j];
                let (a, b) = (model.score(&at(j, th[j] + h), &u).unwrap(), model.score(&at(j, th[j] - h), &u).unwrap());
                for i in 0..p {
                    fd_hess[i * p + j] = (a[i] - b[i]) / (2.0 * h);
                }
            }
            let analytic: Vec<f64> = (0..p * p).map(|k| hess[(k / p, k % p)]).collect();
            worst.0 = worst.0.max(rel_err(&score, &fd_score));
            worst.1 = worst.1.max(rel_err(&analytic, &fd_hess));
        }
    }
    verdict(worst.0 <= 1e-6 && worst.1 <= 1e-4, format!("worst relative error: score {:.2e} (<= 1e-6), Hessian {:.2e} (<= 1e-4) over 400 points", worst.0, worst.1))
}

fn random_pd(rng: &mut ChaCha8Rng, p: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(p, p, |_, _| rng.random_range(-1.0..1.0));
    &a * a.transpose() + DMatrix::identity(p, p) * 0.1
}

fn single_equality_law() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let a = Cone { dim: 2, inequalities: vec![row(2, 0, 1)], equalities: vec![] };
    let an = ConeUnion::single(Cone { dim: 2, inequalities: vec![], equalities: vec![row(2, 0, 1)] });
    let chi = ChiSquared::new(1.0).unwrap();
    let m = 100_000;
    let mut worst_atom = 0.0f64;
    let mut worst_ks = 0.0f64;
    for k in 0..10 {
        let sigma = random_pd(&mut rng, 2);
        let draws = simulate_limit(&sigma, &a, &an, &[0.0, 0.0], m, 100 + k).unwrap();
        let atom = draws.iter().filter(|d| d.l <= ZERO_TOL).count() as f64 / m as f64;
        let mut pos: Vec<f64> = draws.iter().filter(|d| d.l > ZERO_TOL).map(|d| d.l).collect();
        pos.sort_by(f64::total_cmp);
        let n = pos.len() as f64;
        let d = pos
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = chi.cdf(x);
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max);
        worst_atom = worst_atom.max((atom - 0.5).abs());
        worst_ks = worst_ks.max(n.sqrt() * d);
    }
    verdict(
        worst_atom <= 0.01 && worst_ks < 1.628,
        format!("10 Sigma, M = 1e5: max |P(L=0) - 0.5| = {worst_atom:.4} (<= 0.01), max sqrt(m) D = {worst_ks:.3} (< 1.628, KS level 0.01)"),
    )
}

fn region_frequencies(draws: &[NullDraw]) -> [f64; 3] {
    let m = draws.len() as f64;
    let mut f = [0.0; 3];
    for d in draws {
        let k = if d.l <= ZERO_TOL { 0 } else { d.nu.clamp(1, 2) as usize };
        f[k] += 1.0 / m;
    }
    f
}

fn twin_cluster_weights() -> Verdict {
    let a = Cone { dim: 3, inequalities: vec![row(3, 0, 1), row(3, 0, 2)], equalities: vec![] };
    let line = ConeUnion::single(Cone { dim: 3, inequalities: vec![], equalities: vec![row(3, 0, 1), row(3, 0, 2)] });
    let tied = ConeUnion::single(Cone { dim: 3, inequalities: vec![row(3, 0, 2)], equalities: vec![row(3, 0, 1)] });
    let m = 100_000;
    let mut worst = 0.0f64;
    let mut ok_beta = true;
    for (k, &b) in [0.0, 0.25, 0.5, 0.75, 1.0 - 1e-6].iter().enumerate() {
        // unit variances, s01 = s02 = 1/2 and s12 = b give beta = b exactly
        let sigma = DMatrix::from_row_slice(3, 3, &[1.0, 0.5, 0.5, 0.5, 1.0, b, 0.5, b, 1.0]);
        for (setting, null) in [(Setting::Cor2, &line), (Setting::Cor5, &tied)] {
            let law = mixture_law(setting, Some(&sigma)).unwrap();
            ok_beta &= (law.beta.unwrap() - b).abs() < 1e-12;
            let angle = b.acos() / (2.0 * std::f64::consts::PI);
            let g0 = if setting == Setting::Cor2 { angle } else { 0.25 + angle };
            let expected = [g0, 0.5, 0.5 - g0];
            let f = region_frequencies(&simulate_limit(&sigma, &a, null, &[0.0; 3], m, 200 + k as u64).unwrap());
            for i in 0..3 {
                worst = worst.max((f[i] - expected[i]).abs());
                worst = worst.max((law.weights[i] - expected[i]).abs());
            }
        }
    }
    verdict(ok_beta && worst <= 0.01, format!("beta in {{0, 1/4, 1/2, 3/4, 1-1e-6}}, M = 1e5: max weight deviation {worst:.4} (<= 0.01)"))
}

fn scenario_i(data: Family, model: Family, label: char, replications: usize, tests: Vec<TestKind>) -> (Vec<hac_lrt::scenario::Cell>, Vec<Vec<Outcome>>) {
    let mut spec = ScenarioSpec::new(ScenarioId::I);
    spec.replications = replications;
    spec.tests = tests;
    let case = cases(ScenarioId::I, &spec.tau_levels, spec.delta).into_iter().find(|c| c.label == label).unwrap();
    run_cell(&spec, &case, data, model, 512).unwrap()
}

fn rejects(o: &Outcome) -> bool {
    matches!(o, Outcome::Decision { reject: true, .. })
}

fn scenario_i_sizes() -> (Verdict, Verdict) {
    let mut size_ok = true;
    let mut cond_ok = true;
    let mut size_msg = Vec::new();
    let mut cond_msg = Vec::new();
    for (fam, target) in [(Family::Gumbel, 4.0), (Family::Clayton, 6.0)] {
        let (cells, raw) = scenario_i(fam, fam, 'a', 1000, vec![TestKind::Unconditional, TestKind::Conditional]);
        let (u, c) = (&cells[0], &cells[1]);
        size_ok &= (u.rate - target).abs() <= 2.0;
        size_msg.push(format!("{fam} {:.1}% (se {:.1}, reference {target}%)", u.rate, u.se));
        let nested = raw.iter().all(|r| !rejects(&r[1]) || rejects(&r[0]));
        cond_ok &= (c.rate - 2.0).abs() <= 1.5 && c.rate <= u.rate && nested;
        cond_msg.push(format!("{fam} {:.1}% vs unconditional {:.1}%, rejections nested: {nested}", c.rate, u.rate));
    }
    (
        verdict(size_ok, format!("R = 1000, n = 512, case a: {} (tolerance 2%)", size_msg.join("; "))),
        verdict(cond_ok, format!("R = 1000, n = 512, case a: {} (target 2% +- 1.5%)", cond_msg.join("; "))),
    )
}

fn misspecification() -> Verdict {
    let (cells, _) = scenario_i(Family::Gumbel, Family::Clayton, 'c', 500, vec![TestKind::Unconditional]);
    let c = &cells[0];
    verdict(c.rate >= 30.0, format!("Clayton model on Gumbel data, tau = 3/4, R = 500: {:.1}% (se {:.1}, need >= 30%)", c.rate, c.se))
}

fn power_ordering() -> Verdict {
    let tree = HacTree::from_json("[[1,2],3]").unwrap();
    let hyp = Hypothesis::parse("(0,1)=(0)", &tree).unwrap();
    let m = 100_000;
    let c_alpha = ChiSquared::new(1.0).unwrap().inverse_cdf(0.9);
    let fams = [Family::Joe, Family::Gumbel, Family::Clayton, Family::Frank];
    let mut hits: Vec<Vec<bool>> = Vec::new();
    for fam in fams {
        let t = fam.tau_inv(1.0 / 3.0).unwrap();
        let theta = ParamVector::new(fam, vec![t, t]);
        // one scheme for every family so that the comparison is like for like
        let so = SigmaOptions { method: Method::FiniteDifference, monte_carlo: Some((100_000, 31)), at: Some(EvalPoint::Null), ..SigmaOptions::default() };
        let sigma = sigma_hat(None, &tree, &theta, &so).unwrap().sigma_matrix().unwrap();
        let (a, an) = local_cones(&tree, &hyp, &theta, TIGHT_TOL).unwrap();
        let h = local_mean(fam, &theta.values, &[0.0, 1.0], 0.1).unwrap();
        // shared seed: common random numbers across families
        let draws = simulate_limit(&sigma, &a, &an, &h, m, 41).unwrap();
        hits.push(draws.iter().map(|d| d.l > c_alpha).collect());
    }
    let power: Vec<f64> = hits.iter().map(|h| h.iter().filter(|&&x| x).count() as f64 / m as f64).collect();
    let mut ok = true;
    let mut gaps = Vec::new();
    for k in 0..3 {
        let diff: Vec<f64> = hits[k].iter().zip(&hits[k + 1]).map(|(&a, &b)| a as u8 as f64 - b as u8 as f64).collect();
        let mean = diff.iter().sum::<f64>() / m as f64;
        let var = diff.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
        let se = (var / m as f64).sqrt();
        ok &= mean > 3.0 * se;
        gaps.push(format!("{}-{} {:.4} (se {:.4})", fams[k], fams[k + 1], mean, se));
    }
    let levels: Vec<String> = fams.iter().zip(&power).map(|(f, p)| format!("{f} {p:.4}")).collect();
    verdict(ok, format!("tau = 1/3, h' = 0.1, M = 1e5: {}; paired gaps {} (need gap > 3 se)", levels.join(", "), gaps.join(", ")))
}

fn determinant_scans() -> Verdict {
    let mut msg = Vec::new();
    let mut ok = true;
    for fam in [Family::Clayton, Family::Gumbel] {
        let grid = scan_grid(fam, 8, 1.0);
        let pts = determinant_scan(fam, &grid, 10_000, 5, Method::Analytic).unwrap();
        let min = pts.iter().map(|p| p.det_sigma.unwrap_or(f64::NAN)).fold(f64::INFINITY, |a, b| if b.is_nan() { f64::NAN } else { a.min(b) });
        ok &= min > 0.0 && pts.iter().all(|p| p.det_information > 0.0);
        msg.push(format!("{fam} min det {min:.3e} over {} points", pts.len()));
    }
    verdict(ok, format!("8 values per axis on the cone, N = 1e4: {}", msg.join("; ")))
}

fn hybrid_null() -> Verdict {
    let mut spec = ScenarioSpec::new(ScenarioId::IV);
    spec.replications = 500;
    let all = cases(ScenarioId::IV, &spec.tau_levels, spec.delta);
    let mut rates = Vec::new();
    for label in ['a', 'd'] {
        let case = all.iter().find(|c| c.label == label).unwrap();
        let (cells, _) = run_cell(&spec, case, Family::Gumbel, Family::Gumbel, 512).unwrap();
        let simplified = cells.iter().find(|c| c.test == TestKind::Simplified).unwrap().rate;
        let hybrid = cells.iter().find(|c| c.test == TestKind::Hybrid).unwrap().rate;
        rates.push((simplified, hybrid));
    }
    let ok = (1.0..=7.0).contains(&rates[0].1) && rates[1].1 <= 8.0;
    verdict(
        ok,
        format!(
            "R = 500, n = 512: case a hybrid {:.1}% in [1, 7] (simplified {:.1}%); case d hybrid {:.1}% <= 8 (simplified {:.1}%)",
            rates[0].1, rates[0].0, rates[1].1, rates[1].0
        ),
    )
}

fn table_structure() -> Verdict {
    let mut ok = true;
    let mut msg = Vec::new();
    // scenario I on the full grid of cases, families and sample sizes
    let mut spec = ScenarioSpec::new(ScenarioId::I);
    spec.replications = 2;
    let cells = run_scenario(&spec).unwrap();
    let n_cases = cases(ScenarioId::I, &spec.tau_levels, spec.delta).len();
    let n_cols = spec.data_families.len() * spec.n_grid.len();
    for t in ScenarioId::I.default_tests() {
        let table = wide_table(&cells, t);
        let lines: Vec<&str> = table.lines().collect();
        ok &= lines.len() == 1 + n_cases * spec.model_families.len();
        ok &= lines.iter().all(|l| l.split(',').count() == 2 + n_cols);
        ok &= cells.iter().all(|c| c.replications == 2);
    }
    ok &= cells_csv(&cells).lines().count() == 1 + cells.len();
    msg.push(format!("I: {} cells, {} rows x {} columns per test", cells.len(), n_cases * spec.model_families.len(), n_cols));
    // the other scenarios on a reduced grid
    for id in [ScenarioId::II, ScenarioId::III, ScenarioId::IV] {
        let mut spec = ScenarioSpec::new(id);
        spec.replications = 1;
        spec.data_families = vec![Family::Clayton];
        spec.model_families = vec![Family::Clayton];
        spec.n_grid = vec![64];
        spec.mc_replicates = 500;
        spec.sigma_mc_n = 2000;
        let cells = run_scenario(&spec).unwrap();
        let n_cases = cases(id, &spec.tau_levels, spec.delta).len();
        for t in id.default_tests() {
            ok &= wide_table(&cells, t).lines().count() == 1 + n_cases;
        }
        msg.push(format!("{id}: {n_cases} cases x {} tests", id.default_tests().len()));
    }
    verdict(ok, msg.join("; "))
}

fn main() {
    let mut results: Vec<(u32, &str, Verdict)> = Vec::new();
    let mut run = |k: u32, name: &'static str, v: Verdict| {
        println!("{} {k:>2} {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        results.push((k, name, v));
    };
    run(1, "derivative correctness", derivatives());
    run(2, "single-equality limit law", single_equality_law());
    run(3, "twin-cluster and tied-nuisance weights", twin_cluster_weights());
    let (size, cond) = scenario_i_sizes();
    run(4, "scenario I size", size);
    run(5, "scenario I conditional size", cond);
    run(6, "misspecification inflates rejections", misspecification());
    run(7, "local power ordering", power_ordering());
    run(8, "Fisher determinant scan", determinant_scans());
    run(9, "hybrid null size", hybrid_null());
    run(10, "table structure", table_structure());
    let failed: Vec<u32> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", results.len());
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
