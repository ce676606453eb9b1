use super::*;
use crate::tree::Hypothesis;
use proptest::prelude::*;

fn tree(s: &str) -> HacTree {
    HacTree::from_json(s).unwrap()
}

#[test]
fn kendall_steps_on_closed_forms() {
    // Gumbel: tau^{-1}(0.495) = 1 / 0.505
    let g = kendall_step(Family::Gumbel, 2.0, 0.005).unwrap();
    assert!((g - (1.0 / 0.505 - 2.0)).abs() < 1e-12);
    assert!((g + 0.019802).abs() < 1e-6);
    // Clayton: tau^{-1}(0.495) = 2 * 0.495 / 0.505
    let c = kendall_step(Family::Clayton, 2.0, 0.005).unwrap();
    assert!((c - (0.99 / 0.505 - 2.0)).abs() < 1e-12);
    assert!((c + 0.039604).abs() < 1e-6);
    assert_eq!(kendall_step(Family::Frank, 3.0, 0.0).unwrap(), 0.0);
    let small = Family::Clayton.tau_inv(0.004).unwrap();
    assert!(kendall_step(Family::Clayton, small, 0.005).is_err());
    assert!(kendall_step(Family::Gumbel, 1.0, 0.005).is_err());
    for fam in Family::ALL {
        let th = fam.tau_inv(0.4).unwrap();
        let s = kendall_step(fam, th, 0.005).unwrap();
        assert!(s < 0.0);
        assert!((fam.tau(th + s).unwrap() - 0.395).abs() < 1e-9);
    }
}

#[test]
fn bilinear_hook() {
    let tr = tree("[[1,2],3]");
    let th = ParamVector::new(Family::Clayton, vec![1.0, 1.0]);
    let f = |x: &[f64]| -> Result<f64> { Ok(x[0] * x[1]) };
    let dirs = auto_scheme(&tr, &th, &[0.01, 0.02]).unwrap();
    let h = fd_hessian(f, &tr, &th, &[0.01, 0.02], &dirs).unwrap();
    assert!((h[(0, 1)] - 1.0).abs() < 1e-12 && (h[(1, 0)] - 1.0).abs() < 1e-12);
    assert!(h[(0, 0)].abs() < 1e-12 && h[(1, 1)].abs() < 1e-12);
}

#[test]
fn boundary_scheme_is_backward_on_parent_forward_on_child() {
    let tr = tree("[[1,2],3]");
    let fam = Family::Clayton;
    let t = fam.tau_inv(0.5).unwrap();
    let th = ParamVector::new(fam, vec![t, t]);
    let steps = kendall_steps(&th, 0.005).unwrap();
    let dirs = auto_scheme(&tr, &th, &steps).unwrap();
    assert_eq!(dirs, vec![Direction::Backward, Direction::Forward]);
    // every evaluation point is feasible
    for m in stencil_points(&dirs) {
        let v: Vec<f64> = th.values.iter().zip(&m).zip(&steps).map(|((a, &k), h)| a + k as f64 * h).collect();
        assert!(v[0] <= v[1] && v[0] > 0.0, "{v:?}");
    }
    // a central stencil there is rejected
    let f = |x: &[f64]| -> Result<f64> { Ok(x[0] + x[1]) };
    assert!(matches!(
        fd_hessian(f, &tr, &th, &steps, &[Direction::Central, Direction::Central]),
        Err(HacError::Scheme { .. })
    ));
}

#[test]
fn near_boundary_interior_point_falls_back_to_one_sided() {
    let tr = tree("[[1,2],3]");
    let th = ParamVector::new(Family::Gumbel, vec![2.0, 2.01]);
    let steps = kendall_steps(&th, 0.005).unwrap();
    let dirs = auto_scheme(&tr, &th, &steps).unwrap();
    assert!(dirs.contains(&Direction::Backward) || dirs.contains(&Direction::Forward));
    let f = |x: &[f64]| -> Result<f64> { Ok(x[0] * x[1]) };
    assert!(fd_hessian(f, &tr, &th, &steps, &dirs).is_ok());
}

#[test]
fn finite_differences_match_analytic_information() {
    for (fam, structure) in [(Family::Clayton, "[[1,2],3]"), (Family::Gumbel, "[[1,2],[3,4]]")] {
        let tr = tree(structure);
        let p = tr.num_params();
        let th: Vec<f64> = (0..p).map(|i| fam.tau_inv(0.3 + 0.15 * i as f64).unwrap()).collect();
        let th = ParamVector::new(fam, th);
        let data = sample(&tr, &th, 2000, 3).unwrap().data.clamped(DATA_EPS);
        let a = analytic_information(&data, &tr, &th).unwrap();
        let (f, _, dirs) = fd_information(&data, &tr, &th, 0.005).unwrap();
        assert!(dirs.iter().all(|d| *d == Direction::Central));
        // norm-wise relative error; small off-diagonal entries carry the
        // same absolute truncation error as the large ones
        let rel = (&a - &f).norm() / a.norm();
        assert!(rel <= 1e-3, "{fam}: {a} vs {f}");
    }
}

#[test]
fn analytic_and_fd_sigma_agree_at_interior_fit() {
    let tr = tree("[[1,2],3]");
    let fam = Family::Clayton;
    let th = ParamVector::new(fam, vec![fam.tau_inv(0.25).unwrap(), fam.tau_inv(0.5).unwrap()]);
    let data = sample(&tr, &th, 512, 8).unwrap().data;
    let fit = crate::estimate::mle(&data, &tr, fam, None, &Default::default()).unwrap();
    assert!(fit.active.is_empty());
    let a = sigma_hat(Some(&data), &tr, &fit.theta, &SigmaOptions::default()).unwrap();
    let f = sigma_hat(Some(&data), &tr, &fit.theta, &SigmaOptions { method: Method::FiniteDifference, ..SigmaOptions::default() }).unwrap();
    let (sa, sf) = (a.sigma_matrix().unwrap(), f.sigma_matrix().unwrap());
    assert!((&sa - &sf).norm() <= 1e-3 * sa.norm(), "{sa} {sf}");
}

/// One-sided stencils are first-order accurate, so the agreement at the
/// boundary is looser than in the interior.
#[test]
fn analytic_and_fd_sigma_agree_at_boundary_point() {
    let tr = tree("[[1,2],3]");
    let fam = Family::Clayton;
    let t = fam.tau_inv(0.5).unwrap();
    let th = ParamVector::new(fam, vec![t, t]);
    let data = sample(&tr, &th, 5000, 4).unwrap().data;
    let a = sigma_hat(Some(&data), &tr, &th, &SigmaOptions::default()).unwrap();
    let f = sigma_hat(Some(&data), &tr, &th, &SigmaOptions { method: Method::FiniteDifference, ..SigmaOptions::default() }).unwrap();
    let (sa, sf) = (a.sigma.unwrap(), f.sigma.unwrap());
    for k in 0..4 {
        assert!((sa[k] - sf[k]).abs() <= 0.15 * sa[k].abs(), "{sa:?} {sf:?}");
    }
}

#[test]
fn observed_and_monte_carlo_sources_agree() {
    let tr = tree("[[1,2],3]");
    let fam = Family::Clayton;
    let t = fam.tau_inv(0.5).unwrap();
    let th = ParamVector::new(fam, vec![t, t]);
    let data = sample(&tr, &th, 100_000, 5).unwrap().data;
    let obs = sigma_hat(Some(&data), &tr, &th, &SigmaOptions::default()).unwrap();
    let mc = sigma_hat(None, &tr, &th, &SigmaOptions { monte_carlo: Some((100_000, 6)), ..SigmaOptions::default() }).unwrap();
    assert_eq!(mc.source, Source::MonteCarlo { n: 100_000, seed: 6 });
    let (so, sm) = (obs.sigma_matrix().unwrap(), mc.sigma_matrix().unwrap());
    let rel = (&so - &sm).norm() / sm.norm();
    assert!(rel <= 0.03, "{so} {sm}");
    for i in 0..2 {
        assert!((so[(i, i)] - sm[(i, i)]).abs() <= 0.03 * sm[(i, i)]);
    }
}

#[test]
fn monte_carlo_sigma_is_stable_across_seeds() {
    let tr = tree("[[1,2],3]");
    let fam = Family::Clayton;
    let t = fam.tau_inv(0.5).unwrap();
    let th = ParamVector::new(fam, vec![t, t]);
    let vals: Vec<f64> = (0..5)
        .map(|s| sigma_hat(None, &tr, &th, &SigmaOptions { monte_carlo: Some((100_000, 100 + s)), ..SigmaOptions::default() }).unwrap().sigma.unwrap()[0])
        .collect();
    let mean = vals.iter().sum::<f64>() / 5.0;
    let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0).sqrt();
    assert!(sd / mean <= 0.05, "{vals:?}");
}

#[test]
fn monte_carlo_error_shrinks_like_root_n() {
    let tr = tree("[[1,2],3]");
    let fam = Family::Gumbel;
    let th = ParamVector::new(fam, vec![1.5, 2.5]);
    let sd = |n: usize| {
        let v: Vec<f64> = (0..300)
            .map(|s| sigma_hat(None, &tr, &th, &SigmaOptions { monte_carlo: Some((n, 1000 + s)), ..SigmaOptions::default() }).unwrap().information[0])
            .collect();
        let m = v.iter().sum::<f64>() / v.len() as f64;
        (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
    };
    let ratio = sd(1000) / sd(2000);
    assert!((1.3..=1.6).contains(&ratio), "{ratio}");
}

#[test]
fn null_sigma_has_merge_equalities() {
    let tr = tree("[[1,2],[3,4]]");
    let fam = Family::Clayton;
    let th = ParamVector::new(fam, vec![1.0, 2.0, 2.0]);
    let data = sample(&tr, &th, 3000, 7).unwrap().data;
    let opts = SigmaOptions { at: Some(EvalPoint::Null), ..SigmaOptions::default() };
    let e = sigma_hat(Some(&data), &tr, &th, &opts).unwrap();
    assert!(e.symmetrized);
    let s = e.sigma_matrix().unwrap();
    assert_eq!(s[(1, 1)], s[(2, 2)]);
    assert_eq!(s[(0, 1)], s[(0, 2)]);
    assert_eq!(s[(0, 1)], s[(1, 0)]);
    let full = sigma_hat(Some(&data), &tr, &th, &SigmaOptions { at: Some(EvalPoint::Full), ..SigmaOptions::default() }).unwrap();
    assert!(!full.symmetrized);
    let _ = Hypothesis::parse("(0,1)=(0,2)", &tr).is_err();
}

#[test]
fn singular_information_is_reported_or_ridged() {
    let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
    assert!(matches!(invert_information(&m, false), Err(HacError::NotPositiveDefinite(_))));
    let (_, _, r) = invert_information(&m, true).unwrap();
    assert!((r.unwrap() - 1e-8).abs() < 1e-20);
    let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
    let (inv, cond, r) = invert_information(&m, false).unwrap();
    assert!(r.is_none() && cond > 1.0);
    assert!(((inv * m) - DMatrix::identity(2, 2)).norm() < 1e-12);
}

#[test]
fn interior_shift_examples() {
    let tr = tree("[[[1,2],3],4]");
    let th = ParamVector::new(Family::Gumbel, vec![2.0, 2.0, 2.0]);
    let s = shift_chains(&tr, &th, 1.0 / 20.0, &[0.02, 0.02, 0.02]).unwrap();
    assert!((s.values[0] - 1.999).abs() < 1e-12);
    assert_eq!(s.values[1], 2.0);
    assert!((s.values[2] - 2.001).abs() < 1e-12);
    let m = validate_params(&tr, &s, 0.0).unwrap();
    assert!(m.in_space && !m.on_boundary);
    // default rule uses Kendall steps and 1/sqrt(n)
    let d = interior_shift(&tr, &th, 400, 0.005).unwrap();
    let step = kendall_step(Family::Gumbel, 2.0, 0.005).unwrap().abs();
    assert!((d.values[0] - (2.0 - step / 20.0)).abs() < 1e-12);
    // two-level hypotheses need no shift
    let two = tree("[[1,2],3]");
    let th2 = ParamVector::new(Family::Gumbel, vec![2.0, 2.0]);
    assert_eq!(interior_shift(&two, &th2, 400, 0.005).unwrap(), th2);
    // a shift crossing a nearby untight constraint is an error
    let deep = tree("[[[[1,2],3],4],5]");
    let th3 = ParamVector::new(Family::Gumbel, vec![1.99999, 2.0, 2.0, 2.0]);
    assert!(shift_chains(&deep, &th3, 0.05, &[0.02; 4]).is_err());
    // a chain middle node cannot be differenced before shifting
    assert!(matches!(auto_scheme(&tr, &th, &[0.01; 3]), Err(HacError::Scheme { .. })));
}

#[test]
fn determinant_scan_small_grids() {
    let one = determinant_scan(Family::Clayton, &[(1.0, 2.0)], 5000, 1, Method::Analytic).unwrap();
    assert_eq!(one.len(), 1);
    assert!(one[0].det_sigma.unwrap() > 0.0);
    assert_eq!(scan_grid(Family::Gumbel, 8, 2.0).len(), 36);
    assert!(scan_grid(Family::Gumbel, 8, 2.0).iter().all(|&(a, b)| a > 1.0 && a <= b && b <= 3.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn quadratics_are_reproduced(ai in proptest::collection::vec(-24i32..24, 6), e in proptest::collection::vec(3i32..10, 3), k in 0usize..27) {
        // dyadic coefficients and steps keep every operation exact
        let a: Vec<f64> = ai.iter().map(|&v| v as f64 / 8.0).collect();
        let s: Vec<f64> = e.iter().map(|&v| 2f64.powi(-v)).collect();
        let q = [[a[0], a[1], a[2]], [a[1], a[3], a[4]], [a[2], a[4], a[5]]];
        let tr = tree("[[1,2],[3,4]]");
        let th = ParamVector::new(Family::Clayton, vec![1.0, 2.0, 2.5]);
        let all = [Direction::Central, Direction::Forward, Direction::Backward];
        let dirs = [all[k % 3], Direction::Forward, all[k / 9]];
        let f = |x: &[f64]| -> Result<f64> {
            let mut v = 0.0;
            for i in 0..3 { for j in 0..3 { v += 0.5 * q[i][j] * x[i] * x[j]; } }
            Ok(v)
        };
        if let Ok(h) = fd_hessian(f, &tr, &th, &s, &dirs) {
            for i in 0..3 { for j in 0..3 {
                prop_assert!((h[(i, j)] - q[i][j]).abs() <= 1e-12, "{} vs {}", h[(i, j)], q[i][j]);
            } }
        }
    }
}
