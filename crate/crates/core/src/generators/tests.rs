use super::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-300)
}

/// Richardson-extrapolated central difference.
fn deriv(f: &dyn Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    let d = |h: f64| (f(x + h) - f(x - h)) / (2.0 * h);
    (4.0 * d(h / 2.0) - d(h)) / 3.0
}

#[test]
fn psi_examples() {
    assert_eq!(Family::Clayton.psi(1.0, 0.0).unwrap(), 1.0);
    assert!((Family::Clayton.psi(1.0, 1.0).unwrap() - 0.5).abs() < 1e-15);
    assert!((Family::Gumbel.psi(2.0, 4.0).unwrap() - (-2.0f64).exp()).abs() < 1e-15);
    assert!(Family::Clayton.psi(0.0, 1.0).is_err());
    assert!(Family::Gumbel.psi(0.5, 1.0).is_err());
    assert!(Family::Clayton.psi(1.0, -1.0).is_err());
}

#[test]
fn psi_t_deriv_examples() {
    assert!((Family::Clayton.psi_t_deriv(1.0, 1.0, 1).unwrap() + 0.25).abs() < 1e-14);
    assert!((Family::Gumbel.psi_t_deriv(1.0, 1.0, 1).unwrap() + (-1.0f64).exp()).abs() < 1e-14);
    let expect = 0.5 * 1.5 * 1.5f64.powf(-2.5);
    assert!((Family::Clayton.psi_t_deriv(2.0, 0.5, 2).unwrap() - expect).abs() < 1e-14);
    assert!(matches!(Family::Frank.psi_t_deriv(2.0, 0.5, 2), Err(HacError::Unsupported(_))));
    assert!(Family::Clayton.psi_t_deriv(2.0, 0.5, 0).is_err());
}

#[test]
fn psi_theta_derivs_examples() {
    let d = Family::Clayton.psi_theta_derivs(1.0, 0.0).unwrap();
    assert_eq!(d.dtheta, 0.0);
    assert_eq!(d.d2theta, 0.0);
    let d = Family::Clayton.psi_theta_derivs(2.0, 1.0).unwrap();
    assert!((d.dtheta - 2f64.powf(-0.5) * 2f64.ln() / 4.0).abs() < 1e-15);
    assert!((d.dtheta - 0.122527).abs() < 1e-5);
    let d = Family::Gumbel.psi_theta_derivs(2.0, 1.0).unwrap();
    assert_eq!(d.dtheta, 0.0);
    assert!(Family::Joe.psi_theta_derivs(2.0, 1.0).is_err());
}

#[test]
fn phi_examples() {
    assert_eq!(Family::Clayton.phi(1.0, 1.0).unwrap(), 0.0);
    assert!((Family::Clayton.phi(2.0, 0.5).unwrap() - 3.0).abs() < 1e-14);
    assert!((Family::Gumbel.phi(2.0, (-1.0f64).exp()).unwrap() - 1.0).abs() < 1e-14);
    assert!(Family::Clayton.phi(2.0, 0.0).is_err());
    assert!(Family::Clayton.phi(2.0, 1.5).is_err());
}

fn random_theta(fam: Family, rng: &mut ChaCha8Rng) -> f64 {
    let tau = rng.random_range(0.05..0.85);
    fam.tau_inv(tau).unwrap()
}

#[test]
fn psi_derivatives_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for fam in [Family::Clayton, Family::Gumbel] {
        for _ in 0..100 {
            let th = random_theta(fam, &mut rng);
            let t = rng.random_range(0.05..4.0);
            let h = 1e-3 * t;
            for k in 1..=4usize {
                let fd = deriv(&|x| if k == 1 { fam.psi(th, x).unwrap() } else { fam.psi_t_deriv(th, x, k - 1).unwrap() }, t, h);
                let an = fam.psi_t_deriv(th, t, k).unwrap();
                assert!(close(an, fd, 1e-6), "{fam} k={k} th={th} t={t}: {an} vs {fd}");
            }
            let d = fam.psi_theta_derivs(th, t).unwrap();
            let hth = 1e-3 * th;
            let fd1 = deriv(&|s| fam.psi(s, t).unwrap(), th, hth);
            assert!(close(d.dtheta, fd1, 1e-6), "{fam} psi_dot");
            let fd2 = deriv(&|s| fam.psi_theta_derivs(s, t).unwrap().dtheta, th, hth);
            assert!(close(d.d2theta, fd2, 1e-6), "{fam} psi_ddot {} {}", d.d2theta, fd2);
            let fdt = deriv(&|x| fam.psi_theta_derivs(th, x).unwrap().dtheta, t, h);
            assert!(close(d.dtheta_dt, fdt, 1e-6), "{fam} psi_dot'");
        }
    }
}

#[test]
fn phi_derivatives_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for fam in [Family::Clayton, Family::Gumbel] {
        for _ in 0..100 {
            let th = random_theta(fam, &mut rng);
            let u: f64 = rng.random_range(0.05..0.95);
            let hu = 1e-4;
            let hth = 1e-3 * th;
            let d = fam.phi_derivs(th, u).unwrap();
            assert!(close(d.value, fam.phi(th, u).unwrap(), 1e-14));
            assert!(close(d.d1, deriv(&|x| fam.phi(th, x).unwrap(), u, hu), 1e-6), "{fam} phi'");
            assert!(close(d.d2, deriv(&|x| fam.phi_derivs(th, x).unwrap().d1, u, hu), 1e-6), "{fam} phi''");
            assert!(close(d.dtheta, deriv(&|s| fam.phi(s, u).unwrap(), th, hth), 1e-6), "{fam} phi_dot");
            assert!(close(d.d2theta, deriv(&|s| fam.phi_derivs(s, u).unwrap().dtheta, th, hth), 1e-6), "{fam} phi_ddot");
            assert!(close(d.dtheta_du, deriv(&|x| fam.phi_derivs(th, x).unwrap().dtheta, u, hu), 1e-6), "{fam} phi_dot'");
        }
    }
}

#[test]
fn phi_prime_matches_finite_differences_all_families() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for fam in Family::ALL {
        for _ in 0..100 {
            let th = random_theta(fam, &mut rng);
            let u: f64 = rng.random_range(0.05..0.95);
            let fd = deriv(&|x| fam.phi(th, x).unwrap(), u, 1e-4);
            assert!(close(fam.phi_prime(th, u).unwrap(), fd, 1e-6), "{fam} th={th} u={u}");
        }
    }
}

#[test]
fn complete_monotonicity() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for fam in [Family::Clayton, Family::Gumbel] {
        for _ in 0..500 {
            let th = random_theta(fam, &mut rng);
            let t = 10f64.powf(rng.random_range(-3.0..3.0));
            let k = rng.random_range(1..=6usize);
            let v = fam.psi_t_deriv(th, t, k).unwrap();
            let s = if k % 2 == 0 { 1.0 } else { -1.0 };
            assert!(s * v >= 0.0, "{fam} th={th} t={t} k={k} v={v}");
            assert!(v.is_finite());
        }
    }
}

#[test]
fn round_trips() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for fam in Family::ALL {
        for _ in 0..200 {
            let th = random_theta(fam, &mut rng);
            let u: f64 = rng.random_range(1e-6..1.0);
            let back = fam.psi(th, fam.phi(th, u).unwrap()).unwrap();
            assert!(close(back, u, 1e-12), "{fam} th={th} u={u} back={back}");
            let t = rng.random_range(0.0..5.0);
            let back = fam.phi(th, fam.psi(th, t).unwrap()).unwrap();
            assert!((back - t).abs() <= 1e-10 * t.max(1.0), "{fam} th={th} t={t} back={back}");
        }
    }
}

#[test]
fn tau_examples() {
    assert_eq!(Family::Gumbel.tau(1.0).unwrap(), 0.0);
    assert!((Family::Clayton.tau_inv(0.5).unwrap() - 2.0).abs() < 1e-15);
    assert!((Family::Gumbel.tau_inv(1.0 / 3.0).unwrap() - 1.5).abs() < 1e-14);
    assert!(Family::Clayton.tau_inv(1.0).is_err());
    assert!(Family::Frank.tau_inv(-0.1).is_err());
    let joe2 = Family::Joe.tau(2.0).unwrap();
    assert!((joe2 - (2.0 - std::f64::consts::PI.powi(2) / 6.0)).abs() < 1e-14);
}

/// Kendall's tau from `1 + 4 int_0^1 phi(u)/phi'(u) du` by composite Gauss-Legendre.
fn tau_integral(fam: Family, th: f64) -> f64 {
    let nodes = [
        (-0.906_179_845_938_664, 0.236_926_885_056_189_1),
        (-0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
        (0.0, 0.568_888_888_888_888_9),
        (0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
        (0.906_179_845_938_664, 0.236_926_885_056_189_1),
    ];
    let m = 4000;
    let mut acc = 0.0;
    for i in 0..m {
        let a = i as f64 / m as f64;
        let b = (i + 1) as f64 / m as f64;
        for (x, w) in nodes {
            let u = 0.5 * (a + b) + 0.5 * (b - a) * x;
            acc += 0.5 * (b - a) * w * fam.phi(th, u).unwrap() / fam.phi_prime(th, u).unwrap();
        }
    }
    1.0 + 4.0 * acc
}

#[test]
fn tau_matches_kendall_integral() {
    for fam in Family::ALL {
        for tau in [0.1, 0.25, 0.5, 0.75] {
            let th = fam.tau_inv(tau).unwrap();
            let num = tau_integral(fam, th);
            assert!((num - tau).abs() < 1e-6, "{fam} tau={tau} th={th} integral={num}");
        }
    }
}

#[test]
fn tau_monotone_and_invertible() {
    for fam in Family::ALL {
        let lo = if fam.lower_closed() { fam.lower() } else { 1e-3 };
        let mut prev = -1.0;
        for i in 0..2000 {
            let th = lo + (i as f64 / 100.0).powf(1.5) + if fam.lower_closed() { 0.0 } else { 0.0 };
            let t = fam.tau(th).unwrap();
            assert!(t > prev || (i == 0), "{fam} not increasing at {th}");
            prev = t;
            if t > 0.0 && t < 1.0 {
                let back = fam.tau(fam.tau_inv(t).unwrap()).unwrap();
                assert!((back - t).abs() <= 1e-10, "{fam} round trip at theta={th}: {back} vs {t}");
            }
        }
    }
}

#[test]
fn dtheta_dtau_closed_forms() {
    // Gumbel: 1/(1-tau)^2, Clayton: 2/(1-tau)^2
    let tau = 1.0 / 3.0;
    let g = Family::Gumbel.dtheta_dtau(Family::Gumbel.tau_inv(tau).unwrap()).unwrap();
    assert!((g - 2.25).abs() < 1e-12);
    let c = Family::Clayton.dtheta_dtau(Family::Clayton.tau_inv(tau).unwrap()).unwrap();
    assert!((c - 4.5).abs() < 1e-12);
    for fam in [Family::Frank, Family::Joe] {
        let th = fam.tau_inv(tau).unwrap();
        let h = 1e-6;
        let fd = (fam.tau_inv(tau + h).unwrap() - fam.tau_inv(tau - h).unwrap()) / (2.0 * h);
        assert!(close(fam.dtheta_dtau(th).unwrap(), fd, 1e-5), "{fam}");
    }
}
