use ddssm::dde::{simulate, HistorySpec};
use ddssm::oracle::{
    check_nonresonance, eig_setup, hutchinson_cubic, oracle_predict, solve_order2, solve_order3, EigData, ExpPoly,
    HutchinsonParams, OracleReport, NONLINEAR_MONOMIALS,
};
use ddssm::systems::{self, Params};
use ddssm::Error;
use num_complex::Complex64 as C;

const TABLE: [((u32, u32), f64, f64); 7] = [
    ((2, 0), 7.2, -4.2),
    ((1, 1), 0.55, 0.82),
    ((0, 2), -6.6, 5.0),
    ((3, 0), -0.39, -0.073),
    ((2, 1), -0.34, 0.054),
    ((1, 2), 0.18, -0.30),
    ((0, 3), 0.080, -0.39),
];

fn thetas() -> Vec<f64> {
    (0..20).map(|i| -(i as f64) / 19.0).collect()
}

/// Pairing by composite Simpson quadrature, independent of the closed form.
fn pairing_quadrature(eig: &EigData, i: usize, f: &ExpPoly) -> C {
    let tau = eig.params.tau;
    let n = 4000;
    let h = tau / n as f64;
    let dpsi = |s: f64| (eig.psi(i, s + 1e-6) - eig.psi(i, s - 1e-6)) / 2e-6;
    let g = |s: f64| dpsi(s) * f.eval(-s);
    let mut acc = g(0.0) + g(tau);
    for j in 1..n {
        acc += g(j as f64 * h) * if j % 2 == 1 { 4.0 } else { 2.0 };
    }
    eig.psi(i, 0.0) * f.eval(0.0) + acc * h / 3.0
}

#[test]
fn eigen_setup() {
    let eig = eig_setup(HutchinsonParams::default()).unwrap();
    assert!((eig.lambda.re - 0.097).abs() < 0.01 && (eig.lambda.im + 1.6).abs() < 0.05);
    assert!(eig.params.delta(eig.lambda).norm() < 1e-12);
    assert!((eig.pi(0, eig.lambda) - 1.0).norm() < 1e-14);
    assert!((eig.pi(1, eig.lambda.conj()) - 1.0).norm() < 1e-14);
    assert!(eig.pi(0, eig.lambda.conj()).norm() < 1e-12);
    assert!((eig.p_star * eig.delta_prime * eig.q - 1.0).norm() < 1e-14);
}

#[test]
fn nonresonance() {
    let eig = eig_setup(HutchinsonParams::default()).unwrap();
    let vals = check_nonresonance(&eig).unwrap();
    assert_eq!(vals.len(), 7);
    assert!(vals.iter().all(|(_, v)| *v > 0.1), "{vals:?}");
    assert!(eig.params.delta(eig.lambda + eig.lambda.conj()).im.abs() < 1e-15);

    // λ chosen as half of a characteristic root makes 2λ resonant
    let mut bad = eig;
    bad.lambda = eig.lambda * 0.5;
    bad.params.r = {
        // Δ(2λ') = 2λ' + r e^{−2λ'τ} = 0 at the original root: choose r accordingly
        let mu = eig.lambda;
        (-mu / (-mu * bad.params.tau).exp()).re
    };
    let mu2 = bad.lambda * 2.0;
    assert!(bad.params.delta(mu2).norm() < 1e-8);
    assert!(matches!(check_nonresonance(&bad), Err(Error::Resonance(_))));
}

#[test]
fn table_coefficients() {
    let s = hutchinson_cubic(HutchinsonParams::default()).unwrap();
    for (m, re, im) in TABLE {
        let b = s.beta[&m] * 100.0;
        assert!((b.re - re).abs() <= 0.05 * re.abs(), "{m:?} re {}", b.re);
        assert!((b.im - im).abs() <= 0.05 * im.abs(), "{m:?} im {}", b.im);
    }
}

#[test]
fn vanishing_nonlinearity() {
    let eig = eig_setup(HutchinsonParams { k: 1e14, ..Default::default() }).unwrap();
    let s = solve_order2(&eig).unwrap();
    for m in [(2, 0), (1, 1), (0, 2)] {
        assert!(s.beta[&m].norm() < 1e-12);
        assert!(thetas().iter().all(|&t| s.w[&m].eval(t).norm() < 1e-12));
    }
}

#[test]
fn gauge_reality_and_interior() {
    let s = hutchinson_cubic(HutchinsonParams::default()).unwrap();
    for &m in &NONLINEAR_MONOMIALS {
        for i in 0..2 {
            assert!(s.eig.pairing(i, &s.w[&m]).norm() < 1e-10);
            assert!(pairing_quadrature(&s.eig, i, &s.w[&m]).norm() < 1e-8);
        }
        let mirror = (m.1, m.0);
        for t in thetas() {
            assert!((s.w[&mirror].eval(t) - s.w[&m].eval(t).conj()).norm() < 1e-12);
            assert!(s.interior_residual(m, t) < 1e-9);
        }
    }
}

#[test]
fn orders_compose() {
    let eig = eig_setup(HutchinsonParams::default()).unwrap();
    let o2 = solve_order2(&eig).unwrap();
    let o3 = solve_order3(&o2).unwrap();
    assert_eq!(o3.beta.len(), 7);
    for m in [(2, 0), (1, 1), (0, 2)] {
        assert_eq!(o2.beta[&m], o3.beta[&m]);
    }
}

#[test]
fn invariance_residual_is_fourth_order() {
    let s = hutchinson_cubic(HutchinsonParams::default()).unwrap();
    let dir = C::new(0.6, 0.8);
    let r: Vec<f64> = [1e-2, 2e-2, 4e-2].iter().map(|&a| s.boundary_residual(dir * a)).collect();
    for w in r.windows(2) {
        let ratio = w[1] / w[0];
        assert!((12.0..=20.0).contains(&ratio), "ratio {ratio}");
    }
}

#[test]
fn prediction_at_equilibrium_and_linear_regime() {
    let p = HutchinsonParams::default();
    let s = hutchinson_cubic(p).unwrap();
    let pred = oracle_predict(&s, &HistorySpec::Constant(vec![p.k]), 5.0, 0.01, 0.0).unwrap();
    assert!(pred.x.iter().all(|&x| (x - p.k).abs() < 1e-14));

    let eps = 1e-3;
    let lam = s.eig.lambda;
    let dt = 0.001;
    let hist = HistorySpec::from_fn(p.tau, dt, |th| vec![p.k + eps * (lam * th).exp().re]);
    let period = 2.0 * std::f64::consts::PI / lam.im.abs();
    let sys = systems::build("hutchinson", &Params::new()).unwrap();
    let full = simulate(&sys, &hist, period, dt).unwrap();
    let pred = oracle_predict(&s, &hist, period, dt, 0.0).unwrap();
    let n = full.len().min(pred.x.len());
    let err = (0..n).map(|i| (full.row(i)[0] - pred.x[i]).abs()).fold(0.0, f64::max);
    assert!(err < 10.0 * eps * eps, "error {err}");
}

#[test]
fn report_json() {
    let s = hutchinson_cubic(HutchinsonParams::default()).unwrap();
    let rep = OracleReport::new(&s).unwrap();
    let json = serde_json::to_string(&rep).unwrap();
    let back: OracleReport = serde_json::from_str(&json).unwrap();
    assert_eq!(back, rep);
    assert_eq!(rep.beta.len(), 7);
    // the symmetric expansion has W_10 = φ₁, so W_10(0) = q = 1
    assert_eq!(rep.w_theta0["10"], [1.0, 0.0]);
}
