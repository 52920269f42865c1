use std::sync::Arc;

use ddssm::dde::{
    simulate, simulate_digital, simulate_distributed, DelaySystem, DistributedKernel, HistorySpec, RhsArgs,
};
use ddssm::systems::{self, cushing_lifted_constant_history, micro_chaos_toy, MicroChaosMap, Params};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn hutchinson() -> DelaySystem {
    systems::build("hutchinson", &Params::new()).unwrap()
}

#[test]
fn hutchinson_equilibrium_history_stays_put() {
    let tr = simulate(&hutchinson(), &HistorySpec::Constant(vec![10.0]), 20.0, 0.01).unwrap();
    assert!(tr.rows().all(|r| (r[0] - 10.0).abs() < 1e-12));
}

#[test]
fn rk4_self_convergence() {
    let sys = hutchinson();
    let hist = HistorySpec::Constant(vec![9.0]);
    let end = |dt: f64| {
        let tr = simulate(&sys, &hist, 8.0, dt).unwrap();
        tr.row(tr.len() - 1)[0]
    };
    let (a, b, c) = (end(0.04), end(0.02), end(0.01));
    let ratio = (a - b).abs() / (b - c).abs();
    assert!(ratio >= 8.0, "convergence ratio {ratio}");
}

#[test]
fn coarse_step_close_to_fine_reference() {
    let sys = hutchinson();
    let hist = HistorySpec::Constant(vec![9.0]);
    let coarse = simulate(&sys, &hist, 10.0, 0.01).unwrap();
    let fine = simulate(&sys, &hist, 10.0, 1e-4).unwrap();
    for i in 0..coarse.len() {
        let d = (coarse.row(i)[0] - fine.row(i * 100)[0]).abs();
        assert!(d < 1e-6, "t = {}: {d}", coarse.time(i));
    }
}

#[test]
fn cushing_direct_and_lifted_agree() {
    let direct = systems::build("cushing", &Params::new()).unwrap();
    let lifted = systems::build("cushing-lifted", &Params::new()).unwrap();
    let c = 0.3;
    let a = simulate_distributed(&direct, &HistorySpec::Constant(vec![c]), 10.0, 1e-3).unwrap();
    let b = simulate(&lifted, &HistorySpec::Constant(cushing_lifted_constant_history(c, 1.0)), 10.0, 1e-3).unwrap();
    let worst = (0..a.len()).map(|i| (a.row(i)[0] - b.row(i)[0]).abs()).fold(0.0, f64::max);
    assert!(worst < 1e-6, "max deviation {worst}");
}

#[test]
fn zero_kernel_reduces_to_ode() {
    let sys = DelaySystem::new(
        "pendulum-like",
        2,
        Vec::new(),
        Arc::new(|a: &RhsArgs<'_>, o: &mut [f64]| {
            o[0] = a.x[1] + a.distributed[0];
            o[1] = -a.x[0].sin() - 0.1 * a.x[1] + a.distributed[1];
        }),
    )
    .with_distributed(DistributedKernel { support: 0.5, weight: 0.0 });
    let h = 0.01;
    let tr = simulate_distributed(&sys, &HistorySpec::Constant(vec![1.0, 0.0]), 5.0, h).unwrap();

    let f = |x: [f64; 2]| [x[1], -x[0].sin() - 0.1 * x[1]];
    let mut x = [1.0, 0.0];
    for i in 1..tr.len() {
        let k1 = f(x);
        let k2 = f([x[0] + 0.5 * h * k1[0], x[1] + 0.5 * h * k1[1]]);
        let k3 = f([x[0] + 0.5 * h * k2[0], x[1] + 0.5 * h * k2[1]]);
        let k4 = f([x[0] + h * k3[0], x[1] + h * k3[1]]);
        for c in 0..2 {
            x[c] += h / 6.0 * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c]);
        }
        assert!((tr.row(i)[0] - x[0]).abs() < 1e-12 && (tr.row(i)[1] - x[1]).abs() < 1e-12);
    }
}

#[test]
fn zoh_input_is_piecewise_constant() {
    // with a = 0 the plant integrates the held input, so x is piecewise linear
    let sys =
        DelaySystem::new("integrator", 1, Vec::new(), Arc::new(|a: &RhsArgs<'_>, o: &mut [f64]| o[0] = -a.held[0]))
            .with_periodic(ddssm::dde::PeriodicDelay { sampling: 0.1, hold: 1, resolution: 0.0 });
    let tr = simulate_digital(&sys, 0.0, &HistorySpec::Constant(vec![1.0]), 2.0, 0.01).unwrap();
    for j in 0..20 {
        let s0 = (tr.row(10 * j + 1)[0] - tr.row(10 * j)[0]) / 0.01;
        for i in 1..10 {
            let s = (tr.row(10 * j + i + 1)[0] - tr.row(10 * j + i)[0]) / 0.01;
            assert!((s - s0).abs() < 1e-9, "slope changes inside sample interval {j}");
        }
    }
}

#[test]
fn stroboscopic_samples_match_exact_map() {
    let sys = micro_chaos_toy(1.0, 1.2, 0.01, 0.02, 1).unwrap();
    let x0 = 0.173;
    let tr = simulate_digital(&sys, 0.01, &HistorySpec::Constant(vec![x0]), 4.0, 1e-3).unwrap();
    let strobe = tr.stroboscopic(0.02, 0.0).unwrap();
    let map = MicroChaosMap { a: 1.0, p_gain: 1.2, resolution: 0.01, sampling: 0.02, hold: 1 };
    let exact = map.orbit(x0, strobe.len() - 1);
    for (j, e) in exact.iter().enumerate() {
        assert!((strobe.row(j)[0] - e).abs() < 1e-9, "sample {j}: {} vs {e}", strobe.row(j)[0]);
    }
}

#[test]
fn unquantized_loop_decays() {
    let sys = micro_chaos_toy(1.0, 1.2, 0.0, 0.02, 1).unwrap();
    let tr = simulate_digital(&sys, 0.0, &HistorySpec::Constant(vec![0.5]), 40.0, 0.002).unwrap();
    assert!(tr.row(tr.len() - 1)[0].abs() < 0.01);
}

#[test]
fn hutchinson_long_run_matches_refined_step() {
    let sys = hutchinson();
    let hist = HistorySpec::Constant(vec![9.5]);
    let coarse = simulate(&sys, &hist, 100.0, 1e-3).unwrap();
    let fine = simulate(&sys, &hist, 100.0, 1e-4).unwrap();
    let scale = coarse.rows().fold(0.0f64, |m, r| m.max(r[0].abs()));
    let worst = (0..coarse.len()).map(|i| (coarse.row(i)[0] - fine.row(i * 10)[0]).abs()).fold(0.0, f64::max);
    assert!(worst < 1e-6 * scale, "{worst} vs scale {scale}");
}

#[test]
fn cushing_zero_history_stays_zero() {
    let sys = systems::build("cushing", &Params::new()).unwrap();
    let tr = simulate_distributed(&sys, &HistorySpec::Constant(vec![0.0]), 10.0, 1e-2).unwrap();
    assert!(tr.rows().all(|r| r[0] == 0.0));
}

fn lifted_vs_direct(hist_x: impl Fn(f64) -> f64 + Copy, z0: f64, t_end: f64) -> f64 {
    let dt = 1e-3;
    let direct = systems::build("cushing", &Params::new()).unwrap();
    let lifted = systems::build("cushing-lifted", &Params::new()).unwrap();
    let a = simulate_distributed(&direct, &HistorySpec::from_fn(1.0, dt, |th| vec![hist_x(th)]), t_end, dt).unwrap();
    // only z(0) enters the lifted dynamics
    let hl = HistorySpec::from_fn(1.0, dt, |th| vec![hist_x(th), z0]);
    let b = simulate(&lifted, &hl, t_end, dt).unwrap();
    (0..a.len()).map(|i| (a.row(i)[0] - b.row(i)[0]).abs()).fold(0.0, f64::max)
}

#[test]
fn cushing_lifted_agrees_over_long_window() {
    let worst = lifted_vs_direct(|_| 0.1, 0.1, 50.0);
    assert!(worst < 1e-6, "max deviation {worst}");
}

#[test]
fn cushing_lifted_agrees_for_random_histories() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..10 {
        let (c0, c1, w): (f64, f64, f64) =
            (rng.random_range(-0.5..0.5), rng.random_range(-0.3..0.3), rng.random_range(0.5..4.0));
        let x = move |th: f64| c0 + c1 * (w * th).sin();
        let z0 = c0 + c1 * (w.cos() - 1.0) / w;
        let worst = lifted_vs_direct(x, z0, 10.0);
        assert!(worst < 1e-6, "c0 {c0} c1 {c1} w {w}: {worst}");
    }
}

#[test]
fn cushing_without_kernel_is_an_ode() {
    let mut p = Params::new();
    p.insert("b".into(), 0.0);
    let sys = systems::build("cushing", &p).unwrap();
    let h = 1e-2;
    let tr = simulate_distributed(&sys, &HistorySpec::Constant(vec![0.4]), 5.0, h).unwrap();
    let f = |x: f64| x - x.sin();
    let mut x = 0.4;
    for i in 1..tr.len() {
        let k1 = f(x);
        let k2 = f(x + 0.5 * h * k1);
        let k3 = f(x + 0.5 * h * k2);
        let k4 = f(x + h * k3);
        x += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        assert!((tr.row(i)[0] - x).abs() < 1e-8, "t = {}", tr.time(i));
    }
}

#[test]
fn zoh_approaches_continuous_loop() {
    // x' = a x - p x(t) in the limit: x = x0 e^{(a - p) t}
    let err = |sampling: f64| {
        let sys = micro_chaos_toy(1.0, 3.0, 0.0, sampling, 0).unwrap();
        let tr = simulate_digital(&sys, 0.0, &HistorySpec::Constant(vec![1.0]), 2.0, 1e-4).unwrap();
        (0..tr.len()).map(|i| (tr.row(i)[0] - (-2.0 * tr.time(i)).exp()).abs()).fold(0.0, f64::max)
    };
    let (e1, e2) = (err(0.02), err(0.002));
    assert!(e1 < 0.05 && e2 < 0.005, "{e1} {e2}");
    assert!(e1 / e2 > 5.0, "ratio {}", e1 / e2);
}

#[test]
fn micro_chaos_orbit_respects_map_bound() {
    let map = MicroChaosMap { a: 1.0, p_gain: 1.2, resolution: 0.01, sampling: 0.02, hold: 1 };
    let x0 = 0.05;
    let bound = map.orbit(x0, 200_000).iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let sys = micro_chaos_toy(1.0, 1.2, 0.01, 0.02, 1).unwrap();
    let tr = simulate_digital(&sys, 0.01, &HistorySpec::Constant(vec![x0]), 100.0, 1e-3).unwrap();
    // between samples the plant grows by at most e^{aΔt} plus the held input
    let slack = (0.02f64).exp() * bound + 1.2 * 0.02 * (bound + 0.005);
    assert!(tr.rows().all(|r| r[0].abs() <= slack), "bound {bound}");
}

#[test]
fn zero_gain_grows_at_open_loop_rate() {
    let sys = micro_chaos_toy(1.0, 0.0, 0.01, 0.02, 1).unwrap();
    let tr = simulate_digital(&sys, 0.01, &HistorySpec::Constant(vec![1e-3]), 5.0, 1e-3).unwrap();
    let (i0, i1) = (1000, tr.len() - 1);
    let rate = (tr.row(i1)[0] / tr.row(i0)[0]).ln() / (tr.time(i1) - tr.time(i0));
    assert!((rate - 1.0).abs() < 0.01, "rate {rate}");
}
