use ddssm::embedding::{embed, estimate_derivatives, flatten_order, EmbeddingConfig};
use ddssm::Trajectory;
use proptest::prelude::*;

fn sampled(f: impl Fn(f64) -> f64, n: usize, dt: f64) -> Trajectory {
    Trajectory::new(0.0, dt, 1, (0..n).map(|i| f(i as f64 * dt)).collect()).unwrap()
}

fn max_deriv_error(f: impl Fn(f64) -> f64, df: impl Fn(f64) -> f64, dt: f64) -> f64 {
    let e = embed(&[sampled(f, 400, dt)], &EmbeddingConfig::scalar(0, 1, 1)).unwrap();
    let d = estimate_derivatives(&e).unwrap();
    let dy = d.dy.clone().unwrap();
    (0..d.nrows()).map(|i| (dy[(i, 0)] - df(d.times[i])).abs()).fold(0.0, f64::max)
}

#[test]
fn constant_series_rows() {
    let e = embed(&[sampled(|_| 2.5, 20, 0.1)], &EmbeddingConfig::scalar(0, 6, 2)).unwrap();
    assert!(e.y.iter().all(|&v| v == 2.5));
    assert!(flatten_order(&e, 0).unwrap() < 1e-12);
}

#[test]
fn derivative_exactness() {
    assert!(max_deriv_error(|t| t, |_| 1.0, 0.01) < 1e-10);
    assert!(max_deriv_error(|t| t.powi(4), |t| 4.0 * t.powi(3), 0.01) < 1e-10);
    assert!(max_deriv_error(f64::sin, f64::cos, 0.01) < 1e-8);
}

#[test]
fn derivative_fourth_order() {
    let a = max_deriv_error(f64::sin, f64::cos, 0.02);
    let b = max_deriv_error(f64::sin, f64::cos, 0.01);
    let ratio = a / b;
    assert!(ratio > 12.0 && ratio < 20.0, "ratio {ratio}");
}

#[test]
fn affine_series_is_flat_at_first_order() {
    let e = embed(&[sampled(|t| 3.0 * t - 1.0, 50, 0.1)], &EmbeddingConfig::scalar(0, 5, 1)).unwrap();
    assert!(flatten_order(&e, 1).unwrap() < 1e-12);
}

#[test]
fn sine_flattens_quadratically_in_lag() {
    let res = |dt: f64| {
        let e = embed(&[sampled(f64::sin, 2000, dt)], &EmbeddingConfig::scalar(0, 5, 1)).unwrap();
        (flatten_order(&e, 0).unwrap(), flatten_order(&e, 1).unwrap())
    };
    let (r0, r1) = res(0.01);
    let (_, r1_half) = res(0.005);
    assert!(r1 / r0 < 0.05);
    let ratio = r1 / r1_half;
    assert!((ratio - 4.0).abs() < 0.3, "ratio {ratio}");
}

proptest! {
    #[test]
    fn first_column_reconstructs_series(vals in prop::collection::vec(-100.0f64..100.0, 12..60), k in 1usize..6, lag in 1usize..3) {
        let tr = Trajectory::new(0.0, 0.1, 1, vals.clone()).unwrap();
        let e = embed(&[tr], &EmbeddingConfig::scalar(0, k, lag)).unwrap();
        let n = e.nrows();
        prop_assert_eq!(n, vals.len() - (k - 1) * lag);
        for i in 0..n {
            prop_assert_eq!(e.y[(i, 0)].to_bits(), vals[i].to_bits());
            for c in 0..k {
                prop_assert_eq!(e.y[(i, c)], vals[i + c * lag]);
            }
        }
    }

    #[test]
    fn flatten_residual_nonincreasing(vals in prop::collection::vec(-10.0f64..10.0, 20..60)) {
        let tr = Trajectory::new(0.0, 0.1, 1, vals).unwrap();
        let e = embed(&[tr], &EmbeddingConfig::scalar(0, 6, 1)).unwrap();
        let mut prev = f64::INFINITY;
        for m in 0..6 {
            let r = flatten_order(&e, m).unwrap();
            prop_assert!(r <= prev + 1e-9);
            prev = r;
        }
    }
}
