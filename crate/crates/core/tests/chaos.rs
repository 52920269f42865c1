use ddssm::chaos::{correlation_dimension, lyapunov_leading, pdf_compare, CorrDimConfig, LyapunovConfig};
use ddssm::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn uniform(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (0..dim).map(|_| rng.random::<f64>()).collect()).collect()
}

#[test]
fn segment_has_dimension_one() {
    let pts: Vec<Vec<f64>> = uniform(5000, 1, 1).into_iter().map(|p| vec![p[0], 0.5 * p[0]]).collect();
    let fit = correlation_dimension(&pts, &CorrDimConfig::default()).unwrap();
    assert!(fit.stable);
    assert!((fit.slope - 1.0).abs() < 0.05, "slope {}", fit.slope);
}

#[test]
fn square_has_dimension_two_under_rotation() {
    let pts = uniform(5000, 2, 2);
    let fit = correlation_dimension(&pts, &CorrDimConfig::default()).unwrap();
    assert!((fit.slope - 2.0).abs() < 0.1, "slope {}", fit.slope);
    let (c, s) = (0.7f64.cos(), 0.7f64.sin());
    let rotated: Vec<Vec<f64>> = pts.iter().map(|p| vec![c * p[0] - s * p[1], s * p[0] + c * p[1]]).collect();
    let rfit = correlation_dimension(&rotated, &CorrDimConfig::default()).unwrap();
    assert!((rfit.slope - 2.0).abs() < 0.1, "rotated slope {}", rfit.slope);
}

#[test]
fn subsampling_cap_is_respected() {
    let pts = uniform(9000, 2, 3);
    let fit = correlation_dimension(&pts, &CorrDimConfig { max_points: 3000, ..Default::default() }).unwrap();
    assert!(fit.points_used <= 3000);
}

fn linear_ensemble(rate: f64, dt: f64) -> impl Fn(&[f64]) -> ddssm::Result<Vec<Vec<f64>>> + Sync + Send {
    move |x0: &[f64]| Ok((0..200).map(|i| x0.iter().map(|v| v * (rate * i as f64 * dt).exp()).collect()).collect())
}

#[test]
fn lyapunov_of_linear_flows() {
    let cfg = LyapunovConfig { diameter: Some(1e6), ..Default::default() };
    let up = lyapunov_leading(&[0.0, 0.0], 0.05, &cfg, linear_ensemble(0.5, 0.05)).unwrap();
    assert!((up.lambda - 0.5).abs() < 0.02, "{}", up.lambda);
    let down = lyapunov_leading(&[1.0, -1.0], 0.05, &cfg, linear_ensemble(-1.0, 0.05)).unwrap();
    assert!((down.lambda + 1.0).abs() < 0.05, "{}", down.lambda);
    assert!(down.to_csv().starts_with("t,delta\n"));
}

#[test]
fn lyapunov_window_stops_at_saturation() {
    let cfg = LyapunovConfig { diameter: Some(1.0), ..Default::default() };
    let fit = lyapunov_leading(&[0.0], 0.05, &cfg, linear_ensemble(0.5, 0.05)).unwrap();
    assert!(fit.t_hi < 200.0 * 0.05);
    assert!((fit.lambda - 0.5).abs() < 0.02);
}

#[test]
fn lyapunov_time_rescaling_halves_exponent() {
    let cfg = LyapunovConfig { diameter: Some(1e6), ..Default::default() };
    let a = lyapunov_leading(&[0.0], 0.05, &cfg, linear_ensemble(0.5, 0.05)).unwrap();
    // same samples, read on a clock running twice as slow
    let b = lyapunov_leading(&[0.0], 0.1, &cfg, linear_ensemble(0.5, 0.05)).unwrap();
    assert!((b.lambda - a.lambda / 2.0).abs() < 1e-10);
}

#[test]
fn lyapunov_immediate_saturation_is_an_error() {
    let cfg = LyapunovConfig { epsilon: 1.0, diameter: Some(1.0), ..Default::default() };
    let err = lyapunov_leading(&[0.0, 0.0], 0.05, &cfg, linear_ensemble(0.5, 0.05)).unwrap_err();
    assert!(matches!(err, Error::Validation(_)));
}

#[test]
fn pdf_identical_and_disjoint() {
    let a = uniform(2000, 2, 4);
    let rep = pdf_compare(&a, &a, None).unwrap();
    assert!(rep.l1().iter().all(|&d| d == 0.0));
    let b: Vec<Vec<f64>> = a.iter().map(|p| vec![p[0] + 5.0, p[1] + 5.0]).collect();
    let rep = pdf_compare(&a, &b, None).unwrap();
    assert!(rep.l1().iter().all(|&d| (d - 2.0).abs() < 1e-12));
}

#[test]
fn pdf_constant_coordinate_uses_one_bin() {
    let a: Vec<Vec<f64>> = (0..10).map(|i| vec![1.0, i as f64]).collect();
    let rep = pdf_compare(&a, &a, None).unwrap();
    assert_eq!(rep.coords[0].a.len(), 1);
    assert_eq!(rep.coords[0].l1, 0.0);
}

proptest! {
    #[test]
    fn correlation_integral_bounds(pts in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 2), 20..200)) {
        let cfg = CorrDimConfig { radii: 12, lo_fraction: 1e-2, ..Default::default() };
        if let Ok(fit) = correlation_dimension(&pts, &cfg) {
            prop_assert!(fit.c.iter().all(|c| (0.0..=1.0).contains(c)));
            prop_assert!(fit.c.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn pdf_symmetric_and_normalized(a in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 2), 1..100),
                                    b in prop::collection::vec(prop::collection::vec(-1.0f64..5.0, 2), 1..100)) {
        let ab = pdf_compare(&a, &b, None).unwrap();
        let ba = pdf_compare(&b, &a, None).unwrap();
        prop_assert_eq!(ab.l1(), ba.l1());
        for c in &ab.coords {
            prop_assert!((c.a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!((c.b.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(c.l1 >= 0.0 && c.l1 <= 2.0 + 1e-12);
        }
    }
}
