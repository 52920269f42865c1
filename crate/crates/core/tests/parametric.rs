use ddssm::parametric::{
    default_seeds, find_limit_cycles, fold_scan, fold_scan_map, poincare_map, symmetry_defect, ParametricSsm,
    PoincareOptions, PoincareSection, Scheme,
};
use ddssm::ssm::{Dynamics, MultiIndexBasis, PolyField, SsmModel};
use ddssm::Error;
use nalgebra::DMatrix;

fn field(order: usize, terms: &[(usize, [u32; 2], f64)]) -> PolyField {
    let b = MultiIndexBasis::new(2, 1, order);
    let mut r = DMatrix::zeros(2, b.len());
    for (row, e, c) in terms {
        let col = b.exponents.iter().position(|x| x[..] == e[..]).unwrap();
        r[(*row, col)] = *c;
    }
    PolyField { order, exponents: b.exponents, r }
}

fn hopf(mu: f64, omega: f64) -> SsmModel {
    let f = field(
        3,
        &[
            (0, [1, 0], mu),
            (0, [0, 1], -omega),
            (0, [3, 0], -1.0),
            (0, [1, 2], -1.0),
            (1, [1, 0], omega),
            (1, [0, 1], mu),
            (1, [2, 1], -1.0),
            (1, [0, 3], -1.0),
        ],
    );
    SsmModel::from_field(f, 0.1).unwrap()
}

#[test]
fn hopf_normal_form_cycle() {
    let m = hopf(0.04, 1.0);
    let sec = PoincareSection::default_for(2);
    let opts = PoincareOptions::default();
    let cycles = find_limit_cycles(&m, &sec, &default_seeds(0.5, 20), &opts);
    assert_eq!(cycles.len(), 1, "{cycles:?}");
    assert!((cycles[0].x.abs() - 0.2).abs() < 1e-6, "{}", cycles[0].x);
    assert!(cycles[0].stable);
    let expected = (-4.0 * std::f64::consts::PI * 0.04f64).exp();
    assert!((cycles[0].abs_deriv - expected).abs() < 1e-4);

    // the cycle closes: one return from the fixed point lands on it again
    let r = poincare_map(&m, &sec, cycles[0].x, &opts).unwrap();
    assert!((r.coord - cycles[0].x).abs() < 1e-9);
    assert!((r.time - 2.0 * std::f64::consts::PI).abs() < 1e-6);
}

#[test]
fn linear_focus_return_map() {
    let (a, w) = (-0.1, 1.3);
    let m = SsmModel::from_field(field(1, &[(0, [1, 0], a), (0, [0, 1], -w), (1, [1, 0], w), (1, [0, 1], a)]), 0.1)
        .unwrap();
    let sec = PoincareSection::default_for(2);
    let rho = (2.0 * std::f64::consts::PI * a / w).exp();
    for x in [-1.0, -0.3, -0.01] {
        let r = poincare_map(&m, &sec, x, &PoincareOptions::default()).unwrap();
        assert!((r.coord - rho * x).abs() < 1e-8, "{} vs {}", r.coord, rho * x);
    }
}

#[test]
fn escaping_orbit_has_no_return() {
    let m = SsmModel::from_field(field(1, &[(0, [0, 1], 1.0)]), 0.1).unwrap();
    let opts = PoincareOptions { period: Some(1.0), ..Default::default() };
    let err = poincare_map(&m, &PoincareSection::default_for(2), 0.5, &opts).unwrap_err();
    assert!(matches!(err, Error::NoReturn { .. }));
}

#[test]
fn saddle_node_map_fold() {
    let grid: Vec<f64> = (0..=10).map(|i| -0.05 + 0.01 * i as f64).collect();
    let diag = fold_scan_map(|mu, x| Ok(x + mu - x * x), &grid, &default_seeds(0.5, 20), 0.0);
    assert_eq!(diag.folds.len(), 1, "{:?}", diag.folds);
    assert!(diag.folds[0].abs() < 1e-4, "{}", diag.folds[0]);
    assert_eq!(diag.count_at(grid[10]), 2);
    let st: Vec<bool> = diag.points.iter().filter(|p| p.mu == grid[10]).map(|p| p.stable).collect();
    assert_eq!(st, vec![false, true]);
    assert!(diag.to_csv().starts_with("mu,section_coord,abs_P_prime,stable\n"));
}

#[test]
fn hopf_family_branch_without_fold() {
    let nodes = vec![-0.02, 0.0, 0.02, 0.04, 0.06];
    let fam = ParametricSsm::new(nodes.clone(), nodes.iter().map(|&m| hopf(m, 1.0)).collect(), Scheme::Linear).unwrap();
    let grid = [0.01, 0.025, 0.05];
    let diag =
        fold_scan(&fam, &PoincareSection::default_for(2), &grid, &default_seeds(0.5, 10), &PoincareOptions::default())
            .unwrap();
    assert!(diag.folds.is_empty());
    for p in &diag.points {
        assert!((p.section_coord.abs() - p.mu.sqrt()).abs() < 1e-6);
    }
}

fn rotation(a: f64) -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[a.cos(), -a.sin(), a.sin(), a.cos()])
}

fn graph_model(c: f64) -> SsmModel {
    let mut m = hopf(0.03 + c, 1.0 + c);
    m.embedding.k = 3;
    m.embedding.observables = vec![0, 1, 2];
    m.anchor = vec![0.0, 0.0, c];
    m.v1 = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
    m.manifold_order = 2;
    m.manifold_exponents = MultiIndexBasis::new(2, 2, 2).exponents;
    m.v_nl = DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0 + c, c, -1.0]);
    m.validate().unwrap();
    m
}

#[test]
fn interpolation_reproduces_nodes() {
    let nodes = vec![0.0, 0.4, 1.0, 1.5];
    let models: Vec<SsmModel> = nodes.iter().map(|&c| graph_model(0.1 * c)).collect();
    for scheme in [Scheme::Linear, Scheme::Spline] {
        let fam = ParametricSsm::new(nodes.clone(), models.clone(), scheme).unwrap();
        for (i, &mu) in nodes.iter().enumerate() {
            let m = fam.interpolate(mu).unwrap();
            let want = &fam.models[i];
            assert!((&m.v1 - &want.v1).abs().max() < 1e-12);
            assert!((&m.v_nl - &want.v_nl).abs().max() < 1e-12);
            let (Dynamics::Poly(a), Dynamics::Poly(b)) = (&m.dynamics, &want.dynamics) else { panic!() };
            assert!((&a.r - &b.r).abs().max() < 1e-12);
        }
        assert!(matches!(fam.interpolate(1.6), Err(Error::Extrapolation { .. })));
    }
}

#[test]
fn constant_family_and_gauge_alignment() {
    let base = graph_model(0.05);
    let turned = base.rotated(&rotation(0.8));
    let fam = ParametricSsm::new(vec![0.0, 1.0], vec![base.clone(), turned], Scheme::Linear).unwrap();
    let mid = fam.interpolate(0.37).unwrap();
    assert!((&mid.v1 - &base.v1).abs().max() < 1e-12);
    assert!((&mid.v_nl - &base.v_nl).abs().max() < 1e-12);
    let (Dynamics::Poly(a), Dynamics::Poly(b)) = (&mid.dynamics, &base.dynamics) else { panic!() };
    assert!((&a.r - &b.r).abs().max() < 1e-12);
}

#[test]
fn rotated_model_describes_same_manifold() {
    let m = graph_model(0.2);
    let q = rotation(-1.1);
    let r = m.rotated(&q);
    let xi = [0.3, -0.2];
    let eta: Vec<f64> = (0..2).map(|i| q[(i, 0)] * xi[0] + q[(i, 1)] * xi[1]).collect();
    let (a, b) = (m.lift(&eta), r.lift(&xi));
    assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-12));
    let (fa, fb) = (m.vector_field(&eta).unwrap(), r.vector_field(&xi).unwrap());
    let back: Vec<f64> = (0..2).map(|i| q[(i, 0)] * fb[0] + q[(i, 1)] * fb[1]).collect();
    assert!(fa.iter().zip(&back).all(|(x, y)| (x - y).abs() < 1e-12));
}

#[test]
fn odd_fields_have_no_symmetry_defect() {
    let pts = vec![vec![0.1, 0.2], vec![-0.3, 0.05]];
    assert!(symmetry_defect(&hopf(0.02, 1.0), &pts).unwrap() < 1e-15);
    let m = SsmModel::from_field(field(2, &[(0, [1, 0], -1.0), (1, [2, 0], 1.0)]), 0.1).unwrap();
    assert!(symmetry_defect(&m, &pts).unwrap() > 0.01);
}
