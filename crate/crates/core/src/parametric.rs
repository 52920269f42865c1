//! Parameter-indexed SSM families, Poincaré maps of planar reduced models,
//! limit-cycle detection and fold scans.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{orthonormalize, polar_orthogonal};
use crate::par;
use crate::ssm::{model_eigenvalues, Dynamics, PolyField, SsmModel};
use crate::trajectory::fmt_e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Linear,
    /// Natural cubic spline through the nodes.
    Spline,
}

/// SSM models at sorted parameter nodes, expressed in a common tangent gauge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParametricSsm {
    pub nodes: Vec<f64>,
    /// Node models after Procrustes alignment to the first node.
    pub models: Vec<SsmModel>,
    pub scheme: Scheme,
}

fn check_compatible(a: &SsmModel, b: &SsmModel) -> Result<()> {
    let order = |m: &SsmModel| match &m.dynamics {
        Dynamics::Poly(p) => Ok(p.order),
        _ => Err(Error::Validation("parametric families need polynomial reduced dynamics".into())),
    };
    if a.d != b.d || a.embedding != b.embedding || a.manifold_order != b.manifold_order || order(a)? != order(b)? {
        return Err(Error::Validation(
            "node models must share SSM dimension, embedding, manifold order and dynamics order".into(),
        ));
    }
    if (a.dt - b.dt).abs() > 1e-12 * a.dt {
        return Err(Error::Validation("node models use different sampling steps".into()));
    }
    Ok(())
}

fn flatten(m: &SsmModel) -> Vec<f64> {
    let Dynamics::Poly(p) = &m.dynamics else { unreachable!("checked at construction") };
    let mut v = Vec::new();
    v.extend(m.v1.iter());
    v.extend(m.v_nl.iter());
    v.extend(p.r.iter());
    v.extend(&m.anchor);
    v.push(m.fit_residual);
    v
}

fn unflatten(template: &SsmModel, v: &[f64]) -> SsmModel {
    let Dynamics::Poly(p) = &template.dynamics else { unreachable!("checked at construction") };
    let mut out = template.clone();
    let mut at = 0;
    let mut take = |n: usize| {
        let s = &v[at..at + n];
        at += n;
        s.to_vec()
    };
    let (k, d) = template.v1.shape();
    out.v1 = DMatrix::from_vec(k, d, take(k * d));
    out.v_nl = DMatrix::from_vec(k, template.v_nl.ncols(), take(k * template.v_nl.ncols()));
    let r = DMatrix::from_vec(p.r.nrows(), p.r.ncols(), take(p.r.len()));
    out.anchor = take(k);
    out.fit_residual = take(1)[0];
    out.dynamics = Dynamics::Poly(PolyField { r, ..p.clone() });
    out
}

/// Weights `w` with `f(mu) ≈ Σ w_i f(node_i)`.
fn interpolation_weights(nodes: &[f64], mu: f64, scheme: Scheme) -> Vec<f64> {
    let n = nodes.len();
    let mut w = vec![0.0; n];
    if let Some(j) = nodes.iter().position(|&x| x == mu) {
        w[j] = 1.0;
        return w;
    }
    let j = nodes.partition_point(|&x| x <= mu).clamp(1, n - 1) - 1;
    let h = nodes[j + 1] - nodes[j];
    let (a, b) = ((nodes[j + 1] - mu) / h, (mu - nodes[j]) / h);
    if scheme == Scheme::Linear || n == 2 {
        w[j] = a;
        w[j + 1] = b;
        return w;
    }
    // natural spline: second derivatives M = S y from the tridiagonal system
    let m_inner = n - 2;
    let mut t = DMatrix::zeros(m_inner, m_inner);
    let mut rhs = DMatrix::zeros(m_inner, n);
    for i in 1..n - 1 {
        let (h0, h1) = (nodes[i] - nodes[i - 1], nodes[i + 1] - nodes[i]);
        let r = i - 1;
        t[(r, r)] = 2.0 * (h0 + h1);
        if r > 0 {
            t[(r, r - 1)] = h0;
        }
        if r + 1 < m_inner {
            t[(r, r + 1)] = h1;
        }
        rhs[(r, i - 1)] += 6.0 / h0;
        rhs[(r, i)] -= 6.0 / h0 + 6.0 / h1;
        rhs[(r, i + 1)] += 6.0 / h1;
    }
    let s = t.lu().solve(&rhs).expect("spline system is diagonally dominant");
    let second = |i: usize, col: usize| if i == 0 || i == n - 1 { 0.0 } else { s[(i - 1, col)] };
    for (col, wc) in w.iter_mut().enumerate() {
        let y = |i: usize| if i == col { 1.0 } else { 0.0 };
        let (mj, mj1) = (second(j, col), second(j + 1, col));
        *wc = a * y(j) + b * y(j + 1) + ((a.powi(3) - a) * mj + (b.powi(3) - b) * mj1) * h * h / 6.0;
    }
    w
}

impl ParametricSsm {
    pub fn new(nodes: Vec<f64>, models: Vec<SsmModel>, scheme: Scheme) -> Result<Self> {
        if nodes.len() < 2 || nodes.len() != models.len() {
            return Err(Error::Validation("a parametric family needs at least two nodes, one model each".into()));
        }
        if nodes.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Validation("parameter nodes must be strictly increasing".into()));
        }
        for m in &models {
            check_compatible(&models[0], m)?;
        }
        let reference = models[0].v1.clone();
        let aligned = models.iter().map(|m| m.rotated(&polar_orthogonal(&(m.v1.transpose() * &reference)))).collect();
        Ok(Self { nodes, models: aligned, scheme })
    }

    pub fn hull(&self) -> (f64, f64) {
        (self.nodes[0], self.nodes[self.nodes.len() - 1])
    }

    /// Model at parameter `mu` inside the node hull.
    pub fn interpolate(&self, mu: f64) -> Result<SsmModel> {
        let (lo, hi) = self.hull();
        if !(mu >= lo && mu <= hi) {
            return Err(Error::Extrapolation { value: mu, lo, hi });
        }
        let w = interpolation_weights(&self.nodes, mu, self.scheme);
        let flat: Vec<Vec<f64>> = self.models.iter().map(flatten).collect();
        let mut v = vec![0.0; flat[0].len()];
        for (wi, f) in w.iter().zip(&flat) {
            if *wi != 0.0 {
                v.iter_mut().zip(f).for_each(|(a, b)| *a += wi * b);
            }
        }
        let mut m = unflatten(&self.models[0], &v);
        m.v1 = orthonormalize(&m.v1);
        if m.v_nl.ncols() > 0 {
            let proj = &m.v1 * (m.v1.transpose() * &m.v_nl);
            m.v_nl -= proj;
        }
        Ok(m)
    }
}

/// A line (hyperplane) in reduced space with an oriented normal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoincareSection {
    pub base: Vec<f64>,
    /// Unit normal; a crossing counts when `normal · (η − base)` changes
    /// sign in the direction of `orientation`.
    pub normal: Vec<f64>,
    pub orientation: f64,
}

impl PoincareSection {
    /// Line through the origin along the second reduced axis, crossed when
    /// the first coordinate increases.
    pub fn default_for(d: usize) -> Self {
        let mut normal = vec![0.0; d];
        normal[0] = 1.0;
        Self { base: vec![0.0; d], normal, orientation: 1.0 }
    }

    pub fn new(base: Vec<f64>, normal: Vec<f64>, orientation: f64) -> Result<Self> {
        let n = normal.iter().map(|v| v * v).sum::<f64>().sqrt();
        if base.len() != normal.len() || !(n > 0.0) || orientation == 0.0 {
            return Err(Error::Validation("section needs matching base and nonzero normal".into()));
        }
        Ok(Self { base, normal: normal.iter().map(|v| v / n).collect(), orientation: orientation.signum() })
    }

    fn signed(&self, eta: &[f64]) -> f64 {
        self.orientation
            * self.normal.iter().zip(eta.iter().zip(&self.base)).map(|(n, (e, b))| n * (e - b)).sum::<f64>()
    }

    /// In-section direction of a planar section.
    fn tangent(&self) -> [f64; 2] {
        [-self.normal[1], self.normal[0]]
    }

    /// Point of a planar section at in-section coordinate `s`.
    pub fn point(&self, s: f64) -> Vec<f64> {
        let t = self.tangent();
        vec![self.base[0] + s * t[0], self.base[1] + s * t[1]]
    }

    pub fn coordinate(&self, eta: &[f64]) -> f64 {
        let t = self.tangent();
        t[0] * (eta[0] - self.base[0]) + t[1] * (eta[1] - self.base[1])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoincareOptions {
    /// Typical period of the flow; taken from the linear part when absent.
    pub period: Option<f64>,
    pub steps_per_period: usize,
    pub max_periods: f64,
    pub tol: f64,
}

impl Default for PoincareOptions {
    fn default() -> Self {
        Self { period: None, steps_per_period: 400, max_periods: 10.0, tol: 1e-10 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoincareReturn {
    pub coord: f64,
    pub point: Vec<f64>,
    pub time: f64,
}

fn typical_period(model: &SsmModel, opts: &PoincareOptions) -> Result<f64> {
    if let Some(p) = opts.period {
        return Ok(p);
    }
    let w = model_eigenvalues(model)?.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
    if !(w > 0.0) {
        return Err(Error::Validation("linear part has no rotation; give the typical period explicitly".into()));
    }
    Ok(2.0 * std::f64::consts::PI / w)
}

/// Next oriented return of the reduced flow from in-section coordinate `x0`.
pub fn poincare_map(
    model: &SsmModel,
    section: &PoincareSection,
    x0: f64,
    opts: &PoincareOptions,
) -> Result<PoincareReturn> {
    if model.d != 2 || section.base.len() != 2 {
        return Err(Error::Validation("Poincaré maps are defined for planar reduced models".into()));
    }
    let period = typical_period(model, opts)?;
    let h = period / opts.steps_per_period as f64;
    let max_time = opts.max_periods * period;
    let mut eta = section.point(x0);
    let mut s = section.signed(&eta);
    let mut t = 0.0;
    while t < max_time {
        let next = model.rk4_step(&eta, h)?;
        let s_next = section.signed(&next);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged { time: t });
        }
        if s < 0.0 && s_next >= 0.0 {
            // bisection on the step length of a single RK4 step
            let (mut lo, mut hi) = (0.0, h);
            let mut pt = next;
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                pt = model.rk4_step(&eta, mid)?;
                let sm = section.signed(&pt);
                if sm.abs() <= opts.tol || hi - lo < 1e-15 * h.max(1.0) {
                    break;
                }
                if sm < 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let dtc = 0.5 * (lo + hi);
            return Ok(PoincareReturn { coord: section.coordinate(&pt), point: pt, time: t + dtc });
        }
        eta = next;
        s = s_next;
        t += h;
    }
    Err(Error::NoReturn { max_time })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedPoint {
    pub x: f64,
    /// `|P′(x)|`.
    pub abs_deriv: f64,
    pub stable: bool,
}

const NEWTON_ITERS: usize = 60;
const DEDUP_TOL: f64 = 1e-6;

fn newton_fixed_point<F: Fn(f64) -> Result<f64>>(p: &F, seed: f64) -> Option<FixedPoint> {
    let mut x = seed;
    let deriv = |x: f64| -> Option<f64> {
        let h = 1e-6 * x.abs().max(1.0);
        Some((p(x + h).ok()? - p(x - h).ok()?) / (2.0 * h))
    };
    for _ in 0..NEWTON_ITERS {
        let g = p(x).ok()? - x;
        let dg = deriv(x)? - 1.0;
        if dg == 0.0 || !dg.is_finite() {
            return None;
        }
        let mut step = -g / dg;
        // backtrack when the map is undefined at the full step
        let mut ok = false;
        for _ in 0..10 {
            if p(x + step).is_ok() {
                ok = true;
                break;
            }
            step *= 0.5;
        }
        if !ok {
            return None;
        }
        x += step;
        if step.abs() <= 1e-10 * x.abs().max(1.0) {
            let d = deriv(x)?;
            return Some(FixedPoint { x, abs_deriv: d.abs(), stable: d.abs() < 1.0 });
        }
    }
    None
}

/// Fixed points of a scalar map from Newton iterations at `seeds`,
/// deduplicated and sorted. Points within `exclude` of zero are dropped.
pub fn fixed_points_1d<F>(p: F, seeds: &[f64], exclude: f64) -> Vec<FixedPoint>
where
    F: Fn(f64) -> Result<f64> + Sync + Send,
{
    let found: Vec<Option<FixedPoint>> = par::map(seeds, |&s| newton_fixed_point(&p, s));
    let mut out: Vec<FixedPoint> = Vec::new();
    for f in found.into_iter().flatten() {
        if f.x.abs() <= exclude || !f.x.is_finite() {
            continue;
        }
        if !out.iter().any(|g| (g.x - f.x).abs() < DEDUP_TOL * f.x.abs().max(1.0)) {
            out.push(f);
        }
    }
    out.sort_by(|a, b| a.x.total_cmp(&b.x));
    out
}

/// `count` uniform seeds on `[-radius, radius]`.
pub fn default_seeds(radius: f64, count: usize) -> Vec<f64> {
    (0..count).map(|i| -radius + 2.0 * radius * (i as f64 + 0.5) / count as f64).collect()
}

/// Limit cycles of a planar reduced model as nontrivial fixed points of
/// its Poincaré map.
pub fn find_limit_cycles(
    model: &SsmModel,
    section: &PoincareSection,
    seeds: &[f64],
    opts: &PoincareOptions,
) -> Vec<FixedPoint> {
    let scale = seeds.iter().map(|s| s.abs()).fold(0.0, f64::max);
    fixed_points_1d(|x| poincare_map(model, section, x, opts).map(|r| r.coord), seeds, 1e-6 * scale.max(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagramPoint {
    pub mu: f64,
    pub section_coord: f64,
    pub abs_p_prime: f64,
    pub stable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BifurcationDiagram {
    pub points: Vec<DiagramPoint>,
    pub folds: Vec<f64>,
    /// Grid intervals where the fixed-point count changed by an amount other
    /// than two, so no single fold explains the change.
    pub gaps: Vec<(f64, f64)>,
}

impl BifurcationDiagram {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("mu,section_coord,abs_P_prime,stable\n");
        for p in &self.points {
            s.push_str(&format!(
                "{},{},{},{}\n",
                fmt_e12(p.mu),
                fmt_e12(p.section_coord),
                fmt_e12(p.abs_p_prime),
                p.stable
            ));
        }
        s
    }

    /// Number of fixed points found at grid value `mu`.
    pub fn count_at(&self, mu: f64) -> usize {
        self.points.iter().filter(|p| p.mu == mu).count()
    }
}

/// Fixed points with `|P′| − 1` below this are treated as double roots.
const DEGENERATE: f64 = 1e-6;

/// Fold tolerance in the parameter.
pub const FOLD_TOL: f64 = 1e-4;

/// Fixed points of a scalar map family over `grid`, with folds refined by
/// bisection on the fixed-point count. Every grid value is re-solved from its
/// neighbours' fixed points until the counts settle, so closely spaced
/// pairs missed by the fixed seeds are recovered.
pub fn fold_scan_map<F>(family: F, grid: &[f64], seeds: &[f64], exclude: f64) -> BifurcationDiagram
where
    F: Fn(f64, f64) -> Result<f64> + Sync + Send,
{
    let f = &family;
    scan_prepared(move |mu| Ok(move |x| f(mu, x)), grid, seeds, exclude)
}

/// Fold scan where `prepare(μ)` builds the map at `μ` once for all seeds.
fn scan_prepared<P, G>(prepare: P, grid: &[f64], seeds: &[f64], exclude: f64) -> BifurcationDiagram
where
    P: Fn(f64) -> Result<G> + Sync + Send,
    G: Fn(f64) -> Result<f64> + Sync + Send,
{
    let solve = |mu: f64, s: &[f64]| -> Vec<FixedPoint> {
        match prepare(mu) {
            Ok(g) => fixed_points_1d(g, s, exclude),
            Err(_) => Vec::new(),
        }
    };
    let near = |x: f64, set: &[FixedPoint]| set.iter().any(|p| (p.x - x).abs() < DEDUP_TOL * x.abs().max(1.0));
    let mut sols: Vec<Vec<FixedPoint>> = par::map_range(grid.len(), |i| solve(grid[i], seeds));
    // roots missed at one grid value are retried from the neighbours' roots
    for _ in 0..8 {
        let extra: Vec<Vec<f64>> = (0..grid.len())
            .map(|i| {
                let lo = i.saturating_sub(1);
                let hi = (i + 1).min(grid.len() - 1);
                sols[lo..=hi].iter().flatten().map(|p| p.x).filter(|&x| !near(x, &sols[i])).collect()
            })
            .collect();
        if extra.iter().all(|e| e.is_empty()) {
            break;
        }
        let found: Vec<Vec<FixedPoint>> =
            par::map_range(grid.len(), |i| if extra[i].is_empty() { Vec::new() } else { solve(grid[i], &extra[i]) });
        let mut changed = false;
        for (own, new) in sols.iter_mut().zip(found) {
            for f in new {
                if !near(f.x, own) {
                    own.push(f);
                    changed = true;
                }
            }
            own.sort_by(|a, b| a.x.total_cmp(&b.x));
        }
        if !changed {
            break;
        }
    }

    let degenerate = |f: &[FixedPoint]| f.iter().any(|p| (p.abs_deriv - 1.0).abs() < DEGENERATE);
    let mut points = Vec::new();
    let mut folds = Vec::new();
    let mut gaps = Vec::new();
    // a grid value sitting on a fold shows a single double root; compare across it
    let mut prev: Option<usize> = None;
    for (i, fps) in sols.iter().enumerate() {
        let mu = grid[i];
        points.extend(fps.iter().map(|p| DiagramPoint {
            mu,
            section_coord: p.x,
            abs_p_prime: p.abs_deriv,
            stable: p.stable,
        }));
        if degenerate(fps) {
            continue;
        }
        if let Some(j) = prev {
            let (n0, n1) = (sols[j].len(), fps.len());
            if n0.abs_diff(n1) == 2 {
                let (mut lo, mut hi) = (grid[j], mu);
                let ends: Vec<f64> = sols[j].iter().chain(fps).map(|p| p.x).collect();
                let mut carry = ends.clone();
                while hi - lo > FOLD_TOL {
                    let mid = 0.5 * (lo + hi);
                    let fm = solve(mid, &carry);
                    if fm.len() == n0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                    carry = ends.iter().copied().chain(fm.iter().map(|p| p.x)).collect();
                }
                folds.push(0.5 * (lo + hi));
            } else if n0 != n1 {
                gaps.push((grid[j], mu));
            }
        }
        prev = Some(i);
    }
    BifurcationDiagram { points, folds, gaps }
}

/// Fold scan of a parametric SSM family through its Poincaré map.
pub fn fold_scan(
    family: &ParametricSsm,
    section: &PoincareSection,
    grid: &[f64],
    seeds: &[f64],
    opts: &PoincareOptions,
) -> Result<BifurcationDiagram> {
    let (lo, hi) = family.hull();
    if let Some(&bad) = grid.iter().find(|&&m| m < lo || m > hi) {
        return Err(Error::Extrapolation { value: bad, lo, hi });
    }
    let scale = seeds.iter().map(|s| s.abs()).fold(0.0, f64::max);
    Ok(scan_prepared(
        |mu| {
            let m = family.interpolate(mu)?;
            Ok(move |x| poincare_map(&m, section, x, opts).map(|r| r.coord))
        },
        grid,
        seeds,
        1e-6 * scale.max(1.0),
    ))
}

/// Mean of `‖R(−η) + R(η)‖` over `points`: zero for an odd vector field.
pub fn symmetry_defect(model: &SsmModel, points: &[Vec<f64>]) -> Result<f64> {
    let mut total = 0.0;
    for p in points {
        let neg: Vec<f64> = p.iter().map(|v| -v).collect();
        let (a, b) = (model.vector_field(p)?, model.vector_field(&neg)?);
        total += DVector::from_iterator(a.len(), a.iter().zip(&b).map(|(x, y)| x + y)).norm();
    }
    Ok(total / points.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_weights_sum_to_one() {
        let w = interpolation_weights(&[0.0, 1.0, 3.0], 2.0, Scheme::Linear);
        assert_eq!(w, vec![0.0, 0.5, 0.5]);
    }

    #[test]
    fn spline_reproduces_cubic_free_of_curvature_at_ends() {
        // a linear function has zero second derivative, so the natural spline is exact
        let nodes = [0.0, 0.5, 1.5, 2.0, 3.0];
        let w = interpolation_weights(&nodes, 1.2, Scheme::Spline);
        let v: f64 = w.iter().zip(&nodes).map(|(a, x)| a * (2.0 * x + 1.0)).sum();
        assert!((v - 3.4).abs() < 1e-12);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn section_coordinates() {
        let s = PoincareSection::default_for(2);
        let p = s.point(0.7);
        assert_eq!(s.signed(&p), 0.0);
        assert!((s.coordinate(&p) - 0.7).abs() < 1e-15);
    }
}
