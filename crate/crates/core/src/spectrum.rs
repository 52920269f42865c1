//! Characteristic roots of linearized delay systems and spectral-gap queries.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dde::{DelaySystem, RhsArgs};
use crate::error::{Error, Result};
use crate::par;

const JAC_STEP: f64 = 1e-6;
const DERIV_STEP: f64 = 1e-7;
pub const DEDUP_TOL: f64 = 1e-6;

/// `Δ(μ) = μI − L − Σ R_j e^{−μτ_j} − D (1 − e^{−μS})/μ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharMatrix {
    pub n: usize,
    pub l: DMatrix<f64>,
    /// `(τ_j, R_j)` per discrete delay.
    pub delayed: Vec<(f64, DMatrix<f64>)>,
    /// `(S, D)` for a uniform kernel on `[0, S]`; `D` already includes the kernel weight.
    pub distributed: Option<(f64, DMatrix<f64>)>,
}

/// `(1 − e^{−μS})/μ`, with its series near the removable singularity.
pub fn uniform_kernel_transform(mu: Complex64, support: f64) -> Complex64 {
    if mu.norm() < 1e-4 {
        let s = support;
        s - mu * s * s / 2.0 + mu * mu * s * s * s / 6.0 - mu * mu * mu * s.powi(4) / 24.0
    } else {
        (1.0 - (-mu * support).exp()) / mu
    }
}

impl CharMatrix {
    /// Scalar single-delay matrix `μ − l − r e^{−μτ}`.
    pub fn scalar(l: f64, r: f64, tau: f64) -> Self {
        Self {
            n: 1,
            l: DMatrix::from_element(1, 1, l),
            delayed: vec![(tau, DMatrix::from_element(1, 1, r))],
            distributed: None,
        }
    }

    pub fn eval(&self, mu: Complex64) -> DMatrix<Complex64> {
        let n = self.n;
        let mut m = DMatrix::<Complex64>::from_fn(n, n, |i, j| {
            let diag = if i == j { mu } else { Complex64::new(0.0, 0.0) };
            diag - self.l[(i, j)]
        });
        for (tau, r) in &self.delayed {
            let e = (-mu * *tau).exp();
            m.iter_mut().zip(r.iter()).for_each(|(a, b)| *a -= e * *b);
        }
        if let Some((s, d)) = &self.distributed {
            let e = uniform_kernel_transform(mu, *s);
            m.iter_mut().zip(d.iter()).for_each(|(a, b)| *a -= e * *b);
        }
        m
    }

    pub fn det(&self, mu: Complex64) -> Complex64 {
        let m = self.eval(mu);
        if self.n == 1 {
            m[(0, 0)]
        } else {
            m.lu().determinant()
        }
    }

    /// d/dμ det Δ(μ), averaging central differences along both axes.
    pub fn det_derivative(&self, mu: Complex64) -> Complex64 {
        let h = DERIV_STEP * (1.0 + mu.norm());
        let re = (self.det(mu + h) - self.det(mu - h)) / (2.0 * h);
        let ih = Complex64::new(0.0, h);
        let im = (self.det(mu + ih) - self.det(mu - ih)) / (2.0 * ih);
        0.5 * (re + im)
    }

    fn residual_ok(&self, mu: Complex64, res: f64) -> bool {
        res < 1e-9 * (1.0 + mu.norm().powi(self.n as i32))
    }
}

/// Partial Jacobians of `system` at the constant state `eq`, by central differences.
pub fn linearize(system: &DelaySystem, eq: &[f64]) -> Result<CharMatrix> {
    let n = system.dim;
    if eq.len() != n {
        return Err(Error::Validation(format!("equilibrium has {} entries, system {n}", eq.len())));
    }
    if system.periodic.is_some() {
        return Err(Error::Config("time-periodic delays have no autonomous characteristic matrix".into()));
    }
    let f0 = system.eval_constant(0.0, eq);
    if let Some(v) = f0.iter().find(|v| v.abs() > 1e-10) {
        return Err(Error::Validation(format!("state is not an equilibrium (rhs component {v:e})")));
    }
    let nd = system.delays.len();
    let x = eq.to_vec();
    let delayed: Vec<f64> = (0..nd).flat_map(|_| eq.iter().copied()).collect();
    let kernel = system.distributed;
    let distributed: Vec<f64> = kernel.map_or(Vec::new(), |k| eq.iter().map(|v| k.weight * k.support * v).collect());

    // slot 0: current state, 1..=nd: delays, nd+1: distributed argument
    let call = |slot: usize, i: usize, delta: f64| -> Vec<f64> {
        let (mut x, mut d, mut s) = (x.clone(), delayed.clone(), distributed.clone());
        match slot {
            0 => x[i] += delta,
            s_ if s_ <= nd => d[(s_ - 1) * n + i] += delta,
            _ => s[i] += delta,
        }
        let mut out = vec![0.0; n];
        (system.rhs)(&RhsArgs { t: 0.0, x: &x, delayed: &d, distributed: &s, held: &[] }, &mut out);
        out
    };
    let jac = |slot: usize| {
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            let (p, q) = (call(slot, i, JAC_STEP), call(slot, i, -JAC_STEP));
            for r in 0..n {
                m[(r, i)] = (p[r] - q[r]) / (2.0 * JAC_STEP);
            }
        }
        m
    };
    Ok(CharMatrix {
        n,
        l: jac(0),
        delayed: system.delays.iter().enumerate().map(|(j, &tau)| (tau, jac(j + 1))).collect(),
        distributed: kernel.map(|k| (k.support, jac(nd + 1) * k.weight)),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Root {
    pub value: Complex64,
    /// `|det Δ(value)|`.
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub re_min: f64,
    pub re_max: f64,
    pub im_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    /// Sorted by descending real part, positive imaginary part first within a pair.
    pub roots: Vec<Root>,
    pub window: Window,
}

impl Spectrum {
    pub fn values(&self) -> Vec<Complex64> {
        self.roots.iter().map(|r| r.value).collect()
    }

    /// Rightmost root (the one with nonnegative imaginary part when a pair).
    pub fn dominant(&self) -> Option<Complex64> {
        self.roots.first().map(|r| r.value)
    }

    pub fn to_csv(&self) -> String {
        use crate::trajectory::fmt_e12;
        let mut s = String::from("re,im,residual\n");
        for r in &self.roots {
            s.push_str(&format!("{},{},{}\n", fmt_e12(r.value.re), fmt_e12(r.value.im), fmt_e12(r.residual)));
        }
        s
    }
}

/// Damped Newton on `det Δ(μ) = 0`.
pub fn newton(cm: &CharMatrix, seed: Complex64, max_step: f64) -> Option<Root> {
    let mut mu = seed;
    for _ in 0..100 {
        let f = cm.det(mu);
        let df = cm.det_derivative(mu);
        if !df.is_finite() || df.norm() == 0.0 || !f.is_finite() {
            return None;
        }
        let mut step = f / df;
        if step.norm() > max_step {
            step *= max_step / step.norm();
        }
        mu -= step;
        if step.norm() < 1e-13 * (1.0 + mu.norm()) {
            break;
        }
    }
    let residual = cm.det(mu).norm();
    cm.residual_ok(mu, residual).then_some(Root { value: mu, residual })
}

/// Roots with `re_min ≤ Re μ ≤ re_max`, `|Im μ| ≤ im_max`, from a uniform seed grid.
pub fn roots_in_window(
    cm: &CharMatrix,
    re_min: f64,
    re_max: f64,
    im_max: f64,
    seeds_per_axis: usize,
) -> Result<Spectrum> {
    if !(re_max > re_min) || !(im_max >= 0.0) || seeds_per_axis == 0 {
        return Err(Error::Validation("empty root-search window".into()));
    }
    let window = Window { re_min, re_max, im_max };
    let ns = seeds_per_axis;
    let max_step = 0.25 * (re_max - re_min).max(im_max).max(1.0);
    let seeds: Vec<Complex64> = (0..ns * ns)
        .map(|k| {
            let (i, j) = (k / ns, k % ns);
            let fr = if ns == 1 { 0.5 } else { i as f64 / (ns - 1) as f64 };
            let fi = if ns == 1 { 0.5 } else { j as f64 / (ns - 1) as f64 };
            Complex64::new(re_min + fr * (re_max - re_min), fi * im_max)
        })
        .collect();
    let found = par::map(&seeds, |&s| newton(cm, s, max_step));

    let slack = 1e-9 * (1.0 + re_max.abs().max(re_min.abs()).max(im_max));
    let inside = |z: Complex64| z.re >= re_min - slack && z.re <= re_max + slack && z.im.abs() <= im_max + slack;
    let mut roots: Vec<Root> = Vec::new();
    for r in found.into_iter().flatten() {
        // fold onto the upper half plane; real roots are snapped to the axis
        let mut v = Complex64::new(r.value.re, r.value.im.abs());
        if v.im < DEDUP_TOL {
            v.im = 0.0;
        }
        if !inside(v) || roots.iter().any(|q| (q.value - v).norm() < DEDUP_TOL) {
            continue;
        }
        roots.push(Root { value: v, residual: cm.det(v).norm() });
    }
    let mut all = Vec::with_capacity(2 * roots.len());
    for r in roots {
        all.push(r);
        if r.value.im > 0.0 {
            all.push(Root { value: r.value.conj(), residual: cm.det(r.value.conj()).norm() });
        }
    }
    all.sort_by(|a, b| b.value.re.total_cmp(&a.value.re).then(b.value.im.total_cmp(&a.value.im)));
    if all.is_empty() {
        log::warn!("no characteristic root converged in the window");
    }
    Ok(Spectrum { roots: all, window })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Smoothness {
    Finite(usize),
    Infinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SmoothnessReport {
    pub class: Smoothness,
    /// Gap ratio hit an integer within 1e-10; the reported class is the conservative one.
    pub resonant: bool,
}

/// Guaranteed smoothness class of the spectral submanifold tangent to the
/// `sigma_size` rightmost roots.
pub fn smoothness_class(spec: &Spectrum, sigma_size: usize, k_cap: usize) -> Result<SmoothnessReport> {
    if sigma_size == 0 || spec.roots.len() < sigma_size + 1 {
        return Err(Error::Validation(format!("need at least {} roots, have {}", sigma_size + 1, spec.roots.len())));
    }
    let inf_in = spec.roots[..sigma_size].iter().map(|r| r.value.re).fold(f64::INFINITY, f64::min);
    let sup_out = spec.roots[sigma_size..].iter().map(|r| r.value.re).fold(f64::NEG_INFINITY, f64::max);
    Ok(gap_class(inf_in, sup_out, k_cap))
}

/// Largest `ℓ ≤ k_cap` with `sup_out < ℓ · inf_in`.
pub fn gap_class(inf_in: f64, sup_out: f64, k_cap: usize) -> SmoothnessReport {
    let finite = |l| SmoothnessReport { class: Smoothness::Finite(l), resonant: false };
    if inf_in > 0.0 && sup_out < 0.0 {
        return SmoothnessReport { class: Smoothness::Infinite, resonant: false };
    }
    if inf_in.abs() < 1e-10 {
        return SmoothnessReport { class: Smoothness::Finite(0), resonant: true };
    }
    if inf_in > 0.0 {
        // sup_out ≥ 0: the condition holds for all large ℓ
        return if (k_cap as f64) * inf_in > sup_out { finite(k_cap) } else { finite(0) };
    }
    // inf_in < 0: sup_out < ℓ inf_in  ⇔  ℓ < sup_out / inf_in
    let ratio = sup_out / inf_in;
    let nearest = ratio.round();
    let resonant = (ratio - nearest).abs() < 1e-10;
    let l = if resonant { nearest - 1.0 } else { ratio.ceil() - 1.0 };
    let l = l.clamp(0.0, k_cap as f64) as usize;
    SmoothnessReport { class: Smoothness::Finite(l), resonant }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackPoint {
    pub param: f64,
    pub root: Complex64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub points: Vec<TrackPoint>,
    /// Parameter values where the dominant real part changes sign.
    pub crossings: Vec<f64>,
}

/// Follows the rightmost root along `grid`, re-seeding from a window search
/// whenever continuation loses it, and bisects sign changes of its real part.
pub fn track_rightmost<F>(builder: F, grid: &[f64], window: Window, seeds_per_axis: usize) -> Result<Track>
where
    F: Fn(f64) -> Result<CharMatrix>,
{
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Validation("parameter grid must be strictly increasing".into()));
    }
    let dominant = |p: f64, prev: Option<Complex64>| -> Result<Complex64> {
        let cm = builder(p)?;
        let fresh = || -> Result<Complex64> {
            roots_in_window(&cm, window.re_min, window.re_max, window.im_max, seeds_per_axis)?
                .dominant()
                .ok_or_else(|| Error::Numeric(format!("no characteristic root at parameter {p}")))
        };
        match prev.and_then(|z| newton(&cm, z, 0.1)) {
            Some(r) => {
                // continuation may land on a subdominant root; confirm with a window search
                let best = fresh()?;
                Ok(if best.re > r.value.re + DEDUP_TOL { best } else { Complex64::new(r.value.re, r.value.im.abs()) })
            }
            None => fresh(),
        }
    };
    let mut points = Vec::with_capacity(grid.len());
    let mut prev = None;
    for &p in grid {
        let z = dominant(p, prev)?;
        points.push(TrackPoint { param: p, root: z });
        prev = Some(z);
    }
    let mut crossings = Vec::new();
    for w in points.windows(2) {
        if w[0].root.re.signum() == w[1].root.re.signum() {
            continue;
        }
        let (mut lo, mut hi) = (w[0], w[1]);
        while hi.param - lo.param > 1e-5 {
            let mid = 0.5 * (lo.param + hi.param);
            let z = dominant(mid, Some(lo.root))?;
            let pt = TrackPoint { param: mid, root: z };
            if z.re.signum() == lo.root.re.signum() {
                lo = pt;
            } else {
                hi = pt;
            }
        }
        // linear interpolation of Re inside the final bracket
        let t = lo.root.re / (lo.root.re - hi.root.re);
        crossings.push(lo.param + t * (hi.param - lo.param));
    }
    Ok(Track { points, crossings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn hayes_boundary_roots() {
        let cm = CharMatrix::scalar(0.0, -FRAC_PI_2, 1.0);
        let spec = roots_in_window(&cm, -1.0, 1.0, 3.0, 8).unwrap();
        let z = spec.dominant().unwrap();
        assert!(z.re.abs() < 1e-10 && (z.im - FRAC_PI_2).abs() < 1e-10);
        assert_eq!(spec.roots[1].value, z.conj());
    }

    #[test]
    fn gap_arithmetic() {
        assert_eq!(gap_class(-1.0, -2.0, 10).class, Smoothness::Finite(1));
        assert_eq!(gap_class(-1.0, -2.5, 10).class, Smoothness::Finite(2));
        assert_eq!(gap_class(-1.0, -50.0, 10).class, Smoothness::Finite(10));
        assert_eq!(gap_class(0.1, -3.0, 10).class, Smoothness::Infinite);
        let r = gap_class(-1.0, -3.0, 10);
        assert!(r.resonant);
        assert_eq!(r.class, Smoothness::Finite(2));
    }

    #[test]
    fn kernel_transform_is_continuous_at_zero() {
        let mu = Complex64::new(0.6e-4, 0.7e-4);
        let closed = (1.0 - (-mu * 1.3).exp()) / mu;
        assert!((uniform_kernel_transform(mu, 1.3) - closed).norm() < 1e-11);
        assert!((uniform_kernel_transform(Complex64::new(0.0, 0.0), 1.3).re - 1.3).abs() < 1e-15);
    }
}
