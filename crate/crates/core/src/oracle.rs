//! Equation-driven cubic SSM of the Hutchinson equation, shifted to its
//! positive equilibrium: `ẏ = L y + R y(t−τ) + N(y, y(t−τ))` with `L = 0`,
//! `R = −r`, `N(u, v) = −(r/K) u v`.
//!
//! The manifold is `W(z, z̄, θ) = Σ w_jk(θ) z^j z̄^k` and the reduced dynamics
//! `ż = λ z + Σ β_jk z^j z̄^k`. Every `w_jk` is an exponential polynomial, so
//! all pairings and boundary terms are evaluated in closed form.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Vector3};
use num_complex::Complex64 as C;
use serde::{Deserialize, Serialize};

use crate::dde::HistorySpec;
use crate::error::{Error, Result};
use crate::spectrum::{newton, CharMatrix};

/// `c · θ^p · e^{aθ}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Term {
    pub c: C,
    pub p: u32,
    pub a: C,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExpPoly {
    pub terms: Vec<Term>,
}

impl ExpPoly {
    pub fn exp(c: C, a: C) -> Self {
        Self { terms: vec![Term { c, p: 0, a }] }
    }

    pub fn eval(&self, theta: f64) -> C {
        self.terms.iter().map(|t| t.c * theta.powi(t.p as i32) * (t.a * theta).exp()).sum()
    }

    pub fn derivative(&self) -> Self {
        let mut out = Vec::new();
        for t in &self.terms {
            out.push(Term { c: t.c * t.a, ..*t });
            if t.p > 0 {
                out.push(Term { c: t.c * t.p as f64, p: t.p - 1, a: t.a });
            }
        }
        Self { terms: out }
    }

    pub fn scaled(&self, s: C) -> Self {
        Self { terms: self.terms.iter().map(|t| Term { c: t.c * s, ..*t }).collect() }
    }

    pub fn add(&mut self, other: &ExpPoly) {
        self.terms.extend_from_slice(&other.terms);
    }

    /// Merges terms with equal `(p, a)`.
    fn simplify(self) -> Self {
        let mut out: Vec<Term> = Vec::new();
        for t in self.terms {
            match out.iter_mut().find(|u| u.p == t.p && (u.a - t.a).norm() < 1e-14 * (1.0 + t.a.norm())) {
                Some(u) => u.c += t.c,
                None => out.push(t),
            }
        }
        Self { terms: out }
    }

    /// A particular solution of `y′ − μ y = self`.
    pub fn particular(&self, mu: C) -> Self {
        let mut out = Vec::new();
        for t in &self.terms {
            let d = t.a - mu;
            if d.norm() < 1e-12 * (1.0 + mu.norm()) {
                out.push(Term { c: t.c / (t.p + 1) as f64, p: t.p + 1, a: t.a });
                continue;
            }
            // y = e^{aθ} Σ c_i θ^i with (a−μ) c_i + (i+1) c_{i+1} = δ_ip
            let mut c = vec![C::new(0.0, 0.0); t.p as usize + 1];
            c[t.p as usize] = t.c / d;
            for i in (0..t.p as usize).rev() {
                c[i] = -c[i + 1] * (i + 1) as f64 / d;
            }
            out.extend(c.into_iter().enumerate().map(|(i, ci)| Term { c: ci, p: i as u32, a: t.a }));
        }
        Self { terms: out }.simplify()
    }
}

/// `∫_0^τ s^p e^{bs} ds`.
fn int_power_exp(p: u32, b: C, tau: f64) -> C {
    if (b * tau).norm() < 1e-3 {
        // series in b
        let mut sum = C::new(0.0, 0.0);
        let mut coef = C::new(1.0, 0.0);
        for n in 0..30 {
            if n > 0 {
                coef *= b / n as f64;
            }
            sum += coef * tau.powi((p + n + 1) as i32) / (p + n + 1) as f64;
        }
        return sum;
    }
    let e = (b * tau).exp();
    let mut acc = (e - 1.0) / b;
    for q in 1..=p {
        acc = (e * tau.powi(q as i32) - acc * q as f64) / b;
    }
    acc
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HutchinsonParams {
    pub r: f64,
    pub k: f64,
    pub tau: f64,
}

impl Default for HutchinsonParams {
    fn default() -> Self {
        Self { r: 1.8, k: 10.0, tau: 1.0 }
    }
}

impl HutchinsonParams {
    fn l(&self) -> f64 {
        0.0
    }

    fn rr(&self) -> f64 {
        -self.r
    }

    /// `Δ(μ) = μ − L − R e^{−μτ}`.
    pub fn delta(&self, mu: C) -> C {
        mu - self.l() - self.rr() * (-mu * self.tau).exp()
    }

    pub fn delta_prime(&self, mu: C) -> C {
        1.0 + self.rr() * self.tau * (-mu * self.tau).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigData {
    pub params: HutchinsonParams,
    /// Dominant root with negative imaginary part.
    pub lambda: C,
    pub q: C,
    pub p_star: C,
    pub delta_prime: C,
}

impl EigData {
    /// Eigenvalue `i` (0: λ, 1: λ̄).
    pub fn lambda_i(&self, i: usize) -> C {
        if i == 0 {
            self.lambda
        } else {
            self.lambda.conj()
        }
    }

    fn p_star_i(&self, i: usize) -> C {
        if i == 0 {
            self.p_star
        } else {
            self.p_star.conj()
        }
    }

    /// `ψ_i(θ)` on `[0, τ]`.
    pub fn psi(&self, i: usize, theta: f64) -> C {
        let l = self.lambda_i(i);
        let rr = self.params.rr();
        self.p_star_i(i) * (1.0 + rr * (-l * self.params.tau).exp() * pi_factor(l, theta))
    }

    /// `⟨ψ_i, Φ⟩ = ψ_i(0) Φ(0) + ∫_0^τ ψ_i′(s) Φ(−s) ds` in closed form.
    pub fn pairing(&self, i: usize, phi: &ExpPoly) -> C {
        let l = self.lambda_i(i);
        let tau = self.params.tau;
        let w = self.p_star_i(i) * self.params.rr() * (-l * tau).exp();
        let mut out = self.p_star_i(i) * phi.eval(0.0);
        for t in &phi.terms {
            let sign = if t.p % 2 == 0 { 1.0 } else { -1.0 };
            out += w * t.c * sign * int_power_exp(t.p, l - t.a, tau);
        }
        out
    }

    /// `Π_i(a) = ⟨ψ_i, e^{aθ}⟩`, with the removable singularity `Π_i(λ_i) = 1`.
    pub fn pi(&self, i: usize, a: C) -> C {
        let l = self.lambda_i(i);
        self.p_star_i(i) * (1.0 + self.params.rr() * (-l * self.params.tau).exp() * pi_factor(l - a, self.params.tau))
    }

    /// Pairing with a sampled history (trapezoid on the history grid).
    pub fn pairing_history(&self, i: usize, history: &HistorySpec, shift: f64, n: usize) -> C {
        let l = self.lambda_i(i);
        let tau = self.params.tau;
        let w = self.p_star_i(i) * self.params.rr() * (-l * tau).exp();
        let h = tau / n as f64;
        let f = |s: f64| w * (l * s).exp() * (history.eval(-s)[0] - shift);
        let mut integral = 0.5 * (f(0.0) + f(tau));
        for j in 1..n {
            integral += f(j as f64 * h);
        }
        self.p_star_i(i) * (history.eval(0.0)[0] - shift) + integral * h
    }
}

/// `(e^{aθ} − 1)/a`, equal to `θ` in the limit `a → 0`.
fn pi_factor(a: C, theta: f64) -> C {
    if (a * theta).norm() < 1e-8 {
        return C::new(theta, 0.0) * (1.0 + a * theta / 2.0);
    }
    ((a * theta).exp() - 1.0) / a
}

/// Dominant characteristic root (negative imaginary part) and adjoint normalization.
pub fn eig_setup(params: HutchinsonParams) -> Result<EigData> {
    let cm = CharMatrix::scalar(0.0, params.rr(), params.tau);
    let seed = C::new(0.1, -1.6);
    let root = newton(&cm, seed, 0.5).ok_or_else(|| Error::Numeric("no characteristic root near the seed".into()))?;
    let mut lambda = root.value;
    if lambda.im > 0.0 {
        lambda = lambda.conj();
    }
    // polish on the scalar quasi-polynomial directly
    for _ in 0..5 {
        let step = params.delta(lambda) / params.delta_prime(lambda);
        lambda -= step;
        if step.norm() < 1e-16 {
            break;
        }
    }
    let dp = params.delta_prime(lambda);
    let q = C::new(1.0, 0.0);
    Ok(EigData { params, lambda, q, p_star: 1.0 / (dp * q), delta_prime: dp })
}

/// Monomial `z^j z̄^k`.
pub type Monomial = (u32, u32);

/// The seven monomials of degree two and three.
pub const NONLINEAR_MONOMIALS: [Monomial; 7] = [(2, 0), (1, 1), (0, 2), (3, 0), (2, 1), (1, 2), (0, 3)];

fn mu_of(eig: &EigData, m: Monomial) -> C {
    eig.lambda * m.0 as f64 + eig.lambda.conj() * m.1 as f64
}

/// `|Δ(jλ + kλ̄)|` for the seven monomials.
pub fn check_nonresonance(eig: &EigData) -> Result<Vec<(Monomial, f64)>> {
    let out: Vec<(Monomial, f64)> =
        NONLINEAR_MONOMIALS.iter().map(|&m| (m, eig.params.delta(mu_of(eig, m)).norm())).collect();
    if let Some((m, v)) = out.iter().find(|(_, v)| *v < 1e-8) {
        return Err(Error::Resonance(format!("|Δ({}λ + {}λ̄)| = {v:.2e}", m.0, m.1)));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CubicSsm {
    pub eig: EigData,
    /// `w_jk(θ)` for all monomials up to degree three.
    pub w: BTreeMap<Monomial, ExpPoly>,
    pub beta: BTreeMap<Monomial, C>,
}

impl CubicSsm {
    /// Coefficient of `z^j z̄^k` in `ż̄`, i.e. `conj(β_kj)`.
    fn gamma(&self, m: Monomial) -> C {
        self.beta.get(&(m.1, m.0)).map(|b| b.conj()).unwrap_or_default()
    }

    /// `ż` at `z`.
    pub fn zdot(&self, z: C) -> C {
        let zb = z.conj();
        let mut out = self.eig.lambda * z;
        for (&(j, k), b) in &self.beta {
            out += b * z.powu(j) * zb.powu(k);
        }
        out
    }

    /// `W(z, z̄, θ)`, real up to rounding.
    pub fn lift(&self, z: C, theta: f64) -> f64 {
        let zb = z.conj();
        self.w.iter().map(|(&(j, k), f)| f.eval(theta) * z.powu(j) * zb.powu(k)).sum::<C>().re
    }

    /// Paper-style coefficient `W_jk = j! k! w_jk / ...` with the binomial
    /// factors of the symmetric expansion: `W_20 = 2 w_20`, `W_21 = 2 w_21`, etc.
    pub fn symmetric_coefficient(&self, m: Monomial, theta: f64) -> C {
        let n = m.0 + m.1;
        let fact = |x: u32| (1..=x).product::<u32>() as f64;
        let binom = fact(n) / (fact(m.0) * fact(m.1));
        self.w[&m].eval(theta) * fact(n) / binom
    }

    /// Residual of the boundary (DDE) equation at `θ = 0` for reduced state `z`.
    pub fn boundary_residual(&self, z: C) -> f64 {
        let zb = z.conj();
        let f = self.zdot(z);
        let fb = f.conj();
        let p = &self.eig.params;
        let mut lhs = C::new(0.0, 0.0);
        let (mut u, mut v) = (C::new(0.0, 0.0), C::new(0.0, 0.0));
        for (&(j, k), wf) in &self.w {
            let w0 = wf.eval(0.0);
            if j > 0 {
                lhs += w0 * j as f64 * z.powu(j - 1) * zb.powu(k) * f;
            }
            if k > 0 {
                lhs += w0 * k as f64 * z.powu(j) * zb.powu(k - 1) * fb;
            }
            u += w0 * z.powu(j) * zb.powu(k);
            v += wf.eval(-p.tau) * z.powu(j) * zb.powu(k);
        }
        let rhs = p.l() * u + p.rr() * v - p.r / p.k * u * v;
        (lhs - rhs).norm()
    }

    /// Interior residual `w′ − (μ w + β φ₁ + γ φ₂ + G)` of monomial `m` at `θ`.
    pub fn interior_residual(&self, m: Monomial, theta: f64) -> f64 {
        let w = &self.w[&m];
        let mut rhs = w.eval(theta) * mu_of(&self.eig, m);
        if m.0 + m.1 >= 2 {
            rhs += self.beta[&m] * self.w[&(1, 0)].eval(theta) + self.gamma(m) * self.w[&(0, 1)].eval(theta);
            rhs += interior_forcing(self, m).eval(theta);
        }
        (w.derivative().eval(theta) - rhs).norm()
    }
}

/// Lower-order part of `∂_z W ż + ∂_z̄ W ż̄` at monomial `m`.
fn interior_forcing(s: &CubicSsm, m: Monomial) -> ExpPoly {
    let mut g = ExpPoly::default();
    for (&(a1, a2), wa) in &s.w {
        if a1 + a2 < 2 {
            continue;
        }
        for (&(b1, b2), beta) in &s.beta {
            // ∂_z: a1 w_a z^{a1-1} z̄^{a2} · β_b z^{b1} z̄^{b2}
            if a1 > 0 && (a1 - 1 + b1, a2 + b2) == m {
                g.add(&wa.scaled(*beta * a1 as f64));
            }
            let gamma = s.gamma((b1, b2));
            if a2 > 0 && (a1 + b1, a2 - 1 + b2) == m {
                g.add(&wa.scaled(gamma * a2 as f64));
            }
        }
    }
    g
}

/// Coefficient of monomial `m` in `N(W(0), W(−τ))`.
fn nonlinear_forcing(s: &CubicSsm, m: Monomial) -> C {
    let p = &s.eig.params;
    let mut out = C::new(0.0, 0.0);
    for (&a, wa) in &s.w {
        for (&b, wb) in &s.w {
            if (a.0 + b.0, a.1 + b.1) == m {
                out += wa.eval(0.0) * wb.eval(-p.tau);
            }
        }
    }
    -p.r / p.k * out
}

/// Solves one homological equation: `w = c e^{μθ} + β e^{λθ}/(λ−μ) + γ e^{λ̄θ}/(λ̄−μ) + g`
/// with the boundary condition and the two gauge conditions as a 3×3 system.
fn solve_monomial(s: &mut CubicSsm, m: Monomial) -> Result<()> {
    let eig = s.eig;
    let p = eig.params;
    let mu = mu_of(&eig, m);
    let g = interior_forcing(s, m).particular(mu);
    let n_m = nonlinear_forcing(s, m);
    let basis = [
        ExpPoly::exp(C::new(1.0, 0.0), mu),
        ExpPoly::exp(1.0 / (eig.lambda - mu), eig.lambda),
        ExpPoly::exp(1.0 / (eig.lambda.conj() - mu), eig.lambda.conj()),
    ];
    let boundary = |f: &ExpPoly| f.derivative().eval(0.0) - p.l() * f.eval(0.0) - p.rr() * f.eval(-p.tau);
    let mut a = Matrix3::<C>::zeros();
    let mut rhs = Vector3::<C>::zeros();
    for (col, bf) in basis.iter().enumerate() {
        // w satisfies the interior equation by construction, so the boundary
        // condition reads w′(0) − L w(0) − R w(−τ) = N_m
        a[(0, col)] = boundary(bf);
        a[(1, col)] = eig.pairing(0, bf);
        a[(2, col)] = eig.pairing(1, bf);
    }
    rhs[0] = n_m - boundary(&g);
    rhs[1] = -eig.pairing(0, &g);
    rhs[2] = -eig.pairing(1, &g);
    let sol = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Resonance(format!("singular homological system at z^{} z̄^{}", m.0, m.1)))?;
    let mut w = g;
    for (coef, bf) in sol.iter().zip(&basis) {
        w.add(&bf.scaled(*coef));
    }
    s.w.insert(m, w.simplify());
    s.beta.insert(m, sol[1]);
    Ok(())
}

/// First- and second-order manifold and reduced-dynamics coefficients.
pub fn solve_order2(eig: &EigData) -> Result<CubicSsm> {
    check_nonresonance(eig)?;
    let mut s = CubicSsm { eig: *eig, w: BTreeMap::new(), beta: BTreeMap::new() };
    s.w.insert((1, 0), ExpPoly::exp(eig.q, eig.lambda));
    s.w.insert((0, 1), ExpPoly::exp(eig.q.conj(), eig.lambda.conj()));
    for m in [(2, 0), (1, 1), (0, 2)] {
        solve_monomial(&mut s, m)?;
    }
    Ok(s)
}

/// Adds the cubic coefficients to an order-2 solution.
pub fn solve_order3(order2: &CubicSsm) -> Result<CubicSsm> {
    let mut s = order2.clone();
    for m in [(3, 0), (2, 1), (1, 2), (0, 3)] {
        solve_monomial(&mut s, m)?;
    }
    Ok(s)
}

/// Cubic SSM of the Hutchinson equation.
pub fn hutchinson_cubic(params: HutchinsonParams) -> Result<CubicSsm> {
    solve_order3(&solve_order2(&eig_setup(params)?)?)
}

/// Validity radius in `|z|` beyond which predictions are flagged.
pub const VALIDITY_RADIUS: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OraclePrediction {
    pub times: Vec<f64>,
    /// Predicted `x(t)` in original (unshifted) coordinates.
    pub x: Vec<f64>,
    pub z: Vec<[f64; 2]>,
}

/// Projects a history (original coordinates) onto the spectral subspace,
/// advances the cubic reduced dynamics and lifts at `theta`.
pub fn oracle_predict(
    ssm: &CubicSsm,
    history: &HistorySpec,
    t_end: f64,
    dt: f64,
    theta: f64,
) -> Result<OraclePrediction> {
    let p = ssm.eig.params;
    let grid = ((p.tau / dt).round() as usize).max(200);
    let z0 = ssm.eig.pairing_history(0, history, p.k, grid);
    let steps = (t_end / dt).round() as usize;
    let mut z = z0;
    let mut out = OraclePrediction { times: Vec::with_capacity(steps + 1), x: Vec::new(), z: Vec::new() };
    let mut warned = false;
    for i in 0..=steps {
        if z.norm() > VALIDITY_RADIUS && !warned {
            log::warn!("reduced state |z| = {:.2} exceeds the oracle validity radius {VALIDITY_RADIUS}", z.norm());
            warned = true;
        }
        out.times.push(i as f64 * dt);
        out.x.push(p.k + ssm.lift(z, theta));
        out.z.push([z.re, z.im]);
        if i < steps {
            let k1 = ssm.zdot(z);
            let k2 = ssm.zdot(z + k1 * (0.5 * dt));
            let k3 = ssm.zdot(z + k2 * (0.5 * dt));
            let k4 = ssm.zdot(z + k3 * dt);
            z += (k1 + 2.0 * k2 + 2.0 * k3 + k4) * (dt / 6.0);
            if !z.norm().is_finite() {
                return Err(Error::Diverged { time: i as f64 * dt });
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub r: f64,
    #[serde(rename = "K")]
    pub k: f64,
    pub tau: f64,
    pub lambda: [f64; 2],
    pub p_star: [f64; 2],
    /// `|Δ(jλ + kλ̄)|` by monomial label.
    pub nonresonance: BTreeMap<String, f64>,
    /// Reduced-dynamics coefficients `β_jk` as `[re, im]`.
    pub beta: BTreeMap<String, [f64; 2]>,
    /// Symmetric-expansion manifold coefficients `W_jk` at `θ = 0` and `θ = −τ`.
    pub w_theta0: BTreeMap<String, [f64; 2]>,
    pub w_theta_minus_tau: BTreeMap<String, [f64; 2]>,
}

fn label(m: Monomial) -> String {
    format!("{}{}", m.0, m.1)
}

fn pair(c: C) -> [f64; 2] {
    [c.re, c.im]
}

impl OracleReport {
    pub fn new(s: &CubicSsm) -> Result<Self> {
        let p = s.eig.params;
        let all: Vec<Monomial> = s.w.keys().copied().collect();
        Ok(Self {
            r: p.r,
            k: p.k,
            tau: p.tau,
            lambda: pair(s.eig.lambda),
            p_star: pair(s.eig.p_star),
            nonresonance: check_nonresonance(&s.eig)?.into_iter().map(|(m, v)| (label(m), v)).collect(),
            beta: s.beta.iter().map(|(m, b)| (label(*m), pair(*b))).collect(),
            w_theta0: all.iter().map(|&m| (label(m), pair(s.symmetric_coefficient(m, 0.0)))).collect(),
            w_theta_minus_tau: all.iter().map(|&m| (label(m), pair(s.symmetric_coefficient(m, -p.tau)))).collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn particular_solution_satisfies_ode() {
        let mu = C::new(0.3, -2.0);
        let f = ExpPoly {
            terms: vec![
                Term { c: C::new(1.0, 2.0), p: 2, a: C::new(-0.5, 1.0) },
                Term { c: C::new(0.5, 0.0), p: 0, a: mu },
            ],
        };
        let y = f.particular(mu);
        for th in [-1.0, -0.4, 0.0] {
            let r = y.derivative().eval(th) - mu * y.eval(th) - f.eval(th);
            assert!(r.norm() < 1e-13);
        }
    }

    #[test]
    fn closed_form_integral() {
        let b = C::new(0.4, -1.3);
        // ∫_0^1 s^2 e^{bs} ds by midpoint quadrature
        let n = 200000;
        let q: C = (0..n)
            .map(|i| {
                let s = (i as f64 + 0.5) / n as f64;
                s * s * (b * s).exp()
            })
            .sum::<C>()
            / n as f64;
        assert!((int_power_exp(2, b, 1.0) - q).norm() < 1e-10);
        assert!((int_power_exp(1, C::new(1e-6, 0.0), 2.0) - C::new(2.0, 0.0)).norm() < 1e-5);
    }
}
