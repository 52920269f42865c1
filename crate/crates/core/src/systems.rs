//! Ready-made benchmark delay systems with their reference parameter values.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::dde::{DelaySystem, DistributedKernel, PeriodicDelay, RhsArgs};
use crate::error::{Error, Result};

pub type Params = BTreeMap<String, f64>;

type Builder = fn(&Params) -> Result<DelaySystem>;
type EquilibriumFn = fn(&Params) -> Result<Vec<f64>>;

/// One catalog entry: builder, defaults and the anchor equilibrium.
pub struct SystemCatalogEntry {
    pub name: &'static str,
    pub description: &'static str,
    defaults: &'static [(&'static str, f64)],
    builder: Builder,
    equilibrium: EquilibriumFn,
}

impl SystemCatalogEntry {
    pub fn default_params(&self) -> Params {
        self.defaults.iter().map(|&(k, v)| (k.to_string(), v)).collect()
    }

    /// Defaults with `overrides` applied; unknown keys are rejected.
    pub fn params(&self, overrides: &Params) -> Result<Params> {
        let mut p = self.default_params();
        for (k, v) in overrides {
            match p.get_mut(k) {
                Some(slot) => *slot = *v,
                None => return Err(Error::Catalog(format!("system `{}` has no parameter `{k}`", self.name))),
            }
        }
        Ok(p)
    }

    pub fn build(&self, overrides: &Params) -> Result<DelaySystem> {
        let p = self.params(overrides)?;
        Ok((self.builder)(&p)?.with_params(p))
    }

    /// Anchor fixed point in the coordinates of the built system.
    pub fn equilibrium(&self, overrides: &Params) -> Result<Vec<f64>> {
        (self.equilibrium)(&self.params(overrides)?)
    }
}

#[derive(Serialize)]
struct CatalogListing<'a> {
    name: &'a str,
    description: &'a str,
    default_params: Params,
}

pub const CATALOG: &[SystemCatalogEntry] = &[
    SystemCatalogEntry {
        name: "hutchinson",
        description: "logistic growth with delayed regulation, x' = r x (1 - x(t-tau)/K)",
        defaults: &[("K", 10.0), ("r", 1.8), ("tau", 1.0)],
        builder: hutchinson,
        equilibrium: |p| Ok(vec![p["K"]]),
    },
    SystemCatalogEntry {
        name: "mackey-glass",
        description: "blood cell production model, chaotic for the default parameters",
        defaults: &[("alpha", 9.6), ("beta", 4.0), ("gamma", 2.0), ("tau", 1.0)],
        builder: mackey_glass,
        equilibrium: |p| Ok(vec![mackey_glass_positive_equilibrium(p)]),
    },
    SystemCatalogEntry {
        name: "two-neuron",
        description: "two coupled neurons with self and cross delays",
        defaults: &[
            ("a12", 1.0),
            ("a21", 2.0),
            ("beta", -1.0),
            ("kappa", 0.5),
            ("tau1", 2.0),
            ("tau2", 2.0),
            ("taus", 1.5),
        ],
        builder: two_neuron,
        equilibrium: |_| Ok(vec![0.0, 0.0]),
    },
    SystemCatalogEntry {
        name: "rossler-delay",
        description: "Rossler-like system with two delays, shifted to its nontrivial equilibrium",
        defaults: &[
            ("alpha1", 0.2),
            ("alpha2", 1.0),
            ("beta1", 0.2),
            ("beta2", 0.2),
            ("gamma", 1.2),
            ("tau1", 1.0),
            ("tau2", 2.0),
        ],
        builder: rossler_delay,
        equilibrium: |_| Ok(vec![0.0; 3]),
    },
    SystemCatalogEntry {
        name: "traffic",
        description: "human-driven / automated vehicle pair with reaction delay, shifted coordinates",
        defaults: &[
            ("alpha", 0.3),
            ("beta", 0.4),
            ("beta_hat", 0.6),
            ("beta_m1", -0.4),
            ("h_go", 55.0),
            ("h_stop", 5.0),
            ("tau", 1.0),
            ("v_max", 30.0),
            ("v_ref", 26.55),
        ],
        builder: traffic,
        equilibrium: |_| Ok(vec![0.0; 3]),
    },
    SystemCatalogEntry {
        name: "cushing",
        description: "scalar equation with a uniformly distributed delay over [0, tau]",
        defaults: &[("a", 1.0), ("b", -3.0), ("tau", 1.0)],
        builder: cushing_direct,
        equilibrium: |_| Ok(vec![0.0]),
    },
    SystemCatalogEntry {
        name: "cushing-lifted",
        description: "the distributed-delay equation recast with z(t) = integral of x over [t-tau, t]",
        defaults: &[("a", 1.0), ("b", -3.0), ("tau", 1.0)],
        builder: cushing_lifted,
        equilibrium: |_| Ok(vec![0.0, 0.0]),
    },
    SystemCatalogEntry {
        name: "microchaos",
        description: "unstable scalar plant under quantized, delayed zero-order-hold feedback",
        defaults: &[("a", 1.0), ("hold", 1.0), ("p_gain", 1.2), ("resolution", 0.01), ("sampling", 0.02)],
        builder: |p| micro_chaos_toy(p["a"], p["p_gain"], p["resolution"], p["sampling"], p["hold"].round() as usize),
        equilibrium: |_| Ok(vec![0.0]),
    },
];

pub fn entry(name: &str) -> Result<&'static SystemCatalogEntry> {
    CATALOG.iter().find(|e| e.name == name).ok_or_else(|| Error::Catalog(format!("unknown system `{name}`")))
}

/// Builds a catalog system with parameter overrides.
pub fn build(name: &str, overrides: &Params) -> Result<DelaySystem> {
    entry(name)?.build(overrides)
}

/// Catalog names and default parameters as pretty JSON.
pub fn catalog_json() -> String {
    let list: Vec<CatalogListing<'_>> = CATALOG
        .iter()
        .map(|e| CatalogListing { name: e.name, description: e.description, default_params: e.default_params() })
        .collect();
    serde_json::to_string_pretty(&list).expect("catalog serializes")
}

fn positive(p: &Params, keys: &[&str]) -> Result<()> {
    for k in keys {
        if !(p[*k] > 0.0) {
            return Err(Error::Catalog(format!("parameter `{k}` must be positive")));
        }
    }
    Ok(())
}

fn hutchinson(p: &Params) -> Result<DelaySystem> {
    positive(p, &["r", "K", "tau"])?;
    let (r, k) = (p["r"], p["K"]);
    Ok(DelaySystem::new(
        "hutchinson",
        1,
        vec![p["tau"]],
        Arc::new(move |a: &RhsArgs<'_>, out: &mut [f64]| {
            out[0] = r * a.x[0] * (1.0 - a.delayed(0)[0] / k);
        }),
    ))
}

fn mackey_glass(p: &Params) -> Result<DelaySystem> {
    positive(p, &["tau", "gamma"])?;
    let (alpha, beta, gamma) = (p["alpha"], p["beta"], p["gamma"]);
    Ok(DelaySystem::new(
        "mackey-glass",
        1,
        vec![p["tau"]],
        Arc::new(move |a: &RhsArgs<'_>, out: &mut [f64]| {
            let xd = a.delayed(0)[0];
            out[0] = beta * xd / (1.0 + xd.abs().powf(alpha)) - gamma * a.x[0];
        }),
    ))
}

/// Positive fixed point `(beta/gamma - 1)^(1/alpha)` (the origin when beta <= gamma).
pub fn mackey_glass_positive_equilibrium(p: &Params) -> f64 {
    let ratio = p["beta"] / p["gamma"] - 1.0;
    if ratio > 0.0 {
        ratio.powf(1.0 / p["alpha"])
    } else {
        0.0
    }
}

fn two_neuron(p: &Params) -> Result<DelaySystem> {
    positive(p, &["taus", "tau1", "tau2"])?;
    let (kappa, beta, a12, a21) = (p["kappa"], p["beta"], p["a12"], p["a21"]);
    // delays: 0 -> taus, 1 -> tau1, 2 -> tau2
    Ok(DelaySystem::new(
        "two-neuron",
        2,
        vec![p["taus"], p["tau1"], p["tau2"]],
        Arc::new(move |a: &RhsArgs<'_>, out: &mut [f64]| {
            let (ds, d1, d2) = (a.delayed(0), a.delayed(1), a.delayed(2));
            out[0] = -kappa * a.x[0] + beta * ds[0].tanh() + a12 * d2[1].tanh();
            out[1] = -kappa * a.x[1] + beta * ds[1].tanh() + a21 * d1[0].tanh();
        }),
    ))
}

/// Right-hand side of the unshifted Rössler-type system at a constant state.
fn rossler_residual(p: &Params, x: &[f64]) -> [f64; 3] {
    let (a1, a2, b1, b2, g) = (p["alpha1"], p["alpha2"], p["beta1"], p["beta2"], p["gamma"]);
    [-x[1] - x[2] + (a1 + a2) * x[0], x[0] + b1 * x[1], b2 + x[2] * x[0] - g * x[2]]
}

/// Nontrivial equilibrium of the unshifted Rössler-type system, by Newton
/// iteration from the origin.
pub fn rossler_equilibrium(p: &Params) -> Result<Vec<f64>> {
    let mut x = vec![0.0; 3];
    for _ in 0..100 {
        let f = rossler_residual(p, &x);
        let (a1, a2, b1, g) = (p["alpha1"], p["alpha2"], p["beta1"], p["gamma"]);
        let jac = DMatrix::from_row_slice(3, 3, &[a1 + a2, -1.0, -1.0, 1.0, b1, 0.0, x[2], 0.0, x[0] - g]);
        let step = jac
            .lu()
            .solve(&DVector::from_column_slice(&f))
            .ok_or_else(|| Error::Numeric("singular Jacobian in equilibrium search".into()))?;
        for i in 0..3 {
            x[i] -= step[i];
        }
        if step.norm() < 1e-15 * (1.0 + x.iter().map(|v| v.abs()).sum::<f64>()) {
            break;
        }
    }
    let res = rossler_residual(p, &x);
    if res.iter().any(|r| r.abs() > 1e-12) {
        return Err(Error::Numeric(format!("equilibrium residual {res:?} too large")));
    }
    Ok(x)
}

fn rossler_delay(p: &Params) -> Result<DelaySystem> {
    positive(p, &["tau1", "tau2"])?;
    let eq = rossler_equilibrium(p)?;
    let (a1, a2, b1, b2, g) = (p["alpha1"], p["alpha2"], p["beta1"], p["beta2"], p["gamma"]);
    Ok(DelaySystem::new(
        "rossler-delay",
        3,
        vec![p["tau1"], p["tau2"]],
        Arc::new(move |a: &RhsArgs<'_>, out: &mut [f64]| {
            let x1 = a.x[0] + eq[0];
            let x2 = a.x[1] + eq[1];
            let x3 = a.x[2] + eq[2];
            let d1 = a.delayed(0)[0] + eq[0];
            let d2 = a.delayed(1)[0] + eq[0];
            out[0] = -x2 - x3 + a1 * d1 + a2 * d2;
            out[1] = x1 + b1 * x2;
            out[2] = b2 + x3 * x1 - g * x3;
        }),
    ))
}

/// Smooth range policy: zero below `h_stop`, `v_max` above `h_go`, cosine ramp between.
#[derive(Debug, Clone, Copy)]
pub struct RangePolicy {
    pub h_stop: f64,
    pub h_go: f64,
    pub v_max: f64,
}

impl RangePolicy {
    pub fn from_params(p: &Params) -> Self {
        Self { h_stop: p["h_stop"], h_go: p["h_go"], v_max: p["v_max"] }
    }

    pub fn speed(&self, h: f64) -> f64 {
        if h <= self.h_stop {
            0.0
        } else if h >= self.h_go {
            self.v_max
        } else {
            0.5 * self.v_max * (1.0 - (PI * (h - self.h_stop) / (self.h_go - self.h_stop)).cos())
        }
    }

    pub fn slope(&self, h: f64) -> f64 {
        if h <= self.h_stop || h >= self.h_go {
            0.0
        } else {
            let w = self.h_go - self.h_stop;
            0.5 * self.v_max * PI / w * (PI * (h - self.h_stop) / w).sin()
        }
    }

    /// Headway with `speed(h) = v`, by bisection on the ramp.
    pub fn headway_for(&self, v: f64) -> Result<f64> {
        if !(v > 0.0 && v < self.v_max) {
            return Err(Error::Catalog(format!("reference speed {v} outside (0, {})", self.v_max)));
        }
        let (mut lo, mut hi) = (self.h_stop, self.h_go);
        while hi - lo > 1e-13 * hi {
            let mid = 0.5 * (lo + hi);
            if self.speed(mid) < v {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

fn traffic(p: &Params) -> Result<DelaySystem> {
    positive(p, &["tau", "v_max"])?;
    if !(p["h_go"] > p["h_stop"]) {
        return Err(Error::Catalog("h_go must exceed h_stop".into()));
    }
    let policy = RangePolicy::from_params(p);
    let v_ref = p["v_ref"];
    let h_star = policy.headway_for(v_ref)?;
    let (alpha, beta, beta_hat, beta_m1) = (p["alpha"], p["beta"], p["beta_hat"], p["beta_m1"]);
    // state: (headway, leader speed, follower speed), all relative to equilibrium
    Ok(DelaySystem::new(
        "traffic",
        3,
        vec![p["tau"]],
        Arc::new(move |a: &RhsArgs<'_>, out: &mut [f64]| {
            let d = a.delayed(0);
            out[0] = a.x[2] - a.x[1];
            out[1] = alpha * (policy.speed(d[0] + h_star) - (d[1] + v_ref)) + beta * (d[2] - d[1]);
            out[2] = beta_hat * (v_ref - (d[2] + v_ref)) + beta_m1 * (d[1] - d[2]);
        }),
    ))
}

fn cushing_direct(p: &Params) -> Result<DelaySystem> {
    positive(p, &["tau"])?;
    let (a, b) = (p["a"], p["b"]);
    Ok(DelaySystem::new(
        "cushing",
        1,
        Vec::new(),
        Arc::new(move |args: &RhsArgs<'_>, out: &mut [f64]| {
            let x = args.x[0];
            out[0] = args.distributed[0] + a * (x - x.sin());
        }),
    )
    .with_distributed(DistributedKernel { support: p["tau"], weight: b }))
}

fn cushing_lifted(p: &Params) -> Result<DelaySystem> {
    positive(p, &["tau"])?;
    let (a, b) = (p["a"], p["b"]);
    Ok(DelaySystem::new(
        "cushing-lifted",
        2,
        vec![p["tau"]],
        Arc::new(move |args: &RhsArgs<'_>, out: &mut [f64]| {
            let x = args.x[0];
            out[0] = b * args.x[1] + a * (x - x.sin());
            out[1] = x - args.delayed(0)[0];
        }),
    ))
}

/// Lifted Cushing history `(x, z)` consistent with a scalar history of `x`:
/// `z(t) = ∫_{t-tau}^t x(s) ds`. For a constant scalar history `c`, `z = c * tau`.
pub fn cushing_lifted_constant_history(c: f64, tau: f64) -> Vec<f64> {
    vec![c, c * tau]
}

/// Scalar plant `x' = a x - p_gain q(x(t - rho(t)))` with a rounding quantizer
/// of the given resolution and zero-order hold of period `sampling`.
pub fn micro_chaos_toy(a: f64, p_gain: f64, resolution: f64, sampling: f64, hold: usize) -> Result<DelaySystem> {
    if !(a > 0.0) {
        return Err(Error::Catalog("micro-chaos plant must be open-loop unstable (a > 0)".into()));
    }
    if !(sampling > 0.0) || resolution < 0.0 {
        return Err(Error::Catalog("invalid sampling period or resolution".into()));
    }
    let mut params = Params::new();
    params.insert("a".into(), a);
    params.insert("p_gain".into(), p_gain);
    params.insert("resolution".into(), resolution);
    params.insert("sampling".into(), sampling);
    params.insert("hold".into(), hold as f64);
    Ok(DelaySystem::new(
        "microchaos",
        1,
        Vec::new(),
        Arc::new(move |args: &RhsArgs<'_>, out: &mut [f64]| {
            let u = args.held.first().copied().unwrap_or(0.0);
            out[0] = a * args.x[0] - p_gain * u;
        }),
    )
    .with_periodic(PeriodicDelay { sampling, hold, resolution })
    .with_params(params))
}

/// Exact sampled-data map of the micro-chaos toy: with `x_j = x(jΔt)`,
/// `x_{j+1} = e^{aΔt} x_j - (p/a)(e^{aΔt} - 1) q(x_{j-r})`.
#[derive(Debug, Clone, Copy)]
pub struct MicroChaosMap {
    pub a: f64,
    pub p_gain: f64,
    pub resolution: f64,
    pub sampling: f64,
    pub hold: usize,
}

impl MicroChaosMap {
    /// Orbit of `steps + 1` samples starting from a constant history `x0`.
    pub fn orbit(&self, x0: f64, steps: usize) -> Vec<f64> {
        let growth = (self.a * self.sampling).exp();
        let gain = self.p_gain / self.a * (growth - 1.0);
        let q = |v: f64| {
            if self.resolution > 0.0 {
                self.resolution * (v / self.resolution).round()
            } else {
                v
            }
        };
        let mut xs = vec![x0];
        for j in 0..steps {
            let delayed = if j >= self.hold { xs[j - self.hold] } else { x0 };
            xs.push(growth * xs[j] - gain * q(delayed));
        }
        xs
    }
}
