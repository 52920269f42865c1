//! Fixed-step method-of-steps integrator for delay differential equations.
//!
//! Each step is classical RK4. Past values needed by the right-hand side are
//! read from a cubic-Hermite dense output built from the stored grid values
//! and derivatives. The step is snapped so every discrete delay is an integer
//! number of steps, which puts delayed stage times on grid points or exact
//! grid midpoints.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::trajectory::{step_multiple, Trajectory};

/// Sup-norm above which a run is declared divergent.
pub const BLOWUP_THRESHOLD: f64 = 1e8;

/// Inputs passed to a right-hand side evaluation.
pub struct RhsArgs<'a> {
    pub t: f64,
    /// Current state `x(t)`.
    pub x: &'a [f64],
    /// Delayed states, `x(t - delays[j])` stored at `[j*n .. (j+1)*n]`.
    pub delayed: &'a [f64],
    /// Distributed-delay integral, empty when the system has none.
    pub distributed: &'a [f64],
    /// Zero-order-hold input `q(x(t - rho(t)))`, empty unless simulated digitally.
    pub held: &'a [f64],
}

impl RhsArgs<'_> {
    pub fn delayed(&self, j: usize) -> &[f64] {
        let n = self.x.len();
        &self.delayed[j * n..(j + 1) * n]
    }
}

pub type RhsFn = Arc<dyn Fn(&RhsArgs<'_>, &mut [f64]) + Send + Sync>;

/// Distributed delay `weight * ∫_0^support x(t - θ) dθ` (componentwise).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistributedKernel {
    pub support: f64,
    pub weight: f64,
}

/// Sawtooth delay `rho(t) = t - Δt floor(t/Δt) + r Δt` of a zero-order hold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeriodicDelay {
    pub sampling: f64,
    pub hold: usize,
    /// Default quantizer resolution (0 disables quantization).
    pub resolution: f64,
}

impl PeriodicDelay {
    pub fn rho(&self, t: f64) -> f64 {
        t - self.sampling * (t / self.sampling).floor() + self.hold as f64 * self.sampling
    }
}

#[derive(Clone)]
pub struct DelaySystem {
    pub name: String,
    pub dim: usize,
    pub delays: Vec<f64>,
    pub distributed: Option<DistributedKernel>,
    pub periodic: Option<PeriodicDelay>,
    pub params: BTreeMap<String, f64>,
    pub rhs: RhsFn,
}

impl fmt::Debug for DelaySystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DelaySystem")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("delays", &self.delays)
            .field("distributed", &self.distributed)
            .field("periodic", &self.periodic)
            .field("params", &self.params)
            .finish()
    }
}

impl DelaySystem {
    pub fn new(name: impl Into<String>, dim: usize, delays: Vec<f64>, rhs: RhsFn) -> Self {
        Self { name: name.into(), dim, delays, distributed: None, periodic: None, params: BTreeMap::new(), rhs }
    }

    pub fn with_distributed(mut self, kernel: DistributedKernel) -> Self {
        self.distributed = Some(kernel);
        self
    }

    pub fn with_periodic(mut self, periodic: PeriodicDelay) -> Self {
        self.periodic = Some(periodic);
        self
    }

    pub fn with_params(mut self, params: BTreeMap<String, f64>) -> Self {
        self.params = params;
        self
    }

    /// Longest memory of the system.
    pub fn tau_max(&self) -> f64 {
        let mut tau = self.delays.iter().copied().fold(0.0, f64::max);
        if let Some(k) = self.distributed {
            tau = tau.max(k.support);
        }
        if let Some(p) = self.periodic {
            tau = tau.max((p.hold + 1) as f64 * p.sampling);
        }
        tau
    }

    /// Evaluates the right-hand side with every delayed argument, the
    /// distributed integral and the held input taken from one constant state.
    pub fn eval_constant(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let delayed: Vec<f64> = self.delays.iter().flat_map(|_| x.iter().copied()).collect();
        let distributed: Vec<f64> = match self.distributed {
            Some(k) => x.iter().map(|v| k.weight * k.support * v).collect(),
            None => Vec::new(),
        };
        let held: Vec<f64> = if self.periodic.is_some() { x.to_vec() } else { Vec::new() };
        let mut out = vec![0.0; self.dim];
        (self.rhs)(&RhsArgs { t, x, delayed: &delayed, distributed: &distributed, held: &held }, &mut out);
        out
    }

    fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("system dimension is zero".into()));
        }
        if let Some(&d) = self.delays.iter().find(|&&d| !(d > 0.0) || !d.is_finite()) {
            return Err(Error::Config(format!("discrete delay {d} must be positive")));
        }
        if let Some(k) = self.distributed {
            if !(k.support > 0.0) {
                return Err(Error::Config("distributed support must be positive".into()));
            }
        }
        if let Some(p) = self.periodic {
            if !(p.sampling > 0.0) || p.resolution < 0.0 {
                return Err(Error::Config("invalid sampling period or quantizer".into()));
            }
        }
        Ok(())
    }
}

/// Initial datum on `[-tau, 0]`.
#[derive(Debug, Clone, PartialEq)]
pub enum HistorySpec {
    Constant(Vec<f64>),
    /// Values on the grid `-tau, -tau + dt, ..., 0` (rows oldest first), with
    /// optional derivatives on the same grid.
    Sampled {
        dt: f64,
        values: Vec<Vec<f64>>,
        derivs: Option<Vec<Vec<f64>>>,
    },
}

impl HistorySpec {
    /// Samples `f` on the grid of step `dt` covering `[-tau, 0]`. Derivatives
    /// come from central differences of `f`.
    pub fn from_fn(tau: f64, dt: f64, f: impl Fn(f64) -> Vec<f64>) -> Self {
        let m = (tau / dt).round() as usize;
        let eps = 1e-6 * dt.max(1e-3);
        let mut values = Vec::with_capacity(m + 1);
        let mut derivs = Vec::with_capacity(m + 1);
        for i in 0..=m {
            let th = -((m - i) as f64) * dt;
            values.push(f(th));
            let (a, b) = (f(th + eps), f(th - eps));
            derivs.push(a.iter().zip(&b).map(|(p, q)| (p - q) / (2.0 * eps)).collect());
        }
        HistorySpec::Sampled { dt, values, derivs: Some(derivs) }
    }

    pub fn dim(&self) -> usize {
        match self {
            HistorySpec::Constant(v) => v.len(),
            HistorySpec::Sampled { values, .. } => values.first().map_or(0, Vec::len),
        }
    }

    /// Value at `theta ∈ [-tau, 0]`.
    pub fn eval(&self, theta: f64) -> Vec<f64> {
        match self {
            HistorySpec::Constant(v) => v.clone(),
            HistorySpec::Sampled { dt, values, .. } => {
                let m = values.len() - 1;
                let s = (theta / dt + m as f64).clamp(0.0, m as f64);
                let k = (s.floor() as usize).min(m.saturating_sub(1));
                let w = s - k as f64;
                values[k].iter().zip(&values[k + 1]).map(|(a, b)| a + w * (b - a)).collect()
            }
        }
    }
}

/// Step size, horizon and output options for [`simulate_with`].
#[derive(Debug, Clone, Copy)]
pub struct SimConfig {
    pub t0: f64,
    pub t_end: f64,
    pub dt: f64,
    /// Keep every `record_every`-th step in the returned trajectory.
    pub record_every: usize,
    /// Quantizer resolution for zero-order-hold systems; `None` uses the system default.
    pub resolution: Option<f64>,
}

impl SimConfig {
    pub fn new(t_end: f64, dt: f64) -> Self {
        Self { t0: 0.0, t_end, dt, record_every: 1, resolution: None }
    }
}

/// Dense solution on the solver grid, including the initial history.
#[derive(Debug, Clone)]
pub struct Solution {
    pub dim: usize,
    pub h: f64,
    pub t0: f64,
    /// Number of grid points before `t0` (history region).
    pub hist_len: usize,
    values: Vec<f64>,
    /// Right derivatives at grid points.
    derivs: Vec<f64>,
    /// Left derivatives; differ from `derivs` only at kinks such as `t0` and hold boundaries.
    dleft: Vec<f64>,
}

impl Solution {
    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn value(&self, k: usize) -> &[f64] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }

    fn deriv(&self, k: usize) -> &[f64] {
        &self.derivs[k * self.dim..(k + 1) * self.dim]
    }

    fn deriv_left(&self, k: usize) -> &[f64] {
        &self.dleft[k * self.dim..(k + 1) * self.dim]
    }

    fn interpolate(&self, k: usize, s: f64, out: &mut [f64]) {
        hermite(self.value(k), self.deriv(k), self.value(k + 1), self.deriv_left(k + 1), self.h, s, out);
    }

    /// Final time reached.
    pub fn t_end(&self) -> f64 {
        self.t0 + (self.len() - 1 - self.hist_len) as f64 * self.h
    }

    /// Hermite interpolation at absolute time `t` within the stored range.
    pub fn eval(&self, t: f64) -> Vec<f64> {
        let s = (t - self.t0) / self.h + self.hist_len as f64;
        let last = self.len() - 1;
        let s = s.clamp(0.0, last as f64);
        let k = (s.floor() as usize).min(last.saturating_sub(1));
        let mut out = vec![0.0; self.dim];
        self.interpolate(k, s - k as f64, &mut out);
        out
    }

    /// Samples from `t0` onward, every `stride` steps.
    pub fn trajectory(&self, stride: usize) -> Result<Trajectory> {
        let stride = stride.max(1);
        let data: Vec<f64> = (self.hist_len..self.len()).step_by(stride).flat_map(|k| self.value(k).to_vec()).collect();
        Trajectory::new(self.t0, self.h * stride as f64, self.dim, data)
    }

    /// Samples every `period` from `t0`: exact grid values when `period` is a
    /// multiple of the step, Hermite interpolation otherwise.
    pub fn sample(&self, period: f64) -> Result<Trajectory> {
        if let Some(stride) = step_multiple(period, self.h).filter(|&n| n > 0) {
            return self.trajectory(stride);
        }
        if !(period > 0.0) {
            return Err(Error::Config(format!("sampling period {period} must be positive")));
        }
        let n = ((self.t_end() - self.t0) / period * (1.0 + 1e-12)).floor() as usize;
        let data: Vec<f64> = (0..=n).flat_map(|j| self.eval(self.t0 + j as f64 * period)).collect();
        Trajectory::new(self.t0, period, self.dim, data)
    }

    /// The history segment of length `tau` ending at the final time, with
    /// derivatives, for restarting a run.
    pub fn history_at_end(&self, tau: f64) -> HistorySpec {
        let m = (tau / self.h).round() as usize;
        let last = self.len() - 1;
        let first = last - m;
        HistorySpec::Sampled {
            dt: self.h,
            values: (first..=last).map(|k| self.value(k).to_vec()).collect(),
            derivs: Some((first..=last).map(|k| self.deriv(k).to_vec()).collect()),
        }
    }
}

fn hermite(y0: &[f64], f0: &[f64], y1: &[f64], f1: &[f64], h: f64, s: f64, out: &mut [f64]) {
    if s == 0.0 {
        out.copy_from_slice(y0);
        return;
    }
    if s == 1.0 {
        out.copy_from_slice(y1);
        return;
    }
    let s2 = s * s;
    let s3 = s2 * s;
    let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
    let h10 = s3 - 2.0 * s2 + s;
    let h01 = -2.0 * s3 + 3.0 * s2;
    let h11 = s3 - s2;
    for i in 0..out.len() {
        out[i] = h00 * y0[i] + h10 * h * f0[i] + h01 * y1[i] + h11 * h * f1[i];
    }
}

/// Largest step `<= dt` dividing every delay and hold period.
pub fn snap_step(system: &DelaySystem, dt: f64) -> Result<f64> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::Config(format!("step {dt} must be positive")));
    }
    let mut periods: Vec<f64> = system.delays.clone();
    if let Some(k) = system.distributed {
        periods.push(k.support);
    }
    if let Some(p) = system.periodic {
        periods.push(p.sampling);
    }
    let Some(&base) = periods.iter().min_by(|a, b| a.total_cmp(b)) else {
        return Ok(dt);
    };
    let fits = |h: f64| {
        periods.iter().all(|&p| {
            let n = (p / h).round();
            n >= 1.0 && (p - n * h).abs() <= 1e-12 * p
        })
    };
    let n0 = (base / dt).ceil().max(1.0) as u64;
    for n in n0..n0.saturating_mul(64).max(n0 + 10_000) {
        let h = base / n as f64;
        if fits(h) {
            if (h - dt).abs() > 1e-12 * dt {
                log::debug!("step snapped from {dt} to {h}");
            }
            return Ok(h);
        }
    }
    Err(Error::Config(format!("no step <= {dt} is commensurate with delays {periods:?}")))
}

fn round_to(v: f64, resolution: f64) -> f64 {
    if resolution > 0.0 {
        resolution * (v / resolution).round()
    } else {
        v
    }
}

/// Integrates `system` from `history` over `[0, t_end]`, sampling at the (snapped) step.
pub fn simulate(system: &DelaySystem, history: &HistorySpec, t_end: f64, dt: f64) -> Result<Trajectory> {
    let cfg = SimConfig::new(t_end, dt);
    simulate_with(system, history, &cfg)?.trajectory(cfg.record_every)
}

/// Distributed-delay variant; identical to [`simulate`] but requires a kernel.
pub fn simulate_distributed(system: &DelaySystem, history: &HistorySpec, t_end: f64, dt: f64) -> Result<Trajectory> {
    if system.distributed.is_none() {
        return Err(Error::Config(format!("system `{}` has no distributed kernel", system.name)));
    }
    simulate(system, history, t_end, dt)
}

/// Closed-loop run of a zero-order-hold system with the given quantizer.
pub fn simulate_digital(
    system: &DelaySystem,
    resolution: f64,
    history: &HistorySpec,
    t_end: f64,
    dt: f64,
) -> Result<Trajectory> {
    let Some(p) = system.periodic else {
        return Err(Error::Config(format!("system `{}` has no periodic delay", system.name)));
    };
    if step_multiple(p.sampling, dt).is_none() {
        return Err(Error::Config(format!("sampling period {} is not a multiple of dt {dt}", p.sampling)));
    }
    let cfg = SimConfig { resolution: Some(resolution), ..SimConfig::new(t_end, dt) };
    simulate_with(system, history, &cfg)?.trajectory(1)
}

/// Stroboscopic (Poincaré) sampling at `phase + j * period`.
pub fn stroboscopic_sample(traj: &Trajectory, period: f64, phase: f64) -> Result<Trajectory> {
    traj.stroboscopic(period, phase)
}

/// Full integrator returning the dense solution.
pub fn simulate_with(system: &DelaySystem, history: &HistorySpec, cfg: &SimConfig) -> Result<Solution> {
    system.validate()?;
    if !(cfg.t_end > 0.0) {
        return Err(Error::Config(format!("t_end must be positive, got {}", cfg.t_end)));
    }
    let n = system.dim;
    if history.dim() != n {
        return Err(Error::Config(format!("history has dimension {}, system {}", history.dim(), n)));
    }
    let h = snap_step(system, cfg.dt)?;
    let lags: Vec<usize> = system.delays.iter().map(|d| (d / h).round() as usize).collect();
    let dist = system.distributed.map(|k| (k, (k.support / h).round() as usize));
    let hold = system.periodic.map(|p| {
        let per = (p.sampling / h).round() as usize;
        (per, p.hold * per, cfg.resolution.unwrap_or(p.resolution))
    });
    let hist_len = (system.tau_max() / h).round() as usize;
    let steps = (cfg.t_end / h + 1e-9).floor() as usize;
    if steps == 0 {
        return Err(Error::Config(format!("t_end {} shorter than one step {h}", cfg.t_end)));
    }

    let total = hist_len + 1 + steps;
    let mut values = Vec::with_capacity(total * n);
    let mut derivs = Vec::with_capacity(total * n);
    match history {
        HistorySpec::Constant(v) => {
            for _ in 0..=hist_len {
                values.extend_from_slice(v);
                derivs.extend(std::iter::repeat_n(0.0, n));
            }
        }
        HistorySpec::Sampled { dt: hdt, values: hv, derivs: hd } => {
            if (hdt - h).abs() > 1e-9 * h {
                return Err(Error::Config(format!("history step {hdt} differs from solver step {h}")));
            }
            if hv.len() < hist_len + 1 {
                return Err(Error::Config(format!("history has {} samples, needs {}", hv.len(), hist_len + 1)));
            }
            let start = hv.len() - (hist_len + 1);
            for k in start..hv.len() {
                values.extend_from_slice(&hv[k]);
                match hd {
                    Some(d) => derivs.extend_from_slice(&d[k]),
                    None => {
                        // one-sided at the ends, central inside
                        let (a, b, w) = if k == 0 {
                            (1, 0, 1.0)
                        } else if k + 1 == hv.len() {
                            (k, k - 1, 1.0)
                        } else {
                            (k + 1, k - 1, 2.0)
                        };
                        derivs.extend(hv[a].iter().zip(&hv[b]).map(|(p, q)| (p - q) / (w * h)));
                    }
                }
            }
        }
    }

    let dleft = derivs.clone();
    let mut sol = Solution { dim: n, h, t0: cfg.t0, hist_len, values, derivs, dleft };
    let nd = lags.len();
    let mut delayed = vec![0.0; nd * n];
    let mut integral = vec![0.0; if dist.is_some() { n } else { 0 }];
    let mut held = vec![0.0; if hold.is_some() { n } else { 0 }];
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut stage = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    let mut scratch = vec![0.0; n];
    let past = PastArgs { lags: &lags, dist, n };

    let mut cur = hist_len;
    let mut t = cfg.t0;
    // derivative at the initial point comes from the right-hand side
    {
        let x0 = sol.value(cur).to_vec();
        if let Some((per, lag, res)) = hold {
            held_input(&sol, cur, per, lag, res, &mut held);
        }
        past.fill(&sol, cur, 0.0, &x0, &mut delayed, &mut integral, &mut scratch);
        (system.rhs)(&RhsArgs { t, x: &x0, delayed: &delayed, distributed: &integral, held: &held }, &mut k1);
        let off = cur * n;
        sol.derivs[off..off + n].copy_from_slice(&k1);
    }

    for step in 0..steps {
        let x0 = sol.value(cur).to_vec();
        if let Some((per, lag, res)) = hold {
            held_input(&sol, cur, per, lag, res, &mut held);
        }
        // the stored derivative is the right derivative, also across hold boundaries
        k1.copy_from_slice(sol.deriv(cur));

        for i in 0..n {
            stage[i] = x0[i] + 0.5 * h * k1[i];
        }
        past.fill(&sol, cur, 0.5, &stage, &mut delayed, &mut integral, &mut scratch);
        (system.rhs)(
            &RhsArgs { t: t + 0.5 * h, x: &stage, delayed: &delayed, distributed: &integral, held: &held },
            &mut k2,
        );

        for i in 0..n {
            stage[i] = x0[i] + 0.5 * h * k2[i];
        }
        past.fill(&sol, cur, 0.5, &stage, &mut delayed, &mut integral, &mut scratch);
        (system.rhs)(
            &RhsArgs { t: t + 0.5 * h, x: &stage, delayed: &delayed, distributed: &integral, held: &held },
            &mut k3,
        );

        for i in 0..n {
            stage[i] = x0[i] + h * k3[i];
        }
        past.fill(&sol, cur, 1.0, &stage, &mut delayed, &mut integral, &mut scratch);
        (system.rhs)(&RhsArgs { t: t + h, x: &stage, delayed: &delayed, distributed: &integral, held: &held }, &mut k4);

        for i in 0..n {
            tmp[i] = x0[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        t = cfg.t0 + (step + 1) as f64 * h;
        if tmp.iter().any(|v| !v.is_finite() || v.abs() > BLOWUP_THRESHOLD) {
            return Err(Error::Diverged { time: t });
        }
        sol.values.extend_from_slice(&tmp);
        sol.derivs.extend(std::iter::repeat_n(0.0, n));
        sol.dleft.extend(std::iter::repeat_n(0.0, n));
        cur += 1;
        let off = cur * n;

        // left derivative with the input of the finished interval, then the
        // right derivative (next step's k1) with the new held input
        past.fill(&sol, cur, 0.0, &tmp, &mut delayed, &mut integral, &mut scratch);
        (system.rhs)(&RhsArgs { t, x: &tmp, delayed: &delayed, distributed: &integral, held: &held }, &mut k1);
        sol.dleft[off..off + n].copy_from_slice(&k1);
        if let Some((per, lag, res)) = hold {
            held_input(&sol, cur, per, lag, res, &mut held);
            (system.rhs)(&RhsArgs { t, x: &tmp, delayed: &delayed, distributed: &integral, held: &held }, &mut k1);
        }
        sol.derivs[off..off + n].copy_from_slice(&k1);
    }
    Ok(sol)
}

struct PastArgs<'a> {
    lags: &'a [usize],
    dist: Option<(DistributedKernel, usize)>,
    n: usize,
}

impl PastArgs<'_> {
    /// Fills `delayed` and `integral` for a stage at grid position `idx + frac`
    /// (frac ∈ {0, 0.5, 1}) whose current state is `x`.
    #[allow(clippy::too_many_arguments)]
    fn fill(
        &self,
        sol: &Solution,
        idx: usize,
        frac: f64,
        x: &[f64],
        delayed: &mut [f64],
        integral: &mut [f64],
        scratch: &mut [f64],
    ) {
        let n = self.n;
        for (j, &m) in self.lags.iter().enumerate() {
            past_at(sol, idx, frac, m, &mut delayed[j * n..(j + 1) * n]);
        }
        if let Some((k, m)) = self.dist {
            // composite trapezoid over θ ∈ [0, support] on the stage-aligned grid
            integral.iter_mut().zip(x).for_each(|(s, v)| *s = 0.5 * v);
            for i in 1..=m {
                past_at(sol, idx, frac, i, scratch);
                let w = if i == m { 0.5 } else { 1.0 };
                integral.iter_mut().zip(scratch.iter()).for_each(|(s, v)| *s += w * v);
            }
            integral.iter_mut().for_each(|s| *s *= k.weight * sol.h);
        }
    }
}

/// Value at grid position `idx + frac - lag` (must be already computed).
fn past_at(sol: &Solution, idx: usize, frac: f64, lag: usize, out: &mut [f64]) {
    let k = idx + (frac as usize) - lag;
    if frac == 0.0 || frac == 1.0 {
        out.copy_from_slice(sol.value(k));
    } else {
        sol.interpolate(k, frac, out);
    }
}

/// Held input for the sample interval containing grid index `cur`.
fn held_input(sol: &Solution, cur: usize, per: usize, lag: usize, res: f64, out: &mut [f64]) {
    let rel = cur - sol.hist_len;
    let sample = sol.hist_len + (rel / per) * per;
    let src = sol.value(sample - lag);
    for (o, v) in out.iter_mut().zip(src) {
        *o = round_to(*v, res);
    }
}
