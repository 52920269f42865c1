//! End-to-end pipelines driven by one [`ExperimentConfig`] per experiment.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chaos::{
    correlation_dimension, dde_propagator, diameter, lyapunov_leading, model_propagator, pdf_compare, CorrDimConfig,
    CorrDimFit, LyapunovConfig, LyapunovFit, PdfReport,
};
use crate::dde::{simulate_with, DelaySystem, HistorySpec, SimConfig};
use crate::embedding::{embed, estimate_derivatives, EmbeddedData, EmbeddingConfig};
use crate::error::{Error, Result};
use crate::par;
use crate::parametric::{
    default_seeds, fold_scan, BifurcationDiagram, ParametricSsm, PoincareOptions, PoincareSection, Scheme,
};
use crate::spectrum::{
    linearize, roots_in_window, smoothness_class, track_rightmost, SmoothnessReport, Spectrum, Track, Window,
};
use crate::ssm::{
    fit_manifold, fit_polyfield, fit_rbf, predict, sweep_orders, OrderChoice, PredictionReport, SsmModel,
};
use crate::systems::{self, MicroChaosMap, Params};
use crate::trajectory::Trajectory;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub system: String,
    #[serde(default)]
    pub params: Params,
    #[serde(default)]
    pub seed: u64,
    pub simulation: SimulationConfig,
    pub embedding: EmbeddingConfig,
    pub model: ModelConfig,
    #[serde(default)]
    pub spectrum: Option<SpectrumConfig>,
    #[serde(default)]
    pub diagnostics: Option<DiagnosticsConfig>,
    #[serde(default)]
    pub parametric: Option<ParametricConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    /// Solver step.
    pub dt: f64,
    /// Spacing of the stored samples; a multiple of `dt`.
    pub sample_dt: f64,
    pub t_end: f64,
    pub train: usize,
    pub test: usize,
    pub history: HistorySampler,
    /// Quantizer resolution for zero-order-hold systems.
    #[serde(default)]
    pub resolution: Option<f64>,
}

/// How initial histories are drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum HistorySampler {
    /// Constant history at the equilibrium plus, per channel, an offset of
    /// random sign with magnitude uniform in `[min, max]`.
    Offset { min: f64, max: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub d: usize,
    pub manifold_order: usize,
    pub dynamics: DynamicsConfig,
    #[serde(default = "one")]
    pub substeps: usize,
    /// Accept `k ≤ 2d`.
    #[serde(default)]
    pub allow_low_k: bool,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DynamicsConfig {
    Poly {
        order: usize,
        #[serde(default)]
        ridge: f64,
    },
    Rbf {
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        max_centers: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumConfig {
    pub re_min: f64,
    pub re_max: f64,
    pub im_max: f64,
    pub seeds_per_axis: usize,
    /// Number of rightmost roots spanning the SSM's spectral subspace.
    pub sigma_size: usize,
    #[serde(default = "default_k_cap")]
    pub k_cap: usize,
}

fn default_k_cap() -> usize {
    50
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsConfig {
    /// Rows earlier than this are left out of every statistic.
    #[serde(default)]
    pub transient: f64,
    #[serde(default)]
    pub correlation: Option<CorrDimConfig>,
    #[serde(default)]
    pub lyapunov: Option<LyapunovConfig>,
    #[serde(default)]
    pub pdf: bool,
    #[serde(default)]
    pub pdf_bins: Option<usize>,
    /// Length of the free model orbit checked for boundedness; 0 skips it.
    #[serde(default)]
    pub orbit_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParametricConfig {
    pub parameter: String,
    pub nodes: Vec<f64>,
    pub scheme: Scheme,
    #[serde(default)]
    pub unseen: Vec<f64>,
    #[serde(default)]
    pub scan: Option<ScanConfig>,
    #[serde(default)]
    pub track: Option<TrackConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanConfig {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
    pub seeds: usize,
    /// Seeds are spread over `[-r, r]`; defaults to the largest reduced
    /// amplitude seen in training.
    #[serde(default)]
    pub seed_radius: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackConfig {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
    pub re_min: f64,
    pub re_max: f64,
    pub im_max: f64,
    pub seeds_per_axis: usize,
}

fn field_err(field: &str, msg: &str) -> Error {
    Error::Validation(format!("{field}: {msg}"))
}

/// `n` evenly spaced values from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n < 2 {
        return vec![lo];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

impl ExperimentConfig {
    /// Field-level checks; also resolves the system against the catalog.
    pub fn validate(&self) -> Result<()> {
        let entry = systems::entry(&self.system)?;
        entry.params(&self.params)?;
        let s = &self.simulation;
        if !(s.dt > 0.0) {
            return Err(field_err("simulation.dt", "must be positive"));
        }
        if crate::trajectory::step_multiple(s.sample_dt, s.dt).is_none_or(|n| n == 0) {
            return Err(field_err("simulation.sample_dt", "must be a positive multiple of simulation.dt"));
        }
        if !(s.t_end > 0.0) {
            return Err(field_err("simulation.t_end", "must be positive"));
        }
        if s.train == 0 {
            return Err(field_err("simulation.train", "needs at least one trajectory"));
        }
        let HistorySampler::Offset { min, max } = s.history;
        if !(min >= 0.0 && max >= min) {
            return Err(field_err("simulation.history", "needs 0 <= min <= max"));
        }
        if self.embedding.k == 0 || self.embedding.lag_steps == 0 || self.embedding.observables.is_empty() {
            return Err(field_err("embedding", "needs k >= 1, lag_steps >= 1 and an observable"));
        }
        let m = &self.model;
        if m.d == 0 || m.d > self.embedding.k {
            return Err(field_err("model.d", "must lie in 1..=embedding.k"));
        }
        if m.manifold_order == 0 {
            return Err(field_err("model.manifold_order", "must be at least 1"));
        }
        if let DynamicsConfig::Poly { order: 0, .. } = m.dynamics {
            return Err(field_err("model.dynamics.order", "must be at least 1"));
        }
        self.embedding.check_takens(m.d, m.allow_low_k).map_err(|e| field_err("embedding.k", &e.to_string()))?;
        if let Some(p) = &self.parametric {
            if !entry.default_params().contains_key(&p.parameter) {
                return Err(field_err(
                    "parametric.parameter",
                    &format!("`{}` is not a parameter of {}", p.parameter, self.system),
                ));
            }
            if p.nodes.len() < 2 || p.nodes.windows(2).any(|w| w[1] <= w[0]) {
                return Err(field_err("parametric.nodes", "needs at least two strictly increasing values"));
            }
        }
        Ok(())
    }

    pub fn with_param(&self, name: &str, value: f64) -> Self {
        let mut c = self.clone();
        c.params.insert(name.to_string(), value);
        c
    }

    pub fn build_system(&self) -> Result<DelaySystem> {
        systems::build(&self.system, &self.params)
    }

    pub fn equilibrium(&self) -> Result<Vec<f64>> {
        systems::entry(&self.system)?.equilibrium(&self.params)
    }

    /// Equilibrium in embedding coordinates.
    pub fn anchor(&self) -> Result<Vec<f64>> {
        Ok(self.embedding.embed_point(&self.equilibrium()?))
    }

    /// Initial histories: `train` training ones followed by `test` test ones.
    pub fn histories(&self) -> Result<Vec<HistorySpec>> {
        let eq = self.equilibrium()?;
        let HistorySampler::Offset { min, max } = self.simulation.history;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let n = self.simulation.train + self.simulation.test;
        Ok((0..n)
            .map(|_| {
                let x = eq
                    .iter()
                    .map(|e| {
                        let mag = if max > min { rng.random_range(min..max) } else { min };
                        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                        e + sign * mag
                    })
                    .collect();
                HistorySpec::Constant(x)
            })
            .collect())
    }

    fn resolution(&self, sys: &DelaySystem) -> Option<f64> {
        sys.periodic.map(|p| self.simulation.resolution.unwrap_or(p.resolution))
    }
}

/// One DDE run sampled every `sample_dt`.
pub fn run_history(cfg: &ExperimentConfig, sys: &DelaySystem, hist: &HistorySpec) -> Result<Trajectory> {
    let s = &cfg.simulation;
    let sim = SimConfig { resolution: cfg.resolution(sys), ..SimConfig::new(s.t_end, s.dt) };
    simulate_with(sys, hist, &sim)?.sample(s.sample_dt)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Vec<Trajectory>,
    pub test: Vec<Trajectory>,
}

/// Simulates every configured history (in parallel, order preserved).
pub fn generate(cfg: &ExperimentConfig) -> Result<Dataset> {
    cfg.validate()?;
    let sys = cfg.build_system()?;
    let hist = cfg.histories()?;
    let mut runs: Vec<Trajectory> =
        par::map(&hist, |h| run_history(cfg, &sys, h)).into_iter().collect::<Result<_>>()?;
    let test = runs.split_off(cfg.simulation.train);
    Ok(Dataset { train: runs, test })
}

/// Fits geometry and reduced dynamics to the training trajectories.
pub fn fit(cfg: &ExperimentConfig, train: &[Trajectory]) -> Result<SsmModel> {
    cfg.validate()?;
    let data = embed(train, &cfg.embedding)?;
    fit_embedded(cfg, &data)
}

fn fit_embedded(cfg: &ExperimentConfig, data: &EmbeddedData) -> Result<SsmModel> {
    let m = &cfg.model;
    let geom = fit_manifold(data, &cfg.embedding, &cfg.anchor()?, m.d, m.manifold_order)?;
    match m.dynamics {
        DynamicsConfig::Poly { order, ridge } => fit_polyfield(&estimate_derivatives(data)?, &geom, order, ridge),
        DynamicsConfig::Rbf { stride, max_centers } => fit_rbf(data, &geom, stride, max_centers),
    }
}

pub fn score(cfg: &ExperimentConfig, model: &SsmModel, tests: &[Trajectory]) -> Result<Vec<PredictionReport>> {
    tests.iter().map(|t| predict(model, t, cfg.model.substeps)).collect()
}

/// Mean NMTE, infinite if any prediction diverged.
pub fn mean_nmte(reports: &[PredictionReport]) -> f64 {
    if reports.iter().any(|r| r.diverged) {
        return f64::INFINITY;
    }
    reports.iter().map(|r| r.nmte).sum::<f64>() / reports.len().max(1) as f64
}

/// Scores polynomial order pairs on the test set; best first.
pub fn sweep(cfg: &ExperimentConfig, data: &Dataset, choices: &[OrderChoice]) -> Result<Vec<(OrderChoice, f64)>> {
    let train = estimate_derivatives(&embed(&data.train, &cfg.embedding)?)?;
    sweep_orders(&train, &cfg.embedding, &cfg.anchor()?, cfg.model.d, choices, &data.test)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub spectrum: Spectrum,
    pub smoothness: Option<SmoothnessReport>,
}

/// Characteristic roots at the configured equilibrium.
pub fn spectrum(cfg: &ExperimentConfig) -> Result<SpectrumReport> {
    let sc = cfg.spectrum.as_ref().ok_or_else(|| field_err("spectrum", "section missing from the config"))?;
    let cm = linearize(&cfg.build_system()?, &cfg.equilibrium()?)?;
    let spec = roots_in_window(&cm, sc.re_min, sc.re_max, sc.im_max, sc.seeds_per_axis)?;
    let smoothness = smoothness_class(&spec, sc.sigma_size, sc.k_cap).ok();
    Ok(SpectrumReport { spectrum: spec, smoothness })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub corr_embedded: Option<CorrDimFit>,
    pub corr_reduced: Option<CorrDimFit>,
    pub lyapunov_full: Option<LyapunovFit>,
    pub lyapunov_model: Option<LyapunovFit>,
    pub pdf: Option<PdfReport>,
    /// Largest excursion of the free model orbit relative to the half-width
    /// of the training box in reduced coordinates (1 = on its boundary).
    pub orbit_box_ratio: Option<f64>,
    pub orbit_diverged: bool,
}

fn post_transient(data: &EmbeddedData, t0: f64) -> Vec<usize> {
    (0..data.nrows()).filter(|&i| data.times[i] >= t0).collect()
}

/// Chaotic-attractor checks of a fitted model against its training data.
pub fn diagnose(cfg: &ExperimentConfig, data: &Dataset, model: &SsmModel) -> Result<Diagnostics> {
    let dc = cfg.diagnostics.as_ref().ok_or_else(|| field_err("diagnostics", "section missing from the config"))?;
    let emb = embed(&data.train, &cfg.embedding)?;
    let rows = post_transient(&emb, dc.transient);
    if rows.len() < 10 {
        return Err(field_err("diagnostics.transient", "leaves fewer than 10 rows"));
    }
    let points: Vec<Vec<f64>> = rows.iter().map(|&i| emb.row(i)).collect();
    let reduced: Vec<Vec<f64>> = points.iter().map(|p| model.reduce(p)).collect();

    let (corr_embedded, corr_reduced) = match &dc.correlation {
        Some(c) => (Some(correlation_dimension(&points, c)?), Some(correlation_dimension(&reduced, c)?)),
        None => (None, None),
    };

    let (lyapunov_full, lyapunov_model) = match &dc.lyapunov {
        Some(lc) => {
            let lc = LyapunovConfig { diameter: lc.diameter.or(Some(diameter(&points))), ..lc.clone() };
            let sys = cfg.build_system()?;
            let last = data.train[0].row(data.train[0].len() - 1).to_vec();
            let s = &cfg.simulation;
            let full = lyapunov_leading(
                &last,
                s.sample_dt,
                &lc,
                dde_propagator(&sys, &cfg.embedding, lc.horizon, s.dt, s.sample_dt),
            )?;
            let start = model.reduce(points.last().unwrap());
            let red = lyapunov_leading(&start, model.step_time(), &lc, model_propagator(model, lc.horizon))?;
            (Some(full), Some(red))
        }
        None => (None, None),
    };

    let pdf = if dc.pdf {
        // model orbits restarted from each training segment's first retained state
        let mut orbit = Vec::new();
        for seg in &emb.segments {
            let idx: Vec<usize> = (seg.start..seg.start + seg.len).filter(|&i| emb.times[i] >= dc.transient).collect();
            let Some(&first) = idx.first() else { continue };
            let stride = (model.step_time() / emb.dt).round().max(1.0) as usize;
            let steps = (idx.len() - 1) / stride;
            let (traj, _) = model.advect(&model.reduce(&emb.row(first)), steps, cfg.model.substeps)?;
            orbit.extend(traj);
        }
        Some(pdf_compare(&reduced, &orbit, dc.pdf_bins)?)
    } else {
        None
    };

    let (orbit_box_ratio, orbit_diverged) = if dc.orbit_steps > 0 {
        let d = model.d;
        let lo: Vec<f64> = (0..d).map(|j| reduced.iter().map(|r| r[j]).fold(f64::INFINITY, f64::min)).collect();
        let hi: Vec<f64> = (0..d).map(|j| reduced.iter().map(|r| r[j]).fold(f64::NEG_INFINITY, f64::max)).collect();
        let (traj, diverged) = model.advect(&reduced[0], dc.orbit_steps, cfg.model.substeps)?;
        let (lo, hi) = (&lo, &hi);
        let ratio = traj
            .iter()
            .flat_map(|e| (0..d).map(move |j| (e[j] - 0.5 * (lo[j] + hi[j])).abs() / (0.5 * (hi[j] - lo[j]))))
            .fold(0.0, f64::max);
        (Some(if diverged { f64::INFINITY } else { ratio }), diverged)
    } else {
        (None, false)
    };

    Ok(Diagnostics { corr_embedded, corr_reduced, lyapunov_full, lyapunov_model, pdf, orbit_box_ratio, orbit_diverged })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeFit {
    pub mu: f64,
    pub nmte: f64,
    /// Largest reduced-coordinate norm over the training rows.
    pub eta_radius: f64,
}

fn parametric_section(cfg: &ExperimentConfig) -> Result<&ParametricConfig> {
    cfg.parametric.as_ref().ok_or_else(|| field_err("parametric", "section missing from the config"))
}

/// Fits one model per node and interpolates them.
pub fn fit_family(cfg: &ExperimentConfig) -> Result<(ParametricSsm, Vec<NodeFit>)> {
    let pc = parametric_section(cfg)?;
    let mut models = Vec::new();
    let mut fits = Vec::new();
    for &mu in &pc.nodes {
        let c = cfg.with_param(&pc.parameter, mu);
        let data = generate(&c)?;
        let emb = embed(&data.train, &c.embedding)?;
        let model = fit_embedded(&c, &emb)?;
        let nmte = if data.test.is_empty() { f64::NAN } else { mean_nmte(&score(&c, &model, &data.test)?) };
        let eta_radius = (0..emb.nrows())
            .map(|i| model.reduce(&emb.row(i)).iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        log::info!("node {} = {mu}: NMTE {nmte:.4}", pc.parameter);
        models.push(model);
        fits.push(NodeFit { mu, nmte, eta_radius });
    }
    Ok((ParametricSsm::new(pc.nodes.clone(), models, pc.scheme)?, fits))
}

/// NMTE of the interpolated model on fresh data at each unseen parameter.
pub fn score_unseen(cfg: &ExperimentConfig, family: &ParametricSsm) -> Result<Vec<(f64, f64)>> {
    let pc = parametric_section(cfg)?;
    pc.unseen
        .iter()
        .map(|&mu| {
            let c = cfg.with_param(&pc.parameter, mu);
            let data = generate(&c)?;
            let model = family.interpolate(mu)?;
            Ok((mu, mean_nmte(&score(&c, &model, &data.test)?)))
        })
        .collect()
}

/// Limit-cycle diagram of the family over the configured scan.
pub fn bifurcation(cfg: &ExperimentConfig, family: &ParametricSsm, fits: &[NodeFit]) -> Result<BifurcationDiagram> {
    let sc = parametric_section(cfg)?
        .scan
        .as_ref()
        .ok_or_else(|| field_err("parametric.scan", "section missing from the config"))?;
    let radius = sc.seed_radius.unwrap_or_else(|| fits.iter().map(|f| f.eta_radius).fold(0.0, f64::max));
    let grid = linspace(sc.lo, sc.hi, sc.points);
    let section = PoincareSection::default_for(family.models[0].d);
    fold_scan(family, &section, &grid, &default_seeds(radius, sc.seeds), &PoincareOptions::default())
}

/// Rightmost characteristic root followed along the configured parameter.
pub fn hopf_track(cfg: &ExperimentConfig) -> Result<Track> {
    let pc = parametric_section(cfg)?;
    let tc = pc.track.as_ref().ok_or_else(|| field_err("parametric.track", "section missing from the config"))?;
    let builder = |mu: f64| {
        let c = cfg.with_param(&pc.parameter, mu);
        linearize(&c.build_system()?, &c.equilibrium()?)
    };
    let window = Window { re_min: tc.re_min, re_max: tc.re_max, im_max: tc.im_max };
    track_rightmost(builder, &linspace(tc.lo, tc.hi, tc.points), window, tc.seeds_per_axis)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MicroChaosReport {
    /// Post-transient orbit of the exact sampled-data map.
    pub exact: Vec<f64>,
    /// Post-transient orbit of the learned map, observed through the first
    /// embedding coordinate.
    pub model: Vec<f64>,
    pub pdf: PdfReport,
    /// Largest |x| seen in the training samples.
    pub train_max: f64,
    pub exact_max: f64,
    pub model_max: f64,
    pub diverged: bool,
}

/// Compares the learned stroboscopic map of a zero-order-hold system with
/// the exact map over `steps` samples.
pub fn microchaos(cfg: &ExperimentConfig, data: &Dataset, model: &SsmModel, steps: usize) -> Result<MicroChaosReport> {
    let p = cfg.build_system()?.params;
    let map = MicroChaosMap {
        a: p["a"],
        p_gain: p["p_gain"],
        resolution: cfg.simulation.resolution.unwrap_or(p["resolution"]),
        sampling: p["sampling"],
        hold: p["hold"].round() as usize,
    };
    if (cfg.simulation.sample_dt - map.sampling).abs() > 1e-12 * map.sampling {
        return Err(field_err("simulation.sample_dt", "must equal the hold period"));
    }
    let skip = cfg.diagnostics.as_ref().map_or(0.0, |d| d.transient);
    let skip = (skip / map.sampling).round() as usize;
    if skip >= steps {
        return Err(field_err("diagnostics.transient", "longer than the compared orbit"));
    }
    let x0 = data.train[0].row(0)[0];
    let exact = map.orbit(x0, steps)[skip..].to_vec();
    let emb = embed(&data.train, &cfg.embedding)?;
    let (traj, diverged) = model.advect(&model.reduce(&emb.row(0)), steps, 1)?;
    let lifted: Vec<f64> = traj.iter().map(|e| model.lift(e)[0]).collect();
    let model_orbit = lifted[skip.min(lifted.len())..].to_vec();
    let col = |v: &[f64]| -> Vec<Vec<f64>> { v.iter().map(|&x| vec![x]).collect() };
    let absmax = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let train_max = data.train.iter().map(|t| t.rows().fold(0.0f64, |m, r| m.max(r[0].abs()))).fold(0.0, f64::max);
    let pdf = pdf_compare(&col(&exact), &col(&model_orbit), cfg.diagnostics.as_ref().and_then(|d| d.pdf_bins))?;
    Ok(MicroChaosReport {
        exact_max: absmax(&exact),
        model_max: absmax(&model_orbit),
        exact,
        model: model_orbit,
        pdf,
        train_max,
        diverged,
    })
}
