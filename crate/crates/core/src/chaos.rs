//! Chaos diagnostics: correlation dimension, leading Lyapunov exponent and
//! histogram comparison of invariant measures.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dde::{simulate, DelaySystem, HistorySpec};
use crate::embedding::EmbeddingConfig;
use crate::error::{Error, Result};
use crate::par;
use crate::ssm::SsmModel;
use crate::trajectory::fmt_e12;

/// Bounding-box diagonal of a point cloud.
pub fn diameter(points: &[Vec<f64>]) -> f64 {
    let Some(first) = points.first() else { return 0.0 };
    let mut lo = first.clone();
    let mut hi = first.clone();
    for p in points {
        for (j, v) in p.iter().enumerate() {
            lo[j] = lo[j].min(*v);
            hi[j] = hi[j].max(*v);
        }
    }
    lo.iter().zip(&hi).map(|(a, b)| (b - a).powi(2)).sum::<f64>().sqrt()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Least-squares line through `(x, y)`: `(slope, intercept, slope stderr, R²)`.
fn line_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let slope = sxy / sxx;
    let icpt = my - slope * mx;
    let sse: f64 = x.iter().zip(y).map(|(a, b)| (b - icpt - slope * a).powi(2)).sum();
    let stderr = if n > 2.0 { (sse / (n - 2.0) / sxx).sqrt() } else { 0.0 };
    let r2 = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    (slope, icpt, stderr, r2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalingWindow {
    Auto,
    /// Radii (inclusive) bounding the fit.
    Manual {
        lo: f64,
        hi: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorrDimConfig {
    pub radii: usize,
    /// Smallest radius as a fraction of the cloud diameter.
    pub lo_fraction: f64,
    /// Clouds larger than this are evenly subsampled.
    pub max_points: usize,
    pub window: ScalingWindow,
}

impl Default for CorrDimConfig {
    fn default() -> Self {
        Self { radii: 40, lo_fraction: 1e-3, max_points: 8000, window: ScalingWindow::Auto }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrDimFit {
    pub radii: Vec<f64>,
    pub c: Vec<f64>,
    /// Radii bounding the fitted window.
    pub l_lo: f64,
    pub l_hi: f64,
    pub slope: f64,
    pub stderr: f64,
    /// False when no window met the slope-variation criterion.
    pub stable: bool,
    pub points_used: usize,
}

impl CorrDimFit {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("l,C\n");
        for (l, c) in self.radii.iter().zip(&self.c) {
            s.push_str(&format!("{},{}\n", fmt_e12(*l), fmt_e12(*c)));
        }
        s
    }
}

const PAIR_BLOCK: usize = 64;
/// Largest relative spread of local slopes inside an automatic window.
const SLOPE_SPREAD: f64 = 0.15;
const MIN_WINDOW: usize = 5;

/// Counts of pairs with distance below each radius, accumulated in blocks
/// of rows. Integer counts keep the result independent of scheduling.
fn pair_counts(pts: &[Vec<f64>], radii: &[f64]) -> Vec<u64> {
    let n = pts.len();
    let l0 = radii[0].ln();
    let step = if radii.len() > 1 { (radii[radii.len() - 1] / radii[0]).ln() / (radii.len() - 1) as f64 } else { 1.0 };
    let nb = radii.len();
    let blocks = n.div_ceil(PAIR_BLOCK);
    let partial: Vec<Vec<u64>> = par::map_range(blocks, |b| {
        let mut hist = vec![0u64; nb + 1];
        for i in b * PAIR_BLOCK..((b + 1) * PAIR_BLOCK).min(n) {
            for j in i + 1..n {
                let d = dist(&pts[i], &pts[j]);
                // first radius strictly above d
                let mut k = if d < radii[0] { 0 } else { (((d.ln() - l0) / step).floor() as usize + 1).min(nb) };
                while k > 0 && d < radii[k - 1] {
                    k -= 1;
                }
                while k < nb && d >= radii[k] {
                    k += 1;
                }
                hist[k] += 1;
            }
        }
        hist
    });
    let mut hist = vec![0u64; nb + 1];
    for h in partial {
        hist.iter_mut().zip(h).for_each(|(a, b)| *a += b);
    }
    let mut cum = Vec::with_capacity(nb);
    let mut acc = 0;
    for h in &hist[..nb] {
        acc += h;
        cum.push(acc);
    }
    cum
}

/// Correlation integral on log-spaced radii and its scaling slope.
pub fn correlation_dimension(points: &[Vec<f64>], cfg: &CorrDimConfig) -> Result<CorrDimFit> {
    if points.len() < 10 {
        return Err(Error::Validation(format!("{} points are too few for a correlation integral", points.len())));
    }
    if cfg.radii < MIN_WINDOW {
        return Err(Error::Validation(format!("need at least {MIN_WINDOW} radii")));
    }
    let stride = points.len().div_ceil(cfg.max_points.max(10));
    let pts: Vec<Vec<f64>> = points.iter().step_by(stride).cloned().collect();
    let diam = diameter(&pts);
    if !(diam > 0.0) {
        return Err(Error::Validation("point cloud has zero extent".into()));
    }
    let (lo, hi) = (diam * cfg.lo_fraction, diam);
    let radii: Vec<f64> = (0..cfg.radii).map(|i| lo * (hi / lo).powf(i as f64 / (cfg.radii - 1) as f64)).collect();
    let n = pts.len() as f64;
    let npairs = n * (n - 1.0) / 2.0;
    let c: Vec<f64> = pair_counts(&pts, &radii).into_iter().map(|k| k as f64 / npairs).collect();

    let usable: Vec<usize> = (0..radii.len()).filter(|&i| c[i] > 0.0 && c[i] < 1.0).collect();
    let lx: Vec<f64> = usable.iter().map(|&i| radii[i].ln()).collect();
    let ly: Vec<f64> = usable.iter().map(|&i| c[i].ln()).collect();
    if lx.len() < MIN_WINDOW {
        return Err(Error::Numeric("too few radii with nonzero, unsaturated counts".into()));
    }

    let (a, b, stable) = match cfg.window {
        ScalingWindow::Manual { lo, hi } => {
            let idx: Vec<usize> = (0..lx.len()).filter(|&i| radii[usable[i]] >= lo && radii[usable[i]] <= hi).collect();
            if idx.len() < 2 {
                return Err(Error::Validation("manual window contains fewer than two usable radii".into()));
            }
            (idx[0], idx[idx.len() - 1], true)
        }
        ScalingWindow::Auto => auto_window(&lx, &ly),
    };
    let (slope, _, stderr, _) = line_fit(&lx[a..=b], &ly[a..=b]);
    Ok(CorrDimFit {
        l_lo: radii[usable[a]],
        l_hi: radii[usable[b]],
        radii,
        c,
        slope,
        stderr,
        stable,
        points_used: pts.len(),
    })
}

fn spread(s: &[f64]) -> f64 {
    let max = s.iter().copied().fold(f64::MIN, f64::max);
    let min = s.iter().copied().fold(f64::MAX, f64::min);
    let mean = s.iter().sum::<f64>() / s.len() as f64;
    (max - min) / mean.abs()
}

/// Longest run of points whose local slopes vary by less than
/// [`SLOPE_SPREAD`]; ties go to the smaller spread. Falls back to the
/// least-varying minimal window, flagged unstable.
fn auto_window(lx: &[f64], ly: &[f64]) -> (usize, usize, bool) {
    let s: Vec<f64> = (1..lx.len()).map(|i| (ly[i] - ly[i - 1]) / (lx[i] - lx[i - 1])).collect();
    let min_slopes = MIN_WINDOW - 1;
    let mut best: Option<(usize, usize, f64)> = None;
    for a in 0..s.len() {
        for b in a + min_slopes..=s.len() {
            let sp = spread(&s[a..b]);
            if sp >= SLOPE_SPREAD {
                break;
            }
            let better = match best {
                None => true,
                Some((ba, bb, bs)) => (b - a) > (bb - ba) || ((b - a) == (bb - ba) && sp < bs),
            };
            if better {
                best = Some((a, b, sp));
            }
        }
    }
    if let Some((a, b, _)) = best {
        return (a, b, true);
    }
    let mut fallback = (0, min_slopes, f64::INFINITY);
    for a in 0..=s.len() - min_slopes {
        let sp = spread(&s[a..a + min_slopes]);
        if sp < fallback.2 {
            fallback = (a, a + min_slopes, sp);
        }
    }
    (fallback.0, fallback.1, false)
}

/// Smallest even integer strictly above `2m`.
pub fn embedding_dimension_rule(m: f64) -> usize {
    2 * (m.floor() as usize) + 2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LyapunovConfig {
    pub ensemble: usize,
    pub epsilon: f64,
    /// Length of each ensemble run.
    pub horizon: f64,
    /// The fit stops once the mean separation exceeds this fraction of the
    /// attractor diameter.
    pub saturation_fraction: f64,
    /// Attractor diameter in observation space. Estimated from the ensemble
    /// when absent.
    pub diameter: Option<f64>,
    pub seed: u64,
}

impl Default for LyapunovConfig {
    fn default() -> Self {
        Self { ensemble: 50, epsilon: 1e-3, horizon: 50.0, saturation_fraction: 0.1, diameter: None, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovFit {
    pub times: Vec<f64>,
    /// Mean pairwise separation normalized by its initial value.
    pub delta: Vec<f64>,
    pub t_lo: f64,
    pub t_hi: f64,
    pub lambda: f64,
    pub r2: f64,
}

impl LyapunovFit {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,delta\n");
        for (t, d) in self.times.iter().zip(&self.delta) {
            s.push_str(&format!("{},{}\n", fmt_e12(*t), fmt_e12(*d)));
        }
        s
    }
}

/// `count` points drawn uniformly from the ball of radius `eps` around `center`.
pub fn ball_sample(center: &[f64], eps: f64, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = center.len();
    (0..count)
        .map(|_| {
            let g: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            let r = eps * rng.random::<f64>().powf(1.0 / n as f64);
            center.iter().zip(&g).map(|(c, v)| c + r * v / norm).collect()
        })
        .collect()
}

/// Leading Lyapunov exponent from an ensemble started in a small ball.
///
/// `propagate` maps an initial point to observations spaced by `dt`; the
/// separation between ensemble members is measured on those observations.
pub fn lyapunov_leading<F>(anchor: &[f64], dt: f64, cfg: &LyapunovConfig, propagate: F) -> Result<LyapunovFit>
where
    F: Fn(&[f64]) -> Result<Vec<Vec<f64>>> + Sync + Send,
{
    if cfg.ensemble < 2 || !(cfg.epsilon > 0.0) {
        return Err(Error::Validation("Lyapunov ensemble needs at least two members and ε > 0".into()));
    }
    let starts = ball_sample(anchor, cfg.epsilon, cfg.ensemble, cfg.seed);
    let runs: Vec<Vec<Vec<f64>>> = par::map(&starts, |s| propagate(s)).into_iter().collect::<Result<_>>()?;
    let len = runs.iter().map(Vec::len).min().unwrap_or(0);
    if len < 3 {
        return Err(Error::Validation("ensemble runs are too short for a Lyapunov fit".into()));
    }
    let m = runs.len();
    let mean_sep: Vec<f64> = par::map_range(len, |t| {
        let mut d = Vec::with_capacity(m * (m - 1) / 2);
        for i in 0..m {
            for j in i + 1..m {
                d.push(dist(&runs[i][t], &runs[j][t]));
            }
        }
        par::tree_sum(&d) / d.len() as f64
    });
    if !(mean_sep[0] > 0.0) {
        return Err(Error::Numeric("ensemble members coincide in observation space".into()));
    }
    let diam = match cfg.diameter {
        Some(d) => d,
        None => {
            let all: Vec<Vec<f64>> = runs.iter().flatten().cloned().collect();
            diameter(&all)
        }
    };
    let threshold = cfg.saturation_fraction * diam;
    let end = mean_sep.iter().position(|&s| s > threshold).unwrap_or(len);
    if end < 3 {
        return Err(Error::Validation(format!(
            "separation saturates immediately (ε = {:e}); use a smaller ball",
            cfg.epsilon
        )));
    }
    let times: Vec<f64> = (0..len).map(|i| i as f64 * dt).collect();
    let delta: Vec<f64> = mean_sep.iter().map(|s| s / mean_sep[0]).collect();
    let logd: Vec<f64> = delta[..end].iter().map(|d| d.ln()).collect();
    let (lambda, _, _, r2) = line_fit(&times[..end], &logd);
    Ok(LyapunovFit { t_lo: 0.0, t_hi: times[end - 1], times, delta, lambda, r2 })
}

/// Propagator for a delay system: each point becomes a constant history,
/// integrated at `solver_dt`, sampled every `sample_dt` and observed through
/// `embedding` (whose lag counts samples).
pub fn dde_propagator<'a>(
    system: &'a DelaySystem,
    embedding: &'a EmbeddingConfig,
    horizon: f64,
    solver_dt: f64,
    sample_dt: f64,
) -> impl Fn(&[f64]) -> Result<Vec<Vec<f64>>> + Sync + Send + 'a {
    move |x0: &[f64]| {
        let span = (embedding.span() - 1) as f64 * sample_dt;
        let tr = simulate(system, &HistorySpec::Constant(x0.to_vec()), horizon + span, solver_dt)?;
        let tr = tr.stroboscopic(sample_dt, 0.0)?;
        let rows = (tr.len() + 1).saturating_sub(embedding.span());
        Ok((0..rows).map(|i| embedding.row_at(&tr, i)).collect())
    }
}

/// Propagator for a reduced model: points are reduced coordinates and the
/// run is observed after lifting to embedding space.
pub fn model_propagator(model: &SsmModel, horizon: f64) -> impl Fn(&[f64]) -> Result<Vec<Vec<f64>>> + Sync + Send + '_ {
    move |eta0: &[f64]| {
        let steps = (horizon / model.step_time()).round() as usize;
        let (traj, diverged) = model.advect(eta0, steps, 1)?;
        if diverged {
            return Err(Error::Numeric("reduced model diverged during the Lyapunov run".into()));
        }
        Ok(traj.iter().map(|e| model.lift(e)).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordHistogram {
    pub edges: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub l1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdfReport {
    pub coords: Vec<CoordHistogram>,
}

impl PdfReport {
    pub fn l1(&self) -> Vec<f64> {
        self.coords.iter().map(|c| c.l1).collect()
    }

    pub fn max_l1(&self) -> f64 {
        self.coords.iter().map(|c| c.l1).fold(0.0, f64::max)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("coord,bin_lo,bin_hi,p_a,p_b\n");
        for (k, c) in self.coords.iter().enumerate() {
            for i in 0..c.a.len() {
                s.push_str(&format!(
                    "{k},{},{},{},{}\n",
                    fmt_e12(c.edges[i]),
                    fmt_e12(c.edges[i + 1]),
                    fmt_e12(c.a[i]),
                    fmt_e12(c.b[i])
                ));
            }
        }
        s
    }
}

const MAX_BINS: usize = 1000;

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let f = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] * (1.0 - f) + sorted[i + 1] * f
    } else {
        sorted[i]
    }
}

fn histogram(values: &[f64], lo: f64, width: f64, bins: usize) -> Vec<f64> {
    let mut h = vec![0.0; bins];
    for &v in values {
        let k = if width > 0.0 { (((v - lo) / width).floor().max(0.0) as usize).min(bins - 1) } else { 0 };
        h[k] += 1.0;
    }
    let n = values.len() as f64;
    h.iter_mut().for_each(|x| *x /= n);
    h
}

/// Per-coordinate histograms on shared bins and their L1 distances.
///
/// Bins default to the Freedman–Diaconis width on the union of both samples.
pub fn pdf_compare(a: &[Vec<f64>], b: &[Vec<f64>], bins: Option<usize>) -> Result<PdfReport> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Validation("PDF comparison needs two nonempty samples".into()));
    }
    let k = a[0].len();
    if a.iter().chain(b).any(|r| r.len() != k) {
        return Err(Error::Validation("samples have different coordinate counts".into()));
    }
    let coords = (0..k)
        .map(|c| {
            let xa: Vec<f64> = a.iter().map(|r| r[c]).collect();
            let xb: Vec<f64> = b.iter().map(|r| r[c]).collect();
            let mut all: Vec<f64> = xa.iter().chain(&xb).copied().collect();
            all.sort_by(f64::total_cmp);
            let (lo, hi) = (all[0], all[all.len() - 1]);
            let range = hi - lo;
            let nbins = if range <= 0.0 {
                1
            } else if let Some(n) = bins {
                n.max(1)
            } else {
                let iqr = quantile(&all, 0.75) - quantile(&all, 0.25);
                let h = 2.0 * iqr / (all.len() as f64).cbrt();
                if h > 0.0 {
                    ((range / h).ceil() as usize).clamp(1, MAX_BINS)
                } else {
                    (all.len() as f64).sqrt().ceil() as usize
                }
            };
            let width = range / nbins as f64;
            let edges: Vec<f64> = (0..=nbins).map(|i| if i == nbins { hi } else { lo + i as f64 * width }).collect();
            let ha = histogram(&xa, lo, width, nbins);
            let hb = histogram(&xb, lo, width, nbins);
            let l1 = ha.iter().zip(&hb).map(|(p, q)| (p - q).abs()).sum();
            CoordHistogram { edges, a: ha, b: hb, l1 }
        })
        .collect();
    Ok(PdfReport { coords })
}
