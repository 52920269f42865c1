//! Data-driven spectral submanifolds: a polynomial graph over an orthonormal
//! tangent basis, with reduced dynamics given by a polynomial vector field or
//! a radial-basis-function map.

pub mod basis;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::embedding::{embed, EmbeddedData, EmbeddingConfig};
use crate::error::{Error, Result};
use crate::linalg::{leading_left_singular, lstsq, polar_orthogonal, row_major};
use crate::par;
use crate::trajectory::Trajectory;

pub use basis::{binomial, substitution_matrix, MultiIndexBasis};

pub const MODEL_SCHEMA_VERSION: u32 = 1;

/// Reduced states with a norm above this are treated as a blow-up.
const ETA_BLOWUP: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyField {
    pub order: usize,
    /// Degree 1..=order monomials, matching the columns of `r`.
    pub exponents: Vec<Vec<u32>>,
    /// `d × #monomials`.
    #[serde(with = "row_major")]
    pub r: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbfMap {
    /// `M × d`.
    #[serde(with = "row_major")]
    pub centers: DMatrix<f64>,
    /// `M × d`.
    #[serde(with = "row_major")]
    pub weights: DMatrix<f64>,
    /// Time advanced by one application of the map.
    pub dt_map: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Dynamics {
    None,
    Poly(PolyField),
    Rbf(RbfMap),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SsmModel {
    pub schema_version: u32,
    pub embedding: EmbeddingConfig,
    /// Spacing of embedded rows.
    pub dt: f64,
    /// Fixed point in embedding space.
    pub anchor: Vec<f64>,
    pub d: usize,
    /// `k × d`, orthonormal columns.
    #[serde(with = "row_major")]
    pub v1: DMatrix<f64>,
    pub manifold_order: usize,
    /// Degree 2..=manifold_order monomials, matching the columns of `v_nl`.
    pub manifold_exponents: Vec<Vec<u32>>,
    /// `k × #monomials`, columns orthogonal to `v1`.
    #[serde(with = "row_major")]
    pub v_nl: DMatrix<f64>,
    pub dynamics: Dynamics,
    /// RMS distance of the training rows to the fitted graph.
    pub fit_residual: f64,
}

impl SsmModel {
    pub fn k(&self) -> usize {
        self.v1.nrows()
    }

    fn manifold_basis(&self) -> MultiIndexBasis {
        MultiIndexBasis::new(self.d, 2, self.manifold_order)
    }

    /// Checks shapes and invariants after deserialization.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != MODEL_SCHEMA_VERSION {
            return Err(Error::Parse(format!("unsupported model schema version {}", self.schema_version)));
        }
        let k = self.embedding.k;
        let nb = self.manifold_basis();
        if self.v1.shape() != (k, self.d) || self.v_nl.shape() != (k, nb.len()) || self.anchor.len() != k {
            return Err(Error::Parse("model matrix shapes are inconsistent".into()));
        }
        if nb.exponents != self.manifold_exponents {
            return Err(Error::Parse("manifold monomial list does not match its order".into()));
        }
        match &self.dynamics {
            Dynamics::Poly(p) => {
                let b = MultiIndexBasis::new(self.d, 1, p.order);
                if p.r.shape() != (self.d, b.len()) || b.exponents != p.exponents {
                    return Err(Error::Parse("vector-field coefficients do not match their order".into()));
                }
            }
            Dynamics::Rbf(m) => {
                if m.centers.ncols() != self.d || m.weights.shape() != m.centers.shape() {
                    return Err(Error::Parse("RBF matrices have inconsistent shapes".into()));
                }
            }
            Dynamics::None => {}
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(s)?;
        m.validate()?;
        Ok(m)
    }

    /// Reduced coordinates `η = V1ᵀ(y − anchor)`.
    pub fn reduce(&self, y: &[f64]) -> Vec<f64> {
        let c: Vec<f64> = y.iter().zip(&self.anchor).map(|(a, b)| a - b).collect();
        (0..self.d).map(|j| self.v1.column(j).iter().zip(&c).map(|(v, x)| v * x).sum()).collect()
    }

    /// Point `M(η) + anchor` on the manifold in embedding space.
    pub fn lift(&self, eta: &[f64]) -> Vec<f64> {
        let mut y = self.anchor.clone();
        for (j, e) in eta.iter().enumerate() {
            y.iter_mut().zip(self.v1.column(j).iter()).for_each(|(o, v)| *o += v * e);
        }
        if self.v_nl.ncols() > 0 {
            let phi = self.manifold_basis().eval(eta);
            for (j, p) in phi.iter().enumerate() {
                y.iter_mut().zip(self.v_nl.column(j).iter()).for_each(|(o, v)| *o += v * p);
            }
        }
        y
    }

    /// Reduced vector field `η̇ = R φ(η)`.
    pub fn vector_field(&self, eta: &[f64]) -> Result<Vec<f64>> {
        let Dynamics::Poly(p) = &self.dynamics else {
            return Err(Error::Validation("model has no polynomial vector field".into()));
        };
        Ok(poly_eval(p, self.d, eta))
    }

    /// One application of the RBF map.
    pub fn map(&self, eta: &[f64]) -> Result<Vec<f64>> {
        let Dynamics::Rbf(m) = &self.dynamics else {
            return Err(Error::Validation("model has no RBF map".into()));
        };
        Ok(rbf_eval(m, eta))
    }

    /// RK4 step of the reduced vector field.
    pub fn rk4_step(&self, eta: &[f64], h: f64) -> Result<Vec<f64>> {
        let Dynamics::Poly(p) = &self.dynamics else {
            return Err(Error::Validation("model has no polynomial vector field".into()));
        };
        Ok(rk4(|x| poly_eval(p, self.d, x), eta, h))
    }

    /// Reduced trajectory of `steps + 1` states spaced by the model's natural
    /// step (`dt` for flows, `dt_map` for maps). Stops early on blow-up.
    pub fn advect(&self, eta0: &[f64], steps: usize, substeps: usize) -> Result<(Vec<Vec<f64>>, bool)> {
        let mut out = Vec::with_capacity(steps + 1);
        out.push(eta0.to_vec());
        let mut x = eta0.to_vec();
        let substeps = substeps.max(1);
        for _ in 0..steps {
            x = match &self.dynamics {
                Dynamics::Poly(p) => {
                    let h = self.dt / substeps as f64;
                    for _ in 0..substeps {
                        x = rk4(|z| poly_eval(p, self.d, z), &x, h);
                    }
                    x
                }
                Dynamics::Rbf(m) => rbf_eval(m, &x),
                Dynamics::None => return Err(Error::Validation("model has no reduced dynamics".into())),
            };
            if x.iter().any(|v| !v.is_finite()) || x.iter().map(|v| v * v).sum::<f64>().sqrt() > ETA_BLOWUP {
                return Ok((out, true));
            }
            out.push(x.clone());
        }
        Ok((out, false))
    }

    /// Model whose embedding space is its reduced space, carrying only the
    /// vector field `field`.
    pub fn from_field(field: PolyField, dt: f64) -> Result<Self> {
        let d = field.r.nrows();
        let m = SsmModel {
            schema_version: MODEL_SCHEMA_VERSION,
            embedding: EmbeddingConfig { observables: (0..d).collect(), k: d, lag_steps: 1, skip_time: 0.0 },
            dt,
            anchor: vec![0.0; d],
            d,
            v1: DMatrix::identity(d, d),
            manifold_order: 1,
            manifold_exponents: Vec::new(),
            v_nl: DMatrix::zeros(d, 0),
            dynamics: Dynamics::Poly(field),
            fit_residual: 0.0,
        };
        m.validate()?;
        Ok(m)
    }

    /// The same model in reduced coordinates `ξ` with `η = Q ξ`, `Q` orthogonal.
    pub fn rotated(&self, q: &DMatrix<f64>) -> Self {
        let mut out = self.clone();
        out.v1 = &self.v1 * q;
        if self.v_nl.ncols() > 0 {
            out.v_nl = &self.v_nl * substitution_matrix(&self.manifold_exponents, q);
        }
        out.dynamics = match &self.dynamics {
            Dynamics::Poly(p) => Dynamics::Poly(PolyField {
                r: q.transpose() * &p.r * substitution_matrix(&p.exponents, q),
                ..p.clone()
            }),
            Dynamics::Rbf(m) => {
                Dynamics::Rbf(RbfMap { centers: &m.centers * q, weights: &m.weights * q, dt_map: m.dt_map })
            }
            Dynamics::None => Dynamics::None,
        };
        out
    }

    /// Step between consecutive states returned by [`SsmModel::advect`].
    pub fn step_time(&self) -> f64 {
        match &self.dynamics {
            Dynamics::Rbf(m) => m.dt_map,
            _ => self.dt,
        }
    }
}

fn poly_eval(p: &PolyField, d: usize, eta: &[f64]) -> Vec<f64> {
    let mut phi = vec![0.0; p.exponents.len()];
    basis::eval_monomials(&p.exponents, p.order, eta, &mut phi);
    (0..d).map(|i| p.r.row(i).iter().zip(&phi).map(|(r, f)| r * f).sum()).collect()
}

fn rbf_eval(m: &RbfMap, eta: &[f64]) -> Vec<f64> {
    let d = eta.len();
    let mut out = vec![0.0; d];
    for i in 0..m.centers.nrows() {
        let r = (0..d).map(|j| (eta[j] - m.centers[(i, j)]).powi(2)).sum::<f64>().sqrt();
        for (j, o) in out.iter_mut().enumerate() {
            *o += m.weights[(i, j)] * r;
        }
    }
    out
}

pub(crate) fn rk4(f: impl Fn(&[f64]) -> Vec<f64>, x: &[f64], h: f64) -> Vec<f64> {
    let n = x.len();
    let add = |a: &[f64], b: &[f64], s: f64| -> Vec<f64> { (0..n).map(|i| a[i] + s * b[i]).collect() };
    let k1 = f(x);
    let k2 = f(&add(x, &k1, 0.5 * h));
    let k3 = f(&add(x, &k2, 0.5 * h));
    let k4 = f(&add(x, &k3, h));
    (0..n).map(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])).collect()
}

/// Row-wise monomial matrix `Φ` (`N × #monomials`).
fn design(basis: &MultiIndexBasis, eta: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, m) = (eta.nrows(), basis.len());
    let rows: Vec<Vec<f64>> = par::map_range(n, |i| {
        let e: Vec<f64> = eta.row(i).iter().copied().collect();
        basis.eval(&e)
    });
    DMatrix::from_fn(n, m, |i, j| rows[i][j])
}

/// Mean of the last `window` samples, as a fixed-point estimate from a
/// decaying calibration run.
pub fn estimate_anchor(traj: &Trajectory, window: usize) -> Vec<f64> {
    let w = window.clamp(1, traj.len());
    let mut m = vec![0.0; traj.dim()];
    for i in traj.len() - w..traj.len() {
        m.iter_mut().zip(traj.row(i)).for_each(|(a, b)| *a += b / w as f64);
    }
    m
}

fn objective(y: &DMatrix<f64>, v1: &DMatrix<f64>, v_nl: &DMatrix<f64>, basis: &MultiIndexBasis) -> (f64, DMatrix<f64>) {
    let eta = y * v1;
    let mut resid = y - &eta * v1.transpose();
    let phi = if basis.is_empty() { DMatrix::zeros(y.nrows(), 0) } else { design(basis, &eta) };
    if v_nl.ncols() > 0 {
        resid -= &phi * v_nl.transpose();
    }
    (resid.norm_squared(), phi)
}

fn fit_nonlinear_part(y: &DMatrix<f64>, v1: &DMatrix<f64>, phi: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if phi.ncols() == 0 {
        return Ok(DMatrix::zeros(y.ncols(), 0));
    }
    let proj = DMatrix::identity(v1.nrows(), v1.nrows()) - v1 * v1.transpose();
    let target = y * &proj;
    let x = lstsq(phi, &target, 0.0)?;
    // exact re-projection onto the complement of the tangent space
    Ok(&proj * x.transpose())
}

/// Fits the graph `y = V1 η + V_nl φ(η)`, `η = V1ᵀ y`, to anchored embedded data
/// by alternating between the nonlinear coefficients and the tangent basis.
pub fn fit_manifold(
    data: &EmbeddedData,
    cfg: &EmbeddingConfig,
    anchor: &[f64],
    d: usize,
    order: usize,
) -> Result<SsmModel> {
    let k = data.k();
    if anchor.len() != k || cfg.k != k {
        return Err(Error::Validation(format!("anchor/config dimension does not match embedding dimension {k}")));
    }
    if d == 0 || d > k || order == 0 {
        return Err(Error::Validation(format!("invalid manifold dimension {d} or order {order}")));
    }
    let basis = MultiIndexBasis::new(d, 2, order);
    let unknowns = d * k + basis.len() * k;
    if data.nrows() < 10 * unknowns {
        log::warn!("only {} rows for {} manifold unknowns", data.nrows(), unknowns);
    }
    let y = data.centered(anchor).y;

    let mut v1 = leading_left_singular(&y.transpose(), d)?;
    let (_, phi) = objective(&y, &v1, &DMatrix::zeros(k, 0), &basis);
    let mut v_nl = fit_nonlinear_part(&y, &v1, &phi)?;
    let (mut best, _) = objective(&y, &v1, &v_nl, &basis);
    if order >= 2 {
        for _ in 0..100 {
            // tangent update on residual-corrected data, then nonlinear refit
            let eta = &y * &v1;
            let phi = design(&basis, &eta);
            let corrected = &y - &phi * v_nl.transpose();
            let v1_new = polar_orthogonal(&(corrected.transpose() * &eta));
            let (_, phi_new) = objective(&y, &v1_new, &DMatrix::zeros(k, 0), &basis);
            let v_nl_new = fit_nonlinear_part(&y, &v1_new, &phi_new)?;
            let (j, _) = objective(&y, &v1_new, &v_nl_new, &basis);
            if !(j < best) {
                break;
            }
            let rel = (best - j) / best.max(f64::MIN_POSITIVE);
            v1 = v1_new;
            v_nl = v_nl_new;
            best = j;
            if rel < 1e-10 {
                break;
            }
        }
    }
    Ok(SsmModel {
        schema_version: MODEL_SCHEMA_VERSION,
        embedding: cfg.clone(),
        dt: data.dt,
        anchor: anchor.to_vec(),
        d,
        v1,
        manifold_order: order,
        manifold_exponents: basis.exponents,
        v_nl,
        dynamics: Dynamics::None,
        fit_residual: (best / data.nrows() as f64).sqrt(),
    })
}

/// Least-squares fit of `η̇ = Σ R_k η^k` (degrees 1..=order) with `η̇ = V1ᵀ ẏ`.
pub fn fit_polyfield(data: &EmbeddedData, model: &SsmModel, order: usize, ridge: f64) -> Result<SsmModel> {
    let dy = data.dy.as_ref().ok_or_else(|| Error::Validation("derivative estimates missing".into()))?;
    if order == 0 {
        return Err(Error::Validation("dynamics order must be at least 1".into()));
    }
    let y = data.centered(&model.anchor).y;
    let eta = &y * &model.v1;
    let eta_dot = dy * &model.v1;
    let basis = MultiIndexBasis::new(model.d, 1, order);
    let phi = design(&basis, &eta);
    let x = lstsq(&phi, &eta_dot, ridge)?;
    Ok(SsmModel {
        dynamics: Dynamics::Poly(PolyField { order, exponents: basis.exponents, r: x.transpose() }),
        ..model.clone()
    })
}

/// Linear-kernel RBF map `F(η) = Σ C_i ‖η − η_i‖` interpolating consecutive
/// reduced states `η_n ↦ η_{n+stride}` within each trajectory. At most
/// `max_centers` pairs are used, spread evenly over the data.
pub fn fit_rbf(data: &EmbeddedData, model: &SsmModel, stride: usize, max_centers: usize) -> Result<SsmModel> {
    let stride = stride.max(1);
    let y = data.centered(&model.anchor).y;
    let eta = &y * &model.v1;
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for s in &data.segments {
        if s.len > stride {
            pairs.extend((s.start..s.start + s.len - stride).map(|i| (i, i + stride)));
        }
    }
    if pairs.is_empty() {
        return Err(Error::Validation("no consecutive pairs available for the RBF map".into()));
    }
    if max_centers > 0 && pairs.len() > max_centers {
        let step = pairs.len() as f64 / max_centers as f64;
        pairs = (0..max_centers).map(|i| pairs[(i as f64 * step) as usize]).collect();
    }
    let d = model.d;
    let mut centers: Vec<Vec<f64>> = Vec::new();
    let mut targets: Vec<Vec<f64>> = Vec::new();
    for (a, b) in pairs {
        let c: Vec<f64> = eta.row(a).iter().copied().collect();
        if centers.iter().any(|q| dist(q, &c) < 1e-12) {
            continue;
        }
        centers.push(c);
        targets.push(eta.row(b).iter().copied().collect());
    }
    let m = centers.len();
    let mut kmat = DMatrix::from_fn(m, m, |i, j| dist(&centers[i], &centers[j]));
    for i in 0..m {
        kmat[(i, i)] += 1e-10;
    }
    let rhs = DMatrix::from_fn(m, d, |i, j| targets[i][j]);
    let weights = kmat.lu().solve(&rhs).ok_or_else(|| Error::Numeric("singular RBF interpolation matrix".into()))?;
    Ok(SsmModel {
        dynamics: Dynamics::Rbf(RbfMap {
            centers: DMatrix::from_fn(m, d, |i, j| centers[i][j]),
            weights,
            dt_map: stride as f64 * data.dt,
        }),
        ..model.clone()
    })
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// `(1/(N ‖y‖_max)) Σ_i ‖y_i − ŷ_i‖` over the first `N` paired rows, with
/// `‖y‖_max` the largest row norm of `truth`.
pub fn nmte(truth: &[Vec<f64>], model: &[Vec<f64>]) -> f64 {
    let n = truth.len().min(model.len());
    if n == 0 {
        return f64::NAN;
    }
    let ymax = truth.iter().map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt()).fold(0.0, f64::max);
    let total: f64 = truth.iter().zip(model).map(|(a, b)| dist(a, b)).sum();
    if ymax == 0.0 {
        return if total == 0.0 { 0.0 } else { f64::INFINITY };
    }
    total / (n as f64 * ymax)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionReport {
    pub nmte: f64,
    /// Test rows (anchored) that were compared.
    pub truth: Vec<Vec<f64>>,
    /// Predicted rows (anchored) at the same times.
    pub predicted: Vec<Vec<f64>>,
    pub reduced: Vec<Vec<f64>>,
    pub times: Vec<f64>,
    pub diverged: bool,
}

/// Projects the first embedded row of `test` onto the model, advances the
/// reduced dynamics, lifts, and scores against the embedded test rows.
pub fn predict(model: &SsmModel, test: &Trajectory, substeps: usize) -> Result<PredictionReport> {
    let data = embed(std::slice::from_ref(test), &model.embedding)?;
    predict_embedded(model, &data, substeps)
}

/// As [`predict`] for the first segment of already embedded data.
pub fn predict_embedded(model: &SsmModel, data: &EmbeddedData, substeps: usize) -> Result<PredictionReport> {
    let seg = data.segments[0];
    let stride = (model.step_time() / data.dt).round().max(1.0) as usize;
    if ((stride as f64) * data.dt - model.step_time()).abs() > 1e-9 * model.step_time() {
        return Err(Error::Validation("test sampling incompatible with the model step".into()));
    }
    let rows: Vec<usize> = (seg.start..seg.start + seg.len).step_by(stride).collect();
    let eta0 = model.reduce(&data.row(rows[0]));
    let (reduced, diverged) = model.advect(&eta0, rows.len() - 1, substeps)?;
    let n = reduced.len();
    let anchored = |v: Vec<f64>| -> Vec<f64> { v.iter().zip(&model.anchor).map(|(a, b)| a - b).collect() };
    let truth: Vec<Vec<f64>> = rows[..n].iter().map(|&i| anchored(data.row(i))).collect();
    let predicted: Vec<Vec<f64>> = reduced.iter().map(|e| anchored(model.lift(e))).collect();
    Ok(PredictionReport {
        nmte: nmte(&truth, &predicted),
        times: rows[..n].iter().map(|&i| data.times[i]).collect(),
        truth,
        predicted,
        reduced,
        diverged,
    })
}

/// Eigenvalues of the linear part: `R₁` for flows, `log(eig DF(0))/dt_map` for maps.
pub fn model_eigenvalues(model: &SsmModel) -> Result<Vec<Complex64>> {
    let d = model.d;
    let jac = match &model.dynamics {
        Dynamics::Poly(p) => DMatrix::from_fn(d, d, |i, j| p.r[(i, j)]),
        Dynamics::Rbf(m) => {
            let h = 1e-6;
            let mut jm = DMatrix::zeros(d, d);
            for j in 0..d {
                let mut a = vec![0.0; d];
                let mut b = vec![0.0; d];
                a[j] = h;
                b[j] = -h;
                let (fa, fb) = (rbf_eval(m, &a), rbf_eval(m, &b));
                for i in 0..d {
                    jm[(i, j)] = (fa[i] - fb[i]) / (2.0 * h);
                }
            }
            jm
        }
        Dynamics::None => return Err(Error::Validation("model has no reduced dynamics".into())),
    };
    let mut eig: Vec<Complex64> = jac.complex_eigenvalues().iter().copied().collect();
    if let Dynamics::Rbf(m) = &model.dynamics {
        eig = eig.into_iter().map(|z| z.ln() / m.dt_map).collect();
    }
    eig.sort_by(|a, b| b.re.total_cmp(&a.re).then(b.im.total_cmp(&a.im)));
    Ok(eig)
}

/// Training-time fit settings for a polynomial-dynamics model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrderChoice {
    pub manifold: usize,
    pub dynamics: usize,
}

/// Fits a geometry + polynomial field for each order pair and scores it on
/// the test trajectories; returns every pair with its mean NMTE, best first.
pub fn sweep_orders(
    train: &EmbeddedData,
    cfg: &EmbeddingConfig,
    anchor: &[f64],
    d: usize,
    choices: &[OrderChoice],
    tests: &[Trajectory],
) -> Result<Vec<(OrderChoice, f64)>> {
    let scored = par::map(choices, |c| -> Result<(OrderChoice, f64)> {
        let geom = fit_manifold(train, cfg, anchor, d, c.manifold)?;
        let model = fit_polyfield(train, &geom, c.dynamics, 0.0)?;
        let mut total = 0.0;
        for t in tests {
            let r = predict(&model, t, 1)?;
            total += if r.diverged { f64::INFINITY } else { r.nmte };
        }
        Ok((*c, total / tests.len().max(1) as f64))
    });
    let mut out = scored.into_iter().collect::<Result<Vec<_>>>()?;
    out.sort_by(|a, b| a.1.total_cmp(&b.1));
    Ok(out)
}
