//! Delay-coordinate embedding of observed trajectories.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajectory::{fmt_e12, Trajectory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingConfig {
    /// Trajectory channels used as observables.
    pub observables: Vec<usize>,
    /// Total embedding dimension. With several observables the channels are
    /// interleaved per time sample and the stack is cut after `k` entries.
    pub k: usize,
    pub lag_steps: usize,
    /// Time dropped from the start of every trajectory before embedding.
    #[serde(default)]
    pub skip_time: f64,
}

impl EmbeddingConfig {
    pub fn scalar(channel: usize, k: usize, lag_steps: usize) -> Self {
        Self { observables: vec![channel], k, lag_steps, skip_time: 0.0 }
    }

    /// Number of time samples spanned by one row.
    pub fn samples_per_row(&self) -> usize {
        self.k.div_ceil(self.observables.len())
    }

    /// Rejects `k ≤ 2d` unless `allow_low_k`.
    pub fn check_takens(&self, d: usize, allow_low_k: bool) -> Result<()> {
        if self.k <= 2 * d && !allow_low_k {
            return Err(Error::Validation(format!(
                "embedding dimension {} does not exceed twice the manifold dimension {d}",
                self.k
            )));
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        if self.k == 0 || self.lag_steps == 0 || self.observables.is_empty() {
            return Err(Error::Validation("embedding needs k ≥ 1, lag ≥ 1 and an observable".into()));
        }
        Ok(())
    }

    /// Embedding-space image of a constant state (e.g. a fixed point).
    pub fn embed_point(&self, state: &[f64]) -> Vec<f64> {
        (0..self.k).map(|e| state[self.observables[e % self.observables.len()]]).collect()
    }

    /// Row starting at sample `i` of `traj` (no bounds check beyond panics).
    pub fn row_at(&self, traj: &Trajectory, i: usize) -> Vec<f64> {
        let c = self.observables.len();
        (0..self.k).map(|e| traj.row(i + (e / c) * self.lag_steps)[self.observables[e % c]]).collect()
    }

    /// Samples needed for one row.
    pub fn span(&self) -> usize {
        (self.samples_per_row() - 1) * self.lag_steps + 1
    }
}

/// Contiguous rows that came from one source trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub traj_id: usize,
    pub start: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedData {
    /// `N × k`, one embedded state per row.
    pub y: DMatrix<f64>,
    pub dy: Option<DMatrix<f64>>,
    /// Time of the first sample of each row.
    pub times: Vec<f64>,
    pub segments: Vec<Segment>,
    /// Spacing between consecutive rows.
    pub dt: f64,
}

impl EmbeddedData {
    pub fn nrows(&self) -> usize {
        self.y.nrows()
    }

    pub fn k(&self) -> usize {
        self.y.ncols()
    }

    /// Source trajectory of every row.
    pub fn traj_ids(&self) -> Vec<usize> {
        self.segments.iter().flat_map(|s| std::iter::repeat_n(s.traj_id, s.len)).collect()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.y.row(i).iter().copied().collect()
    }

    /// Subtracts `anchor` from every row.
    pub fn centered(&self, anchor: &[f64]) -> Self {
        let mut out = self.clone();
        for mut r in out.y.row_iter_mut() {
            r.iter_mut().zip(anchor).for_each(|(v, a)| *v -= a);
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("traj_id,t");
        for c in 0..self.k() {
            s.push_str(&format!(",y{}", c + 1));
        }
        s.push('\n');
        let ids = self.traj_ids();
        for (i, id) in ids.iter().enumerate() {
            s.push_str(&format!("{},{}", id, fmt_e12(self.times[i])));
            for v in self.y.row(i).iter() {
                s.push(',');
                s.push_str(&fmt_e12(*v));
            }
            s.push('\n');
        }
        s
    }
}

/// Stacks lagged samples of the observables into rows of `ℝ^k`, one block
/// of consecutive rows per trajectory. Trajectories too short for a single
/// row are skipped with a warning.
pub fn embed(trajs: &[Trajectory], cfg: &EmbeddingConfig) -> Result<EmbeddedData> {
    cfg.validate()?;
    let mut rows: Vec<f64> = Vec::new();
    let mut times = Vec::new();
    let mut segments = Vec::new();
    let mut dt = None;
    for (id, tr) in trajs.iter().enumerate() {
        if let Some(&c) = cfg.observables.iter().find(|&&c| c >= tr.dim()) {
            return Err(Error::Validation(format!("observable channel {c} missing in trajectory {id}")));
        }
        let tr = if cfg.skip_time > 0.0 {
            match tr.skip_time(cfg.skip_time) {
                Ok(t) => t,
                Err(_) => {
                    log::warn!("trajectory {id} shorter than the skipped transient");
                    continue;
                }
            }
        } else {
            tr.clone()
        };
        match dt {
            None => dt = Some(tr.dt),
            Some(d) if (d - tr.dt).abs() > 1e-12 * d => {
                return Err(Error::Validation(format!("trajectory {id} has step {} instead of {d}", tr.dt)))
            }
            _ => {}
        }
        if tr.len() < cfg.span() {
            log::warn!("trajectory {id} too short to embed ({} < {} samples)", tr.len(), cfg.span());
            continue;
        }
        let n = tr.len() - cfg.span() + 1;
        segments.push(Segment { traj_id: id, start: times.len(), len: n });
        for i in 0..n {
            rows.extend(cfg.row_at(&tr, i));
            times.push(tr.time(i));
        }
    }
    if segments.is_empty() {
        return Err(Error::Validation("no trajectory long enough to embed".into()));
    }
    Ok(EmbeddedData {
        y: DMatrix::from_row_slice(times.len(), cfg.k, &rows),
        dy: None,
        times,
        segments,
        dt: dt.unwrap_or(1.0),
    })
}

/// Fourth-order finite-difference time derivatives, per segment: central in
/// the interior and one-sided five-point stencils at the two edges.
pub fn estimate_derivatives(data: &EmbeddedData) -> Result<EmbeddedData> {
    let h = data.dt;
    let mut dy = DMatrix::zeros(data.nrows(), data.k());
    for seg in &data.segments {
        if seg.len < 5 {
            return Err(Error::Validation(format!("segment of trajectory {} has fewer than 5 rows", seg.traj_id)));
        }
        for c in 0..data.k() {
            let f = |i: usize| data.y[(seg.start + i, c)];
            let n = seg.len;
            for i in 0..n {
                let d = match i {
                    0 => -25.0 * f(0) + 48.0 * f(1) - 36.0 * f(2) + 16.0 * f(3) - 3.0 * f(4),
                    1 => -3.0 * f(0) - 10.0 * f(1) + 18.0 * f(2) - 6.0 * f(3) + f(4),
                    _ if i == n - 2 => 3.0 * f(n - 1) + 10.0 * f(n - 2) - 18.0 * f(n - 3) + 6.0 * f(n - 4) - f(n - 5),
                    _ if i == n - 1 => {
                        25.0 * f(n - 1) - 48.0 * f(n - 2) + 36.0 * f(n - 3) - 16.0 * f(n - 4) + 3.0 * f(n - 5)
                    }
                    _ => f(i - 2) - 8.0 * f(i - 1) + 8.0 * f(i + 1) - f(i + 2),
                };
                dy[(seg.start + i, c)] = d / (12.0 * h);
            }
        }
    }
    Ok(EmbeddedData { dy: Some(dy), ..data.clone() })
}

/// RMS distance of the rows to `span{v_0, …, v_m}`, `v_ℓ = (0^ℓ, 1^ℓ, …, (k−1)^ℓ)`.
pub fn flatten_order(data: &EmbeddedData, m: usize) -> Result<f64> {
    let k = data.k();
    if m >= k {
        return Err(Error::Validation(format!("order {m} must be below the embedding dimension {k}")));
    }
    let basis = DMatrix::from_fn(k, m + 1, |i, l| (i as f64).powi(l as i32));
    let q = basis.qr().q();
    let mut total = 0.0;
    for r in data.y.row_iter() {
        let y = r.transpose();
        let resid = &y - &q * (q.transpose() * &y);
        total += resid.norm_squared();
    }
    Ok((total / data.nrows() as f64).sqrt())
}
