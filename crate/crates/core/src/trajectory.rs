//! Uniformly sampled multivariate time series and its CSV format.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Samples of an `dim`-dimensional signal at `t0 + i * dt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub t0: f64,
    pub dt: f64,
    dim: usize,
    /// Row-major, `len * dim` values.
    data: Vec<f64>,
}

impl Trajectory {
    pub fn new(t0: f64, dt: f64, dim: usize, data: Vec<f64>) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::Validation(format!("sampling step must be positive, got {dt}")));
        }
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(Error::Validation(format!("{} values do not form rows of dimension {dim}", data.len())));
        }
        if data.len() / dim < 2 {
            return Err(Error::Validation("a trajectory needs at least two samples".into()));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("non-finite sample in row {}", i / dim)));
        }
        Ok(Self { t0, dt, dim, data })
    }

    pub fn from_rows(t0: f64, dt: f64, rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Validation("ragged rows".into()));
        }
        Self::new(t0, dt, dim, rows.concat())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }

    pub fn t_end(&self) -> f64 {
        self.time(self.len() - 1)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Column `c` as an owned series.
    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.rows().map(|r| r[c]).collect()
    }

    /// Largest absolute value over all samples.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Drops every sample with time strictly before `t0 + skip`.
    pub fn skip_time(&self, skip: f64) -> Result<Self> {
        let first = (skip / self.dt - 1e-9).ceil().max(0.0) as usize;
        self.slice(first, self.len())
    }

    /// Rows `start..end` as a new trajectory.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if end > self.len() || start + 2 > end {
            return Err(Error::Validation(format!("slice {start}..{end} invalid for {} samples", self.len())));
        }
        Self::new(self.time(start), self.dt, self.dim, self.data[start * self.dim..end * self.dim].to_vec())
    }

    /// Keeps only the listed channels.
    pub fn select(&self, channels: &[usize]) -> Result<Self> {
        if let Some(&c) = channels.iter().find(|&&c| c >= self.dim) {
            return Err(Error::Validation(format!("channel {c} out of range")));
        }
        let data = self.rows().flat_map(|r| channels.iter().map(move |&c| r[c])).collect();
        Self::new(self.t0, self.dt, channels.len(), data)
    }

    /// Subsamples at `phase + j * period`; `period` must be a multiple of `dt`.
    pub fn stroboscopic(&self, period: f64, phase: f64) -> Result<Self> {
        let stride = step_multiple(period, self.dt)
            .ok_or_else(|| Error::Config(format!("period {period} is not a multiple of dt {}", self.dt)))?;
        let offset = step_multiple(phase - self.t0, self.dt)
            .ok_or_else(|| Error::Config(format!("phase {phase} is not on the sample grid")))?;
        let rows: Vec<Vec<f64>> = (offset..self.len()).step_by(stride).map(|i| self.row(i).to_vec()).collect();
        Self::from_rows(self.time(offset), period, &rows)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let mut header = String::from("t");
        for c in 0..self.dim {
            write!(header, ",x{}", c + 1).unwrap();
        }
        writeln!(w, "{header}")?;
        let mut line = String::new();
        for (i, row) in self.rows().enumerate() {
            line.clear();
            line.push_str(&fmt_e12(self.time(i)));
            for v in row {
                line.push(',');
                line.push_str(&fmt_e12(*v));
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| Error::Parse("empty trajectory file".into()))??;
        let cols: Vec<&str> = header.trim().split(',').collect();
        if cols.first() != Some(&"t") || cols.len() < 2 {
            return Err(Error::Parse(format!("bad trajectory header `{header}`")));
        }
        let dim = cols.len() - 1;
        let mut times = Vec::new();
        let mut data = Vec::new();
        for (n, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let vals = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Parse(format!("row {}: {e}", n + 1)))?;
            if vals.len() != dim + 1 {
                return Err(Error::Parse(format!("row {} has {} columns", n + 1, vals.len())));
            }
            times.push(vals[0]);
            data.extend_from_slice(&vals[1..]);
        }
        if times.len() < 2 {
            return Err(Error::Parse("trajectory file needs at least two rows".into()));
        }
        let dt = (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64;
        Self::new(times[0], dt, dim, data)
    }
}

/// `n` such that `x ≈ n * step`, if `x` is a nonnegative multiple of `step`.
pub(crate) fn step_multiple(x: f64, step: f64) -> Option<usize> {
    let n = (x / step).round();
    if n < 0.0 || (x - n * step).abs() > 1e-9 * step.max(x.abs()) {
        return None;
    }
    Some(n as usize)
}

/// Formats like C's `%.12e`: twelve mantissa digits and a signed two-digit exponent.
pub fn fmt_e12(v: f64) -> String {
    let s = format!("{v:.12e}");
    match s.split_once('e') {
        Some((mant, exp)) => {
            let (sign, digits) = match exp.strip_prefix('-') {
                Some(d) => ('-', d),
                None => ('+', exp),
            };
            if digits.len() < 2 {
                format!("{mant}e{sign}0{digits}")
            } else {
                format!("{mant}e{sign}{digits}")
            }
        }
        None => s, // inf / NaN
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn c_style_exponent() {
        assert_eq!(fmt_e12(1.0), "1.000000000000e+00");
        assert_eq!(fmt_e12(-0.00123), "-1.230000000000e-03");
        assert_eq!(fmt_e12(6.02e123), "6.020000000000e+123");
    }

    #[test]
    fn rejects_short_or_nonfinite() {
        assert!(Trajectory::new(0.0, 0.1, 1, vec![1.0]).is_err());
        assert!(Trajectory::new(0.0, 0.1, 1, vec![1.0, f64::NAN]).is_err());
        assert!(Trajectory::new(0.0, 0.0, 1, vec![1.0, 2.0]).is_err());
    }

    #[test]
    fn stroboscopic_index_arithmetic() {
        let tr = Trajectory::new(0.0, 0.1, 1, (0..10).map(f64::from).collect()).unwrap();
        let same = tr.stroboscopic(0.1, 0.0).unwrap();
        assert_eq!(same.data(), tr.data());
        let half = tr.stroboscopic(0.2, 0.0).unwrap();
        assert_eq!(half.data(), &[0.0, 2.0, 4.0, 6.0, 8.0]);
        assert!((half.dt - 0.2).abs() < 1e-15);
        assert!(matches!(tr.stroboscopic(0.15, 0.0), Err(Error::Config(_))));
    }

    proptest! {
        #[test]
        fn csv_round_trip(vals in prop::collection::vec(-1e6f64..1e6, 4..40), dt in 1e-4f64..1.0) {
            let n = vals.len() / 2 * 2;
            let tr = Trajectory::new(0.5, dt, 2, vals[..n].to_vec()).unwrap();
            let mut a = Vec::new();
            tr.write_csv(&mut a).unwrap();
            let back = Trajectory::read_csv(a.as_slice()).unwrap();
            prop_assert_eq!(back.len(), tr.len());
            // times carry 13 significant digits, so dt inherits their absolute rounding
            let t_end = tr.t_end();
            prop_assert!((back.dt - dt).abs() <= 1e-12 * t_end / (tr.len() - 1) as f64);
            for (x, y) in back.data().iter().zip(tr.data()) {
                prop_assert!((x - y).abs() <= 1e-12 * y.abs());
                prop_assert_eq!(fmt_e12(*x), fmt_e12(*y));
            }
        }
    }
}
