//! Monomial bases `η^k = η₁^{k₁}⋯η_d^{k_d}` in graded lexicographic order.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultiIndexBasis {
    pub d: usize,
    pub lo: usize,
    pub hi: usize,
    pub exponents: Vec<Vec<u32>>,
}

/// `C(n, k)` in floating point-free integer arithmetic.
pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

fn push_degree(d: usize, deg: u32, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
    if prefix.len() + 1 == d {
        prefix.push(deg);
        out.push(prefix.clone());
        prefix.pop();
        return;
    }
    for first in (0..=deg).rev() {
        prefix.push(first);
        push_degree(d, deg - first, prefix, out);
        prefix.pop();
    }
}

impl MultiIndexBasis {
    /// All monomials of total degree `lo..=hi`; within a degree, higher
    /// powers of earlier coordinates come first.
    pub fn new(d: usize, lo: usize, hi: usize) -> Self {
        let mut exponents = Vec::new();
        if d > 0 {
            for deg in lo..=hi {
                push_degree(d, deg as u32, &mut Vec::with_capacity(d), &mut exponents);
            }
        }
        Self { d, lo, hi, exponents }
    }

    pub fn len(&self) -> usize {
        self.exponents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exponents.is_empty()
    }

    pub fn count_of_degree(&self, deg: usize) -> usize {
        self.exponents.iter().filter(|e| e.iter().sum::<u32>() as usize == deg).count()
    }

    /// Writes all monomials at `eta` into `out` (length `len()`).
    pub fn eval_into(&self, eta: &[f64], out: &mut [f64]) {
        eval_monomials(&self.exponents, self.hi, eta, out);
    }

    pub fn eval(&self, eta: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        self.eval_into(eta, &mut out);
        out
    }
}

/// Evaluates the monomials `exponents` (all of degree ≤ `hi`) at `eta`.
pub fn eval_monomials(exponents: &[Vec<u32>], hi: usize, eta: &[f64], out: &mut [f64]) {
    let d = eta.len();
    // powers[i * (hi + 1) + p] = eta_i^p
    let mut powers = vec![1.0; d * (hi + 1)];
    for i in 0..d {
        for p in 1..=hi {
            powers[i * (hi + 1) + p] = powers[i * (hi + 1) + p - 1] * eta[i];
        }
    }
    for (o, e) in out.iter_mut().zip(exponents) {
        *o = e.iter().enumerate().map(|(i, &p)| powers[i * (hi + 1) + p as usize]).product();
    }
}

type Poly = BTreeMap<Vec<u32>, f64>;

fn poly_mul(a: &Poly, b: &Poly) -> Poly {
    let mut out = Poly::new();
    for (ea, ca) in a {
        for (eb, cb) in b {
            let e: Vec<u32> = ea.iter().zip(eb).map(|(x, y)| x + y).collect();
            *out.entry(e).or_insert(0.0) += ca * cb;
        }
    }
    out
}

/// Matrix `C` with `φ(Q ξ) = C φ(ξ)` for the monomials `exponents`, which
/// must contain every monomial of each degree they use.
pub fn substitution_matrix(exponents: &[Vec<u32>], q: &DMatrix<f64>) -> DMatrix<f64> {
    let d = q.nrows();
    let index: BTreeMap<&Vec<u32>, usize> = exponents.iter().enumerate().map(|(i, e)| (e, i)).collect();
    let hi = exponents.iter().map(|e| e.iter().sum::<u32>()).max().unwrap_or(0) as usize;
    // powers[i][p] = (Σ_j Q_ij ξ_j)^p
    let powers: Vec<Vec<Poly>> = (0..d)
        .map(|i| {
            let lin: Poly = (0..d)
                .map(|j| {
                    let mut e = vec![0; d];
                    e[j] = 1;
                    (e, q[(i, j)])
                })
                .collect();
            let mut v = vec![Poly::from([(vec![0; d], 1.0)])];
            for p in 1..=hi {
                let next = poly_mul(&v[p - 1], &lin);
                v.push(next);
            }
            v
        })
        .collect();
    let mut c = DMatrix::zeros(exponents.len(), exponents.len());
    for (row, e) in exponents.iter().enumerate() {
        let mut acc = Poly::from([(vec![0; d], 1.0)]);
        for (i, &p) in e.iter().enumerate() {
            if p > 0 {
                acc = poly_mul(&acc, &powers[i][p as usize]);
            }
        }
        for (f, v) in acc {
            if let Some(&col) = index.get(&f) {
                c[(row, col)] += v;
            }
        }
    }
    c
}
