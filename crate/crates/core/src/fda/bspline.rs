//! Clamped B-spline bases evaluated with the Cox-de Boor recursion.
//!
//! A basis of degree `p` with `k` interior knots on `[a, b]` has
//! `df = p + k + 1` functions. The boundary knots are repeated `p + 1` times,
//! so the basis is a partition of unity on the whole closed interval.
//! Degree-0 pieces are indicators of `(t_i, t_{i+1}]`; at the left boundary
//! the value is the right-hand limit.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::Domain;
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BSplineBasisRaw", into = "BSplineBasisRaw")]
pub struct BSplineBasis {
    lower: f64,
    upper: f64,
    interior: Vec<f64>,
    degree: usize,
    knots: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct BSplineBasisRaw {
    boundary_knots: [f64; 2],
    interior_knots: Vec<f64>,
    degree: usize,
}

impl TryFrom<BSplineBasisRaw> for BSplineBasis {
    type Error = Error;

    fn try_from(r: BSplineBasisRaw) -> Result<Self> {
        BSplineBasis::new(r.boundary_knots[0], r.boundary_knots[1], r.interior_knots, r.degree)
    }
}

impl From<BSplineBasis> for BSplineBasisRaw {
    fn from(b: BSplineBasis) -> Self {
        Self {
            boundary_knots: [b.lower, b.upper],
            interior_knots: b.interior,
            degree: b.degree,
        }
    }
}

impl BSplineBasis {
    pub fn new(lower: f64, upper: f64, interior: Vec<f64>, degree: usize) -> Result<Self> {
        if !(lower.is_finite() && upper.is_finite() && lower < upper) {
            return invalid(format!("invalid boundary knots [{lower}, {upper}]"));
        }
        if interior.iter().any(|&k| !(k > lower && k < upper)) {
            return invalid("interior knots must lie strictly inside the boundary");
        }
        if interior.windows(2).any(|w| w[1] <= w[0]) {
            return invalid("interior knots must be strictly increasing");
        }
        let mut knots = Vec::with_capacity(interior.len() + 2 * degree + 2);
        knots.extend(std::iter::repeat_n(lower, degree + 1));
        knots.extend_from_slice(&interior);
        knots.extend(std::iter::repeat_n(upper, degree + 1));
        Ok(Self {
            lower,
            upper,
            interior,
            degree,
            knots,
        })
    }

    /// `n_interior` equally spaced interior knots `t_j = a + j (b - a)/(k + 1)`.
    pub fn uniform(lower: f64, upper: f64, n_interior: usize, degree: usize) -> Result<Self> {
        let step = (upper - lower) / (n_interior + 1) as f64;
        let interior = (1..=n_interior).map(|j| lower + j as f64 * step).collect();
        Self::new(lower, upper, interior, degree)
    }

    /// Uniform-knot basis with a prescribed number of functions.
    pub fn with_df(domain: Domain, df: usize, degree: usize) -> Result<Self> {
        if df < degree + 1 {
            return invalid(format!(
                "a degree-{degree} B-spline basis needs df >= {}, got {df}",
                degree + 1
            ));
        }
        Self::uniform(domain.t0, domain.end(), df - degree - 1, degree)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn interior_knots(&self) -> &[f64] {
        &self.interior
    }

    pub fn boundary(&self) -> (f64, f64) {
        (self.lower, self.upper)
    }

    pub fn domain(&self) -> Domain {
        Domain {
            t0: self.lower,
            period: self.upper - self.lower,
        }
    }

    /// Full clamped knot vector, `df + degree + 1` entries.
    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn df(&self) -> usize {
        self.degree + self.interior.len() + 1
    }

    fn check(&self, x: f64) -> Result<()> {
        if x.is_finite() && x >= self.lower && x <= self.upper {
            Ok(())
        } else {
            Err(Error::Domain {
                value: x,
                lo: self.lower,
                hi: self.upper,
            })
        }
    }

    /// Knot span `s` with `knots[s] < x <= knots[s + 1]`, restricted to the
    /// non-degenerate spans; `x == lower` maps to the first span.
    fn span(&self, x: f64) -> usize {
        let p = self.degree;
        let last = p + self.interior.len();
        // first index in [p+1, last+1] whose knot is >= x
        let slice = &self.knots[p + 1..=last + 1];
        let pos = slice.partition_point(|&k| k < x);
        (p + pos).min(last)
    }

    /// Index of the first non-zero function and the `degree + 1` values of
    /// the functions supported on the span containing `x`.
    pub fn nonzero(&self, x: f64) -> Result<(usize, Vec<f64>)> {
        self.check(x)?;
        let p = self.degree;
        let s = self.span(x);
        let u = &self.knots;
        let mut n = vec![0.0; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        n[0] = 1.0;
        for j in 1..=p {
            left[j] = x - u[s + 1 - j];
            right[j] = u[s + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                let temp = if denom == 0.0 { 0.0 } else { n[r] / denom };
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        Ok((s - p, n))
    }

    /// `|t| x df` matrix whose row `j` holds every basis function at `t[j]`.
    pub fn eval(&self, t: &[f64]) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(t.len(), self.df());
        for (row, &x) in t.iter().enumerate() {
            let (first, vals) = self.nonzero(x)?;
            for (k, v) in vals.into_iter().enumerate() {
                out[(row, first + k)] = v;
            }
        }
        Ok(out)
    }

    /// Series `sum_i coef_i B_i` over this basis.
    pub fn series(&self, coef: Vec<f64>) -> Result<BSplineSeries> {
        BSplineSeries::new(coef, self.clone())
    }
}

/// Linear combination of the functions of a [`BSplineBasis`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BSplineSeriesRaw", into = "BSplineSeriesRaw")]
pub struct BSplineSeries {
    coef: Vec<f64>,
    basis: BSplineBasis,
}

#[derive(Serialize, Deserialize)]
struct BSplineSeriesRaw {
    t0: f64,
    period: f64,
    degree: usize,
    interior_knots: Vec<f64>,
    coef: Vec<f64>,
}

impl TryFrom<BSplineSeriesRaw> for BSplineSeries {
    type Error = Error;

    fn try_from(r: BSplineSeriesRaw) -> Result<Self> {
        let basis = BSplineBasis::new(r.t0, r.t0 + r.period, r.interior_knots, r.degree)?;
        BSplineSeries::new(r.coef, basis)
    }
}

impl From<BSplineSeries> for BSplineSeriesRaw {
    fn from(s: BSplineSeries) -> Self {
        Self {
            t0: s.basis.lower,
            period: s.basis.upper - s.basis.lower,
            degree: s.basis.degree,
            interior_knots: s.basis.interior,
            coef: s.coef,
        }
    }
}

impl BSplineSeries {
    pub fn new(coef: Vec<f64>, basis: BSplineBasis) -> Result<Self> {
        if coef.len() != basis.df() {
            return invalid(format!(
                "B-spline basis has df = {}, got {} coefficients",
                basis.df(),
                coef.len()
            ));
        }
        Ok(Self { coef, basis })
    }

    pub fn coef(&self) -> &[f64] {
        &self.coef
    }

    pub fn basis(&self) -> &BSplineBasis {
        &self.basis
    }

    pub fn value(&self, x: f64) -> Result<f64> {
        let (first, vals) = self.basis.nonzero(x)?;
        Ok(vals
            .iter()
            .enumerate()
            .map(|(k, v)| v * self.coef[first + k])
            .sum())
    }

    pub fn eval(&self, t: &[f64]) -> Result<Vec<f64>> {
        t.iter().map(|&x| self.value(x)).collect()
    }

    /// Same values as `eval`, computed as a dense matrix-vector product.
    pub fn eval_dense(&self, t: &[f64]) -> Result<Vec<f64>> {
        let b = self.basis.eval(t)?;
        Ok((b * DVector::from_column_slice(&self.coef)).iter().copied().collect())
    }
}
