use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// A closed interval `[t0, t0 + period]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub t0: f64,
    pub period: f64,
}

impl Domain {
    pub fn new(t0: f64, period: f64) -> Result<Self> {
        if !t0.is_finite() || !period.is_finite() || period <= 0.0 {
            return invalid(format!("domain needs finite t0 and period > 0, got ({t0}, {period})"));
        }
        Ok(Self { t0, period })
    }

    pub fn end(&self) -> f64 {
        self.t0 + self.period
    }

    fn slack(&self) -> f64 {
        1e-12 * (self.t0.abs() + self.period)
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.t0 - self.slack() && t <= self.end() + self.slack()
    }

    pub fn check(&self, t: f64) -> Result<()> {
        if self.contains(t) {
            Ok(())
        } else {
            Err(Error::Domain {
                value: t,
                lo: self.t0,
                hi: self.end(),
            })
        }
    }

    /// Equality up to a relative rounding slack.
    pub fn matches(&self, other: &Domain) -> bool {
        (self.t0 - other.t0).abs() <= self.slack() && (self.period - other.period).abs() <= self.slack()
    }

    /// `n` equally spaced points from `t0` to `t0 + period` inclusive.
    pub fn uniform_grid(&self, n: usize) -> Vec<f64> {
        match n {
            0 => Vec::new(),
            1 => vec![self.t0],
            _ => (0..n)
                .map(|j| {
                    if j == n - 1 {
                        self.end()
                    } else {
                        self.t0 + self.period * j as f64 / (n - 1) as f64
                    }
                })
                .collect(),
        }
    }
}

/// `n` curves observed on a common grid of `m` time points, one curve per row.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalSample {
    x: DMatrix<f64>,
    domain: Domain,
    t_points: Vec<f64>,
}

pub(crate) fn validate_grid(t_points: &[f64], domain: &Domain) -> Result<()> {
    if t_points.is_empty() {
        return invalid("time grid is empty");
    }
    if t_points.iter().any(|t| !t.is_finite()) {
        return invalid("time grid contains non-finite values");
    }
    if t_points.windows(2).any(|w| w[1] <= w[0]) {
        return invalid("time grid must be strictly increasing");
    }
    domain.check(t_points[0])?;
    domain.check(t_points[t_points.len() - 1])?;
    Ok(())
}

impl FunctionalSample {
    pub fn new(x: DMatrix<f64>, domain: Domain, t_points: Vec<f64>) -> Result<Self> {
        validate_grid(&t_points, &domain)?;
        if x.ncols() != t_points.len() {
            return Err(Error::Shape(format!(
                "{} columns but {} time points",
                x.ncols(),
                t_points.len()
            )));
        }
        if x.iter().any(|v| v.is_nan()) {
            return invalid("functional sample contains NaN");
        }
        Ok(Self { x, domain, t_points })
    }

    /// Sample on an equally spaced grid covering the whole domain.
    pub fn on_uniform_grid(x: DMatrix<f64>, domain: Domain) -> Result<Self> {
        let t = domain.uniform_grid(x.ncols());
        Self::new(x, domain, t)
    }

    /// Number of subjects and of measurement points.
    pub fn dim(&self) -> (usize, usize) {
        self.x.shape()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn t_points(&self) -> &[f64] {
        &self.t_points
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.x
    }

    /// Same grid and domain, different values.
    pub fn with_values(&self, x: DMatrix<f64>) -> Result<Self> {
        Self::new(x, self.domain, self.t_points.clone())
    }

    /// Subset of subjects in the given order (repetitions allowed).
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let x = self.x.select_rows(rows.iter());
        Self {
            x,
            domain: self.domain,
            t_points: self.t_points.clone(),
        }
    }

    pub fn same_grid(&self, other: &FunctionalSample) -> bool {
        self.domain.matches(&other.domain) && self.t_points == other.t_points
    }
}
