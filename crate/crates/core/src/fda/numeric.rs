//! Basis functions known only through their values on a grid.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::sample::validate_grid;
use super::Domain;
use crate::error::{invalid, Error, Result};
use crate::linalg;

/// Relative singular-value threshold for the rank check on construction.
const RANK_TOL: f64 = 1e-10;

/// `m x p` matrix `zeta[j, k] = rho_k(t_j)` plus the grid it lives on.
///
/// Between grid points the functions are linearly interpolated. Inside the
/// domain but outside the first/last grid point they are held constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NumericBasisRaw", into = "NumericBasisRaw")]
pub struct NumericBasis {
    zeta: DMatrix<f64>,
    t_points: Vec<f64>,
    domain: Domain,
}

#[derive(Serialize, Deserialize)]
struct NumericBasisRaw {
    t0: f64,
    period: f64,
    t_points: Vec<f64>,
    #[serde(with = "linalg::rows")]
    basis_function: DMatrix<f64>,
}

impl TryFrom<NumericBasisRaw> for NumericBasis {
    type Error = Error;

    fn try_from(r: NumericBasisRaw) -> Result<Self> {
        NumericBasis::new(r.basis_function, r.t_points, Domain::new(r.t0, r.period)?)
    }
}

impl From<NumericBasis> for NumericBasisRaw {
    fn from(b: NumericBasis) -> Self {
        Self {
            t0: b.domain.t0,
            period: b.domain.period,
            t_points: b.t_points,
            basis_function: b.zeta,
        }
    }
}

impl NumericBasis {
    pub fn new(zeta: DMatrix<f64>, t_points: Vec<f64>, domain: Domain) -> Result<Self> {
        validate_grid(&t_points, &domain)?;
        if zeta.nrows() != t_points.len() {
            return Err(Error::Shape(format!(
                "basis matrix has {} rows for {} grid points",
                zeta.nrows(),
                t_points.len()
            )));
        }
        if zeta.ncols() == 0 {
            return invalid("numeric basis needs at least one function");
        }
        if zeta.iter().any(|v| !v.is_finite()) {
            return invalid("numeric basis contains non-finite values");
        }
        let sv = zeta.clone().singular_values();
        let max = sv.max();
        let min = sv.min();
        if zeta.ncols() > zeta.nrows() || max == 0.0 || min <= RANK_TOL * max {
            return invalid("numeric basis functions are linearly dependent on the grid");
        }
        Ok(Self {
            zeta,
            t_points,
            domain,
        })
    }

    pub fn len(&self) -> usize {
        self.zeta.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.zeta.ncols() == 0
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.zeta
    }

    pub fn t_points(&self) -> &[f64] {
        &self.t_points
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    /// Interpolation stencil: indices `(lo, hi)` and weight on `hi`.
    fn stencil(&self, t: f64) -> Result<(usize, usize, f64)> {
        if !t.is_finite() {
            return invalid("non-finite evaluation point");
        }
        self.domain.check(t)?;
        let g = &self.t_points;
        let m = g.len();
        if t <= g[0] {
            return Ok((0, 0, 0.0));
        }
        if t >= g[m - 1] {
            return Ok((m - 1, m - 1, 0.0));
        }
        let hi = g.partition_point(|&x| x < t);
        if g[hi] == t {
            return Ok((hi, hi, 0.0));
        }
        let lo = hi - 1;
        Ok((lo, hi, (t - g[lo]) / (g[hi] - g[lo])))
    }

    /// `|t| x p` matrix of interpolated basis values.
    pub fn eval(&self, t: &[f64]) -> Result<DMatrix<f64>> {
        let p = self.len();
        let mut out = DMatrix::zeros(t.len(), p);
        for (row, &x) in t.iter().enumerate() {
            let (lo, hi, w) = self.stencil(x)?;
            for k in 0..p {
                out[(row, k)] = (1.0 - w) * self.zeta[(lo, k)] + w * self.zeta[(hi, k)];
            }
        }
        Ok(out)
    }

    pub fn series(&self, coef: Vec<f64>) -> Result<NumericBasisSeries> {
        NumericBasisSeries::new(coef, self.clone())
    }
}

/// Linear combination of the functions of a [`NumericBasis`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NumericSeriesRaw", into = "NumericSeriesRaw")]
pub struct NumericBasisSeries {
    coef: Vec<f64>,
    basis: NumericBasis,
}

#[derive(Serialize, Deserialize)]
struct NumericSeriesRaw {
    t0: f64,
    period: f64,
    t_points: Vec<f64>,
    #[serde(with = "linalg::rows")]
    basis_function: DMatrix<f64>,
    coef: Vec<f64>,
}

impl TryFrom<NumericSeriesRaw> for NumericBasisSeries {
    type Error = Error;

    fn try_from(r: NumericSeriesRaw) -> Result<Self> {
        let basis = NumericBasis::new(r.basis_function, r.t_points, Domain::new(r.t0, r.period)?)?;
        NumericBasisSeries::new(r.coef, basis)
    }
}

impl From<NumericBasisSeries> for NumericSeriesRaw {
    fn from(s: NumericBasisSeries) -> Self {
        Self {
            t0: s.basis.domain.t0,
            period: s.basis.domain.period,
            t_points: s.basis.t_points,
            basis_function: s.basis.zeta,
            coef: s.coef,
        }
    }
}

impl NumericBasisSeries {
    pub fn new(coef: Vec<f64>, basis: NumericBasis) -> Result<Self> {
        if coef.len() != basis.len() {
            return invalid(format!(
                "numeric basis has {} functions, got {} coefficients",
                basis.len(),
                coef.len()
            ));
        }
        Ok(Self { coef, basis })
    }

    pub fn coef(&self) -> &[f64] {
        &self.coef
    }

    pub fn basis(&self) -> &NumericBasis {
        &self.basis
    }

    /// Series values on the basis grid, `zeta * coef`.
    pub fn grid_values(&self) -> DVector<f64> {
        &self.basis.zeta * DVector::from_column_slice(&self.coef)
    }

    pub fn value(&self, t: f64) -> Result<f64> {
        let (lo, hi, w) = self.basis.stencil(t)?;
        let z = &self.basis.zeta;
        Ok(self
            .coef
            .iter()
            .enumerate()
            .map(|(k, c)| c * ((1.0 - w) * z[(lo, k)] + w * z[(hi, k)]))
            .sum())
    }

    pub fn eval(&self, t: &[f64]) -> Result<Vec<f64>> {
        t.iter().map(|&x| self.value(x)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn basis() -> NumericBasis {
        let zeta = DMatrix::from_row_slice(4, 2, &[
            1.0, 0.0, //
            2.0, 1.0, //
            3.0, 4.0, //
            4.0, 9.0,
        ]);
        NumericBasis::new(zeta, vec![0.0, 1.0, 2.0, 3.0], Domain::new(0.0, 3.0).unwrap()).unwrap()
    }

    #[test]
    fn exact_at_grid() {
        let s = basis().series(vec![0.5, -2.0]).unwrap();
        for (j, t) in [0.0, 1.0, 2.0, 3.0].iter().enumerate() {
            let z = basis().values().row(j).into_owned();
            assert_eq!(s.value(*t).unwrap(), 0.5 * z[0] - 2.0 * z[1]);
        }
    }

    #[test]
    fn unit_coefficients_pick_columns() {
        let s = basis().series(vec![0.0, 1.0]).unwrap();
        assert_eq!(s.value(2.0).unwrap(), 4.0);
    }

    #[test]
    fn midpoint_is_average() {
        let s = basis().series(vec![1.0, 0.0]).unwrap();
        assert_eq!(s.value(1.5).unwrap(), 2.5);
        let s = basis().series(vec![0.0, 1.0]).unwrap();
        assert_eq!(s.value(2.5).unwrap(), 6.5);
    }

    #[test]
    fn outside_domain() {
        let s = basis().series(vec![1.0, 0.0]).unwrap();
        assert!(matches!(s.value(3.5), Err(Error::Domain { .. })));
    }

    #[test]
    fn rejects_dependent_columns() {
        let zeta = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        assert!(NumericBasis::new(zeta, vec![0.0, 0.5, 1.0], Domain::new(0.0, 1.0).unwrap()).is_err());
    }
}
