//! Estimators of the measurement-error covariance on the sampling grid.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::ReplicatedSurrogate;
use crate::error::{invalid, Error, Result};
use crate::expansion::{expand, fit_fpc, BasisSystem};
use crate::fda::FunctionalSample;
use crate::linalg::{self, column_covariance, sorted_symmetric_eigen, symmetrize};

/// Symmetric positive semi-definite covariance on the grid, stored together
/// with its (clipped) eigen-decomposition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorCov {
    #[serde(with = "linalg::rows")]
    pub matrix: DMatrix<f64>,
    /// Eigenvalues in decreasing order, all non-negative.
    pub eigenvalues: Vec<f64>,
    #[serde(with = "linalg::rows")]
    pub eigenvectors: DMatrix<f64>,
    /// Smallest eigenvalue before clipping.
    pub min_raw_eigenvalue: f64,
}

impl ErrorCov {
    /// Symmetrizes `raw` and clips negative eigenvalues to zero.
    pub fn project(raw: &DMatrix<f64>) -> Result<Self> {
        if raw.nrows() != raw.ncols() {
            return Err(Error::Shape(format!("covariance must be square, got {}x{}", raw.nrows(), raw.ncols())));
        }
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("covariance contains non-finite entries".into()));
        }
        let (values, vectors) = sorted_symmetric_eigen(&symmetrize(raw));
        let min_raw = values.iter().copied().fold(f64::INFINITY, f64::min);
        let clipped: Vec<f64> = values.iter().map(|&v| v.max(0.0)).collect();
        let mut scaled = vectors.clone();
        for (k, &l) in clipped.iter().enumerate() {
            scaled.column_mut(k).scale_mut(l);
        }
        let matrix = symmetrize(&(scaled * vectors.transpose()));
        Ok(Self {
            matrix,
            eigenvalues: clipped,
            eigenvectors: vectors,
            min_raw_eigenvalue: if min_raw.is_finite() { min_raw } else { 0.0 },
        })
    }

    pub fn zeros(m: usize) -> Self {
        Self {
            matrix: DMatrix::zeros(m, m),
            eigenvalues: vec![0.0; m],
            eigenvectors: DMatrix::identity(m, m),
            min_raw_eigenvalue: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn is_zero(&self) -> bool {
        self.eigenvalues.iter().all(|&v| v == 0.0)
    }

    /// `L` with `L L' = matrix`, built from the clipped eigenpairs.
    pub fn factor(&self) -> DMatrix<f64> {
        let mut l = self.eigenvectors.clone();
        for (k, &v) in self.eigenvalues.iter().enumerate() {
            l.column_mut(k).scale_mut(v.sqrt());
        }
        l
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        if !(c >= 0.0 && c.is_finite()) {
            return invalid(format!("covariance scale must be non-negative, got {c}"));
        }
        Ok(Self {
            matrix: &self.matrix * c,
            eigenvalues: self.eigenvalues.iter().map(|v| v * c).collect(),
            eigenvectors: self.eigenvectors.clone(),
            min_raw_eigenvalue: self.min_raw_eigenvalue * c,
        })
    }
}

/// Unbiased replicate estimator
/// `sum_i sum_{j<j'} d d' / (n J (J - 1))` with `d = W_ij - W_ij'`.
pub fn estimate_sigma_u_replicates(w: &ReplicatedSurrogate) -> Result<ErrorCov> {
    w.require_replicates("replicate error covariance")?;
    let (n, m, j) = (w.n(), w.m(), w.j());
    let mut acc = DMatrix::<f64>::zeros(m, m);
    for a in 0..j {
        for b in (a + 1)..j {
            let d = w.replicate(a).x() - w.replicate(b).x();
            acc += d.transpose() * d;
        }
    }
    ErrorCov::project(&(acc / (n * j * (j - 1)) as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IvCovOptions {
    /// Instrument FPCs are kept until this share of its variance is reached.
    pub variance_fraction: f64,
}

impl Default for IvCovOptions {
    fn default() -> Self {
        Self {
            variance_fraction: 1.0 - 1e-10,
        }
    }
}

/// Error covariance from an instrument: the residual covariance of `W`
/// after regressing each grid column on `[1, FPC scores of M]`.
pub fn estimate_error_cov_iv(w: &FunctionalSample, m: &FunctionalSample, opts: IvCovOptions) -> Result<ErrorCov> {
    if w.dim() != m.dim() || !w.same_grid(m) {
        return Err(Error::Shape("instrument must match W in shape and grid".into()));
    }
    if !(opts.variance_fraction > 0.0 && opts.variance_fraction <= 1.0) {
        return invalid(format!("variance fraction must lie in (0, 1], got {}", opts.variance_fraction));
    }
    let (n, grid) = w.dim();
    if n < 3 {
        return invalid("instrument regression needs at least three subjects");
    }
    let w_var: f64 = column_covariance(w.x()).trace();
    let m_var: f64 = column_covariance(m.x()).trace();
    let scale = (w_var.max(m_var)).max(f64::MIN_POSITIVE);
    if m_var <= 1e-12 * scale {
        return Err(Error::WeakInstrument(format!(
            "instrument variance {m_var:.3e} is negligible relative to {scale:.3e}"
        )));
    }
    let pmax = (n - 2).min(grid);
    let fpc = fit_fpc(m, pmax).map_err(|e| match e {
        Error::Numeric(msg) => Error::WeakInstrument(msg),
        other => other,
    })?;
    let lead = fpc.eigenvalues[0];
    let significant = fpc.eigenvalues.iter().take_while(|&&v| v > 1e-10 * lead).count();
    let q = fpc.n_for_variance(opts.variance_fraction).min(significant).max(1);
    let basis = BasisSystem::Fpc(fpc.truncate(q)?);
    let scores = expand(m, &basis)?.coef;
    let mut x = DMatrix::from_element(n, q + 1, 1.0);
    x.columns_mut(1, q).copy_from(&scores);
    let qr = x.qr();
    let r = qr.r();
    let rdiag_min = r.diagonal().iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min);
    if rdiag_min <= 1e-12 * r.diagonal().amax() {
        return Err(Error::WeakInstrument("instrument scores are collinear".into()));
    }
    let q_thin = qr.q();
    let resid = w.x() - &q_thin * (q_thin.transpose() * w.x());
    let dof = (n - q - 1) as f64;
    ErrorCov::project(&(resid.transpose() * resid / dof))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fda::Domain;

    fn sample(x: DMatrix<f64>) -> FunctionalSample {
        FunctionalSample::on_uniform_grid(x, Domain::new(0.0, 1.0).unwrap()).unwrap()
    }

    #[test]
    fn projection_clips_negative_eigenvalues() {
        let raw = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let c = ErrorCov::project(&raw).unwrap();
        assert!((c.min_raw_eigenvalue + 1.0).abs() < 1e-12);
        assert!(c.eigenvalues.iter().all(|&v| v >= 0.0));
        assert_eq!(c.matrix, c.matrix.transpose());
        assert!((c.matrix[(0, 0)] - 1.5).abs() < 1e-12 && (c.matrix[(0, 1)] - 1.5).abs() < 1e-12);
        let l = c.factor();
        assert!((l.clone() * l.transpose() - &c.matrix).amax() < 1e-12);
    }

    #[test]
    fn identical_replicates_give_zero() {
        let s = sample(DMatrix::from_fn(5, 4, |i, j| (i * j) as f64));
        let w = ReplicatedSurrogate::new(vec![s.clone(), s]).unwrap();
        let c = estimate_sigma_u_replicates(&w).unwrap();
        assert_eq!(c.matrix, DMatrix::zeros(4, 4));
    }

    #[test]
    fn single_replicate_rejected() {
        let s = sample(DMatrix::zeros(5, 4));
        let w = ReplicatedSurrogate::new(vec![s]).unwrap();
        assert!(estimate_sigma_u_replicates(&w).is_err());
    }

    #[test]
    fn replicate_formula_two_subjects() {
        // one grid point: differences 2 and -1, J = 2, n = 2 -> (4 + 1) / 4
        let a = sample(DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 1.0, 0.0]));
        let b = sample(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 2.0, 0.0]));
        let c = estimate_sigma_u_replicates(&ReplicatedSurrogate::new(vec![a, b]).unwrap()).unwrap();
        assert!((c.matrix[(0, 0)] - 1.25).abs() < 1e-14);
    }

    #[test]
    fn constant_instrument_is_weak() {
        let w = sample(DMatrix::from_fn(10, 5, |i, j| (i + j) as f64));
        let m = sample(DMatrix::from_element(10, 5, 2.0));
        assert!(matches!(
            estimate_error_cov_iv(&w, &m, IvCovOptions::default()),
            Err(Error::WeakInstrument(_))
        ));
    }
}
