//! Basis expansion of functional samples into scalar covariates
//! `b_ik = integral of X_i(t) rho_k(t) dt`, and the data-driven FPC basis.
//!
//! Integrals use the composite trapezoid rule on the sample grid.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fda::{
    BSplineBasis, BasisSeries, Domain, FourierBasis, FunctionalSample, NumericBasis,
};
use crate::linalg::{self, column_covariance, column_means, sorted_symmetric_eigen, trapezoid_weights};

/// Quadrature rule used for the projections.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quadrature {
    Trapezoid,
}

/// Functional principal component basis estimated from a sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FpcBasis {
    pub mean_curve: Vec<f64>,
    pub eigenfunctions: NumericBasis,
    pub eigenvalues: Vec<f64>,
}

impl FpcBasis {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// Smallest number of leading components whose eigenvalues reach `fraction`
    /// of the total.
    pub fn n_for_variance(&self, fraction: f64) -> usize {
        let total: f64 = self.eigenvalues.iter().sum();
        if total <= 0.0 {
            return 1;
        }
        let mut acc = 0.0;
        for (k, l) in self.eigenvalues.iter().enumerate() {
            acc += l;
            if acc >= fraction * total * (1.0 - 1e-12) {
                return k + 1;
            }
        }
        self.eigenvalues.len()
    }

    /// Leading `p` components only.
    pub fn truncate(&self, p: usize) -> Result<FpcBasis> {
        if p == 0 || p > self.len() {
            return invalid(format!("cannot keep {p} of {} components", self.len()));
        }
        let ef = &self.eigenfunctions;
        let zeta = ef.values().columns(0, p).into_owned();
        Ok(FpcBasis {
            mean_curve: self.mean_curve.clone(),
            eigenfunctions: NumericBasis::new(zeta, ef.t_points().to_vec(), ef.domain())?,
            eigenvalues: self.eigenvalues[..p].to_vec(),
        })
    }
}

/// A concrete basis over which samples are expanded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum BasisSystem {
    Fourier(FourierBasis),
    Bspline(BSplineBasis),
    Numeric(NumericBasis),
    Fpc(FpcBasis),
}

impl BasisSystem {
    pub fn len(&self) -> usize {
        match self {
            BasisSystem::Fourier(b) => b.len(),
            BasisSystem::Bspline(b) => b.df(),
            BasisSystem::Numeric(b) => b.len(),
            BasisSystem::Fpc(b) => b.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn domain(&self) -> Domain {
        match self {
            BasisSystem::Fourier(b) => b.domain,
            BasisSystem::Bspline(b) => b.domain(),
            BasisSystem::Numeric(b) => b.domain(),
            BasisSystem::Fpc(b) => b.eigenfunctions.domain(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            BasisSystem::Fourier(_) => "fourier",
            BasisSystem::Bspline(_) => "bspline",
            BasisSystem::Numeric(_) => "numeric",
            BasisSystem::Fpc(_) => "fpc",
        }
    }

    /// `|t| x p` matrix of basis values.
    pub fn eval(&self, t: &[f64]) -> Result<DMatrix<f64>> {
        match self {
            BasisSystem::Fourier(b) => b.eval(t),
            BasisSystem::Bspline(b) => b.eval(t),
            BasisSystem::Numeric(b) => b.eval(t),
            BasisSystem::Fpc(b) => b.eigenfunctions.eval(t),
        }
    }

    /// Series `sum_k coef_k rho_k` in the matching container type.
    pub fn series(&self, coef: &[f64]) -> Result<BasisSeries> {
        Ok(match self {
            BasisSystem::Fourier(b) => b.series(coef)?.into(),
            BasisSystem::Bspline(b) => b.series(coef.to_vec())?.into(),
            BasisSystem::Numeric(b) => b.series(coef.to_vec())?.into(),
            BasisSystem::Fpc(b) => b.eigenfunctions.series(coef.to_vec())?.into(),
        })
    }

    /// Curve subtracted before projecting, present only for FPC bases.
    fn centering(&self) -> Option<&[f64]> {
        match self {
            BasisSystem::Fpc(b) => Some(&b.mean_curve),
            _ => None,
        }
    }

    fn grid_matrix(&self, sample: &FunctionalSample) -> Result<DMatrix<f64>> {
        if !self.domain().matches(&sample.domain()) {
            let (a, b) = (self.domain(), sample.domain());
            return Err(Error::Shape(format!(
                "basis domain [{}, {}] differs from sample domain [{}, {}]",
                a.t0,
                a.end(),
                b.t0,
                b.end()
            )));
        }
        let grid_bound = match self {
            BasisSystem::Numeric(b) => Some(b.t_points()),
            BasisSystem::Fpc(b) => Some(b.eigenfunctions.t_points()),
            _ => None,
        };
        if let Some(t) = grid_bound {
            if t != sample.t_points() {
                return Err(Error::Shape("numeric basis grid differs from sample grid".into()));
            }
            return Ok(match self {
                BasisSystem::Numeric(b) => b.values().clone(),
                BasisSystem::Fpc(b) => b.eigenfunctions.values().clone(),
                _ => unreachable!(),
            });
        }
        self.eval(sample.t_points())
    }
}

/// Basis family requested by name, resolved against data by [`BasisSpec::resolve`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BasisKind {
    Fourier,
    Bspline,
    Fpc,
}

impl std::str::FromStr for BasisKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fourier" => Ok(BasisKind::Fourier),
            "bspline" => Ok(BasisKind::Bspline),
            "fpc" => Ok(BasisKind::Fpc),
            other => Err(Error::Config(format!("unknown basis type '{other}'"))),
        }
    }
}

/// Basis request: for Fourier `order` is the number of frequencies `p_f`
/// (giving `2 p_f + 1` functions), for B-splines it is `df`, for FPC the
/// number of components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub kind: BasisKind,
    pub order: usize,
    #[serde(default = "default_degree")]
    pub degree: usize,
}

fn default_degree() -> usize {
    3
}

impl BasisSpec {
    pub fn fourier(order: usize) -> Self {
        Self {
            kind: BasisKind::Fourier,
            order,
            degree: 3,
        }
    }

    pub fn bspline(df: usize, degree: usize) -> Self {
        Self {
            kind: BasisKind::Bspline,
            order: df,
            degree,
        }
    }

    pub fn fpc(components: usize) -> Self {
        Self {
            kind: BasisKind::Fpc,
            order: components,
            degree: 3,
        }
    }

    pub fn resolve(&self, sample: &FunctionalSample) -> Result<BasisSystem> {
        let domain = sample.domain();
        Ok(match self.kind {
            BasisKind::Fourier => BasisSystem::Fourier(FourierBasis::new(self.order, domain)),
            BasisKind::Bspline => {
                BasisSystem::Bspline(BSplineBasis::with_df(domain, self.order, self.degree)?)
            }
            BasisKind::Fpc => BasisSystem::Fpc(fit_fpc(sample, self.order)?),
        })
    }
}

/// Projections of a sample onto a basis.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpansionResult {
    #[serde(with = "linalg::rows")]
    pub coef: DMatrix<f64>,
    pub basis: BasisSystem,
    pub quadrature: Quadrature,
    #[serde(skip)]
    grid_basis: DMatrix<f64>,
    #[serde(skip)]
    weights: Vec<f64>,
}

impl ExpansionResult {
    /// Gram matrix `G_kl = integral rho_k rho_l` under the same quadrature.
    pub fn gram(&self) -> DMatrix<f64> {
        let w = DMatrix::from_diagonal(&DVector::from_column_slice(&self.weights));
        self.grid_basis.transpose() * w * &self.grid_basis
    }

    /// Coefficients `c_ik` such that `X_i ~ sum_k c_ik rho_k` (least squares
    /// in the quadrature inner product), i.e. `C G^{-1}`.
    pub fn representation(&self) -> Result<DMatrix<f64>> {
        let g = self.gram();
        let chol = g.clone().cholesky().ok_or_else(|| Error::Singular {
            what: "basis Gram matrix".into(),
            condition: linalg::condition_number(&g),
        })?;
        Ok(chol.solve(&self.coef.transpose()).transpose())
    }

    /// Curves rebuilt on the grid from [`Self::representation`].
    pub fn reconstruct(&self) -> Result<DMatrix<f64>> {
        let mut x = self.representation()? * self.grid_basis.transpose();
        if let Some(mu) = self.basis.centering() {
            for mut row in x.row_iter_mut() {
                for (v, m) in row.iter_mut().zip(mu) {
                    *v += m;
                }
            }
        }
        Ok(x)
    }
}

/// Trapezoid-rule projections `b_ik` of every curve onto every basis function.
///
/// FPC bases project the centred curves `X_i - mu`.
pub fn expand(sample: &FunctionalSample, basis: &BasisSystem) -> Result<ExpansionResult> {
    let (_, m) = sample.dim();
    let p = basis.len();
    if p > m {
        return invalid(format!(
            "{p} basis functions exceed {m} grid points; quadrature is underdetermined"
        ));
    }
    let phi = basis.grid_matrix(sample)?;
    let w = trapezoid_weights(sample.t_points());
    let mut weighted = phi.clone();
    for (j, mut row) in weighted.row_iter_mut().enumerate() {
        row *= w[j];
    }
    let coef = match basis.centering() {
        Some(mu) => {
            let mut xc = sample.x().clone();
            for mut row in xc.row_iter_mut() {
                for (v, m) in row.iter_mut().zip(mu) {
                    *v -= m;
                }
            }
            xc * &weighted
        }
        None => sample.x() * &weighted,
    };
    Ok(ExpansionResult {
        coef,
        basis: basis.clone(),
        quadrature: Quadrature::Trapezoid,
        grid_basis: phi,
        weights: w,
    })
}

/// Estimates the leading `p` eigenfunctions of the sample covariance operator.
///
/// The eigenproblem is solved for `W^{1/2} C W^{1/2}` with trapezoid weights
/// `W`, so that eigenfunctions are orthonormal in the quadrature inner
/// product. Each eigenfunction is signed so its largest-magnitude entry is
/// positive; eigenvalues are clipped at zero.
pub fn fit_fpc(sample: &FunctionalSample, p: usize) -> Result<FpcBasis> {
    let (n, m) = sample.dim();
    if n < 2 {
        return invalid("FPC estimation needs at least two curves");
    }
    if p == 0 || p > (n - 1).min(m) {
        return invalid(format!(
            "number of components must be in 1..={}, got {p}",
            (n - 1).min(m)
        ));
    }
    if m < 2 {
        return invalid("FPC estimation needs at least two grid points");
    }
    let mean = column_means(sample.x());
    let cov = column_covariance(sample.x());
    let w = trapezoid_weights(sample.t_points());
    let sw: Vec<f64> = w.iter().map(|v| v.sqrt()).collect();
    let mut a = cov;
    for i in 0..m {
        for j in 0..m {
            a[(i, j)] *= sw[i] * sw[j];
        }
    }
    let a = linalg::symmetrize(&a);
    let (values, vectors) = sorted_symmetric_eigen(&a);

    let scale = sample.x().amax().max(f64::MIN_POSITIVE);
    let floor = (f64::EPSILON * scale).powi(2) * m as f64 * sample.domain().period;
    if values[0] <= floor {
        return Err(Error::Numeric(
            "sample covariance is zero; FPC basis undefined".into(),
        ));
    }

    let mut zeta = DMatrix::zeros(m, p);
    for k in 0..p {
        let mut col: DVector<f64> = vectors.column(k).into_owned();
        for j in 0..m {
            col[j] /= sw[j];
        }
        let imax = col.iamax();
        if col[imax] < 0.0 {
            col.neg_mut();
        }
        zeta.set_column(k, &col);
    }
    let eigenvalues = (0..p).map(|k| values[k].max(0.0)).collect();
    let eigenfunctions = NumericBasis::new(zeta, sample.t_points().to_vec(), sample.domain())?;
    Ok(FpcBasis {
        mean_curve: mean.iter().copied().collect(),
        eigenfunctions,
        eigenvalues,
    })
}
