//! Scalar-on-function regression: generalized linear models (with an
//! optional random intercept) and linear quantile regression.

mod glm;
mod mixed;
mod quantile;

pub use glm::{irls, Family, GlmSpec, IrlsFit, IrlsOptions, Link};
pub use mixed::{index_groups, RandomInterceptFit};
pub use quantile::{check_loss, check_objective, midpoint_quantile, solve_quantile, QrSolution, QrSpec};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::expansion::{expand, BasisSpec, BasisSystem};
use crate::fda::{series_to_function, BasisSeries, FunctionalSample};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    pub converged: bool,
    pub iterations: usize,
    pub final_change: f64,
}

/// Model that produced a fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum ModelSpec {
    Glm(GlmSpec),
    Quantile(QrSpec),
}

/// Estimated coefficient functions and scalar coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub method: String,
    /// One series per functional covariate.
    pub beta_series: Vec<BasisSeries>,
    /// Intercept first, then one entry per scalar covariate.
    pub gamma: Vec<f64>,
    pub basis: Vec<BasisSystem>,
    pub basis_spec: Vec<BasisSpec>,
    pub model: ModelSpec,
    pub convergence: Convergence,
    /// Deviance for GLM fits, total check loss for quantile fits.
    pub objective: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub random_intercept: Option<RandomInterceptFit>,
}

/// Response, functional covariates and optional scalar covariates / groups.
#[derive(Debug, Clone, Copy)]
pub struct SofrData<'a> {
    pub y: &'a [f64],
    pub fc: &'a [FunctionalSample],
    pub z: Option<&'a DMatrix<f64>>,
    pub groups: Option<&'a [usize]>,
}

impl<'a> SofrData<'a> {
    pub fn new(y: &'a [f64], fc: &'a [FunctionalSample]) -> Self {
        Self {
            y,
            fc,
            z: None,
            groups: None,
        }
    }

    pub fn with_z(mut self, z: Option<&'a DMatrix<f64>>) -> Self {
        self.z = z;
        self
    }

    pub fn with_groups(mut self, groups: Option<&'a [usize]>) -> Self {
        self.groups = groups;
        self
    }

    fn n(&self) -> usize {
        self.y.len()
    }

    fn validate(&self) -> Result<()> {
        let n = self.n();
        if n == 0 {
            return invalid("empty response");
        }
        for (l, s) in self.fc.iter().enumerate() {
            if s.dim().0 != n {
                return Err(Error::Shape(format!(
                    "functional covariate {l} has {} curves, response has {n} values",
                    s.dim().0
                )));
            }
        }
        if let Some(z) = self.z {
            if z.nrows() != n {
                return Err(Error::Shape(format!("Z has {} rows, response has {n} values", z.nrows())));
            }
            if z.iter().any(|v| !v.is_finite()) {
                return invalid("Z contains non-finite values");
            }
        }
        if self.y.iter().any(|v| !v.is_finite()) {
            return invalid("response contains non-finite values");
        }
        Ok(())
    }
}

fn broadcast_specs(specs: &[BasisSpec], l: usize) -> Result<Vec<BasisSpec>> {
    match specs.len() {
        n if n == l => Ok(specs.to_vec()),
        1 => Ok(vec![specs[0]; l]),
        0 if l == 0 => Ok(Vec::new()),
        n => invalid(format!("{n} basis requests for {l} functional covariates")),
    }
}

/// Resolves one basis per functional covariate from the data.
pub fn resolve_bases(fc: &[FunctionalSample], specs: &[BasisSpec]) -> Result<(Vec<BasisSystem>, Vec<BasisSpec>)> {
    let specs = broadcast_specs(specs, fc.len())?;
    let bases = fc.iter().zip(&specs).map(|(s, b)| b.resolve(s)).collect::<Result<_>>()?;
    Ok((bases, specs))
}

/// Design matrix `[1, b^(1), ..., b^(L), Z]`.
pub fn design_matrix(fc: &[FunctionalSample], z: Option<&DMatrix<f64>>, bases: &[BasisSystem]) -> Result<DMatrix<f64>> {
    if fc.len() != bases.len() {
        return invalid(format!("{} bases for {} functional covariates", bases.len(), fc.len()));
    }
    let n = fc
        .first()
        .map(|s| s.dim().0)
        .or_else(|| z.map(|z| z.nrows()))
        .ok_or_else(|| Error::InvalidInput("design needs functional or scalar covariates to size it".into()))?;
    let blocks: Vec<DMatrix<f64>> = fc
        .iter()
        .zip(bases)
        .map(|(s, b)| expand(s, b).map(|e| e.coef))
        .collect::<Result<_>>()?;
    let nz = z.map_or(0, |z| z.ncols());
    let p = 1 + blocks.iter().map(|b| b.ncols()).sum::<usize>() + nz;
    let mut x = DMatrix::zeros(n, p);
    x.column_mut(0).fill(1.0);
    let mut col = 1;
    for b in &blocks {
        if b.nrows() != n {
            return Err(Error::Shape("functional covariates disagree on sample size".into()));
        }
        x.columns_mut(col, b.ncols()).copy_from(b);
        col += b.ncols();
    }
    if let Some(z) = z {
        if z.nrows() != n {
            return Err(Error::Shape(format!("Z has {} rows, expected {n}", z.nrows())));
        }
        x.columns_mut(col, nz).copy_from(z);
    }
    Ok(x)
}

pub(crate) fn split_coef(coef: &DVector<f64>, bases: &[BasisSystem]) -> Result<(Vec<BasisSeries>, Vec<f64>)> {
    let mut gamma = vec![coef[0]];
    let mut col = 1;
    let mut series = Vec::with_capacity(bases.len());
    for b in bases {
        let k = b.len();
        series.push(b.series(&coef.as_slice()[col..col + k])?);
        col += k;
    }
    gamma.extend_from_slice(&coef.as_slice()[col..]);
    Ok((series, gamma))
}

/// GLM fit with given bases; see [`fit_glm_sofr`].
pub fn fit_glm_with_bases(
    data: SofrData<'_>,
    spec: &GlmSpec,
    bases: Vec<BasisSystem>,
    basis_spec: Vec<BasisSpec>,
) -> Result<FitResult> {
    data.validate()?;
    spec.family.validate_response(data.y)?;
    let x = design_matrix(data.fc, data.z, &bases)?;
    let y = DVector::from_column_slice(data.y);
    let opts = IrlsOptions::default();
    let (coef, convergence, random_intercept, method) = if spec.random_intercept {
        let groups = data
            .groups
            .ok_or_else(|| Error::InvalidInput("random intercept requested without group labels".into()))?;
        let (coef, re, conv) =
            mixed::fit_random_intercept(&x, &y, groups, spec, opts)?;
        let method = format!("glmm-{}", re.method);
        (coef, conv, Some(re), method)
    } else {
        if data.groups.is_some() {
            return invalid("group labels given but random_intercept is off");
        }
        let fit = irls(&x, &y, None, spec, opts)?;
        (fit.coef, fit.convergence, None, "glm".to_string())
    };
    let eta = &x * &coef;
    let mu = eta.map(|e| spec.mu(e));
    let objective = spec.family.deviance(&y, &mu);
    let (beta_series, gamma) = split_coef(&coef, &bases)?;
    Ok(FitResult {
        method,
        beta_series,
        gamma,
        basis: bases,
        basis_spec,
        model: ModelSpec::Glm(*spec),
        convergence,
        objective,
        random_intercept,
    })
}

/// Generalized scalar-on-function regression.
///
/// Each functional covariate is expanded on the requested basis (one request
/// per covariate, or a single request shared by all), and the model
/// `g(E Y) = gamma_0 + sum_l b_l' c_l + Z' gamma` is fitted by IRLS.
pub fn fit_glm_sofr(data: SofrData<'_>, spec: &GlmSpec, basis: &[BasisSpec]) -> Result<FitResult> {
    data.validate()?;
    let (bases, specs) = resolve_bases(data.fc, basis)?;
    fit_glm_with_bases(data, spec, bases, specs)
}

/// Quantile fit with given bases; see [`fit_qr_sofr`].
pub fn fit_qr_with_bases(
    data: SofrData<'_>,
    spec: &QrSpec,
    bases: Vec<BasisSystem>,
    basis_spec: Vec<BasisSpec>,
) -> Result<FitResult> {
    data.validate()?;
    QrSpec::new(spec.tau)?;
    if data.groups.is_some() {
        return invalid("random effects are not available for quantile regression");
    }
    let x = design_matrix(data.fc, data.z, &bases)?;
    let y = DVector::from_column_slice(data.y);
    let sol = solve_quantile(&x, &y, spec.tau)?;
    let (beta_series, gamma) = split_coef(&sol.coef, &bases)?;
    Ok(FitResult {
        method: "qr".into(),
        beta_series,
        gamma,
        basis: bases,
        basis_spec,
        model: ModelSpec::Quantile(*spec),
        convergence: Convergence {
            converged: sol.converged,
            iterations: sol.iterations,
            final_change: 0.0,
        },
        objective: sol.objective,
        random_intercept: None,
    })
}

/// Linear quantile scalar-on-function regression at level `spec.tau`.
pub fn fit_qr_sofr(data: SofrData<'_>, spec: &QrSpec, basis: &[BasisSpec]) -> Result<FitResult> {
    data.validate()?;
    let (bases, specs) = resolve_bases(data.fc, basis)?;
    fit_qr_with_bases(data, spec, bases, specs)
}

impl FitResult {
    /// Stacked coefficient vector in design-matrix column order.
    pub fn coefficients(&self) -> Result<DVector<f64>> {
        let mut out = vec![self.gamma[0]];
        for (s, b) in self.beta_series.iter().zip(&self.basis) {
            out.extend(series_coef(s, b)?);
        }
        out.extend_from_slice(&self.gamma[1..]);
        Ok(DVector::from_vec(out))
    }

    pub fn n_functional(&self) -> usize {
        self.beta_series.len()
    }
}

fn series_coef(s: &BasisSeries, b: &BasisSystem) -> Result<Vec<f64>> {
    Ok(match s {
        BasisSeries::Fourier(f) => {
            let p = b.len() / 2;
            let mut c = vec![f.double_constant()];
            let mut cos = vec![0.0; p];
            let mut sin = vec![0.0; p];
            for (k, a) in f.cos_terms() {
                cos[k as usize - 1] = a;
            }
            for (k, a) in f.sin_terms() {
                sin[k as usize - 1] = a;
            }
            c.extend(cos);
            c.extend(sin);
            c
        }
        BasisSeries::Bspline(s) => s.coef().to_vec(),
        BasisSeries::Numeric(s) => s.coef().to_vec(),
    })
}

/// Predictions for new data on the response scale (inverse link for GLMs,
/// the conditional quantile for quantile fits).
///
/// Random intercepts are not added; predictions are population-level.
pub fn predict(fit: &FitResult, fc_new: &[FunctionalSample], z_new: Option<&DMatrix<f64>>) -> Result<Vec<f64>> {
    if fc_new.len() != fit.n_functional() {
        return Err(Error::Shape(format!(
            "fit has {} functional covariates, got {}",
            fit.n_functional(),
            fc_new.len()
        )));
    }
    let nz = fit.gamma.len() - 1;
    match (z_new, nz) {
        (None, 0) => {}
        (Some(z), k) if z.ncols() == k => {}
        (z, k) => {
            return Err(Error::Shape(format!(
                "fit has {k} scalar covariates, got {}",
                z.map_or(0, |z| z.ncols())
            )))
        }
    }
    if let (Some(z), Some(s)) = (z_new, fc_new.first()) {
        if z.nrows() != s.dim().0 {
            return Err(Error::Shape("Z and functional covariates disagree on sample size".into()));
        }
    }
    for (s, b) in fc_new.iter().zip(&fit.basis) {
        if !s.domain().matches(&b.domain()) {
            return Err(Error::Shape("new curves are on a different domain than the fit".into()));
        }
    }
    let x = design_matrix(fc_new, z_new, &fit.basis)?;
    let eta = x * fit.coefficients()?;
    Ok(match &fit.model {
        ModelSpec::Glm(spec) => eta.iter().map(|&e| spec.link.inverse(e)).collect(),
        ModelSpec::Quantile(_) => eta.iter().copied().collect(),
    })
}

/// Values of the `l`-th estimated coefficient function (0-based) at `t`.
pub fn fc_beta(fit: &FitResult, l: usize, t: &[f64]) -> Result<Vec<f64>> {
    let s = fit.beta_series.get(l).ok_or_else(|| {
        Error::InvalidInput(format!(
            "functional covariate index {l} out of range (fit has {})",
            fit.n_functional()
        ))
    })?;
    let f = series_to_function(s);
    let v: Vec<f64> = t.iter().map(|&t| f(t)).collect();
    if v.iter().any(|x| x.is_nan()) {
        return Err(Error::Domain {
            value: t[v.iter().position(|x| x.is_nan()).unwrap()],
            lo: s.domain().t0,
            hi: s.domain().end(),
        });
    }
    Ok(v)
}

/// In-sample linear predictor of a fit on its training design.
pub fn linear_predictor(fit: &FitResult, fc: &[FunctionalSample], z: Option<&DMatrix<f64>>) -> Result<DVector<f64>> {
    let x = design_matrix(fc, z, &fit.basis)?;
    Ok(x * fit.coefficients()?)
}
