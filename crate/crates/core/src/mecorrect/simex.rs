//! Simulation-extrapolation for functional quantile regression with an
//! instrument-based error covariance.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::errcov::{estimate_error_cov_iv, ErrorCov, IvCovOptions};
use crate::error::{config, Error, Result};
use crate::expansion::BasisSpec;
use crate::fda::FunctionalSample;
use crate::linalg::{self, least_squares};
use crate::regress::{
    check_objective, design_matrix, fit_qr_with_bases, resolve_bases, split_coef, FitResult, QrSpec, SofrData,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Extrapolant {
    Quadratic,
    Linear,
}

impl Extrapolant {
    fn degree(self) -> usize {
        match self {
            Extrapolant::Quadratic => 2,
            Extrapolant::Linear => 1,
        }
    }
}

impl std::str::FromStr for Extrapolant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quadratic" => Ok(Extrapolant::Quadratic),
            "linear" => Ok(Extrapolant::Linear),
            other => config(format!("unknown extrapolant '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimexConfig {
    pub lambda_grid: Vec<f64>,
    /// Pseudo-replicates per noise level.
    #[serde(rename = "B")]
    pub b: usize,
    pub extrapolant: Extrapolant,
    pub seed: u64,
}

impl Default for SimexConfig {
    fn default() -> Self {
        Self {
            lambda_grid: vec![0.0, 0.5, 1.0, 1.5, 2.0],
            b: 50,
            extrapolant: Extrapolant::Quadratic,
            seed: 1,
        }
    }
}

impl SimexConfig {
    pub fn validate(&self) -> Result<()> {
        if self.b == 0 {
            return config("SIMEX needs at least one pseudo-replicate per noise level");
        }
        if self.lambda_grid.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return config("SIMEX noise levels must be finite and non-negative");
        }
        if !self.lambda_grid.contains(&0.0) {
            return config("SIMEX noise grid must contain 0");
        }
        let distinct = distinct(&self.lambda_grid).len();
        if distinct <= self.extrapolant.degree() {
            return config(format!(
                "{:?} extrapolation needs at least {} distinct noise levels, got {distinct}",
                self.extrapolant,
                self.extrapolant.degree() + 1
            ));
        }
        Ok(())
    }
}

fn distinct(v: &[f64]) -> Vec<f64> {
    let mut d = v.to_vec();
    d.sort_by(f64::total_cmp);
    d.dedup();
    d
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimexResult {
    /// Extrapolated fit.
    pub fit: FitResult,
    /// Fit on the observed surrogate.
    pub naive: FitResult,
    pub lambdas: Vec<f64>,
    /// Averaged coefficient vector at each noise level.
    pub paths: Vec<Vec<f64>>,
    pub extrapolant: Extrapolant,
    pub sigma_uu: ErrorCov,
}

/// Value at `lambda = -1` of a least-squares polynomial through the points
/// `(lambdas[i], values[i])`, fitted to the differences from the value at 0.
pub fn extrapolate(lambdas: &[f64], values: &[f64], kind: Extrapolant) -> Result<f64> {
    if lambdas.len() != values.len() {
        return Err(Error::Shape(format!("{} noise levels but {} values", lambdas.len(), values.len())));
    }
    let Some(i0) = lambdas.iter().position(|&l| l == 0.0) else {
        return config("extrapolation needs the value at noise level 0");
    };
    let deg = kind.degree();
    if distinct(lambdas).len() <= deg {
        return config(format!("{kind:?} extrapolation needs {} distinct noise levels", deg + 1));
    }
    let c0 = values[i0];
    let v = DMatrix::from_fn(lambdas.len(), deg + 1, |i, k| lambdas[i].powi(k as i32));
    let d = DVector::from_iterator(values.len(), values.iter().map(|x| x - c0));
    let cond = linalg::condition_number(&v);
    if cond > 1e12 {
        return Err(Error::Singular {
            what: "extrapolant design on the noise grid".into(),
            condition: cond,
        });
    }
    let coef = least_squares(&v, &d)?;
    let at = (0..=deg).map(|k| coef[k] * (-1f64).powi(k as i32)).sum::<f64>();
    Ok(c0 + at)
}

/// IV-SIMEX quantile scalar-on-function regression.
///
/// `sigma` overrides the instrument-based error covariance estimate.
#[allow(clippy::too_many_arguments)]
pub fn fit_qr_simex(
    y: &[f64],
    w: &FunctionalSample,
    z: Option<&DMatrix<f64>>,
    m: &FunctionalSample,
    spec: &QrSpec,
    cfg: &SimexConfig,
    basis: &BasisSpec,
    sigma: Option<&ErrorCov>,
) -> Result<SimexResult> {
    cfg.validate()?;
    QrSpec::new(spec.tau)?;
    let (n, grid) = w.dim();
    let sigma_uu = match sigma {
        Some(s) if s.dim() != grid => {
            return Err(Error::Shape(format!("error covariance is {0}x{0}, grid has {grid} points", s.dim())));
        }
        Some(s) => s.clone(),
        None => estimate_error_cov_iv(w, m, IvCovOptions::default())?,
    };
    if sigma_uu.eigenvalues.iter().any(|&v| v < 0.0) {
        return Err(Error::Numeric("error covariance must be PSD-projected before sampling".into()));
    }
    let fc = [w.clone()];
    let (bases, specs) = resolve_bases(&fc, std::slice::from_ref(basis))?;
    let naive = fit_qr_with_bases(SofrData::new(y, &fc).with_z(z), spec, bases.clone(), specs.clone())?;
    let naive_coef = naive.coefficients()?;

    let factor_t = sigma_uu.factor().transpose();
    let tasks: Vec<(usize, usize)> = cfg
        .lambda_grid
        .iter()
        .enumerate()
        .filter(|(_, &l)| l > 0.0)
        .flat_map(|(li, _)| (0..cfg.b).map(move |b| (li, b)))
        .collect();
    let draws: Vec<Result<DVector<f64>>> = tasks
        .par_iter()
        .map(|&(li, b)| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(((li as u64) << 32) | b as u64);
            let e = DMatrix::<f64>::from_fn(n, grid, |_, _| StandardNormal.sample(&mut rng));
            let noisy = w.x() + (e * &factor_t) * cfg.lambda_grid[li].sqrt();
            let wb = [w.with_values(noisy)?];
            let fit = fit_qr_with_bases(SofrData::new(y, &wb).with_z(z), spec, bases.clone(), specs.clone())?;
            fit.coefficients()
        })
        .collect();

    let p = naive_coef.len();
    let mut draws = draws.into_iter();
    let mut paths = Vec::with_capacity(cfg.lambda_grid.len());
    for &l in &cfg.lambda_grid {
        if l == 0.0 {
            paths.push(naive_coef.clone());
            continue;
        }
        let first = draws.next().expect("one task per draw")?;
        let mut acc = DVector::<f64>::zeros(p);
        for _ in 1..cfg.b {
            acc += draws.next().expect("one task per draw")? - &first;
        }
        paths.push(&first + acc / cfg.b as f64);
    }

    let corrected = DVector::from_iterator(
        p,
        (0..p)
            .map(|k| {
                let v: Vec<f64> = paths.iter().map(|c| c[k]).collect();
                extrapolate(&cfg.lambda_grid, &v, cfg.extrapolant)
            })
            .collect::<Result<Vec<f64>>>()?,
    );
    let (beta_series, gamma) = split_coef(&corrected, &bases)?;
    let mut fit = naive.clone();
    fit.method = "qr-simex".into();
    fit.beta_series = beta_series;
    fit.gamma = gamma;
    let x = design_matrix(&fc, z, &bases)?;
    fit.objective = check_objective(&(DVector::from_column_slice(y) - x * &corrected), spec.tau);
    Ok(SimexResult {
        fit,
        naive,
        lambdas: cfg.lambda_grid.clone(),
        paths: paths.into_iter().map(|c| c.iter().copied().collect()).collect(),
        extrapolant: cfg.extrapolant,
        sigma_uu,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_path_extrapolates_exactly() {
        let l = [0.0, 0.5, 1.0, 1.5, 2.0];
        let v: Vec<f64> = l.iter().map(|x| 1.0 + x - 0.5 * x * x).collect();
        let c = extrapolate(&l, &v, Extrapolant::Quadratic).unwrap();
        assert!((c + 0.5).abs() < 1e-12);
    }

    #[test]
    fn linear_path_extrapolates_exactly() {
        let l = [0.0, 1.0, 2.0];
        let v = [3.0, 2.0, 1.0];
        assert!((extrapolate(&l, &v, Extrapolant::Linear).unwrap() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn constant_path_is_returned_unchanged() {
        let l = [0.0, 0.5, 1.0, 2.0];
        let v = [0.1234567; 4];
        assert_eq!(extrapolate(&l, &v, Extrapolant::Quadratic).unwrap(), 0.1234567);
    }

    #[test]
    fn config_validation() {
        let mut c = SimexConfig::default();
        assert!(c.validate().is_ok());
        c.lambda_grid = vec![0.5, 1.0, 2.0];
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        c.lambda_grid = vec![0.0, 1.0, 1.0];
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        c.extrapolant = Extrapolant::Linear;
        assert!(c.validate().is_ok());
        c.b = 0;
        assert!(c.validate().is_err());
    }
}
