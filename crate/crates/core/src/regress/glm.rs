//! Exponential-family models fitted by iteratively reweighted least squares.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::Convergence;
use crate::error::{config, invalid, Error, Result};
use crate::linalg;

const MU_EPS: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Gaussian,
    Binomial,
    Poisson,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    Identity,
    Logit,
    Log,
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" => Ok(Family::Gaussian),
            "binomial" => Ok(Family::Binomial),
            "poisson" => Ok(Family::Poisson),
            other => config(format!("unknown family '{other}'")),
        }
    }
}

impl std::str::FromStr for Link {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "identity" => Ok(Link::Identity),
            "logit" => Ok(Link::Logit),
            "log" => Ok(Link::Log),
            other => config(format!("unknown link '{other}'")),
        }
    }
}

impl Family {
    pub fn canonical_link(self) -> Link {
        match self {
            Family::Gaussian => Link::Identity,
            Family::Binomial => Link::Logit,
            Family::Poisson => Link::Log,
        }
    }

    pub fn variance(self, mu: f64) -> f64 {
        match self {
            Family::Gaussian => 1.0,
            Family::Binomial => mu * (1.0 - mu),
            Family::Poisson => mu,
        }
    }

    /// Sum of unit deviances.
    pub fn deviance(self, y: &DVector<f64>, mu: &DVector<f64>) -> f64 {
        y.iter()
            .zip(mu.iter())
            .map(|(&y, &m)| match self {
                Family::Gaussian => (y - m).powi(2),
                Family::Binomial => {
                    let a = if y > 0.0 { y * (y / m).ln() } else { 0.0 };
                    let b = if y < 1.0 { (1.0 - y) * ((1.0 - y) / (1.0 - m)).ln() } else { 0.0 };
                    2.0 * (a + b)
                }
                Family::Poisson => {
                    let a = if y > 0.0 { y * (y / m).ln() } else { 0.0 };
                    2.0 * (a - (y - m))
                }
            })
            .sum()
    }

    fn clamp_mu(self, mu: f64, link: Link) -> f64 {
        match (self, link) {
            (Family::Binomial, _) => mu.clamp(MU_EPS, 1.0 - MU_EPS),
            (Family::Poisson, _) | (_, Link::Log) => mu.max(MU_EPS),
            _ => mu,
        }
    }

    pub fn validate_response(self, y: &[f64]) -> Result<()> {
        if y.iter().any(|v| !v.is_finite()) {
            return invalid("response contains non-finite values");
        }
        match self {
            Family::Gaussian => Ok(()),
            Family::Binomial => {
                if y.iter().all(|&v| v == 0.0 || v == 1.0) {
                    Ok(())
                } else {
                    invalid("binomial response must be 0 or 1")
                }
            }
            Family::Poisson => {
                if y.iter().all(|&v| v >= 0.0 && v.fract() == 0.0) {
                    Ok(())
                } else {
                    invalid("poisson response must be a non-negative integer")
                }
            }
        }
    }
}

impl Link {
    pub fn link(self, mu: f64) -> f64 {
        match self {
            Link::Identity => mu,
            Link::Logit => (mu / (1.0 - mu)).ln(),
            Link::Log => mu.ln(),
        }
    }

    pub fn inverse(self, eta: f64) -> f64 {
        match self {
            Link::Identity => eta,
            Link::Logit => 1.0 / (1.0 + (-eta).exp()),
            Link::Log => eta.exp(),
        }
    }

    /// `d mu / d eta`.
    pub fn mu_eta(self, eta: f64) -> f64 {
        match self {
            Link::Identity => 1.0,
            Link::Logit => {
                let e = (-eta.abs()).exp();
                (e / (1.0 + e).powi(2)).max(f64::MIN_POSITIVE)
            }
            Link::Log => eta.exp().max(f64::MIN_POSITIVE),
        }
    }
}

/// Model family, link and whether a subject-level random intercept is fitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GlmSpec {
    pub family: Family,
    pub link: Link,
    #[serde(default)]
    pub random_intercept: bool,
}

impl GlmSpec {
    pub fn new(family: Family, link: Link) -> Result<Self> {
        let ok = matches!(
            (family, link),
            (Family::Gaussian, Link::Identity | Link::Log)
                | (Family::Binomial, Link::Logit)
                | (Family::Poisson, Link::Log | Link::Identity)
        );
        if !ok {
            return config(format!("link {link:?} is not available for family {family:?}"));
        }
        Ok(Self {
            family,
            link,
            random_intercept: false,
        })
    }

    pub fn canonical(family: Family) -> Self {
        Self {
            family,
            link: family.canonical_link(),
            random_intercept: false,
        }
    }

    pub fn gaussian() -> Self {
        Self::canonical(Family::Gaussian)
    }

    pub fn with_random_intercept(mut self, on: bool) -> Self {
        self.random_intercept = on;
        self
    }

    pub(crate) fn mu(&self, eta: f64) -> f64 {
        self.family.clamp_mu(self.link.inverse(eta), self.link)
    }

    /// IRLS working response and weights at the linear predictor `eta`.
    pub(crate) fn working(&self, y: &DVector<f64>, eta: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let n = y.len();
        let mut z = DVector::zeros(n);
        let mut w = DVector::zeros(n);
        for i in 0..n {
            let mu = self.mu(eta[i]);
            let d = self.link.mu_eta(eta[i]);
            z[i] = eta[i] + (y[i] - mu) / d;
            w[i] = d * d / self.family.variance(mu).max(MU_EPS);
        }
        (z, w)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct IrlsOptions {
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for IrlsOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            tolerance: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct IrlsFit {
    pub coef: DVector<f64>,
    pub eta: DVector<f64>,
    pub deviance: f64,
    pub convergence: Convergence,
}

/// Fits `g(E y) = x b + offset` by IRLS.
///
/// Iterates to a relative deviance change below `opts.tolerance`, halving
/// steps that increase the deviance. Non-convergence is reported through the
/// returned [`Convergence`], not as an error.
pub fn irls(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    offset: Option<&DVector<f64>>,
    spec: &GlmSpec,
    opts: IrlsOptions,
) -> Result<IrlsFit> {
    let n = y.len();
    if x.nrows() != n {
        return Err(Error::Shape(format!("design has {} rows, response {n}", x.nrows())));
    }
    spec.family.validate_response(y.as_slice())?;
    let aliased = linalg::aliased_columns(x);
    if !aliased.is_empty() {
        return Err(Error::RankDeficient { aliased });
    }
    let zero = DVector::zeros(n);
    let offset = offset.unwrap_or(&zero);

    let ybar = y.mean();
    let mut eta = DVector::from_iterator(
        n,
        y.iter().map(|&v| {
            let mu0 = spec.family.clamp_mu(0.5 * (v + ybar), spec.link);
            spec.link.link(mu0)
        }),
    );
    let mu_of = |eta: &DVector<f64>| eta.map(|e| spec.mu(e));
    let mut dev = spec.family.deviance(y, &mu_of(&eta));
    let mut coef: Option<DVector<f64>> = None;
    let mut change = f64::INFINITY;

    for iter in 1..=opts.max_iterations {
        let (z, w) = spec.working(y, &eta);
        let target = &z - offset;
        let mut beta = linalg::weighted_least_squares(x, &target, &w)?;
        let mut eta_new = x * &beta + offset;
        let mut dev_new = spec.family.deviance(y, &mu_of(&eta_new));
        if let Some(old) = &coef {
            let mut halvings = 0;
            while (!dev_new.is_finite() || dev_new > dev * (1.0 + 1e-12) + 1e-12) && halvings < 30 {
                beta = (&beta + old) * 0.5;
                eta_new = x * &beta + offset;
                dev_new = spec.family.deviance(y, &mu_of(&eta_new));
                halvings += 1;
            }
        }
        if !dev_new.is_finite() {
            return Err(Error::Numeric("IRLS deviance is not finite".into()));
        }
        change = (dev_new - dev).abs() / (dev_new.abs() + 0.1);
        let coef_change = coef
            .as_ref()
            .map_or(f64::INFINITY, |old| (&beta - old).amax() / (1.0 + beta.amax()));
        dev = dev_new;
        eta = eta_new;
        coef = Some(beta);
        if change < opts.tolerance && (coef_change < 1e-6 || iter > 1 && change == 0.0) {
            return Ok(IrlsFit {
                coef: coef.unwrap(),
                eta,
                deviance: dev,
                convergence: Convergence {
                    converged: true,
                    iterations: iter,
                    final_change: change,
                },
            });
        }
    }
    Ok(IrlsFit {
        coef: coef.expect("at least one iteration"),
        eta,
        deviance: dev,
        convergence: Convergence {
            converged: false,
            iterations: opts.max_iterations,
            final_change: change,
        },
    })
}
