//! Seeded synthetic data under the working models of the correction
//! methods: latent Gaussian-process curves, replicated or instrumented
//! surrogates and a scalar outcome.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{config, Error, Result};
use crate::expansion::{BasisKind, BasisSpec};
use crate::fda::{BSplineBasis, Domain, FourierBasis, FunctionalSample};
use crate::linalg::{sorted_symmetric_eigen, trapezoid_weights};
use crate::mecorrect::ReplicatedSurrogate;

/// A function of `t`: a constant or a finite basis series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FunctionSpec {
    Constant(f64),
    Series { basis: BasisSpec, coef: Vec<f64> },
}

impl Default for FunctionSpec {
    fn default() -> Self {
        FunctionSpec::Constant(0.0)
    }
}

impl FunctionSpec {
    pub fn eval(&self, domain: Domain, t: &[f64]) -> Result<Vec<f64>> {
        match self {
            FunctionSpec::Constant(c) => Ok(vec![*c; t.len()]),
            FunctionSpec::Series { basis, coef } => {
                let phi = match basis.kind {
                    BasisKind::Fourier => FourierBasis::new(basis.order, domain).eval(t)?,
                    BasisKind::Bspline => BSplineBasis::with_df(domain, basis.order, basis.degree)?.eval(t)?,
                    BasisKind::Fpc => return config("a data-driven FPC basis cannot define a true function"),
                };
                if phi.ncols() != coef.len() {
                    return config(format!("{} coefficients for a basis of {} functions", coef.len(), phi.ncols()));
                }
                Ok((phi * DVector::from_column_slice(coef)).iter().copied().collect())
            }
        }
    }
}

/// Covariance kernel of a zero-mean Gaussian process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kernel", rename_all = "lowercase")]
pub enum Covariance {
    /// Matérn kernel with smoothness `nu` in {0.5, 1.5, 2.5}.
    Matern { variance: f64, length_scale: f64, nu: f64 },
    Exponential { variance: f64, length_scale: f64 },
    /// Independent values at every grid point.
    White { variance: f64 },
    /// `sum_k lambda_k phi_k(s) phi_k(t)` over the orthonormal Fourier
    /// functions of the domain (constant, then cos/sin pairs).
    Eigen { lambdas: Vec<f64> },
}

impl Covariance {
    fn validate(&self) -> Result<()> {
        let ok = match self {
            Covariance::Matern { variance, length_scale, nu } => {
                *variance >= 0.0 && *length_scale > 0.0 && [0.5, 1.5, 2.5].contains(nu)
            }
            Covariance::Exponential { variance, length_scale } => *variance >= 0.0 && *length_scale > 0.0,
            Covariance::White { variance } => *variance >= 0.0,
            Covariance::Eigen { lambdas } => !lambdas.is_empty() && lambdas.iter().all(|l| *l >= 0.0),
        };
        if !ok {
            return config(format!("invalid covariance {self:?}"));
        }
        Ok(())
    }

    /// Kernel matrix on the grid.
    pub fn matrix(&self, domain: Domain, t: &[f64]) -> DMatrix<f64> {
        let m = t.len();
        match self {
            Covariance::Matern { variance, length_scale, nu } => {
                DMatrix::from_fn(m, m, |i, j| variance * matern((t[i] - t[j]).abs() / length_scale, *nu))
            }
            Covariance::Exponential { variance, length_scale } => {
                DMatrix::from_fn(m, m, |i, j| variance * (-(t[i] - t[j]).abs() / length_scale).exp())
            }
            Covariance::White { variance } => DMatrix::identity(m, m) * *variance,
            Covariance::Eigen { lambdas } => {
                let phi = fourier_orthonormal(domain, t, lambdas.len());
                let l = DMatrix::from_diagonal(&DVector::from_column_slice(lambdas));
                &phi * l * phi.transpose()
            }
        }
    }
}

fn matern(d: f64, nu: f64) -> f64 {
    if nu == 0.5 {
        (-d).exp()
    } else if nu == 1.5 {
        let a = 3f64.sqrt() * d;
        (1.0 + a) * (-a).exp()
    } else {
        let a = 5f64.sqrt() * d;
        (1.0 + a + a * a / 3.0) * (-a).exp()
    }
}

/// First `k` functions of the orthonormal trigonometric system on `domain`.
fn fourier_orthonormal(domain: Domain, t: &[f64], k: usize) -> DMatrix<f64> {
    let p = domain.period;
    DMatrix::from_fn(t.len(), k, |i, c| {
        let omega = 2.0 * std::f64::consts::PI * (t[i] - domain.t0) / p;
        let freq = c.div_ceil(2) as f64;
        match c {
            0 => 1.0 / p.sqrt(),
            c if c % 2 == 1 => (2.0 / p).sqrt() * (freq * omega).cos(),
            _ => (2.0 / p).sqrt() * (freq * omega).sin(),
        }
    })
}

/// Square-root factor `L` with `L L' = K`, from the eigen-decomposition.
fn kernel_factor(k: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (values, vectors) = sorted_symmetric_eigen(k);
    let top = values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if values.iter().any(|&v| v < -1e-8 * top.max(f64::MIN_POSITIVE)) {
        return Err(Error::InvalidInput("requested covariance is not positive semi-definite".into()));
    }
    let mut l = vectors;
    for (c, v) in values.iter().enumerate() {
        l.column_mut(c).scale_mut(v.max(0.0).sqrt());
    }
    Ok(l)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessSpec {
    #[serde(default)]
    pub mean: FunctionSpec,
    pub covariance: Covariance,
}

/// How the observed surrogate relates to the latent curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ErrorSpec {
    None,
    /// `W_ij = X_i + U_ij` with `U_ij` a Gaussian process.
    Additive { covariance: Covariance },
    /// `W_ij(t) ~ Poisson(exp(X_i(t)))`.
    Poisson,
}

/// `M_i(t) = delta(t) X_i(t) + eta_i(t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstrumentSpec {
    #[serde(default = "unit_function")]
    pub delta: FunctionSpec,
    pub eta: Covariance,
}

fn unit_function() -> FunctionSpec {
    FunctionSpec::Constant(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum OutcomeSpec {
    Gaussian { sigma: f64 },
    Binomial,
    Poisson,
    /// `Y = eta + sigma (e - q_tau)` with standard normal `e`, so that the
    /// conditional `tau`-quantile of `Y` is the linear predictor.
    QuantileShift { sigma: f64, tau: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub n: usize,
    pub m: usize,
    #[serde(rename = "J")]
    pub j: usize,
    pub domain: Domain,
    pub beta: FunctionSpec,
    /// Intercept, then one coefficient per standard-normal scalar covariate.
    pub gamma: Vec<f64>,
    pub x_process: ProcessSpec,
    pub error: ErrorSpec,
    #[serde(default)]
    pub instrument: Option<InstrumentSpec>,
    pub outcome: OutcomeSpec,
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = serde_json::from_str(text).map_err(|e| Error::Config(format!("scenario: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 1 || self.m < 2 || self.j < 1 {
            return config(format!("need n >= 1, m >= 2, J >= 1; got n={}, m={}, J={}", self.n, self.m, self.j));
        }
        Domain::new(self.domain.t0, self.domain.period).map_err(|e| Error::Config(e.to_string()))?;
        if self.gamma.is_empty() {
            return config("gamma needs at least the intercept");
        }
        self.x_process.covariance.validate()?;
        if let ErrorSpec::Additive { covariance } = &self.error {
            covariance.validate()?;
        }
        if let Some(ins) = &self.instrument {
            ins.eta.validate()?;
        }
        match self.outcome {
            OutcomeSpec::Gaussian { sigma } if !(sigma >= 0.0) => config("outcome sigma must be non-negative"),
            OutcomeSpec::QuantileShift { sigma, tau } if !(sigma >= 0.0 && tau > 0.0 && tau < 1.0) => {
                config("quantile outcome needs sigma >= 0 and tau in (0, 1)")
            }
            _ => Ok(()),
        }
    }

    pub fn t_points(&self) -> Vec<f64> {
        self.domain.uniform_grid(self.m)
    }

    /// True coefficient function on `t`.
    pub fn beta_at(&self, t: &[f64]) -> Result<Vec<f64>> {
        self.beta.eval(self.domain, t)
    }
}

#[derive(Debug, Clone)]
pub struct SimData {
    pub x: FunctionalSample,
    pub w: ReplicatedSurrogate,
    pub m: Option<FunctionalSample>,
    pub y: Vec<f64>,
    /// Scalar covariates, absent when `gamma` has only the intercept.
    pub z: Option<DMatrix<f64>>,
    /// True linear predictor.
    pub eta: Vec<f64>,
    pub beta_t: Vec<f64>,
}

struct Subject {
    x: Vec<f64>,
    w: Vec<Vec<f64>>,
    m: Option<Vec<f64>>,
    z: Vec<f64>,
    eta: f64,
    y: f64,
}

const STREAM_X: u64 = 0;
const STREAM_Z: u64 = 1;
const STREAM_Y: u64 = 2;
const STREAM_M: u64 = 3;
const STREAM_W: u64 = 16;

fn stream(seed: u64, channel: u64, subject: usize) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream((channel << 40) | subject as u64);
    r
}

fn draw(l: &DMatrix<f64>, r: &mut ChaCha8Rng) -> DVector<f64> {
    let z = DVector::from_fn(l.ncols(), |_, _| StandardNormal.sample(r));
    l * z
}

/// Draws one dataset; every subject uses its own random substreams, so the
/// output depends only on the configuration.
pub fn generate(cfg: &ScenarioConfig) -> Result<SimData> {
    cfg.validate()?;
    let domain = cfg.domain;
    let t = cfg.t_points();
    let m = cfg.m;
    let mu = cfg.x_process.mean.eval(domain, &t)?;
    let lx = kernel_factor(&cfg.x_process.covariance.matrix(domain, &t))?;
    let lu = match &cfg.error {
        ErrorSpec::Additive { covariance } => Some(kernel_factor(&covariance.matrix(domain, &t))?),
        _ => None,
    };
    let inst = match &cfg.instrument {
        Some(ins) => Some((ins.delta.eval(domain, &t)?, kernel_factor(&ins.eta.matrix(domain, &t))?)),
        None => None,
    };
    let beta_t = cfg.beta_at(&t)?;
    let wts = trapezoid_weights(&t);
    let bw: Vec<f64> = beta_t.iter().zip(&wts).map(|(b, w)| b * w).collect();
    let q = cfg.gamma.len() - 1;
    let qshift = match cfg.outcome {
        OutcomeSpec::QuantileShift { tau, .. } => Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(tau),
        _ => 0.0,
    };

    let subjects: Vec<Result<Subject>> = (0..cfg.n)
        .into_par_iter()
        .map(|i| {
            let mut rx = stream(cfg.seed, STREAM_X, i);
            let dx = draw(&lx, &mut rx);
            let x: Vec<f64> = (0..m).map(|j| mu[j] + dx[j]).collect();
            let w = (0..cfg.j)
                .map(|rep| {
                    let mut rw = stream(cfg.seed, STREAM_W + rep as u64, i);
                    match (&cfg.error, &lu) {
                        (ErrorSpec::Additive { .. }, Some(lu)) => {
                            let u = draw(lu, &mut rw);
                            Ok((0..m).map(|j| x[j] + u[j]).collect())
                        }
                        (ErrorSpec::Poisson, _) => x
                            .iter()
                            .map(|&v| {
                                let rate = v.exp();
                                if rate == 0.0 {
                                    return Ok(0.0);
                                }
                                Poisson::new(rate)
                                    .map(|p| p.sample(&mut rw))
                                    .map_err(|e| Error::Numeric(format!("count rate {rate:e}: {e}")))
                            })
                            .collect::<Result<Vec<f64>>>(),
                        _ => Ok(x.clone()),
                    }
                })
                .collect::<Result<Vec<Vec<f64>>>>()?;
            let m_row = inst.as_ref().map(|(delta, le)| {
                let mut rm = stream(cfg.seed, STREAM_M, i);
                let e = draw(le, &mut rm);
                (0..m).map(|j| delta[j] * x[j] + e[j]).collect()
            });
            let mut rz = stream(cfg.seed, STREAM_Z, i);
            let z: Vec<f64> = (0..q).map(|_| StandardNormal.sample(&mut rz)).collect();
            let eta = cfg.gamma[0]
                + z.iter().zip(&cfg.gamma[1..]).map(|(a, b)| a * b).sum::<f64>()
                + x.iter().zip(&bw).map(|(a, b)| a * b).sum::<f64>();
            let mut ry = stream(cfg.seed, STREAM_Y, i);
            let y = match cfg.outcome {
                OutcomeSpec::Gaussian { sigma } => {
                    let e: f64 = StandardNormal.sample(&mut ry);
                    eta + sigma * e
                }
                OutcomeSpec::Binomial => {
                    let p = 1.0 / (1.0 + (-eta).exp());
                    if ry.random::<f64>() < p {
                        1.0
                    } else {
                        0.0
                    }
                }
                OutcomeSpec::Poisson => {
                    let rate = eta.exp();
                    if rate == 0.0 {
                        0.0
                    } else {
                        Poisson::new(rate)
                            .map_err(|e| Error::Numeric(format!("outcome rate {rate:e}: {e}")))?
                            .sample(&mut ry)
                    }
                }
                OutcomeSpec::QuantileShift { sigma, .. } => {
                    let e: f64 = StandardNormal.sample(&mut ry);
                    eta + sigma * (e - qshift)
                }
            };
            Ok(Subject {
                x,
                w,
                m: m_row,
                z,
                eta,
                y,
            })
        })
        .collect();
    let subjects = subjects.into_iter().collect::<Result<Vec<Subject>>>()?;

    let n = cfg.n;
    let sample = |f: &dyn Fn(usize, usize) -> f64| {
        FunctionalSample::new(DMatrix::from_fn(n, m, |i, j| f(i, j)), domain, t.clone())
    };
    let x = sample(&|i, j| subjects[i].x[j])?;
    let reps = (0..cfg.j).map(|r| sample(&|i, j| subjects[i].w[r][j])).collect::<Result<Vec<_>>>()?;
    let m_sample = match inst {
        Some(_) => Some(sample(&|i, j| subjects[i].m.as_ref().expect("instrument row")[j])?),
        None => None,
    };
    Ok(SimData {
        x,
        w: ReplicatedSurrogate::new(reps)?,
        m: m_sample,
        y: subjects.iter().map(|s| s.y).collect(),
        z: (q > 0).then(|| DMatrix::from_fn(n, q, |i, k| subjects[i].z[k])),
        eta: subjects.iter().map(|s| s.eta).collect(),
        beta_t,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> ScenarioConfig {
        ScenarioConfig {
            n: 50,
            m: 12,
            j: 2,
            domain: Domain::new(0.0, 1.0).unwrap(),
            beta: FunctionSpec::Constant(1.0),
            gamma: vec![0.5, -1.0],
            x_process: ProcessSpec {
                mean: FunctionSpec::Constant(0.0),
                covariance: Covariance::Matern {
                    variance: 1.0,
                    length_scale: 0.3,
                    nu: 1.5,
                },
            },
            error: ErrorSpec::Additive {
                covariance: Covariance::White { variance: 0.5 },
            },
            instrument: Some(InstrumentSpec {
                delta: FunctionSpec::Constant(1.0),
                eta: Covariance::White { variance: 0.2 },
            }),
            outcome: OutcomeSpec::Gaussian { sigma: 0.3 },
            seed: 7,
        }
    }

    #[test]
    fn kernel_factor_reproduces_matrix() {
        let d = Domain::new(0.0, 2.0).unwrap();
        let t = d.uniform_grid(9);
        for c in [
            Covariance::Matern {
                variance: 2.0,
                length_scale: 0.4,
                nu: 2.5,
            },
            Covariance::Exponential {
                variance: 1.0,
                length_scale: 1.0,
            },
            Covariance::Eigen {
                lambdas: vec![2.0, 1.0, 0.5],
            },
        ] {
            let k = c.matrix(d, &t);
            let l = kernel_factor(&k).unwrap();
            assert!((&l * l.transpose() - &k).amax() < 1e-10);
        }
    }

    #[test]
    fn indefinite_covariance_is_rejected() {
        let k = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(kernel_factor(&k).is_err());
    }

    #[test]
    fn orthonormal_fourier_functions() {
        let d = Domain::new(1.0, 2.0).unwrap();
        let t = d.uniform_grid(401);
        let w = trapezoid_weights(&t);
        let phi = fourier_orthonormal(d, &t, 5);
        let wm = DMatrix::from_diagonal(&DVector::from_column_slice(&w));
        let g = phi.transpose() * wm * &phi;
        assert!((g - DMatrix::identity(5, 5)).amax() < 1e-10);
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = base();
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a.y, b.y);
        assert_eq!(a.w, b.w);
        assert_eq!(a.m, b.m);
        let other = generate(&ScenarioConfig { seed: 8, ..cfg }).unwrap();
        assert_ne!(a.y, other.y);
    }

    #[test]
    fn json_config_round_trip() {
        let cfg = base();
        let text = serde_json::to_string(&cfg).unwrap();
        assert!(text.contains("\"J\":2"));
        assert_eq!(ScenarioConfig::from_json(&text).unwrap(), cfg);
        let bad = text.replace("\"nu\":1.5", "\"nu\":1.0");
        assert!(matches!(ScenarioConfig::from_json(&bad), Err(Error::Config(_))));
    }
}
