//! Corrected-loss quantile regression on FPC scores of replicate means.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use super::errcov::{estimate_sigma_u_replicates, ErrorCov};
use super::ReplicatedSurrogate;
use crate::error::{config, invalid, Error, Result};
use crate::expansion::{expand, fit_fpc, BasisSpec, BasisSystem, FpcBasis};
use crate::linalg::trapezoid_weights;
use crate::optim::{bfgs, BfgsOptions};
use crate::regress::{check_loss, fit_qr_with_bases, solve_quantile, FitResult, QrSpec, SofrData};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

fn phi(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// `P(N(0,1) <= -x)`.
fn upper_tail(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

fn check_h(h: f64) -> Result<()> {
    if !(h > 0.0 && h.is_finite()) {
        return invalid(format!("bandwidth must be positive, got {h}"));
    }
    Ok(())
}

// unchecked kernels used inside the optimizer
fn rho_h(r: f64, tau: f64, h: f64) -> f64 {
    r * (tau - upper_tail(r / h)) + h * phi(r / h)
}

fn rho_h_dr(r: f64, tau: f64, h: f64) -> f64 {
    tau - upper_tail(r / h)
}

fn phi_h(r: f64, h: f64) -> f64 {
    phi(r / h) / h
}

/// Check loss convolved with a Gaussian kernel of bandwidth `h`.
pub fn smoothed_check_loss(r: f64, tau: f64, h: f64) -> Result<f64> {
    check_h(h)?;
    Ok(rho_h(r, tau, h))
}

/// `rho_h(r) - (s2 / 2) phi_h(r)`, whose expectation under `r + U`,
/// `U ~ N(0, s2)`, matches `rho_h(r)` up to `O(s2^2)`.
pub fn corrected_loss(r: f64, s2: f64, tau: f64, h: f64) -> Result<f64> {
    check_h(h)?;
    if !(s2 >= 0.0) {
        return invalid(format!("error variance must be non-negative, got {s2}"));
    }
    Ok(rho_h(r, tau, h) - 0.5 * s2 * phi_h(r, h))
}

/// Partial derivative of [`corrected_loss`] in `r`.
pub fn corrected_loss_dr(r: f64, s2: f64, tau: f64, h: f64) -> Result<f64> {
    check_h(h)?;
    Ok(rho_h_dr(r, tau, h) + 0.5 * s2 * r / (h * h) * phi_h(r, h))
}

/// Partial derivative of [`corrected_loss`] in `s2`.
pub fn corrected_loss_ds2(r: f64, h: f64) -> Result<f64> {
    check_h(h)?;
    Ok(-0.5 * phi_h(r, h))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClsConfig {
    pub grid_k: Vec<usize>,
    pub grid_h: Vec<f64>,
    pub tau: f64,
    /// Seed of the held-out split used to choose `(k, h)`.
    #[serde(default)]
    pub seed: u64,
}

impl ClsConfig {
    fn validate(&self, n: usize, m: usize) -> Result<()> {
        QrSpec::new(self.tau)?;
        if self.grid_k.is_empty() || self.grid_h.is_empty() {
            return config("CLS grids for k and h must be non-empty");
        }
        let kmax = (n - 1).min(m);
        if let Some(&k) = self.grid_k.iter().find(|&&k| k == 0 || k > kmax) {
            return config(format!("CLS component count {k} outside 1..={kmax}"));
        }
        if let Some(h) = self.grid_h.iter().find(|h| !(**h > 0.0 && h.is_finite())) {
            return config(format!("CLS bandwidth must be positive, got {h}"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClsCandidate {
    pub k: usize,
    pub h: f64,
    /// Check loss on the held-out subjects.
    pub holdout_loss: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClsResult {
    /// Coefficients on the chosen FPC eigenfunctions.
    pub beta_hat: Vec<f64>,
    /// Intercept, then scalar covariates.
    pub theta: Vec<f64>,
    pub t_points: Vec<f64>,
    pub beta_t: Vec<f64>,
    pub k: usize,
    pub h: f64,
    pub converged: bool,
    pub candidates: Vec<ClsCandidate>,
    pub basis: FpcBasis,
    pub sigma_u: ErrorCov,
    /// Plain quantile fit on the same scores.
    pub naive: FitResult,
}

struct Problem<'a> {
    y: &'a DVector<f64>,
    x: DMatrix<f64>,
    sigma_k: DMatrix<f64>,
    k: usize,
    tau: f64,
    h: f64,
}

impl Problem<'_> {
    fn b(&self, c: &DVector<f64>) -> DVector<f64> {
        c.rows(1, self.k).into_owned()
    }

    fn value_grad(&self, c: &DVector<f64>) -> (f64, DVector<f64>) {
        let b = self.b(c);
        let sb = &self.sigma_k * &b;
        let s2 = b.dot(&sb).max(0.0);
        let r = self.y - &self.x * c;
        let mut f = 0.0;
        let mut dr = DVector::<f64>::zeros(r.len());
        let mut ds2 = 0.0;
        for (i, &ri) in r.iter().enumerate() {
            let ph = phi_h(ri, self.h);
            f += rho_h(ri, self.tau, self.h) - 0.5 * s2 * ph;
            dr[i] = rho_h_dr(ri, self.tau, self.h) + 0.5 * s2 * ri / (self.h * self.h) * ph;
            ds2 -= 0.5 * ph;
        }
        let mut g = -(self.x.transpose() * dr);
        let mut gb = g.rows_mut(1, self.k);
        gb += sb * (2.0 * ds2);
        (f, g)
    }

    fn solve(&self) -> Result<(DVector<f64>, bool)> {
        let start = solve_quantile(&self.x, self.y, self.tau)?.coef;
        let res = bfgs(
            |c| self.value_grad(c),
            start,
            BfgsOptions {
                max_iterations: 1000,
                gradient_tolerance: 1e-9 * self.y.len() as f64,
                value_tolerance: 1e-15,
            },
        );
        if res.x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("corrected-loss minimization diverged".into()));
        }
        Ok((res.x, res.converged))
    }
}

fn design(scores: &DMatrix<f64>, k: usize, z: Option<&DMatrix<f64>>, rows: &[usize]) -> DMatrix<f64> {
    let q = z.map_or(0, |z| z.ncols());
    DMatrix::from_fn(rows.len(), 1 + k + q, |r, c| {
        let i = rows[r];
        match c {
            0 => 1.0,
            c if c <= k => scores[(i, c - 1)],
            c => z.expect("scalar column")[(i, c - 1 - k)],
        }
    })
}

/// Corrected-loss quantile regression with `(k, h)` chosen on a seeded
/// 80/20 split of the subjects.
pub fn fit_qr_cls(y: &[f64], w: &ReplicatedSurrogate, z: Option<&DMatrix<f64>>, cfg: &ClsConfig) -> Result<ClsResult> {
    w.require_replicates("corrected-loss estimation")?;
    let (n, m) = (w.n(), w.m());
    if y.len() != n {
        return Err(Error::Shape(format!("{} responses for {n} subjects", y.len())));
    }
    if let Some(z) = z {
        if z.nrows() != n {
            return Err(Error::Shape(format!("Z has {} rows, expected {n}", z.nrows())));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return invalid("scalar covariates must be finite numbers");
        }
    }
    if y.iter().any(|v| !v.is_finite()) {
        return invalid("response contains non-finite values");
    }
    cfg.validate(n, m)?;

    let sigma_u = estimate_sigma_u_replicates(w)?;
    let wbar = w.mean();
    let kmax = *cfg.grid_k.iter().max().expect("non-empty grid");
    let fpc = fit_fpc(&wbar, kmax)?;
    let scores = expand(&wbar, &BasisSystem::Fpc(fpc.clone()))?.coef;
    // error covariance of the scores of the replicate mean
    let tw = trapezoid_weights(wbar.t_points());
    let mut wxi = fpc.eigenfunctions.values().clone();
    for (j, mut row) in wxi.row_iter_mut().enumerate() {
        row *= tw[j];
    }
    let sigma_scores = wxi.transpose() * (&sigma_u.matrix / w.j() as f64) * &wxi;
    let yv = DVector::from_column_slice(y);

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let n_test = ((n as f64) * 0.2).round().max(1.0) as usize;
    let (test, train) = order.split_at(n_test);
    let y_train = DVector::from_iterator(train.len(), train.iter().map(|&i| y[i]));
    let y_test: Vec<f64> = test.iter().map(|&i| y[i]).collect();

    let mut candidates = Vec::new();
    for &k in &cfg.grid_k {
        let sigma_k = sigma_scores.view((0, 0), (k, k)).into_owned();
        let x_train = design(&scores, k, z, train);
        let x_test = design(&scores, k, z, test);
        for &h in &cfg.grid_h {
            let prob = Problem {
                y: &y_train,
                x: x_train.clone(),
                sigma_k: sigma_k.clone(),
                k,
                tau: cfg.tau,
                h,
            };
            let (coef, converged) = prob.solve()?;
            let pred = &x_test * coef;
            let loss = y_test.iter().zip(pred.iter()).map(|(y, p)| check_loss(y - p, cfg.tau)).sum::<f64>();
            candidates.push(ClsCandidate {
                k,
                h,
                holdout_loss: if loss.is_finite() { loss } else { f64::INFINITY },
                converged,
            });
        }
    }
    let best = candidates
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.holdout_loss.total_cmp(&b.1.holdout_loss).then(a.0.cmp(&b.0)))
        .map(|(_, c)| *c)
        .expect("non-empty grid");

    let all: Vec<usize> = (0..n).collect();
    let k = best.k;
    let prob = Problem {
        y: &yv,
        x: design(&scores, k, z, &all),
        sigma_k: sigma_scores.view((0, 0), (k, k)).into_owned(),
        k,
        tau: cfg.tau,
        h: best.h,
    };
    let (coef, converged) = prob.solve()?;
    let basis = fpc.truncate(k)?;
    let beta_hat: Vec<f64> = coef.rows(1, k).iter().copied().collect();
    let beta_t = (basis.eigenfunctions.values() * DVector::from_column_slice(&beta_hat)).iter().copied().collect();
    let mut theta = vec![coef[0]];
    theta.extend(coef.rows(1 + k, coef.len() - 1 - k).iter());

    let fc = [wbar.clone()];
    let naive = fit_qr_with_bases(
        SofrData::new(y, &fc).with_z(z),
        &QrSpec::new(cfg.tau)?,
        vec![BasisSystem::Fpc(basis.clone())],
        vec![BasisSpec::fpc(k)],
    )?;

    Ok(ClsResult {
        beta_hat,
        theta,
        t_points: wbar.t_points().to_vec(),
        beta_t,
        k,
        h: best.h,
        converged,
        candidates,
        basis,
        sigma_u,
        naive,
    })
}
