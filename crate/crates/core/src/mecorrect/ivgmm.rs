//! Method-of-moments functional linear regression with a functional
//! instrument.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::expansion::{expand, BasisSpec, BasisSystem};
use crate::fda::{BasisSeries, FunctionalSample};
use crate::linalg::{condition_number, symmetrize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IvGmmOptions {
    pub basis: BasisSpec,
    pub bootstrap: bool,
    pub n_boot: usize,
    pub seed: u64,
    /// Coverage of the percentile band.
    pub level: f64,
    /// Centre `Y` and the scores and report an intercept.
    pub intercept: bool,
    /// Grid for the returned curve; defaults to the sampling grid.
    pub t_grid: Option<Vec<f64>>,
}

impl Default for IvGmmOptions {
    fn default() -> Self {
        Self {
            basis: BasisSpec::bspline(8, 3),
            bootstrap: false,
            n_boot: 500,
            seed: 1,
            level: 0.95,
            intercept: false,
            t_grid: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapBand {
    pub level: f64,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Resamples that produced an estimate.
    pub n_used: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IvGmmResult {
    pub method: String,
    /// Basis coefficients of the slope function.
    pub gamma: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intercept: Option<f64>,
    pub beta: BasisSeries,
    pub basis: BasisSystem,
    pub t_grid: Vec<f64>,
    pub beta_t: Vec<f64>,
    /// Condition number of the normal matrix.
    pub condition: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ci: Option<BootstrapBand>,
}

const MAX_CONDITION: f64 = 1e12;

struct Moments {
    gamma: DVector<f64>,
    intercept: Option<f64>,
    condition: f64,
}

fn solve_moments(y: &DVector<f64>, ws: &DMatrix<f64>, ms: &DMatrix<f64>, intercept: bool) -> Result<Moments> {
    let n = y.len() as f64;
    let (mut y, mut ws, mut ms) = (y.clone(), ws.clone(), ms.clone());
    let (mut ybar, mut wbar) = (0.0, DVector::zeros(ws.ncols()));
    if intercept {
        ybar = y.mean();
        y.add_scalar_mut(-ybar);
        for (k, (mut c, mut cm)) in ws.column_iter_mut().zip(ms.column_iter_mut()).enumerate() {
            wbar[k] = c.mean();
            c.add_scalar_mut(-wbar[k]);
            let b = cm.mean();
            cm.add_scalar_mut(-b);
        }
    }
    // Omega_MW (K x K) and Omega_MY (K)
    let omega_mw = ms.transpose() * &ws / n;
    let omega_my = ms.transpose() * &y / n;
    let normal = symmetrize(&(omega_mw.transpose() * &omega_mw));
    let condition = condition_number(&normal);
    if !(condition <= MAX_CONDITION) {
        return Err(Error::Singular {
            what: "instrument too weak / basis too rich".into(),
            condition,
        });
    }
    let chol = normal.cholesky().ok_or(Error::Singular {
        what: "instrument too weak / basis too rich".into(),
        condition,
    })?;
    let gamma = chol.solve(&(omega_mw.transpose() * omega_my));
    let intercept = intercept.then(|| ybar - wbar.dot(&gamma));
    Ok(Moments {
        gamma,
        intercept,
        condition,
    })
}

/// Type-7 sample quantile of sorted data.
fn quantile_sorted(v: &[f64], p: f64) -> f64 {
    let h = (v.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(v.len() - 1);
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

/// Functional linear regression `Y = int beta X` with the error-prone `W`
/// instrumented by `M`, both projected on the same basis.
pub fn fit_lr_ivgmm(y: &[f64], w: &FunctionalSample, m: &FunctionalSample, opts: &IvGmmOptions) -> Result<IvGmmResult> {
    let (n, _) = w.dim();
    if m.dim() != w.dim() || !m.same_grid(w) {
        return Err(Error::Shape("instrument must match W in shape and grid".into()));
    }
    if y.len() != n {
        return Err(Error::Shape(format!("{} responses for {n} curves", y.len())));
    }
    if opts.bootstrap && opts.n_boot < 2 {
        return config("bootstrap needs at least two resamples");
    }
    if !(opts.level > 0.0 && opts.level < 1.0) {
        return config(format!("confidence level must lie in (0, 1), got {}", opts.level));
    }
    let basis = opts.basis.resolve(w)?;
    let ws = expand(w, &basis)?.coef;
    let ms = expand(m, &basis)?.coef;
    let yv = DVector::from_column_slice(y);
    let fit = solve_moments(&yv, &ws, &ms, opts.intercept)?;
    let t_grid = opts.t_grid.clone().unwrap_or_else(|| w.t_points().to_vec());
    let phi = basis.eval(&t_grid)?;
    let beta_t: Vec<f64> = (&phi * &fit.gamma).iter().copied().collect();
    let gamma: Vec<f64> = fit.gamma.iter().copied().collect();

    let ci = if opts.bootstrap {
        let curves: Vec<Option<DVector<f64>>> = (0..opts.n_boot)
            .into_par_iter()
            .map(|b| {
                let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
                rng.set_stream(b as u64);
                let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
                let yb = DVector::from_iterator(n, idx.iter().map(|&i| y[i]));
                let wb = ws.select_rows(&idx);
                let mb = ms.select_rows(&idx);
                solve_moments(&yb, &wb, &mb, opts.intercept).ok().map(|f| &phi * f.gamma)
            })
            .collect();
        let ok: Vec<DVector<f64>> = curves.into_iter().flatten().collect();
        if ok.len() < 2 {
            return Err(Error::Numeric("too few bootstrap resamples produced an estimate".into()));
        }
        let alpha = (1.0 - opts.level) / 2.0;
        let (mut lower, mut upper) = (Vec::new(), Vec::new());
        for j in 0..t_grid.len() {
            let mut v: Vec<f64> = ok.iter().map(|c| c[j]).collect();
            v.sort_by(f64::total_cmp);
            lower.push(quantile_sorted(&v, alpha));
            upper.push(quantile_sorted(&v, 1.0 - alpha));
        }
        Some(BootstrapBand {
            level: opts.level,
            lower,
            upper,
            n_used: ok.len(),
        })
    } else {
        None
    };

    Ok(IvGmmResult {
        method: "lr-ivgmm".into(),
        beta: basis.series(&gamma)?,
        gamma,
        intercept: fit.intercept,
        basis,
        t_grid,
        beta_t,
        condition: fit.condition,
        ci,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn type7_quantiles() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&v, 0.0), 1.0);
        assert_eq!(quantile_sorted(&v, 1.0), 4.0);
        assert!((quantile_sorted(&v, 0.5) - 2.5).abs() < 1e-15);
        assert!((quantile_sorted(&v, 0.25) - 1.75).abs() < 1e-15);
    }

    #[test]
    fn exactly_identified_system() {
        let ws = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let y = DVector::from_vec(vec![2.0, -1.0, 1.0]);
        let f = solve_moments(&y, &ws, &ws, false).unwrap();
        assert!((f.gamma[0] - 2.0).abs() < 1e-12 && (f.gamma[1] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_instrument_is_singular() {
        let ws = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let ms = DMatrix::zeros(3, 2);
        let y = DVector::from_vec(vec![2.0, -1.0, 1.0]);
        let err = solve_moments(&y, &ws, &ms, false).err().unwrap();
        assert!(err.to_string().contains("instrument too weak / basis too rich"));
    }
}
