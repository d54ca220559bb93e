//! Linear quantile regression by exact check-loss minimization.
//!
//! A smoothed (Huber-type) check loss is minimized by damped Newton steps
//! with a shrinking smoothing band. The result then seeds an exact descent
//! over interpolating vertices, which ends at a point with zero-residual
//! interpolation of `p` observations and no descent edge.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QrSpec {
    pub tau: f64,
}

impl QrSpec {
    pub fn new(tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau < 1.0) {
            return invalid(format!("tau must lie in (0, 1), got {tau}"));
        }
        Ok(Self { tau })
    }
}

/// `u (tau - 1{u < 0})`.
pub fn check_loss(u: f64, tau: f64) -> f64 {
    if u < 0.0 {
        u * (tau - 1.0)
    } else {
        u * tau
    }
}

pub fn check_objective(r: &DVector<f64>, tau: f64) -> f64 {
    r.iter().map(|&u| check_loss(u, tau)).sum()
}

#[derive(Debug, Clone)]
pub struct QrSolution {
    pub coef: DVector<f64>,
    pub objective: f64,
    /// Vertex-descent pivots taken after smoothing.
    pub iterations: usize,
    pub converged: bool,
}

/// Minimizes `sum_i check_loss(y_i - x_i b, tau)`.
///
/// A design consisting of a single constant column is solved in closed form,
/// returning the midpoint of the optimal interval when it is not unique.
pub fn solve_quantile(x: &DMatrix<f64>, y: &DVector<f64>, tau: f64) -> Result<QrSolution> {
    QrSpec::new(tau)?;
    let (n, p) = x.shape();
    if y.len() != n {
        return Err(Error::Shape(format!("design has {n} rows, response {}", y.len())));
    }
    if y.iter().chain(x.iter()).any(|v| !v.is_finite()) {
        return invalid("quantile regression data contain non-finite values");
    }
    if n < p || p == 0 {
        return invalid(format!("{n} observations cannot determine {p} coefficients"));
    }
    let aliased = linalg::aliased_columns(x);
    if !aliased.is_empty() {
        return Err(Error::RankDeficient { aliased });
    }
    if p == 1 {
        let c = x[(0, 0)];
        if x.iter().all(|&v| v == c) {
            let q = midpoint_quantile(y.as_slice(), tau);
            let coef = DVector::from_element(1, q / c);
            let objective = check_objective(&(y - x * &coef), tau);
            return Ok(QrSolution {
                coef,
                objective,
                iterations: 0,
                converged: true,
            });
        }
    }
    let start = smoothed_newton(x, y, tau)?;
    vertex_descent(x, y, tau, &start)
}

/// Midpoint of the set of minimizers of `sum check_loss(y_i - q, tau)`.
pub fn midpoint_quantile(y: &[f64], tau: f64) -> f64 {
    let mut s = y.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let n = s.len();
    let nt = n as f64 * tau;
    let k = nt.round();
    if (nt - k).abs() <= 1e-12 * n as f64 && k >= 1.0 && (k as usize) < n {
        let k = k as usize;
        0.5 * (s[k - 1] + s[k])
    } else {
        s[(nt.ceil() as usize).clamp(1, n) - 1]
    }
}

fn smooth_loss(u: f64, tau: f64, kappa: f64) -> f64 {
    if u.abs() <= kappa {
        u * u / (4.0 * kappa) + (tau - 0.5) * u + kappa / 4.0
    } else {
        check_loss(u, tau)
    }
}

fn smooth_score(u: f64, tau: f64, kappa: f64) -> f64 {
    if u > kappa {
        tau
    } else if u < -kappa {
        tau - 1.0
    } else {
        u / (2.0 * kappa) + tau - 0.5
    }
}

fn smoothed_newton(x: &DMatrix<f64>, y: &DVector<f64>, tau: f64) -> Result<DVector<f64>> {
    let (n, p) = x.shape();
    let mut beta = linalg::least_squares(x, y)?;
    let scale = y.amax().max(1e-300);
    let mut r = y - x * &beta;
    let mut abs_r: Vec<f64> = r.iter().map(|v| v.abs()).collect();
    abs_r.sort_by(|a, b| a.total_cmp(b));
    let mut kappa = abs_r[n / 2].max(1e-8 * scale);
    let floor = 1e-10 * scale;
    let f = |r: &DVector<f64>, kappa: f64| r.iter().map(|&u| smooth_loss(u, tau, kappa)).sum::<f64>();

    loop {
        let mut fk = f(&r, kappa);
        for _ in 0..30 {
            // quadratic majorizer curvature outside the band keeps the system definite
            let mut xtdx = DMatrix::<f64>::zeros(p, p);
            let mut grad = DVector::<f64>::zeros(p);
            for i in 0..n {
                let xi = x.row(i);
                let d = 1.0 / (2.0 * r[i].abs().max(kappa));
                let s = smooth_score(r[i], tau, kappa);
                for a in 0..p {
                    grad[a] -= s * xi[a];
                    let da = d * xi[a];
                    for b in a..p {
                        xtdx[(a, b)] += da * xi[b];
                    }
                }
            }
            for a in 0..p {
                for b in 0..a {
                    xtdx[(a, b)] = xtdx[(b, a)];
                }
            }
            let Some(chol) = xtdx.cholesky() else { break };
            let step = -chol.solve(&grad);
            let mut t = 1.0;
            let mut improved = false;
            for _ in 0..40 {
                let cand = &beta + &step * t;
                let rc = y - x * &cand;
                let fc = f(&rc, kappa);
                if fc < fk {
                    let gain = fk - fc;
                    beta = cand;
                    r = rc;
                    fk = fc;
                    improved = gain > 1e-15 * (1.0 + fk);
                    break;
                }
                t *= 0.5;
            }
            if !improved {
                break;
            }
        }
        let in_band = r.iter().filter(|u| u.abs() <= kappa).count();
        if kappa <= floor || in_band <= p {
            break;
        }
        kappa = (kappa * 0.1).max(floor);
    }
    Ok(beta)
}

/// Picks `p` observations with the smallest residuals whose rows are linearly
/// independent.
fn initial_basis(x: &DMatrix<f64>, r: &DVector<f64>) -> Result<Vec<usize>> {
    let (n, p) = x.shape();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| r[a].abs().total_cmp(&r[b].abs()));
    let mut q: Vec<DVector<f64>> = Vec::with_capacity(p);
    let mut basis = Vec::with_capacity(p);
    for i in order {
        let mut v = x.row(i).transpose();
        let norm0 = v.norm();
        if norm0 == 0.0 {
            continue;
        }
        for _ in 0..2 {
            for qk in &q {
                let c = qk.dot(&v);
                v.axpy(-c, qk, 1.0);
            }
        }
        let nv = v.norm();
        if nv > 1e-8 * norm0 {
            q.push(v / nv);
            basis.push(i);
            if basis.len() == p {
                return Ok(basis);
            }
        }
    }
    Err(Error::RankDeficient {
        aliased: linalg::aliased_columns(x),
    })
}

fn vertex_descent(x: &DMatrix<f64>, y: &DVector<f64>, tau: f64, start: &DVector<f64>) -> Result<QrSolution> {
    let (n, p) = x.shape();
    let scale = y.amax().max(1e-300);
    let ztol = 1e-12 * scale;
    let r0 = y - x * start;
    let mut basis = initial_basis(x, &r0)?;
    let mut in_basis = vec![false; n];
    for &i in &basis {
        in_basis[i] = true;
    }
    let max_iter = 20 * n + 1000;
    let mut bland = false;
    let mut last_obj = f64::INFINITY;

    for iter in 0..max_iter {
        let xh = DMatrix::from_fn(p, p, |a, b| x[(basis[a], b)]);
        let yh = DVector::from_fn(p, |a, _| y[basis[a]]);
        let lu = xh.lu();
        let beta = lu.solve(&yh).ok_or_else(|| Error::Singular {
            what: "quantile vertex system".into(),
            condition: f64::INFINITY,
        })?;
        let dinv = lu.try_inverse().ok_or_else(|| Error::Singular {
            what: "quantile vertex system".into(),
            condition: f64::INFINITY,
        })?;
        let mut r = y - x * &beta;
        for &i in &basis {
            r[i] = 0.0;
        }
        let obj = check_objective(&r, tau);

        let mut v = DVector::<f64>::zeros(p);
        let mut zero_set = Vec::new();
        for i in 0..n {
            if in_basis[i] {
                continue;
            }
            if r[i].abs() <= ztol {
                zero_set.push(i);
            } else {
                let psi = if r[i] > 0.0 { tau } else { tau - 1.0 };
                v.axpy(psi, &x.row(i).transpose(), 1.0);
            }
        }
        let s = dinv.transpose() * &v;
        let eps = 1e-12 * (n as f64);
        let mut choice: Option<(usize, f64, f64)> = None;
        for j in 0..p {
            let dj = dinv.column(j);
            let mut plus = (1.0 - tau) - s[j];
            let mut minus = tau + s[j];
            for &i in &zero_set {
                let a = x.row(i).transpose().dot(&dj);
                plus += check_loss(-a, tau);
                minus += check_loss(a, tau);
            }
            for (sigma, slope) in [(1.0, plus), (-1.0, minus)] {
                if slope < -eps {
                    let better = match choice {
                        None => true,
                        Some((_, _, best)) => !bland && slope < best,
                    };
                    if better {
                        choice = Some((j, sigma, slope));
                    }
                }
            }
        }
        let Some((j, sigma, slope0)) = choice else {
            return Ok(QrSolution {
                coef: beta,
                objective: obj,
                iterations: iter,
                converged: true,
            });
        };

        let delta = dinv.column(j) * sigma;
        let a = x * &delta;
        let mut breaks: Vec<(f64, f64, usize)> = (0..n)
            .filter(|&i| !in_basis[i] && r[i].abs() > ztol && a[i] != 0.0)
            .filter_map(|i| {
                let t = r[i] / a[i];
                (t > 0.0).then_some((t, a[i].abs(), i))
            })
            .collect();
        breaks.sort_by(|u, w| u.0.total_cmp(&w.0).then(u.2.cmp(&w.2)));
        let mut slope = slope0;
        let mut entering = None;
        for &(_, w, i) in &breaks {
            slope += w;
            if slope >= 0.0 {
                entering = Some(i);
                break;
            }
        }
        let Some(i) = entering else {
            return Err(Error::Numeric("quantile objective unbounded along a vertex edge".into()));
        };
        in_basis[basis[j]] = false;
        basis[j] = i;
        in_basis[i] = true;
        bland = obj >= last_obj;
        last_obj = obj;
    }
    let xh = DMatrix::from_fn(p, p, |a, b| x[(basis[a], b)]);
    let yh = DVector::from_fn(p, |a, _| y[basis[a]]);
    let beta = xh.lu().solve(&yh).ok_or_else(|| Error::Singular {
        what: "quantile vertex system".into(),
        condition: f64::INFINITY,
    })?;
    let objective = check_objective(&(y - x * &beta), tau);
    Ok(QrSolution {
        coef: beta,
        objective,
        iterations: max_iter,
        converged: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn intercept(y: &[f64], tau: f64) -> f64 {
        let x = DMatrix::from_element(y.len(), 1, 1.0);
        solve_quantile(&x, &DVector::from_column_slice(y), tau).unwrap().coef[0]
    }

    #[test]
    fn median_odd() {
        assert_eq!(intercept(&[1.0, 2.0, 100.0], 0.5), 2.0);
    }

    #[test]
    fn median_even_midpoint() {
        assert_eq!(intercept(&[1.0, 2.0, 3.0, 100.0], 0.5), 2.5);
    }

    #[test]
    fn lower_quartile_matches_order_statistic_scan() {
        let y: Vec<f64> = (0..37).map(|i| ((i * 53 % 37) as f64).sin() * 10.0 + i as f64 * 0.1).collect();
        let q = intercept(&y, 0.25);
        let obj = |q: f64| y.iter().map(|&v| check_loss(v - q, 0.25)).sum::<f64>();
        let best = y.iter().map(|&v| obj(v)).fold(f64::INFINITY, f64::min);
        assert!((obj(q) - best).abs() <= 1e-12 * best);
    }

    #[test]
    fn scaled_intercept_column() {
        let x = DMatrix::from_element(3, 1, 2.0);
        let sol = solve_quantile(&x, &DVector::from_vec(vec![1.0, 2.0, 100.0]), 0.5).unwrap();
        assert_eq!(sol.coef[0], 1.0);
    }

    #[test]
    fn exact_fit_recovered() {
        let n = 15;
        let x = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { i as f64 });
        let y = DVector::from_fn(n, |i, _| 2.0 - 0.5 * i as f64);
        let sol = solve_quantile(&x, &y, 0.3).unwrap();
        assert!(sol.objective.abs() < 1e-12);
        assert!((sol.coef[0] - 2.0).abs() < 1e-12 && (sol.coef[1] + 0.5).abs() < 1e-12);
    }

    #[test]
    fn subgradient_condition_holds() {
        let n = 40;
        let x = DMatrix::from_fn(n, 3, |i, j| match j {
            0 => 1.0,
            1 => (i as f64 * 0.7).cos(),
            _ => ((i * i) % 13) as f64 / 13.0,
        });
        let y = DVector::from_fn(n, |i, _| (i as f64 * 1.3).sin() * 3.0 + (i % 4) as f64);
        let tau = 0.7;
        let sol = solve_quantile(&x, &y, tau).unwrap();
        assert!(sol.converged);
        let r = &y - &x * &sol.coef;
        let neg = r.iter().filter(|&&u| u < -1e-9).count() as f64;
        let nonpos = r.iter().filter(|&&u| u <= 1e-9).count() as f64;
        assert!(neg <= n as f64 * tau && n as f64 * tau <= nonpos);
    }

    #[test]
    fn rejects_bad_tau() {
        let x = DMatrix::from_element(3, 1, 1.0);
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        assert!(solve_quantile(&x, &y, 1.0).is_err());
        assert!(solve_quantile(&x, &y, 0.0).is_err());
    }
}
