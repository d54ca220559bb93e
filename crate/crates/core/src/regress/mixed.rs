//! One-way random intercept models: REML for the gaussian case and
//! penalized quasi-likelihood for the other families.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::glm::{irls, GlmSpec, IrlsOptions};
use super::Convergence;
use crate::error::{invalid, Error, Result};
use crate::optim::golden_section;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomInterceptFit {
    pub sigma2_u: f64,
    /// Residual variance; fixed at 1 for the quasi-likelihood fits.
    pub sigma2_e: f64,
    /// Predicted intercept per group, in order of group index.
    pub blup: Vec<f64>,
    pub method: String,
}

/// Maps arbitrary group labels to `0..G` in order of first appearance.
pub fn index_groups(labels: &[usize]) -> (Vec<usize>, usize) {
    let mut seen = std::collections::HashMap::new();
    let idx = labels
        .iter()
        .map(|l| {
            let next = seen.len();
            *seen.entry(*l).or_insert(next)
        })
        .collect();
    (idx, seen.len())
}

struct Groups {
    members: Vec<Vec<usize>>,
}

impl Groups {
    fn new(idx: &[usize], g: usize) -> Self {
        let mut members = vec![Vec::new(); g];
        for (i, &k) in idx.iter().enumerate() {
            members[k].push(i);
        }
        Self { members }
    }
}

struct Profile {
    beta: DVector<f64>,
    /// `r' H^-1 r` at the GLS estimate.
    quad: f64,
    logdet_h: f64,
    logdet_xhx: f64,
}

/// GLS pieces for `H = W^-1 + theta Z Z'` using the per-group block inverse.
fn profile(x: &DMatrix<f64>, y: &DVector<f64>, w: &DVector<f64>, groups: &Groups, theta: f64) -> Option<Profile> {
    let p = x.ncols();
    let mut xhx = DMatrix::<f64>::zeros(p, p);
    let mut xhy = DVector::<f64>::zeros(p);
    let mut yhy = 0.0;
    let mut logdet_h = 0.0;
    for idx in &groups.members {
        let mut xw = DVector::<f64>::zeros(p);
        let mut yw = 0.0;
        let mut s = 0.0;
        for &i in idx {
            let wi = w[i];
            s += wi;
            yw += wi * y[i];
            logdet_h -= wi.ln();
            for a in 0..p {
                let xa = x[(i, a)] * wi;
                xw[a] += xa;
                xhy[a] += xa * y[i];
                for b in a..p {
                    xhx[(a, b)] += xa * x[(i, b)];
                }
            }
            yhy += wi * y[i] * y[i];
        }
        let c = theta / (1.0 + theta * s);
        logdet_h += (1.0 + theta * s).ln();
        for a in 0..p {
            xhy[a] -= c * xw[a] * yw;
            for b in a..p {
                xhx[(a, b)] -= c * xw[a] * xw[b];
            }
        }
        yhy -= c * yw * yw;
    }
    for a in 0..p {
        for b in 0..a {
            xhx[(a, b)] = xhx[(b, a)];
        }
    }
    let chol = xhx.cholesky()?;
    let beta = chol.solve(&xhy);
    let quad = (yhy - beta.dot(&xhy)).max(0.0);
    let logdet_xhx = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    Some(Profile {
        beta,
        quad,
        logdet_h,
        logdet_xhx,
    })
}

fn blups(x: &DMatrix<f64>, y: &DVector<f64>, w: &DVector<f64>, groups: &Groups, beta: &DVector<f64>, theta: f64) -> Vec<f64> {
    let r = y - x * beta;
    groups
        .members
        .iter()
        .map(|idx| {
            let s: f64 = idx.iter().map(|&i| w[i]).sum();
            let wr: f64 = idx.iter().map(|&i| w[i] * r[i]).sum();
            theta * wr / (1.0 + theta * s)
        })
        .collect()
}

pub(crate) struct LmmFit {
    pub beta: DVector<f64>,
    pub sigma2_u: f64,
    pub sigma2_e: f64,
    pub blup: Vec<f64>,
}

/// Weighted REML fit of `y = x b + u_g + e`, `Var(e_i) = s2 / w_i`.
///
/// With `profile_scale` the residual scale `s2` is estimated; otherwise it is
/// fixed at one and `theta` is the random-intercept variance itself.
pub(crate) fn reml(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    w: &DVector<f64>,
    group_idx: &[usize],
    n_groups: usize,
    profile_scale: bool,
) -> Result<LmmFit> {
    let n = y.len();
    let p = x.ncols();
    if n <= p {
        return invalid("random intercept fit needs more observations than coefficients");
    }
    let groups = Groups::new(group_idx, n_groups);
    let dfree = (n - p) as f64;
    let neg_ll = |theta: f64| -> f64 {
        match profile(x, y, w, &groups, theta) {
            Some(pr) if profile_scale => {
                dfree * (pr.quad / dfree).max(1e-300).ln() + pr.logdet_h + pr.logdet_xhx
            }
            Some(pr) => pr.quad + pr.logdet_h + pr.logdet_xhx,
            None => f64::INFINITY,
        }
    };
    // scan log(theta), refine around the best point, and compare with theta = 0
    let (lo, hi, steps) = (-18.0_f64, 12.0_f64, 61);
    let mut best = (f64::NEG_INFINITY, neg_ll(0.0));
    let mut best_k = None;
    for k in 0..steps {
        let lt = lo + (hi - lo) * k as f64 / (steps - 1) as f64;
        let v = neg_ll(lt.exp());
        if v < best.1 {
            best = (lt, v);
            best_k = Some(k);
        }
    }
    let theta = match best_k {
        None => 0.0,
        Some(k) => {
            let h = (hi - lo) / (steps - 1) as f64;
            let a = lo + h * (k as f64 - 1.0);
            let b = lo + h * (k as f64 + 1.0);
            let (lt, v) = golden_section(|lt| neg_ll(lt.exp()), a, b, 1e-10, 200);
            if v <= best.1 {
                lt.exp()
            } else {
                best.0.exp()
            }
        }
    };
    let pr = profile(x, y, w, &groups, theta).ok_or_else(|| Error::Singular {
        what: "random intercept normal equations".into(),
        condition: f64::INFINITY,
    })?;
    let sigma2_e = if profile_scale { pr.quad / dfree } else { 1.0 };
    let blup = blups(x, y, w, &groups, &pr.beta, theta);
    Ok(LmmFit {
        beta: pr.beta,
        sigma2_u: theta * sigma2_e,
        sigma2_e,
        blup,
    })
}

/// Random-intercept GLM: REML when gaussian-identity, PQL otherwise.
pub(crate) fn fit_random_intercept(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    group_labels: &[usize],
    spec: &GlmSpec,
    opts: IrlsOptions,
) -> Result<(DVector<f64>, RandomInterceptFit, Convergence)> {
    if group_labels.len() != y.len() {
        return Err(Error::Shape(format!(
            "{} group labels for {} observations",
            group_labels.len(),
            y.len()
        )));
    }
    let (gidx, g) = index_groups(group_labels);
    if g < 2 {
        return invalid("random intercept needs at least two groups");
    }
    let n = y.len();
    let glm_fit = irls(x, y, None, spec, opts)?;
    if matches!(spec.family, super::Family::Gaussian) && matches!(spec.link, super::Link::Identity) {
        let fit = reml(x, y, &DVector::from_element(n, 1.0), &gidx, g, true)?;
        return Ok((
            fit.beta,
            RandomInterceptFit {
                sigma2_u: fit.sigma2_u,
                sigma2_e: fit.sigma2_e,
                blup: fit.blup,
                method: "reml".into(),
            },
            Convergence {
                converged: true,
                iterations: 1,
                final_change: 0.0,
            },
        ));
    }

    let mut beta = glm_fit.coef;
    let mut u = vec![0.0; g];
    let mut s2u = 0.0;
    let mut change = f64::INFINITY;
    for iter in 1..=opts.max_iterations {
        let eta = DVector::from_fn(n, |i, _| x.row(i).transpose().dot(&beta) + u[gidx[i]]);
        let (z, w) = spec.working(y, &eta);
        let fit = reml(x, &z, &w, &gidx, g, false)?;
        change = (&fit.beta - &beta).amax() / (1.0 + beta.amax())
            + (fit.sigma2_u - s2u).abs() / (1.0 + s2u);
        beta = fit.beta;
        u = fit.blup;
        s2u = fit.sigma2_u;
        if change < 1e-8 {
            return Ok((
                beta,
                RandomInterceptFit {
                    sigma2_u: s2u,
                    sigma2_e: 1.0,
                    blup: u,
                    method: "pql".into(),
                },
                Convergence {
                    converged: true,
                    iterations: iter,
                    final_change: change,
                },
            ));
        }
    }
    Ok((
        beta,
        RandomInterceptFit {
            sigma2_u: s2u,
            sigma2_e: 1.0,
            blup: u,
            method: "pql".into(),
        },
        Convergence {
            converged: false,
            iterations: opts.max_iterations,
            final_change: change,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Balanced one-way ANOVA: REML equals the truncated moment estimator.
    #[test]
    fn balanced_reml_matches_anova() {
        let groups = 6;
        let per = 4;
        let n = groups * per;
        let effects = [1.0, -0.5, 2.0, 0.3, -1.2, 0.8];
        let noise = |i: usize| ((i * 37 % 11) as f64 - 5.0) * 0.1;
        let y = DVector::from_fn(n, |i, _| 3.0 + effects[i / per] + noise(i));
        let labels: Vec<usize> = (0..n).map(|i| i / per).collect();
        let x = DMatrix::from_element(n, 1, 1.0);
        let fit = reml(&x, &y, &DVector::from_element(n, 1.0), &labels, groups, true).unwrap();

        let grand = y.mean();
        let means: Vec<f64> = (0..groups)
            .map(|g| (0..per).map(|j| y[g * per + j]).sum::<f64>() / per as f64)
            .collect();
        let msb = means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() * per as f64 / (groups - 1) as f64;
        let msw = (0..n).map(|i| (y[i] - means[i / per]).powi(2)).sum::<f64>() / (n - groups) as f64;
        let s2u = (msb - msw) / per as f64;
        assert!((fit.sigma2_e - msw).abs() < 1e-6 * msw, "{} vs {msw}", fit.sigma2_e);
        assert!((fit.sigma2_u - s2u).abs() < 1e-6 * s2u, "{} vs {s2u}", fit.sigma2_u);
        assert!((fit.beta[0] - grand).abs() < 1e-10);
        let k = s2u / (s2u + msw / per as f64);
        for g in 0..groups {
            assert!((fit.blup[g] - k * (means[g] - grand)).abs() < 1e-5);
        }
    }

    #[test]
    fn no_group_signal_gives_zero_variance() {
        let n = 20;
        let y = DVector::from_fn(n, |i, _| if i % 2 == 0 { 1.0 } else { -1.0 });
        let labels: Vec<usize> = (0..n).map(|i| i / 2).collect();
        let x = DMatrix::from_element(n, 1, 1.0);
        let fit = reml(&x, &y, &DVector::from_element(n, 1.0), &labels, 10, true).unwrap();
        assert!(fit.sigma2_u < 1e-6);
    }

    #[test]
    fn group_labels_indexed_in_order() {
        let (idx, g) = index_groups(&[7, 3, 7, 9, 3]);
        assert_eq!(idx, vec![0, 1, 0, 2, 1]);
        assert_eq!(g, 3);
    }

    #[test]
    fn pql_poisson_runs() {
        let n = 60;
        let labels: Vec<usize> = (0..n).map(|i| i / 5).collect();
        let y = DVector::from_fn(n, |i, _| ((i / 5) % 4 + (i % 3)) as f64);
        let x = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { (i % 5) as f64 / 5.0 });
        let (beta, re, conv) = fit_random_intercept(
            &x,
            &y,
            &labels,
            &GlmSpec::canonical(super::super::Family::Poisson),
            IrlsOptions::default(),
        )
        .unwrap();
        assert!(conv.converged);
        assert!(re.sigma2_u > 0.0);
        assert!(beta.iter().all(|b| b.is_finite()));
        assert_eq!(re.blup.len(), 12);
    }
}
