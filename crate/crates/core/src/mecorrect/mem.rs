//! Mixed-effects substitution: replace the latent curve by its predicted
//! value from a per-time-point random-intercept model fitted to replicates.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::ReplicatedSurrogate;
use crate::error::{config, invalid, Result};
use crate::expansion::BasisSpec;
use crate::fda::FunctionalSample;
use crate::optim::{bfgs, numeric_gradient, BfgsOptions};
use crate::regress::{fit_glm_sofr, FitResult, GlmSpec, SofrData};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MemMethod {
    #[serde(rename = "UP_MEM")]
    UpMem,
    #[serde(rename = "MP_MEM")]
    MpMem,
    #[serde(rename = "average")]
    Average,
}

impl std::str::FromStr for MemMethod {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "UP_MEM" | "up_mem" | "up-mem" => Ok(MemMethod::UpMem),
            "MP_MEM" | "mp_mem" | "mp-mem" => Ok(MemMethod::MpMem),
            "average" => Ok(MemMethod::Average),
            other => config(format!("unknown MEM method '{other}'")),
        }
    }
}

impl MemMethod {
    pub fn tag(self) -> &'static str {
        match self {
            MemMethod::UpMem => "UP_MEM",
            MemMethod::MpMem => "MP_MEM",
            MemMethod::Average => "average",
        }
    }
}

/// Distribution of the replicates given the latent curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MemFamily {
    Gaussian,
    Poisson,
}

impl std::str::FromStr for MemFamily {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(MemFamily::Gaussian),
            "poisson" => Ok(MemFamily::Poisson),
            other => config(format!("unknown replicate family '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemOptions {
    pub method: MemMethod,
    pub family: MemFamily,
    /// Window width for `MP_MEM`.
    pub d: usize,
    /// Apply a 5-point moving average along `t` afterwards.
    pub smooth: bool,
}

impl Default for MemOptions {
    fn default() -> Self {
        Self {
            method: MemMethod::UpMem,
            family: MemFamily::Gaussian,
            d: 3,
            smooth: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MemResult {
    pub x_hat: FunctionalSample,
    /// Estimated mean at each grid point (latent scale).
    pub mu: Vec<f64>,
    pub sigma2_x: Vec<f64>,
    /// Replicate noise variance; not defined for Poisson replicates.
    pub sigma2_e: Vec<Option<f64>>,
    /// Grid points where the between-subject variance estimate was not
    /// positive and the prediction collapsed to the mean.
    pub clipped: Vec<usize>,
    /// Grid points where the Poisson likelihood fit fell back to moments.
    pub fallback: Vec<usize>,
}

struct PointFit {
    mu: f64,
    s2x: f64,
    s2e: Option<f64>,
    clipped: bool,
    fallback: bool,
}

/// Bias-corrected proxy `X_hat` from replicated surrogates.
pub fn mem_substitute(w: &ReplicatedSurrogate, opts: &MemOptions) -> Result<MemResult> {
    w.require_replicates("MEM substitution")?;
    let (n, m) = (w.n(), w.m());
    if opts.method == MemMethod::MpMem {
        if opts.d < 3 {
            return config(format!("MP_MEM window must be at least 3, got {}", opts.d));
        }
        if opts.d > m {
            return config(format!("MP_MEM window {} exceeds {m} grid points", opts.d));
        }
    }
    if opts.family == MemFamily::Poisson {
        for r in w.replicates() {
            if r.x().iter().any(|&v| v < 0.0 || v.fract() != 0.0) {
                return invalid("poisson replicates must be non-negative integers");
            }
        }
    }
    let wbar = w.mean();
    let mut xhat = DMatrix::<f64>::zeros(n, m);
    let mut fits = Vec::with_capacity(m);
    for j in 0..m {
        let (col, fit) = match (opts.method, opts.family) {
            (MemMethod::Average, _) => (
                wbar.x().column(j).into_owned(),
                PointFit {
                    mu: wbar.x().column(j).mean(),
                    s2x: f64::NAN,
                    s2e: None,
                    clipped: false,
                    fallback: false,
                },
            ),
            (MemMethod::UpMem, MemFamily::Gaussian) => up_gaussian(w, &wbar, j),
            (MemMethod::MpMem, MemFamily::Gaussian) => mp_gaussian(w, j, opts.d),
            (MemMethod::UpMem, MemFamily::Poisson) => up_poisson(w, j)?,
            (MemMethod::MpMem, MemFamily::Poisson) => {
                return config("MP_MEM is available for gaussian replicates only");
            }
        };
        xhat.set_column(j, &col);
        fits.push(fit);
    }
    if opts.smooth {
        xhat = moving_average(&xhat, 2);
    }
    Ok(MemResult {
        x_hat: wbar.with_values(xhat)?,
        mu: fits.iter().map(|f| f.mu).collect(),
        sigma2_x: fits.iter().map(|f| f.s2x).collect(),
        sigma2_e: fits.iter().map(|f| f.s2e).collect(),
        clipped: fits.iter().enumerate().filter(|(_, f)| f.clipped).map(|(j, _)| j).collect(),
        fallback: fits.iter().enumerate().filter(|(_, f)| f.fallback).map(|(j, _)| j).collect(),
    })
}

fn up_gaussian(w: &ReplicatedSurrogate, wbar: &FunctionalSample, j: usize) -> (DVector<f64>, PointFit) {
    let (n, reps) = (w.n(), w.j());
    let jf = reps as f64;
    let means = wbar.x().column(j).into_owned();
    let mu = means.mean();
    let msb = jf * means.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (n - 1) as f64;
    let mut ssw = 0.0;
    for r in w.replicates() {
        for i in 0..n {
            ssw += (r.x()[(i, j)] - means[i]).powi(2);
        }
    }
    let msw = ssw / (n * (reps - 1)) as f64;
    let raw = (msb - msw) / jf;
    let clipped = raw <= 0.0;
    let s2x = raw.max(0.0);
    let denom = s2x + msw / jf;
    let k = if denom > 0.0 { s2x / denom } else { 1.0 };
    let col = means.map(|v| v - (1.0 - k) * (v - mu));
    (
        col,
        PointFit {
            mu,
            s2x,
            s2e: Some(msw),
            clipped,
            fallback: false,
        },
    )
}

/// Window of width `d` around `j`: `floor((d-1)/2)` points to the left,
/// truncated at the grid ends.
fn window(j: usize, d: usize, m: usize) -> std::ops::Range<usize> {
    let left = (d - 1) / 2;
    let right = d - 1 - left;
    j.saturating_sub(left)..(j + right + 1).min(m)
}

fn mp_gaussian(w: &ReplicatedSurrogate, j: usize, d: usize) -> (DVector<f64>, PointFit) {
    let (n, reps) = (w.n(), w.j());
    let win = window(j, d, w.m());
    let dw = win.len();
    let jf = reps as f64;
    let cells = dw as f64 * jf;
    let mut subj = DVector::<f64>::zeros(n);
    let mut time = vec![0.0; dw];
    for r in w.replicates() {
        for i in 0..n {
            for (l, t) in win.clone().enumerate() {
                let v = r.x()[(i, t)];
                subj[i] += v;
                time[l] += v;
            }
        }
    }
    subj /= cells;
    for v in &mut time {
        *v /= n as f64 * jf;
    }
    let grand = time.iter().sum::<f64>() / dw as f64;
    let ss_subj = cells * subj.iter().map(|s| (s - grand).powi(2)).sum::<f64>();
    let mut ss_res = 0.0;
    for r in w.replicates() {
        for i in 0..n {
            for (l, t) in win.clone().enumerate() {
                ss_res += (r.x()[(i, t)] - subj[i] - time[l] + grand).powi(2);
            }
        }
    }
    let df_res = (n * dw * reps - n - dw + 1) as f64;
    let ms_subj = ss_subj / (n - 1) as f64;
    let ms_res = ss_res / df_res;
    let raw = (ms_subj - ms_res) / cells;
    let clipped = raw <= 0.0;
    let s2x = raw.max(0.0);
    let denom = s2x + ms_res / cells;
    let k = if denom > 0.0 { s2x / denom } else { 1.0 };
    let mu = time[j - win.start];
    let col = subj.map(|s| mu + k * (s - grand));
    (
        col,
        PointFit {
            mu,
            s2x,
            s2e: Some(ms_res),
            clipped,
            fallback: false,
        },
    )
}

/// Gauss-Hermite rule for the weight `exp(-x^2)` via the Golub-Welsch
/// eigenvalue method.
pub fn gauss_hermite(k: usize) -> (Vec<f64>, Vec<f64>) {
    let mut jac = DMatrix::<f64>::zeros(k, k);
    for i in 1..k {
        let b = (i as f64 / 2.0).sqrt();
        jac[(i, i - 1)] = b;
        jac[(i - 1, i)] = b;
    }
    let eig = jac.symmetric_eigen();
    let mut pairs: Vec<(f64, f64)> = (0..k)
        .map(|i| {
            let v0 = eig.eigenvectors[(0, i)];
            (eig.eigenvalues[i], std::f64::consts::PI.sqrt() * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

const GH_NODES: usize = 10;

/// Marginal log-likelihood pieces of `S ~ Poisson(J exp(mu + x))`,
/// `x ~ N(0, s2)`, integrated by adaptive Gauss-Hermite quadrature.
struct PoissonGroup {
    s: f64,
    count: f64,
}

fn aghq(s: f64, jf: f64, mu: f64, sigma: f64, gh: &(Vec<f64>, Vec<f64>)) -> (f64, f64) {
    let s2 = sigma * sigma;
    let g = |x: f64| s * (mu + x) - jf * (mu + x).exp() - x * x / (2.0 * s2);
    // mode by Newton on the concave log-integrand, started at the log-rate guess
    let mut x = if s > 0.0 { ((s / jf).ln() - mu).clamp(-10.0 * sigma, 10.0 * sigma) } else { -sigma };
    for _ in 0..100 {
        let e = jf * (mu + x).exp();
        let d1 = s - e - x / s2;
        let d2 = -e - 1.0 / s2;
        let step = d1 / d2;
        x -= step;
        if step.abs() < 1e-12 * (1.0 + x.abs()) {
            break;
        }
    }
    let e = jf * (mu + x).exp();
    let shat = 1.0 / (e + 1.0 / s2).sqrt();
    let (nodes, weights) = gh;
    let terms: Vec<(f64, f64)> = nodes
        .iter()
        .zip(weights)
        .map(|(&z, &w)| {
            let xk = x + std::f64::consts::SQRT_2 * shat * z;
            (w.ln() + z * z + g(xk), xk)
        })
        .collect();
    let top = terms.iter().map(|t| t.0).fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    let mut first = 0.0;
    for &(lt, xk) in &terms {
        let v = (lt - top).exp();
        total += v;
        first += v * xk;
    }
    let log_int = top + total.ln() + (std::f64::consts::SQRT_2 * shat).ln() - (sigma * (2.0 * std::f64::consts::PI).sqrt()).ln();
    (log_int, first / total)
}

fn up_poisson(w: &ReplicatedSurrogate, j: usize) -> Result<(DVector<f64>, PointFit)> {
    let (n, reps) = (w.n(), w.j());
    let jf = reps as f64;
    let sums: Vec<f64> = (0..n).map(|i| w.replicates().iter().map(|r| r.x()[(i, j)]).sum()).collect();
    let total: f64 = sums.iter().sum();
    if total == 0.0 {
        let mu = (0.5 / (n as f64 * jf)).ln();
        return Ok((
            DVector::from_element(n, mu),
            PointFit {
                mu,
                s2x: 0.0,
                s2e: None,
                clipped: true,
                fallback: true,
            },
        ));
    }
    let mut groups: Vec<PoissonGroup> = Vec::new();
    let mut sorted = sums.clone();
    sorted.sort_by(|a, b| a.total_cmp(b));
    for s in sorted {
        match groups.last_mut() {
            Some(g) if g.s == s => g.count += 1.0,
            _ => groups.push(PoissonGroup { s, count: 1.0 }),
        }
    }

    // lognormal moment matching on per-subject means
    let means: Vec<f64> = sums.iter().map(|s| s / jf).collect();
    let mbar = means.iter().sum::<f64>() / n as f64;
    let var = means.iter().map(|v| (v - mbar).powi(2)).sum::<f64>() / (n - 1) as f64;
    let excess = var - mbar / jf;
    let s2_mom = (1.0 + excess.max(0.0) / (mbar * mbar)).ln();
    let mu_mom = mbar.ln() - s2_mom / 2.0;

    let gh = gauss_hermite(GH_NODES);
    const LOG_SIGMA_MIN: f64 = -12.0;
    let negll = |theta: &DVector<f64>| -> f64 {
        let mu = theta[0];
        let sigma = theta[1].clamp(LOG_SIGMA_MIN, 5.0).exp();
        -groups.iter().map(|g| g.count * aghq(g.s, jf, mu, sigma, &gh).0).sum::<f64>()
    };
    let start = DVector::from_vec(vec![mu_mom, s2_mom.max(1e-4).sqrt().ln()]);
    let res = bfgs(
        |th| (negll(th), numeric_gradient(&negll, th)),
        start,
        BfgsOptions {
            max_iterations: 200,
            gradient_tolerance: 1e-6,
            value_tolerance: 1e-12,
        },
    );
    let ok = res.value.is_finite() && res.x.iter().all(|v| v.is_finite());
    let (mu, log_sigma, fallback) = if ok {
        (res.x[0], res.x[1].clamp(LOG_SIGMA_MIN, 5.0), false)
    } else {
        (mu_mom, s2_mom.max(1e-12).sqrt().ln(), true)
    };
    let sigma = log_sigma.exp();
    let clipped = log_sigma <= LOG_SIGMA_MIN + 1e-6;
    let post: Vec<(f64, f64)> = groups.iter().map(|g| (g.s, aghq(g.s, jf, mu, sigma, &gh).1)).collect();
    let col = DVector::from_iterator(
        n,
        sums.iter().map(|s| {
            let k = post.partition_point(|p| p.0 < *s);
            mu + post[k].1
        }),
    );
    Ok((
        col,
        PointFit {
            mu,
            s2x: sigma * sigma,
            s2e: None,
            clipped,
            fallback,
        },
    ))
}

/// Centered moving average of half-width `h` along each row, truncated at
/// the ends.
fn moving_average(x: &DMatrix<f64>, h: usize) -> DMatrix<f64> {
    let m = x.ncols();
    DMatrix::from_fn(x.nrows(), m, |i, j| {
        let lo = j.saturating_sub(h);
        let hi = (j + h).min(m - 1);
        (lo..=hi).map(|l| x[(i, l)]).sum::<f64>() / (hi - lo + 1) as f64
    })
}

/// MEM substitution followed by a generalized scalar-on-function fit on
/// the substituted curves.
pub fn me_glm_mem(
    y: &[f64],
    w: &ReplicatedSurrogate,
    z: Option<&DMatrix<f64>>,
    mem: &MemOptions,
    spec: &GlmSpec,
    basis: &BasisSpec,
) -> Result<FitResult> {
    let sub = mem_substitute(w, mem)?;
    let fc = [sub.x_hat];
    let mut fit = fit_glm_sofr(SofrData::new(y, &fc).with_z(z), spec, std::slice::from_ref(basis))?;
    fit.method = format!("mem-{}", mem.method.tag());
    Ok(fit)
}
