//! Fourier series and the truncated Fourier basis on `[t0, t0 + T]`.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::Domain;
use crate::error::{invalid, Result};

/// `a0/2 + sum_k a_k cos(2 pi k (t - t0)/T) + sum_k b_k sin(2 pi k (t - t0)/T)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FourierSeriesRaw", into = "FourierSeriesRaw")]
pub struct FourierSeries {
    a0: f64,
    cos: Vec<f64>,
    k_cos: Vec<u32>,
    sin: Vec<f64>,
    k_sin: Vec<u32>,
    domain: Domain,
}

#[derive(Serialize, Deserialize)]
struct FourierSeriesRaw {
    t0: f64,
    period: f64,
    double_constant: f64,
    cos: Vec<f64>,
    k_cos: Vec<u32>,
    sin: Vec<f64>,
    k_sin: Vec<u32>,
}

impl TryFrom<FourierSeriesRaw> for FourierSeries {
    type Error = crate::Error;

    fn try_from(r: FourierSeriesRaw) -> Result<Self> {
        FourierSeries::new(r.double_constant, r.cos, r.k_cos, r.sin, r.k_sin, Domain::new(r.t0, r.period)?)
    }
}


impl From<FourierSeries> for FourierSeriesRaw {
    fn from(s: FourierSeries) -> Self {
        Self {
            t0: s.domain.t0,
            period: s.domain.period,
            double_constant: s.a0,
            cos: s.cos,
            k_cos: s.k_cos,
            sin: s.sin,
            k_sin: s.k_sin,
        }
    }
}

fn check_frequencies(coef: &[f64], k: &[u32], what: &str) -> Result<()> {
    if coef.len() != k.len() {
        return invalid(format!(
            "{what}: {} coefficients but {} frequencies",
            coef.len(),
            k.len()
        ));
    }
    if k.iter().any(|&k| k == 0) {
        return invalid(format!("{what}: frequencies must be positive"));
    }
    let mut sorted = k.to_vec();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return invalid(format!("{what}: duplicate frequency"));
    }
    if coef.iter().any(|c| !c.is_finite()) {
        return invalid(format!("{what}: non-finite coefficient"));
    }
    Ok(())
}

impl FourierSeries {
    pub fn new(
        a0: f64,
        cos: Vec<f64>,
        k_cos: Vec<u32>,
        sin: Vec<f64>,
        k_sin: Vec<u32>,
        domain: Domain,
    ) -> Result<Self> {
        if !a0.is_finite() {
            return invalid("non-finite constant term");
        }
        check_frequencies(&cos, &k_cos, "cosine terms")?;
        check_frequencies(&sin, &k_sin, "sine terms")?;
        Ok(Self {
            a0,
            cos,
            k_cos,
            sin,
            k_sin,
            domain,
        })
    }

    /// Series with frequencies `1..=p` for both cosine and sine parts.
    pub fn from_consecutive(a0: f64, cos: Vec<f64>, sin: Vec<f64>, domain: Domain) -> Result<Self> {
        let k_cos = (1..=cos.len() as u32).collect();
        let k_sin = (1..=sin.len() as u32).collect();
        Self::new(a0, cos, k_cos, sin, k_sin, domain)
    }

    pub fn zero(domain: Domain) -> Self {
        Self {
            a0: 0.0,
            cos: Vec::new(),
            k_cos: Vec::new(),
            sin: Vec::new(),
            k_sin: Vec::new(),
            domain,
        }
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn double_constant(&self) -> f64 {
        self.a0
    }

    pub fn cos_terms(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.k_cos.iter().copied().zip(self.cos.iter().copied())
    }

    pub fn sin_terms(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.k_sin.iter().copied().zip(self.sin.iter().copied())
    }

    /// Value at a single point; periodic outside the domain.
    pub fn value(&self, t: f64) -> f64 {
        let omega = 2.0 * PI * (t - self.domain.t0) / self.domain.period;
        let mut v = self.a0 / 2.0;
        for (k, a) in self.cos_terms() {
            v += a * (k as f64 * omega).cos();
        }
        for (k, b) in self.sin_terms() {
            v += b * (k as f64 * omega).sin();
        }
        v
    }

    pub fn eval(&self, t: &[f64]) -> Result<Vec<f64>> {
        if t.iter().any(|t| !t.is_finite()) {
            return invalid("non-finite evaluation point");
        }
        Ok(t.iter().map(|&t| self.value(t)).collect())
    }
}

/// The truncated basis `1/2, cos(2 pi k .), sin(2 pi k .)` for `k = 1..=order`.
///
/// Columns are ordered as the constant, then the `order` cosines, then the
/// `order` sines, giving `2 * order + 1` functions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FourierBasis {
    pub order: usize,
    pub domain: Domain,
}

impl FourierBasis {
    pub fn new(order: usize, domain: Domain) -> Self {
        Self { order, domain }
    }

    pub fn len(&self) -> usize {
        2 * self.order + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn eval(&self, t: &[f64]) -> Result<DMatrix<f64>> {
        if t.iter().any(|t| !t.is_finite()) {
            return invalid("non-finite evaluation point");
        }
        let p = self.order;
        let mut out = DMatrix::zeros(t.len(), self.len());
        for (i, &ti) in t.iter().enumerate() {
            let omega = 2.0 * PI * (ti - self.domain.t0) / self.domain.period;
            out[(i, 0)] = 0.5;
            for k in 1..=p {
                let arg = k as f64 * omega;
                out[(i, k)] = arg.cos();
                out[(i, p + k)] = arg.sin();
            }
        }
        Ok(out)
    }

    /// Series whose value equals `eval(t) * coef`.
    pub fn series(&self, coef: &[f64]) -> Result<FourierSeries> {
        if coef.len() != self.len() {
            return invalid(format!(
                "Fourier basis has {} functions, got {} coefficients",
                self.len(),
                coef.len()
            ));
        }
        let p = self.order;
        FourierSeries::from_consecutive(
            coef[0],
            coef[1..=p].to_vec(),
            coef[p + 1..].to_vec(),
            self.domain,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::trapezoid_weights;

    fn fsc() -> FourierSeries {
        FourierSeries::new(
            3.0,
            vec![2.0 / 3.0],
            vec![2],
            vec![1.0, 7.0 / 5.0],
            vec![1, 2],
            Domain::new(0.0, 1.0).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn appendix_series_at_zero() {
        assert_eq!(fsc().value(0.0), 13.0 / 6.0);
    }

    #[test]
    fn appendix_series_at_quarter() {
        // 3/2 + (2/3) cos(pi) + sin(pi/2) + (7/5) sin(pi)
        let expected = 1.5 + (2.0 / 3.0) * (-1.0) + 1.0 + 1.4 * std::f64::consts::PI.sin();
        assert!((fsc().value(0.25) - expected).abs() < 1e-15);
        assert!((fsc().value(0.25) - 11.0 / 6.0).abs() < 1e-14);
    }

    #[test]
    fn zero_series() {
        let z = FourierSeries::zero(Domain::new(-1.0, 3.0).unwrap());
        assert!(z.eval(&[-5.0, 0.0, 1.3]).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn periodic_extension() {
        let s = fsc();
        assert!((s.value(0.3) - s.value(1.3)).abs() < 1e-12);
    }

    #[test]
    fn rejects_duplicate_or_zero_frequency() {
        let d = Domain::new(0.0, 1.0).unwrap();
        assert!(FourierSeries::new(0.0, vec![1.0, 1.0], vec![1, 1], vec![], vec![], d).is_err());
        assert!(FourierSeries::new(0.0, vec![1.0], vec![0], vec![], vec![], d).is_err());
        assert!(FourierSeries::new(0.0, vec![1.0], vec![], vec![], vec![], d).is_err());
    }

    #[test]
    fn gram_matrix_is_diagonal() {
        let d = Domain::new(0.0, 2.0).unwrap();
        let t = d.uniform_grid(2048);
        let w = trapezoid_weights(&t);
        let basis = FourierBasis::new(6, d);
        let phi = basis.eval(&t).unwrap();
        let mut g = phi.transpose() * nalgebra::DMatrix::from_diagonal(&nalgebra::DVector::from_vec(w));
        g *= &phi;
        for i in 0..basis.len() {
            for j in 0..basis.len() {
                if i != j {
                    let rel = g[(i, j)].abs() / (g[(i, i)] * g[(j, j)]).sqrt();
                    assert!(rel < 1e-6, "({i},{j}) -> {rel}");
                }
            }
        }
        // constant 1/2 has squared norm T/4, trig terms T/2
        assert!((g[(0, 0)] - 0.5).abs() < 1e-12);
        assert!((g[(1, 1)] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn basis_series_agree() {
        let d = Domain::new(1.0, 3.0).unwrap();
        let basis = FourierBasis::new(2, d);
        let coef = [0.4, -1.0, 2.0, 0.5, 0.25];
        let s = basis.series(&coef).unwrap();
        let t = [1.0, 1.7, 2.2, 3.9];
        let phi = basis.eval(&t).unwrap();
        let direct = phi * nalgebra::DVector::from_column_slice(&coef);
        for (a, b) in s.eval(&t).unwrap().iter().zip(direct.iter()) {
            assert!((a - b).abs() < 1e-14);
        }
    }
}
