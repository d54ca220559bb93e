use serde::{Deserialize, Serialize};

use super::{BSplineSeries, Domain, FourierSeries, NumericBasisSeries};
use crate::error::Result;

/// Any of the three series containers, tagged by `"type"` in JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum BasisSeries {
    Fourier(FourierSeries),
    Bspline(BSplineSeries),
    Numeric(NumericBasisSeries),
}

impl BasisSeries {
    pub fn domain(&self) -> Domain {
        match self {
            BasisSeries::Fourier(s) => s.domain(),
            BasisSeries::Bspline(s) => s.basis().domain(),
            BasisSeries::Numeric(s) => s.basis().domain(),
        }
    }

    pub fn eval(&self, t: &[f64]) -> Result<Vec<f64>> {
        match self {
            BasisSeries::Fourier(s) => s.eval(t),
            BasisSeries::Bspline(s) => s.eval(t),
            BasisSeries::Numeric(s) => s.eval(t),
        }
    }

    pub fn value(&self, t: f64) -> Result<f64> {
        match self {
            BasisSeries::Fourier(s) => Ok(s.value(t)),
            BasisSeries::Bspline(s) => s.value(t),
            BasisSeries::Numeric(s) => s.value(t),
        }
    }
}

impl From<FourierSeries> for BasisSeries {
    fn from(s: FourierSeries) -> Self {
        BasisSeries::Fourier(s)
    }
}

impl From<BSplineSeries> for BasisSeries {
    fn from(s: BSplineSeries) -> Self {
        BasisSeries::Bspline(s)
    }
}

impl From<NumericBasisSeries> for BasisSeries {
    fn from(s: NumericBasisSeries) -> Self {
        BasisSeries::Numeric(s)
    }
}

/// Turns a series into a plain function of `t`.
///
/// Fourier series extend periodically; the other kinds return NaN outside
/// their domain.
pub fn series_to_function(series: &BasisSeries) -> impl Fn(f64) -> f64 + Send + Sync + 'static {
    let s = series.clone();
    move |t| s.value(t).unwrap_or(f64::NAN)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fda::{BSplineBasis, NumericBasis};
    use nalgebra::DMatrix;

    fn fsc() -> BasisSeries {
        FourierSeries::new(
            3.0,
            vec![2.0 / 3.0],
            vec![2],
            vec![1.0, 1.4],
            vec![1, 2],
            Domain::new(0.0, 1.0).unwrap(),
        )
        .unwrap()
        .into()
    }

    #[test]
    fn fourier_function() {
        let f = series_to_function(&fsc());
        assert_eq!(f(0.0), 13.0 / 6.0);
    }

    #[test]
    fn zero_function() {
        let z: BasisSeries = FourierSeries::zero(Domain::new(0.0, 1.0).unwrap()).into();
        let f = series_to_function(&z);
        assert_eq!(f(0.77), 0.0);
    }

    #[test]
    fn bspline_function_matches_matrix_product() {
        let bsb = BSplineBasis::new(0.0, 24.0, vec![6.0, 12.0, 18.0], 3).unwrap();
        let coef = vec![2.0, 1.0, 0.75, 2.0 / 3.0, 0.875, 2.5, 1.9];
        let s: BasisSeries = bsb.series(coef.clone()).unwrap().into();
        let f = series_to_function(&s);
        let t = [0.0, 3.3, 7.1, 12.0, 19.99, 24.0];
        let dense = bsb.eval(&t).unwrap() * nalgebra::DVector::from_vec(coef);
        for (i, &x) in t.iter().enumerate() {
            assert!((f(x) - dense[i]).abs() < 1e-14);
        }
        assert!(f(25.0).is_nan());
    }

    #[test]
    fn json_roundtrip_is_bit_exact() {
        let zeta = DMatrix::from_row_slice(3, 2, &[0.1, 1.0, 0.2, -1.0 / 3.0, 0.3, 2.5e-17]);
        let nb = NumericBasis::new(zeta, vec![0.0, 0.4, 1.0], Domain::new(0.0, 1.0).unwrap()).unwrap();
        let items: Vec<BasisSeries> = vec![
            fsc(),
            BSplineBasis::new(0.1, 0.9, vec![0.3], 2)
                .unwrap()
                .series(vec![0.1, 0.2, 1.0 / 3.0, 1e-300])
                .unwrap()
                .into(),
            nb.series(vec![std::f64::consts::PI, -0.7]).unwrap().into(),
        ];
        for s in items {
            let json = serde_json::to_string(&s).unwrap();
            let back: BasisSeries = serde_json::from_str(&json).unwrap();
            assert_eq!(back, s);
        }
        let json = serde_json::to_value(fsc()).unwrap();
        assert_eq!(json["type"], "fourier");
        assert_eq!(json["t0"], 0.0);
    }

    #[test]
    fn json_rejects_invalid_series() {
        let bad = r#"{"type":"bspline","t0":0,"period":1,"degree":3,"interior_knots":[],"coef":[1,2]}"#;
        assert!(serde_json::from_str::<BasisSeries>(bad).is_err());
    }
}
