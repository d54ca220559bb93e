//! Containers for functional data and the analytic basis families.

mod bspline;
mod fourier;
mod numeric;
mod sample;
mod series;

pub use bspline::{BSplineBasis, BSplineSeries};
pub use fourier::{FourierBasis, FourierSeries};
pub use numeric::{NumericBasis, NumericBasisSeries};
pub use sample::{Domain, FunctionalSample};
pub use series::{series_to_function, BasisSeries};
