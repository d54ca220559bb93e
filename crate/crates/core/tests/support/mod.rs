#![allow(dead_code)]

pub mod lp;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sofrme_core::fda::{Domain, FunctionalSample};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Smooth random curves: random combinations of low-frequency trigonometric
/// and polynomial shapes on a uniform grid of `[0, 1]`.
pub fn smooth_curves(n: usize, m: usize, seed: u64) -> FunctionalSample {
    let mut r = rng(seed);
    let domain = Domain::new(0.0, 1.0).unwrap();
    let t = domain.uniform_grid(m);
    let shapes: Vec<Box<dyn Fn(f64) -> f64>> = vec![
        Box::new(|_| 1.0),
        Box::new(|t| t),
        Box::new(|t| t * t),
        Box::new(|t| (2.0 * std::f64::consts::PI * t).sin()),
        Box::new(|t| (2.0 * std::f64::consts::PI * t).cos()),
        Box::new(|t| (4.0 * std::f64::consts::PI * t).sin()),
        Box::new(|t| (4.0 * std::f64::consts::PI * t).cos()),
        Box::new(|t| (6.0 * std::f64::consts::PI * t).sin()),
        Box::new(|t| (-3.0 * t).exp()),
        Box::new(|t| (t - 0.5).abs()),
    ];
    let coefs: Vec<Vec<f64>> = (0..n)
        .map(|_| shapes.iter().map(|_| r.random_range(-1.0..1.0)).collect())
        .collect();
    let x = DMatrix::from_fn(n, m, |i, j| shapes.iter().zip(&coefs[i]).map(|(f, c)| c * f(t[j])).sum());
    FunctionalSample::new(x, domain, t).unwrap()
}

pub fn trapezoid(t: &[f64], f: &[f64]) -> f64 {
    t.windows(2)
        .zip(f.windows(2))
        .map(|(t, f)| 0.5 * (t[1] - t[0]) * (f[0] + f[1]))
        .sum()
}

/// Curves `sum_k a_ik B_k(t)` on a cubic B-spline basis with `df` functions,
/// `a_ik ~ N(0, sd^2)`.
pub fn spline_curves(n: usize, m: usize, df: usize, sd: f64, r: &mut ChaCha8Rng) -> DMatrix<f64> {
    let domain = Domain::new(0.0, 1.0).unwrap();
    let b = sofrme_core::fda::BSplineBasis::with_df(domain, df, 3).unwrap();
    let phi = b.eval(&domain.uniform_grid(m)).unwrap();
    let a = normal_matrix(n, df, sd, r);
    a * phi.transpose()
}

pub fn normal_matrix(n: usize, m: usize, sd: f64, r: &mut ChaCha8Rng) -> DMatrix<f64> {
    use rand_distr::{Distribution, StandardNormal};
    DMatrix::from_fn(n, m, |_, _| {
        let z: f64 = StandardNormal.sample(r);
        sd * z
    })
}

pub fn on_unit(x: DMatrix<f64>) -> FunctionalSample {
    FunctionalSample::on_uniform_grid(x, Domain::new(0.0, 1.0).unwrap()).unwrap()
}
