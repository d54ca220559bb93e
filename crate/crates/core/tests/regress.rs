mod support;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use sofrme_core::expansion::{expand, BasisSpec};
use sofrme_core::fda::{BSplineBasis, FunctionalSample};
use sofrme_core::regress::{
    check_objective, fc_beta, fit_glm_sofr, fit_qr_sofr, predict, solve_quantile, Family, GlmSpec, QrSpec,
    SofrData,
};
use sofrme_core::Error;

use support::{lp::quantile_lp_objective, rng, smooth_curves, trapezoid};

fn random_design(n: usize, p: usize, seed: u64) -> (DMatrix<f64>, DVector<f64>) {
    let mut r = rng(seed);
    let x = DMatrix::from_fn(n, p, |_, j| if j == 0 { 1.0 } else { r.random_range(-2.0..2.0) });
    let y = DVector::from_fn(n, |i, _| {
        let e: f64 = StandardNormal.sample(&mut r);
        x.row(i).sum() * 0.7 + e * 1.5
    });
    (x, y)
}

fn quantile_count_holds(r: &DVector<f64>, tau: f64) -> bool {
    let n = r.len() as f64;
    let tol = 1e-9 * (1.0 + r.amax());
    let neg = r.iter().filter(|&&u| u < -tol).count() as f64;
    let nonpos = r.iter().filter(|&&u| u <= tol).count() as f64;
    neg <= n * tau + 1e-9 && n * tau <= nonpos + 1e-9
}

#[test]
fn quantile_solver_matches_lp_oracle() {
    let mut r = rng(11);
    for case in 0..25u64 {
        let n = r.random_range(8..=50);
        let p = r.random_range(1..=5).min(n - 1);
        let tau = [0.1, 0.25, 0.5, 0.75, 0.9][case as usize % 5];
        let (x, y) = random_design(n, p, 100 + case);
        let rows: Vec<Vec<f64>> = (0..n).map(|i| x.row(i).iter().copied().collect()).collect();
        let lp = quantile_lp_objective(&rows, y.as_slice(), tau);
        let sol = solve_quantile(&x, &y, tau).unwrap();
        let gap = (sol.objective - lp).abs() / lp.max(1e-300);
        assert!(gap <= 1e-8, "case {case}: n={n} p={p} ours={} lp={lp}", sol.objective);
        assert!(quantile_count_holds(&(&y - &x * &sol.coef), tau), "case {case}");
    }
}

#[test]
fn quantile_subgradient_optimality() {
    for seed in 0..10 {
        let (x, y) = random_design(40, 4, 500 + seed);
        let tau = 0.35;
        let sol = solve_quantile(&x, &y, tau).unwrap();
        let r = &y - &x * &sol.coef;
        let tol = 1e-9 * (1.0 + y.amax());
        // interpolated rows may take any subgradient in [tau - 1, tau]
        let mut g = DVector::<f64>::zeros(4);
        let mut zero_rows = Vec::new();
        for i in 0..40 {
            if r[i].abs() <= tol {
                zero_rows.push(i);
            } else {
                let psi = if r[i] > 0.0 { tau } else { tau - 1.0 };
                g += x.row(i).transpose() * psi;
            }
        }
        let xz = DMatrix::from_fn(4, zero_rows.len(), |a, k| x[(zero_rows[k], a)]);
        let w = xz.clone().lu().solve(&(-&g)).expect("square interpolation system");
        assert!(
            w.iter().all(|&v| v >= tau - 1.0 - 1e-8 && v <= tau + 1e-8),
            "subgradient weights {w}"
        );
    }
}

fn linear_functional(beta: &[f64], x: &FunctionalSample) -> Vec<f64> {
    (0..x.dim().0)
        .map(|i| {
            let f: Vec<f64> = x.x().row(i).iter().zip(beta).map(|(a, b)| a * b).collect();
            trapezoid(x.t_points(), &f)
        })
        .collect()
}

#[test]
fn exact_recovery_with_beta_in_spline_span() {
    let x = smooth_curves(120, 60, 3);
    let basis = BSplineBasis::with_df(x.domain(), 6, 3).unwrap();
    let true_coef = vec![0.5, -1.0, 2.0, 0.3, -0.7, 1.1];
    let beta_t = basis.series(true_coef.clone()).unwrap().eval(x.t_points()).unwrap();
    let y: Vec<f64> = linear_functional(&beta_t, &x).iter().map(|v| v + 1.5).collect();
    let fc = [x.clone()];
    let fit = fit_glm_sofr(SofrData::new(&y, &fc), &GlmSpec::gaussian(), &[BasisSpec::bspline(6, 3)]).unwrap();
    let est = fc_beta(&fit, 0, x.t_points()).unwrap();
    let err = est.iter().zip(&beta_t).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(err < 1e-6, "max grid error {err}");
    assert!((fit.gamma[0] - 1.5).abs() < 1e-8);
}

#[test]
fn gaussian_scalar_only_equals_ols() {
    let n = 50;
    let mut r = rng(9);
    let z = DMatrix::from_fn(n, 1, |_, _| r.random_range(-1.0..1.0));
    let y: Vec<f64> = (0..n).map(|i| 2.0 - 3.0 * z[(i, 0)] + r.random_range(-0.5..0.5)).collect();
    let fit = fit_glm_sofr(SofrData::new(&y, &[]).with_z(Some(&z)), &GlmSpec::gaussian(), &[]).unwrap();
    let mut x = DMatrix::from_element(n, 2, 1.0);
    x.set_column(1, &z.column(0));
    let yv = DVector::from_vec(y);
    let ols = (x.transpose() * &x).lu().solve(&(x.transpose() * &yv)).unwrap();
    assert!((fit.gamma[0] - ols[0]).abs() < 1e-10 && (fit.gamma[1] - ols[1]).abs() < 1e-10);
}

#[test]
fn binomial_toy_intercept_zero() {
    let z = DMatrix::from_column_slice(4, 1, &[0.0, 1.0, 0.0, 1.0]);
    let y = [0.0, 0.0, 1.0, 1.0];
    let fit = fit_glm_sofr(
        SofrData::new(&y, &[]).with_z(Some(&z)),
        &GlmSpec::canonical(Family::Binomial),
        &[],
    )
    .unwrap();
    assert!(fit.gamma[0].abs() < 1e-10, "{:?}", fit.gamma);
}

#[test]
fn irls_fixed_point_with_functional_covariate() {
    let x = smooth_curves(200, 40, 21);
    let mut r = rng(22);
    let lin: Vec<f64> = (0..200).map(|i| 0.3 * x.x().row(i).sum() / 40.0).collect();
    let fc = [x.clone()];
    for family in [Family::Binomial, Family::Poisson] {
        let y: Vec<f64> = lin
            .iter()
            .map(|&e| match family {
                Family::Binomial => f64::from(r.random::<f64>() < 1.0 / (1.0 + (-e).exp())),
                _ => {
                    let mu: f64 = (0.5 + e).exp();
                    rand_distr::Poisson::new(mu).unwrap().sample(&mut r)
                }
            })
            .collect();
        let spec = GlmSpec::canonical(family);
        let fit = fit_glm_sofr(SofrData::new(&y, &fc), &spec, &[BasisSpec::fourier(2)]).unwrap();
        assert!(fit.convergence.converged);
        let design = sofrme_core::regress::design_matrix(&fc, None, &fit.basis).unwrap();
        let mu = DVector::from_vec(predict(&fit, &fc, None).unwrap());
        let score = design.transpose() * (DVector::from_column_slice(&y) - mu);
        assert!(score.amax() < 1e-6, "{family:?}: {}", score.amax());
    }
}

#[test]
fn predict_matches_manual_pipeline() {
    let x = smooth_curves(80, 30, 5);
    let mut r = rng(6);
    let z = DMatrix::from_fn(80, 2, |_, _| r.random_range(-1.0..1.0));
    let y: Vec<f64> = (0..80).map(|i| x.x()[(i, 3)] + z[(i, 0)] + r.random_range(-0.1..0.1)).collect();
    let fc = [x.clone()];
    let fit = fit_glm_sofr(
        SofrData::new(&y, &fc).with_z(Some(&z)),
        &GlmSpec::gaussian(),
        &[BasisSpec::bspline(5, 3)],
    )
    .unwrap();
    let rows = [0, 7, 19, 44, 79];
    let sub = x.select_rows(&rows);
    let zsub = DMatrix::from_fn(5, 2, |i, j| z[(rows[i], j)]);
    let pred = predict(&fit, &[sub.clone()], Some(&zsub)).unwrap();
    let b = expand(&sub, &fit.basis[0]).unwrap().coef;
    let coef = match &fit.beta_series[0] {
        sofrme_core::fda::BasisSeries::Bspline(s) => s.coef().to_vec(),
        _ => unreachable!(),
    };
    for i in 0..5 {
        let manual = fit.gamma[0]
            + (0..5).map(|k| b[(i, k)] * coef[k]).sum::<f64>()
            + fit.gamma[1] * zsub[(i, 0)]
            + fit.gamma[2] * zsub[(i, 1)];
        assert!((pred[i] - manual).abs() < 1e-10);
    }
}

#[test]
fn predict_zero_curves_returns_inverse_link_intercept() {
    let x = smooth_curves(60, 25, 8);
    let mut r = rng(8);
    let y: Vec<f64> = (0..60).map(|_| f64::from(r.random::<bool>())).collect();
    let fc = [x.clone()];
    let fit = fit_glm_sofr(
        SofrData::new(&y, &fc),
        &GlmSpec::canonical(Family::Binomial),
        &[BasisSpec::fourier(1)],
    )
    .unwrap();
    let zero = x.with_values(DMatrix::zeros(3, 25)).unwrap();
    let p = predict(&fit, &[zero], None).unwrap();
    let expected = 1.0 / (1.0 + (-fit.gamma[0]).exp());
    assert!(p.iter().all(|v| (v - expected).abs() < 1e-14));
}

#[test]
fn predict_on_training_data_is_fitted_values() {
    let x = smooth_curves(50, 30, 12);
    let y: Vec<f64> = (0..50).map(|i| x.x()[(i, 10)] * 2.0 + (i % 3) as f64).collect();
    let fc = [x.clone()];
    let fit = fit_glm_sofr(SofrData::new(&y, &fc), &GlmSpec::gaussian(), &[BasisSpec::fourier(2)]).unwrap();
    let design = sofrme_core::regress::design_matrix(&fc, None, &fit.basis).unwrap();
    let fitted = design * fit.coefficients().unwrap();
    let pred = predict(&fit, &fc, None).unwrap();
    for (a, b) in pred.iter().zip(fitted.iter()) {
        assert_eq!(a, b);
    }
}

#[test]
fn predict_rejects_mismatched_shapes() {
    let x = smooth_curves(30, 20, 1);
    let y: Vec<f64> = (0..30).map(|i| i as f64).collect();
    let fc = [x.clone()];
    let fit = fit_glm_sofr(SofrData::new(&y, &fc), &GlmSpec::gaussian(), &[BasisSpec::fourier(1)]).unwrap();
    assert!(predict(&fit, &[], None).is_err());
    let z = DMatrix::zeros(30, 1);
    assert!(predict(&fit, &fc, Some(&z)).is_err());
    let other = FunctionalSample::on_uniform_grid(
        DMatrix::zeros(2, 20),
        sofrme_core::fda::Domain::new(0.0, 2.0).unwrap(),
    )
    .unwrap();
    assert!(predict(&fit, &[other], None).is_err());
}

#[test]
fn fc_beta_index_and_values() {
    let x = smooth_curves(40, 20, 2);
    let fc = [x.clone()];
    let y = vec![3.0; 40];
    let fit = fit_glm_sofr(SofrData::new(&y, &fc), &GlmSpec::gaussian(), &[BasisSpec::bspline(4, 2)]).unwrap();
    // constant response: all functional coefficients vanish
    let v = fc_beta(&fit, 0, &[0.0, 0.5, 1.0]).unwrap();
    assert!(v.iter().all(|b| b.abs() < 1e-10));
    assert!(matches!(fc_beta(&fit, 1, &[0.5]), Err(Error::InvalidInput(_))));
    assert!(fc_beta(&fit, 0, &[1.5]).is_err());
}

#[test]
fn fc_beta_matches_basis_matrix_product() {
    let x = smooth_curves(70, 30, 31);
    let y: Vec<f64> = (0..70).map(|i| x.x()[(i, 4)] - x.x()[(i, 20)]).collect();
    let fc = [x.clone()];
    let fit = fit_glm_sofr(SofrData::new(&y, &fc), &GlmSpec::gaussian(), &[BasisSpec::bspline(7, 3)]).unwrap();
    let t: Vec<f64> = (0..41).map(|i| i as f64 / 40.0).collect();
    let v = fc_beta(&fit, 0, &t).unwrap();
    let basis = BSplineBasis::with_df(x.domain(), 7, 3).unwrap();
    let coef = fit.coefficients().unwrap().rows(1, 7).into_owned();
    let direct = basis.eval(&t).unwrap() * coef;
    for (a, b) in v.iter().zip(direct.iter()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn constant_basis_returns_the_constant() {
    // a zero-frequency Fourier basis holds only the constant 1/2
    let x = smooth_curves(40, 25, 41);
    let y: Vec<f64> = linear_functional(&[2.0; 25], &x);
    let fc = [x.clone()];
    let fit = fit_glm_sofr(SofrData::new(&y, &fc), &GlmSpec::gaussian(), &[BasisSpec::fourier(0)]).unwrap();
    let v = fc_beta(&fit, 0, &[0.1, 0.6, 0.9]).unwrap();
    assert!(v.iter().all(|b| (b - 2.0).abs() < 1e-9), "{v:?}");
}

#[test]
fn gaussian_deviance_nonincreasing_in_fourier_order() {
    let x = smooth_curves(150, 64, 51);
    let mut r = rng(52);
    let y: Vec<f64> = (0..150)
        .map(|i| x.x()[(i, 10)] - 0.5 * x.x()[(i, 40)] + r.random_range(-0.3..0.3))
        .collect();
    let fc = [x.clone()];
    let mut last = f64::INFINITY;
    for order in 0..5 {
        let fit = fit_glm_sofr(SofrData::new(&y, &fc), &GlmSpec::gaussian(), &[BasisSpec::fourier(order)]).unwrap();
        assert!(fit.objective <= last * (1.0 + 1e-12), "order {order}");
        last = fit.objective;
    }
}

#[test]
fn rank_deficient_design_reports_columns() {
    let z = DMatrix::from_fn(10, 2, |i, j| if j == 0 { i as f64 } else { 2.0 * i as f64 });
    let y: Vec<f64> = (0..10).map(|i| i as f64).collect();
    let err = fit_glm_sofr(SofrData::new(&y, &[]).with_z(Some(&z)), &GlmSpec::gaussian(), &[]).unwrap_err();
    match err {
        Error::RankDeficient { aliased } => assert_eq!(aliased, vec![2]),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn random_intercept_gaussian_recovers_variance() {
    let groups = 150;
    let per = 4;
    let n = groups * per;
    let x = smooth_curves(n, 20, 61);
    let mut r = rng(62);
    let effects: Vec<f64> = (0..groups).map(|_| StandardNormal.sample(&mut r)).collect();
    let beta: Vec<f64> = x.t_points().iter().map(|t| (2.0 * std::f64::consts::PI * t).cos()).collect();
    let signal = linear_functional(&beta, &x);
    let y: Vec<f64> = (0..n)
        .map(|i| {
            let e: f64 = StandardNormal.sample(&mut r);
            1.0 + signal[i] + effects[i / per] + 0.5 * e
        })
        .collect();
    let labels: Vec<usize> = (0..n).map(|i| 1000 + i / per).collect();
    let fc = [x.clone()];
    let fit = fit_glm_sofr(
        SofrData::new(&y, &fc).with_groups(Some(&labels)),
        &GlmSpec::gaussian().with_random_intercept(true),
        &[BasisSpec::fourier(2)],
    )
    .unwrap();
    let re = fit.random_intercept.as_ref().unwrap();
    assert!((re.sigma2_u - 1.0).abs() < 0.3, "{}", re.sigma2_u);
    assert!((re.sigma2_e - 0.25).abs() < 0.05, "{}", re.sigma2_e);
    assert_eq!(re.blup.len(), groups);
    assert_eq!(fit.method, "glmm-reml");
}

#[test]
fn random_intercept_needs_groups() {
    let y = [1.0, 2.0, 3.0];
    let z = DMatrix::from_column_slice(3, 1, &[0.0, 1.0, 3.0]);
    let err = fit_glm_sofr(
        SofrData::new(&y, &[]).with_z(Some(&z)),
        &GlmSpec::gaussian().with_random_intercept(true),
        &[],
    );
    assert!(err.is_err());
}

#[test]
fn fit_result_json_roundtrip() {
    let x = smooth_curves(40, 20, 71);
    let y: Vec<f64> = (0..40).map(|i| x.x()[(i, 2)]).collect();
    let fc = [x.clone()];
    for spec in [BasisSpec::fourier(2), BasisSpec::bspline(5, 3), BasisSpec::fpc(3)] {
        let fit = fit_qr_sofr(SofrData::new(&y, &fc), &QrSpec::new(0.5).unwrap(), &[spec]).unwrap();
        let json = serde_json::to_string(&fit).unwrap();
        let back: sofrme_core::regress::FitResult = serde_json::from_str(&json).unwrap();
        assert_eq!(back, fit);
    }
}

#[test]
fn qr_sofr_with_fpc_basis_predicts_training_quantiles() {
    let x = smooth_curves(60, 30, 81);
    let mut r = rng(82);
    let y: Vec<f64> = (0..60).map(|i| x.x()[(i, 7)] + r.random_range(-1.0..1.0)).collect();
    let fc = [x.clone()];
    let tau = 0.75;
    let fit = fit_qr_sofr(SofrData::new(&y, &fc), &QrSpec::new(tau).unwrap(), &[BasisSpec::fpc(3)]).unwrap();
    assert!(fit.convergence.converged);
    let pred = DVector::from_vec(predict(&fit, &fc, None).unwrap());
    let res = DVector::from_column_slice(&y) - pred;
    assert!(quantile_count_holds(&res, tau));
    assert!((check_objective(&res, tau) - fit.objective).abs() < 1e-9 * fit.objective);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn quantile_count_on_random_instances(seed in 0u64..10_000, tau in 0.05f64..0.95, n in 6usize..40) {
        let (x, y) = random_design(n, 3.min(n - 1), seed);
        let sol = solve_quantile(&x, &y, tau).unwrap();
        prop_assert!(quantile_count_holds(&(&y - &x * &sol.coef), tau));
    }

    #[test]
    fn quantile_scale_equivariance(seed in 0u64..10_000, c in 0.1f64..50.0, tau in 0.1f64..0.9) {
        let (x, y) = random_design(30, 3, seed);
        let a = solve_quantile(&x, &y, tau).unwrap();
        let b = solve_quantile(&x, &(&y * c), tau).unwrap();
        prop_assert!((b.objective - c * a.objective).abs() <= 1e-9 * c * a.objective.max(1e-12));
        // continuous data: the minimizer is unique almost surely
        prop_assert!((&b.coef - &a.coef * c).amax() <= 1e-9 * c * (1.0 + a.coef.amax()));
    }

    #[test]
    fn gaussian_scale_equivariance(seed in 0u64..10_000, c in 0.1f64..50.0) {
        let x = smooth_curves(30, 16, seed);
        let mut r = rng(seed + 1);
        let y: Vec<f64> = (0..30).map(|_| r.random_range(-1.0..1.0)).collect();
        let yc: Vec<f64> = y.iter().map(|v| v * c).collect();
        let fc = [x];
        let a = fit_glm_sofr(SofrData::new(&y, &fc), &GlmSpec::gaussian(), &[BasisSpec::fourier(2)]).unwrap();
        let b = fit_glm_sofr(SofrData::new(&yc, &fc), &GlmSpec::gaussian(), &[BasisSpec::fourier(2)]).unwrap();
        let ca = a.coefficients().unwrap();
        let cb = b.coefficients().unwrap();
        prop_assert!((cb - ca * c).amax() <= 1e-8 * c * (1.0 + a.coefficients().unwrap().amax()));
    }
}
