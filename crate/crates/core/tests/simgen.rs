use nalgebra::{DMatrix, DVector};
use sofrme_core::fda::Domain;
use sofrme_core::simgen::{
    generate, Covariance, ErrorSpec, FunctionSpec, InstrumentSpec, OutcomeSpec, ProcessSpec, ScenarioConfig,
};

fn scenario(n: usize, m: usize, j: usize) -> ScenarioConfig {
    ScenarioConfig {
        n,
        m,
        j,
        domain: Domain::new(0.0, 1.0).unwrap(),
        beta: FunctionSpec::Constant(1.0),
        gamma: vec![0.0],
        x_process: ProcessSpec {
            mean: FunctionSpec::Constant(0.0),
            covariance: Covariance::Matern {
                variance: 1.0,
                length_scale: 0.3,
                nu: 1.5,
            },
        },
        error: ErrorSpec::Additive {
            covariance: Covariance::White { variance: 0.5 },
        },
        instrument: None,
        outcome: OutcomeSpec::Gaussian { sigma: 0.5 },
        seed: 11,
    }
}

/// Plain trapezoid weights, written out independently of the library.
fn weights(t: &[f64]) -> Vec<f64> {
    let m = t.len();
    (0..m)
        .map(|j| {
            let left = if j > 0 { t[j] - t[j - 1] } else { 0.0 };
            let right = if j + 1 < m { t[j + 1] - t[j] } else { 0.0 };
            (left + right) / 2.0
        })
        .collect()
}

/// Matérn 3/2 kernel written out in closed form.
fn matern32(t: &[f64], var: f64, ell: f64) -> DMatrix<f64> {
    DMatrix::from_fn(t.len(), t.len(), |a, b| {
        let r = 3f64.sqrt() * (t[a] - t[b]).abs() / ell;
        var * (1.0 + r) * (-r).exp()
    })
}

fn ols_slope(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let rss: f64 = x.iter().zip(y).map(|(a, b)| (b - my - slope * (a - mx)).powi(2)).sum();
    (slope, (rss / (n - 2.0) / sxx).sqrt())
}

#[test]
fn noiseless_replicates_equal_the_latent_curves() {
    let mut cfg = scenario(40, 10, 2);
    cfg.error = ErrorSpec::Additive {
        covariance: Covariance::White { variance: 0.0 },
    };
    let d = generate(&cfg).unwrap();
    for r in d.w.replicates() {
        assert_eq!(r.x(), d.x.x());
    }
    cfg.error = ErrorSpec::None;
    let d = generate(&cfg).unwrap();
    assert_eq!(d.w.j(), 2);
    assert_eq!(d.w.replicate(1).x(), d.x.x());
}

#[test]
fn null_coefficient_centres_the_response_on_the_intercept() {
    let mut cfg = scenario(10_000, 8, 1);
    cfg.beta = FunctionSpec::Constant(0.0);
    cfg.gamma = vec![1.7];
    cfg.outcome = OutcomeSpec::Gaussian { sigma: 1.0 };
    let d = generate(&cfg).unwrap();
    let n = d.y.len() as f64;
    let mean = d.y.iter().sum::<f64>() / n;
    assert!((mean - 1.7).abs() < 3.0 / n.sqrt(), "mean {mean}");
    assert!(d.eta.iter().all(|&e| e == 1.7));
}

#[test]
fn naive_slope_matches_reliability_ratio() {
    let (n, m, b) = (5000, 20, 1.5);
    let mut cfg = scenario(n, m, 1);
    cfg.beta = FunctionSpec::Constant(b);
    cfg.error = ErrorSpec::Additive {
        covariance: Covariance::Matern {
            variance: 0.6,
            length_scale: 0.3,
            nu: 1.5,
        },
    };
    let d = generate(&cfg).unwrap();
    let t = cfg.t_points();
    let w = weights(&t);
    let wv = DVector::from_column_slice(&w);
    let k = matern32(&t, 1.0, 0.3);
    let sx = (wv.transpose() * &k * &wv)[0];
    let su = (wv.transpose() * matern32(&t, 0.6, 0.3) * &wv)[0];
    let rho = sx / (sx + su);
    let s: Vec<f64> = (0..n).map(|i| d.w.replicate(0).x().row(i).iter().zip(&w).map(|(a, c)| a * c).sum()).collect();
    let (slope, se) = ols_slope(&s, &d.y);
    assert!(rho < 0.95, "scenario must attenuate, rho = {rho}");
    assert!((slope - rho * b).abs() < 4.0 * se, "slope {slope}, expected {}", rho * b);
}

#[test]
fn measurement_error_covariance_is_reproduced() {
    let (n, m) = (5000, 10);
    let mut cfg = scenario(n, m, 1);
    cfg.error = ErrorSpec::Additive {
        covariance: Covariance::Matern {
            variance: 0.5,
            length_scale: 0.2,
            nu: 1.5,
        },
    };
    let d = generate(&cfg).unwrap();
    let u = d.w.replicate(0).x() - d.x.x();
    let mean = u.row_mean();
    let mut c = DMatrix::zeros(m, m);
    for i in 0..n {
        let r = u.row(i) - &mean;
        c += r.transpose() * r;
    }
    c /= (n - 1) as f64;
    let truth = matern32(&cfg.t_points(), 0.5, 0.2);
    let rel = (c - &truth).norm() / truth.norm();
    assert!(rel < 0.05, "relative error {rel}");
}

#[test]
fn instrument_scales_the_latent_curve() {
    let (n, m, delta) = (5000, 8, 0.7);
    let mut cfg = scenario(n, m, 1);
    cfg.instrument = Some(InstrumentSpec {
        delta: FunctionSpec::Constant(delta),
        eta: Covariance::White { variance: 0.3 },
    });
    let d = generate(&cfg).unwrap();
    let mi = d.m.as_ref().unwrap().x();
    let xs: Vec<f64> = d.x.x().iter().copied().collect();
    let ms: Vec<f64> = mi.iter().copied().collect();
    let (slope, se) = ols_slope(&xs, &ms);
    assert!((slope - delta).abs() < 4.0 * se, "slope {slope}");
}

#[test]
fn poisson_surrogates_are_counts() {
    let mut cfg = scenario(30, 6, 3);
    cfg.error = ErrorSpec::Poisson;
    let d = generate(&cfg).unwrap();
    for r in d.w.replicates() {
        assert!(r.x().iter().all(|&v| v >= 0.0 && v.fract() == 0.0));
    }
}

#[test]
fn seed_determines_the_draw() {
    let cfg = scenario(25, 6, 2);
    let a = generate(&cfg).unwrap();
    let b = generate(&cfg).unwrap();
    assert_eq!(a.y, b.y);
    assert_eq!(a.w, b.w);
    let mut other = cfg.clone();
    other.seed += 1;
    assert_ne!(generate(&other).unwrap().y, a.y);
}

#[test]
fn subjects_do_not_depend_on_sample_size() {
    let small = generate(&scenario(10, 6, 2)).unwrap();
    let large = generate(&scenario(30, 6, 2)).unwrap();
    assert_eq!(&large.y[..10], &small.y[..]);
    assert_eq!(large.x.x().rows(0, 10), small.x.x().rows(0, 10));
}

#[test]
fn json_scenarios_are_validated() {
    let bad = r#"{"n": 0, "m": 5, "J": 1, "domain": {"t0": 0, "period": 1}, "beta": 1, "gamma": [0],
        "x_process": {"covariance": {"kernel": "white", "variance": 1}},
        "error": {"kind": "none"}, "outcome": {"family": "gaussian", "sigma": 1}, "seed": 1}"#;
    assert!(matches!(
        ScenarioConfig::from_json(bad),
        Err(sofrme_core::Error::Config(_))
    ));
    assert!(ScenarioConfig::from_json(&bad.replace("\"n\": 0", "\"n\": 3")).is_ok());
}
