//! Small deterministic optimizers.

use nalgebra::{DMatrix, DVector};

/// Minimizes a unimodal `f` on `[a, b]`, returning the argmin and its value.
pub fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64, max_iter: usize) -> (f64, f64) {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..max_iter {
        if (b - a).abs() <= tol * (1.0 + c.abs() + d.abs()) {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    if fc < fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BfgsOptions {
    pub max_iterations: usize,
    /// Stop when the gradient's max-norm falls below this.
    pub gradient_tolerance: f64,
    /// Stop when the relative objective change falls below this.
    pub value_tolerance: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            gradient_tolerance: 1e-8,
            value_tolerance: 1e-14,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BfgsResult {
    pub x: DVector<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// BFGS with a backtracking Armijo line search.
///
/// `f` returns the objective and its gradient.
pub fn bfgs(f: impl Fn(&DVector<f64>) -> (f64, DVector<f64>), x0: DVector<f64>, opts: BfgsOptions) -> BfgsResult {
    let n = x0.len();
    let mut x = x0;
    let (mut fx, mut g) = f(&x);
    let mut h = DMatrix::<f64>::identity(n, n);
    let mut first = true;
    for iter in 0..opts.max_iterations {
        if !fx.is_finite() {
            return BfgsResult {
                x,
                value: fx,
                iterations: iter,
                converged: false,
            };
        }
        if g.amax() < opts.gradient_tolerance {
            return BfgsResult {
                x,
                value: fx,
                iterations: iter,
                converged: true,
            };
        }
        let mut d = -(&h * &g);
        let mut slope = g.dot(&d);
        if slope >= 0.0 {
            h = DMatrix::identity(n, n);
            d = -g.clone();
            slope = g.dot(&d);
        }
        if first {
            // scale the first step to a unit move
            let s = 1.0 / d.amax().max(1.0);
            d *= s;
            slope *= s;
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let xn = &x + &d * step;
            let (fn_, gn) = f(&xn);
            if fn_.is_finite() && fn_ <= fx + 1e-4 * step * slope {
                accepted = Some((xn, fn_, gn));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fn_, gn)) = accepted else {
            return BfgsResult {
                x,
                value: fx,
                iterations: iter,
                converged: g.amax() < opts.gradient_tolerance.sqrt(),
            };
        };
        let s = &xn - &x;
        let y = &gn - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if first {
                h *= sy / y.dot(&y);
            }
            let rho = 1.0 / sy;
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            // H += (1 + rho y'Hy) rho s s' - rho (H y s' + s y'H)
            h += (&s * s.transpose()) * (rho * (1.0 + rho * yhy)) - (&hy * s.transpose() + &s * hy.transpose()) * rho;
        }
        first = false;
        let change = (fx - fn_).abs() / (fx.abs() + 1e-300);
        x = xn;
        fx = fn_;
        g = gn;
        if change < opts.value_tolerance && g.amax() < opts.gradient_tolerance.sqrt() {
            return BfgsResult {
                x,
                value: fx,
                iterations: iter + 1,
                converged: true,
            };
        }
    }
    BfgsResult {
        x,
        value: fx,
        iterations: opts.max_iterations,
        converged: g.amax() < opts.gradient_tolerance,
    }
}

/// Central-difference gradient.
pub fn numeric_gradient(f: impl Fn(&DVector<f64>) -> f64, x: &DVector<f64>) -> DVector<f64> {
    let mut g = DVector::zeros(x.len());
    let mut xp = x.clone();
    for i in 0..x.len() {
        let h = 1e-6 * (1.0 + x[i].abs());
        xp[i] = x[i] + h;
        let fp = f(&xp);
        xp[i] = x[i] - h;
        let fm = f(&xp);
        xp[i] = x[i];
        g[i] = (fp - fm) / (2.0 * h);
    }
    g
}
