//! Dense tableau simplex for the linear-programming form of quantile
//! regression, used as an independent oracle.
//!
//! minimize  tau 1'u + (1 - tau) 1'v
//! subject to X b+ - X b- + u - v = y,  all variables >= 0.

pub fn quantile_lp_objective(x: &[Vec<f64>], y: &[f64], tau: f64) -> f64 {
    let n = y.len();
    let p = x[0].len();
    let cols = 2 * p + 2 * n;
    let mut cost = vec![0.0; cols];
    for i in 0..n {
        cost[2 * p + i] = tau;
        cost[2 * p + n + i] = 1.0 - tau;
    }
    let mut t = vec![vec![0.0; cols + 1]; n];
    let mut basis = vec![0usize; n];
    for i in 0..n {
        for k in 0..p {
            t[i][k] = x[i][k];
            t[i][p + k] = -x[i][k];
        }
        t[i][2 * p + i] = 1.0;
        t[i][2 * p + n + i] = -1.0;
        t[i][cols] = y[i];
        if y[i] >= 0.0 {
            basis[i] = 2 * p + i;
        } else {
            basis[i] = 2 * p + n + i;
            for v in t[i].iter_mut() {
                *v = -*v;
            }
        }
    }
    for _ in 0..100_000 {
        // reduced costs, Bland's rule for the entering column
        let entering = (0..cols).find(|&j| {
            let z: f64 = (0..n).map(|i| cost[basis[i]] * t[i][j]).sum();
            cost[j] - z < -1e-11
        });
        let Some(j) = entering else {
            return (0..n).map(|i| cost[basis[i]] * t[i][cols]).sum();
        };
        let mut leave: Option<(usize, f64)> = None;
        for i in 0..n {
            if t[i][j] > 1e-12 {
                let ratio = t[i][cols] / t[i][j];
                let better = match leave {
                    None => true,
                    Some((l, r)) => ratio < r - 1e-15 || (ratio <= r + 1e-15 && basis[i] < basis[l]),
                };
                if better {
                    leave = Some((i, ratio));
                }
            }
        }
        let (r, _) = leave.expect("bounded problem");
        let piv = t[r][j];
        for v in t[r].iter_mut() {
            *v /= piv;
        }
        let row = t[r].clone();
        for (i, ti) in t.iter_mut().enumerate() {
            if i != r && ti[j] != 0.0 {
                let f = ti[j];
                for (a, b) in ti.iter_mut().zip(&row) {
                    *a -= f * b;
                }
            }
        }
        basis[r] = j;
    }
    panic!("simplex did not terminate");
}
