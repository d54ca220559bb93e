//! Dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative tolerance below which a column is treated as a linear
/// combination of the columns before it.
pub const ALIAS_TOL: f64 = 1e-10;

/// Composite trapezoid weights on an increasing grid, so that
/// `sum_j w[j] f(t[j])` approximates the integral over `[t[0], t[m-1]]`.
pub fn trapezoid_weights(t: &[f64]) -> Vec<f64> {
    let m = t.len();
    let mut w = vec![0.0; m];
    for j in 1..m {
        let h = t[j] - t[j - 1];
        w[j - 1] += 0.5 * h;
        w[j] += 0.5 * h;
    }
    w
}

/// Eigen-decomposition of a symmetric matrix with eigenvalues sorted in
/// decreasing order. Columns of the returned matrix are the eigenvectors.
pub fn sorted_symmetric_eigen(a: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(a.clone());
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(a.nrows(), n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// Exact symmetrisation `(A + A')/2`.
pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    let mut s = a.clone();
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            s[(i, j)] = v;
            s[(j, i)] = v;
        }
    }
    s
}

/// Returns the indices of columns that are (numerically) linear combinations
/// of earlier columns, using modified Gram-Schmidt with one reorthogonalisation.
pub fn aliased_columns(x: &DMatrix<f64>) -> Vec<usize> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut aliased = Vec::new();
    for j in 0..x.ncols() {
        let col = x.column(j).into_owned();
        let norm0 = col.norm();
        let mut v = col;
        for _ in 0..2 {
            for q in &basis {
                let c = q.dot(&v);
                v.axpy(-c, q, 1.0);
            }
        }
        let norm = v.norm();
        if norm0 == 0.0 || norm <= ALIAS_TOL * norm0 {
            aliased.push(j);
        } else {
            basis.push(v / norm);
        }
    }
    aliased
}

/// Least-squares solution of `x b = y` through Householder QR.
///
/// Fails with [`Error::RankDeficient`] when some column is aliased.
pub fn least_squares(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    let (n, p) = x.shape();
    if n < p {
        return Err(Error::RankDeficient {
            aliased: (n..p).collect(),
        });
    }
    let aliased = aliased_columns(x);
    if !aliased.is_empty() {
        return Err(Error::RankDeficient { aliased });
    }
    let qr = x.clone().qr();
    let mut qty = y.clone();
    qr.q_tr_mul(&mut qty);
    let r = qr.r();
    let rhs = qty.rows(0, p).into_owned();
    r.solve_upper_triangular(&rhs)
        .ok_or_else(|| Error::Numeric("triangular solve failed".into()))
}

/// Weighted least squares, minimising `sum_i w_i (y_i - x_i' b)^2`.
pub fn weighted_least_squares(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    w: &DVector<f64>,
) -> Result<DVector<f64>> {
    let mut xw = x.clone();
    let mut yw = y.clone();
    for i in 0..x.nrows() {
        let s = w[i].max(0.0).sqrt();
        xw.row_mut(i).scale_mut(s);
        yw[i] *= s;
    }
    least_squares(&xw, &yw)
}

/// 2-norm condition number of a square or rectangular matrix.
pub fn condition_number(a: &DMatrix<f64>) -> f64 {
    let sv = a.clone().singular_values();
    let max = sv.iter().cloned().fold(0.0_f64, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Sample covariance `(A - mean)'(A - mean) / (n - 1)` of the rows of `a`.
pub fn column_covariance(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let mean = column_means(a);
    let mut centered = a.clone();
    for mut row in centered.row_iter_mut() {
        row -= &mean.transpose();
    }
    let denom = (n.max(2) - 1) as f64;
    symmetrize(&(centered.transpose() * &centered / denom))
}

pub fn column_means(a: &DMatrix<f64>) -> DVector<f64> {
    let n = a.nrows() as f64;
    DVector::from_iterator(a.ncols(), a.column_iter().map(|c| c.sum() / n))
}

/// Serde adapter storing a matrix as a list of rows.
pub mod rows {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m
            .row_iter()
            .map(|r| r.iter().copied().collect())
            .collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows: Vec<Vec<f64>> = Vec::deserialize(d)?;
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(serde::de::Error::custom("ragged matrix rows"));
        }
        Ok(DMatrix::from_row_iterator(
            nrows,
            ncols,
            rows.into_iter().flatten(),
        ))
    }
}

/// Serde adapter for a column vector stored as a plain list.
pub mod vector {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DVector<f64>, D::Error> {
        let v: Vec<f64> = Vec::deserialize(d)?;
        Ok(DVector::from_vec(v))
    }
}
