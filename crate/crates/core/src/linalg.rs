//! Small dense solvers for the regression-based learners.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Solve `a x = b` for square `a` (row-major, `n x n`) by Gaussian
/// elimination with partial pivoting.
pub fn solve<T: Scalar>(mut a: Vec<Vec<T>>, mut b: Vec<T>) -> Result<Vec<T>> {
    let n = b.len();
    if a.len() != n || a.iter().any(|r| r.len() != n) {
        return Err(Error::dims(n, a.len()));
    }
    let scale = a.iter().flatten().fold(T::zero(), |m, v| m.max(v.abs()));
    let tol = scale * T::epsilon() * T::of_usize(n.max(1)) * T::of(16.0);
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).expect("finite entries"))
            .expect("non-empty range");
        if !(a[pivot][col].abs() > tol) {
            return Err(Error::Numerical(format!("singular system (column {col})")));
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f == T::zero() {
                continue;
            }
            for k in col..n {
                let v = a[col][k];
                a[row][k] = a[row][k] - f * v;
            }
            b[row] = b[row] - f * b[col];
        }
    }
    let mut x = vec![T::zero(); n];
    for row in (0..n).rev() {
        let s = (row + 1..n).fold(b[row], |acc, k| acc - a[row][k] * x[k]);
        x[row] = s / a[row][row];
    }
    Ok(x)
}

/// Weighted ridge regression with an unpenalized intercept.
///
/// Minimizes `sum_j w_j (y_j - c - x_j . beta)^2 + ridge |beta|^2` and
/// returns `(c, beta)`.
pub fn weighted_ridge<T: Scalar>(rows: &[Vec<T>], y: &[T], weights: &[T], ridge: T) -> Result<(T, Vec<T>)> {
    let sol = normal_equations(rows, y, weights, ridge, true)?;
    Ok((sol[0], sol[1..].to_vec()))
}

/// Weighted least squares through the origin.
pub fn weighted_least_squares<T: Scalar>(rows: &[Vec<T>], y: &[T], weights: &[T]) -> Result<Vec<T>> {
    normal_equations(rows, y, weights, T::zero(), false)
}

fn normal_equations<T: Scalar>(rows: &[Vec<T>], y: &[T], weights: &[T], ridge: T, intercept: bool) -> Result<Vec<T>> {
    let m = rows.first().map_or(0, Vec::len);
    if rows.len() != y.len() || rows.len() != weights.len() {
        return Err(Error::dims(rows.len(), y.len().min(weights.len())));
    }
    let lead = usize::from(intercept);
    let p = m + lead;
    let mut ata = vec![vec![T::zero(); p]; p];
    let mut atb = vec![T::zero(); p];
    for ((row, &yj), &wj) in rows.iter().zip(y).zip(weights) {
        if row.len() != m {
            return Err(Error::dims(m, row.len()));
        }
        let xs: Vec<T> = std::iter::repeat_n(T::one(), lead).chain(row.iter().copied()).collect();
        for i in 0..p {
            let wi = wj * xs[i];
            if wi == T::zero() {
                continue;
            }
            for k in i..p {
                ata[i][k] = ata[i][k] + wi * xs[k];
            }
            atb[i] = atb[i] + wi * yj;
        }
    }
    for i in 0..p {
        for k in 0..i {
            ata[i][k] = ata[k][i];
        }
    }
    for (i, row) in ata.iter_mut().enumerate().skip(lead) {
        row[i] = row[i] + ridge;
    }
    solve(ata, atb)
}
