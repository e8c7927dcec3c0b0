//! Dense small-matrix linear algebra.
//!
//! Everything here works on row-major `f64` storage and is sized for the
//! handful-of-constraints, few-hundred-unknowns systems that show up in
//! manifold projection. Vectors are plain `Vec<f64>` / `&[f64]`.

use crate::error::{Error, Result};

/// A state, multiplier or residual vector.
pub type Vector = Vec<f64>;

/// Relative symmetry tolerance accepted by [`solve_spd`].
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                context: "matrix storage",
                expected: rows * cols,
                found: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from nested rows. Panics on ragged input; meant for
    /// literals and tests.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged matrix literal");
            data.extend_from_slice(r);
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn diagonal(d: &[f64]) -> Self {
        let mut m = Self::zeros(d.len(), d.len());
        for (i, &v) in d.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self * other`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch {
                context: "matmul inner dimension",
                expected: self.cols,
                found: other.rows,
            });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        Ok(out)
    }

    /// `self * other^T`, the shape of the projection normal matrix `J J^T`.
    pub fn mul_transpose(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(Error::DimensionMismatch {
                context: "A * B^T column count",
                expected: self.cols,
                found: other.cols,
            });
        }
        let mut out = Matrix::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            for j in 0..other.rows {
                out[(i, j)] = dot(self.row(i), other.row(j));
            }
        }
        Ok(out)
    }

    /// `self + alpha * other`, in place.
    pub fn add_scaled(&mut self, alpha: f64, other: &Matrix) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::DimensionMismatch {
                context: "matrix add",
                expected: self.rows * self.cols,
                found: other.rows * other.cols,
            });
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y)
}

#[inline]
pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

pub fn all_finite(a: &[f64]) -> bool {
    a.iter().all(|v| v.is_finite())
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `result[i] = sum_j A[i,j] * x[j]`, accumulated left to right.
pub fn matvec(a: &Matrix, x: &[f64]) -> Result<Vector> {
    if a.cols != x.len() {
        return Err(Error::DimensionMismatch {
            context: "matvec",
            expected: a.cols,
            found: x.len(),
        });
    }
    Ok((0..a.rows).map(|i| dot(a.row(i), x)).collect())
}

/// `A^T x`
pub fn matvec_transpose(a: &Matrix, x: &[f64]) -> Result<Vector> {
    if a.rows != x.len() {
        return Err(Error::DimensionMismatch {
            context: "transposed matvec",
            expected: a.rows,
            found: x.len(),
        });
    }
    let mut out = vec![0.0; a.cols];
    for (i, &xi) in x.iter().enumerate() {
        axpy(xi, a.row(i), &mut out);
    }
    Ok(out)
}

/// Lower-triangular Cholesky factor `L` with `A = L L^T`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: Matrix,
}

impl Cholesky {
    /// Factorizes a symmetric positive-definite matrix. Symmetry is checked
    /// to [`SYMMETRY_TOL`] relative to the largest entry.
    pub fn factor(a: &Matrix) -> Result<Self> {
        let n = a.rows;
        if a.cols != n {
            return Err(Error::DimensionMismatch {
                context: "cholesky requires a square matrix",
                expected: n,
                found: a.cols,
            });
        }
        if !a.is_finite() {
            return Err(Error::NonFinite("cholesky input".into()));
        }
        let scale = a.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        for i in 0..n {
            for j in 0..i {
                let diff = (a[(i, j)] - a[(j, i)]).abs();
                if diff > SYMMETRY_TOL * scale {
                    return Err(Error::NotSymmetric {
                        row: i,
                        col: j,
                        diff,
                    });
                }
            }
        }

        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            let mut d = a[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if d <= 0.0 || !d.is_finite() {
                return Err(Error::NotPositiveDefinite { pivot: j, value: d });
            }
            let djj = d.sqrt();
            l[(j, j)] = djj;
            for i in (j + 1)..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / djj;
            }
        }
        Ok(Self { l })
    }

    pub fn dim(&self) -> usize {
        self.l.rows
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vector> {
        let n = self.l.rows;
        if b.len() != n {
            return Err(Error::DimensionMismatch {
                context: "cholesky solve",
                expected: n,
                found: b.len(),
            });
        }
        let l = &self.l;
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= l[(i, k)] * y[k];
            }
            y[i] = s / l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s -= l[(k, i)] * y[k];
            }
            y[i] = s / l[(i, i)];
        }
        Ok(y)
    }
}

/// Solves `A x = b` for symmetric positive-definite `A`.
pub fn solve_spd(a: &Matrix, b: &[f64]) -> Result<Vector> {
    if a.rows != b.len() {
        return Err(Error::DimensionMismatch {
            context: "solve_spd right-hand side",
            expected: a.rows,
            found: b.len(),
        });
    }
    Cholesky::factor(a)?.solve(b)
}

/// Solves a general square system with partially pivoted Gaussian
/// elimination. Only used for the small non-symmetric `m x m` systems that
/// arise when differentiating the fixed-Jacobian projection.
pub fn solve_general(a: &Matrix, b: &[f64]) -> Result<Vector> {
    let n = a.rows;
    if a.cols != n || b.len() != n {
        return Err(Error::DimensionMismatch {
            context: "solve_general",
            expected: n,
            found: if a.cols != n { a.cols } else { b.len() },
        });
    }
    let mut m = a.clone();
    let mut x = b.to_vec();
    let scale = a.data.iter().fold(0.0_f64, |s, v| s.max(v.abs()));
    for col in 0..n {
        let (piv, pval) =
            (col..n)
                .map(|r| (r, m[(r, col)].abs()))
                .fold(
                    (col, -1.0),
                    |best, cur| if cur.1 > best.1 { cur } else { best },
                );
        if !(pval > f64::EPSILON * scale * n as f64) {
            return Err(Error::NotPositiveDefinite {
                pivot: col,
                value: pval,
            });
        }
        if piv != col {
            for j in 0..n {
                m.data.swap(col * n + j, piv * n + j);
            }
            x.swap(col, piv);
        }
        for r in (col + 1)..n {
            let f = m[(r, col)] / m[(col, col)];
            if f == 0.0 {
                continue;
            }
            for j in col..n {
                m[(r, j)] -= f * m[(col, j)];
            }
            x[r] -= f * x[col];
        }
    }
    for i in (0..n).rev() {
        let mut s = x[i];
        for j in (i + 1)..n {
            s -= m[(i, j)] * x[j];
        }
        x[i] = s / m[(i, i)];
    }
    Ok(x)
}

/// Central-difference Jacobian of `f` at `x`: column `j` is
/// `(f(x + eps e_j) - f(x - eps e_j)) / (2 eps)`.
pub fn finite_diff_jacobian<F>(f: F, x: &[f64], eps: f64) -> Result<Matrix>
where
    F: Fn(&[f64]) -> Result<Vector>,
{
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "finite-difference step must be positive, got {eps}"
        )));
    }
    let mut xp = x.to_vec();
    let mut cols: Vec<Vector> = Vec::with_capacity(x.len());
    let mut rows = None;
    for j in 0..x.len() {
        xp[j] = x[j] + eps;
        let fp = f(&xp)?;
        xp[j] = x[j] - eps;
        let fm = f(&xp)?;
        xp[j] = x[j];
        if !all_finite(&fp) || !all_finite(&fm) {
            return Err(Error::NonFinite(format!(
                "function output while differencing coordinate {j}"
            )));
        }
        if fp.len() != fm.len() || rows.is_some_and(|r| r != fp.len()) {
            return Err(Error::DimensionMismatch {
                context: "finite-difference output length",
                expected: rows.unwrap_or(fm.len()),
                found: fp.len(),
            });
        }
        rows = Some(fp.len());
        cols.push(
            fp.iter()
                .zip(&fm)
                .map(|(a, b)| (a - b) / (2.0 * eps))
                .collect(),
        );
    }
    let rows = match rows {
        Some(r) => r,
        None => f(x)?.len(),
    };
    let mut jac = Matrix::zeros(rows, x.len());
    for (j, col) in cols.iter().enumerate() {
        for (i, v) in col.iter().enumerate() {
            jac[(i, j)] = *v;
        }
    }
    Ok(jac)
}
