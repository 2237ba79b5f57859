//! Small dense row-major matrices and the few vector helpers the estimators
//! need. Dimensions in this crate are tiny (≤ 8), so nothing here is blocked
//! or vectorized.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
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

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        if r == 0 {
            return Err(Error::InvalidMapping("matrix has no rows".into()));
        }
        let c = rows[0].len();
        if c == 0 {
            return Err(Error::InvalidMapping("matrix has no columns".into()));
        }
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(Error::DimensionMismatch {
                    expected: c,
                    got: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Self {
            rows: r,
            cols: c,
            data,
        })
    }

    /// Rank-one matrix `u vᵀ`.
    pub fn outer(u: &[f64], v: &[f64]) -> Self {
        let mut m = Self::zeros(u.len(), v.len());
        for i in 0..u.len() {
            for j in 0..v.len() {
                m[(i, j)] = u[i] * v[j];
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    /// `Aᵀ y`
    pub fn tr_mul_vec(&self, y: &[f64]) -> Vec<f64> {
        debug_assert_eq!(y.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (i, &yi) in y.iter().enumerate() {
            for (o, a) in out.iter_mut().zip(self.row(i)) {
                *o += a * yi;
            }
        }
        out
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

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows);
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn add(&self, other: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn scaled(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|a| a * s).collect(),
        }
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|a| a * a).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Solution set of `A u = b` as `particular + span(null_basis)`, or
    /// `None` when the system is inconsistent. The null basis is orthonormal.
    pub fn solve_affine(&self, b: &[f64]) -> Option<AffineSet> {
        let (m, n) = (self.rows, self.cols);
        let scale = self.data.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
        let tol = 1e-11 * scale * (m.max(n) as f64);
        // Augmented RREF with partial pivoting.
        let mut aug: Vec<Vec<f64>> = (0..m)
            .map(|i| {
                let mut r = self.row(i).to_vec();
                r.push(b[i]);
                r
            })
            .collect();
        let mut pivots = Vec::new();
        let mut row = 0;
        for col in 0..n {
            if row == m {
                break;
            }
            let (p, best) = (row..m)
                .map(|r| (r, aug[r][col].abs()))
                .fold((row, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
            if best <= tol {
                continue;
            }
            aug.swap(row, p);
            let piv = aug[row][col];
            for v in aug[row].iter_mut() {
                *v /= piv;
            }
            for r in 0..m {
                if r != row {
                    let factor = aug[r][col];
                    if factor != 0.0 {
                        for c in 0..=n {
                            aug[r][c] -= factor * aug[row][c];
                        }
                    }
                }
            }
            pivots.push(col);
            row += 1;
        }
        let bscale = b.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
        for r in row..m {
            if aug[r][n].abs() > 1e-9 * bscale {
                return None;
            }
        }
        let mut particular = vec![0.0; n];
        for (r, &c) in pivots.iter().enumerate() {
            particular[c] = aug[r][n];
        }
        let free: Vec<usize> = (0..n).filter(|c| !pivots.contains(c)).collect();
        let mut basis: Vec<Vec<f64>> = free
            .iter()
            .map(|&fc| {
                let mut v = vec![0.0; n];
                v[fc] = 1.0;
                for (r, &c) in pivots.iter().enumerate() {
                    v[c] = -aug[r][fc];
                }
                v
            })
            .collect();
        gram_schmidt(&mut basis);
        Some(AffineSet {
            particular,
            null_basis: basis,
        })
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

impl TryFrom<Vec<Vec<f64>>> for Matrix {
    type Error = Error;
    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Matrix::from_rows(&rows)
    }
}

impl From<Matrix> for Vec<Vec<f64>> {
    fn from(m: Matrix) -> Self {
        m.to_rows()
    }
}

/// `particular + span(null_basis)` with an orthonormal basis.
#[derive(Debug, Clone)]
pub struct AffineSet {
    pub particular: Vec<f64>,
    pub null_basis: Vec<Vec<f64>>,
}

impl AffineSet {
    /// Euclidean projection of `x`.
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        let diff = sub(x, &self.particular);
        let mut u = self.particular.clone();
        for b in &self.null_basis {
            let c = dot(b, &diff);
            axpy(&mut u, c, b);
        }
        u
    }
}

fn gram_schmidt(vs: &mut Vec<Vec<f64>>) {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(vs.len());
    for v in vs.drain(..) {
        let mut w = v;
        for _ in 0..2 {
            for q in &out {
                let c = dot(q, &w);
                axpy(&mut w, -c, q);
            }
        }
        let n = dot(&w, &w).sqrt();
        if n > 1e-12 {
            w.iter_mut().for_each(|a| *a /= n);
            out.push(w);
        }
    }
    *vs = out;
}

/// Solves the square system `a x = b` by Gaussian elimination with partial
/// pivoting. `None` when a pivot vanishes.
pub fn solve_square(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let p = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[p][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, p);
        b.swap(col, p);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            if f != 0.0 {
                for c in col..n {
                    a[r][c] -= f * a[col][c];
                }
                b[r] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|j| a[i][j] * x[j]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    Some(x)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn scale(a: &[f64], s: f64) -> Vec<f64> {
    a.iter().map(|x| x * s).collect()
}

/// `y += a·x`
pub fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

pub fn euclid(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_solution_of_singular_system() {
        let a = Matrix::from_rows(&[vec![1.0, 1.0], vec![2.0, 2.0]]).unwrap();
        let s = a.solve_affine(&[1.0, 2.0]).unwrap();
        assert_eq!(s.null_basis.len(), 1);
        let p = s.project(&[0.0, 0.0]);
        assert!((p[0] - 0.5).abs() < 1e-12 && (p[1] - 0.5).abs() < 1e-12);
        assert!(a.solve_affine(&[1.0, 0.0]).is_none());
    }

    #[test]
    fn affine_solution_of_invertible_system() {
        let a = Matrix::diag(&[2.0, 0.5]);
        let s = a.solve_affine(&[2.0, 0.5]).unwrap();
        assert!(s.null_basis.is_empty());
        assert_eq!(s.particular, vec![1.0, 1.0]);
    }

    #[test]
    fn transpose_products_agree() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        let y = [1.0, -1.0];
        assert_eq!(a.tr_mul_vec(&y), a.transpose().mul_vec(&y));
    }
}
