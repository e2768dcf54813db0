//! Dense row-major linear algebra used across the crate.
//!
//! Everything is `f64` and row-major. The SVD is a one-sided (Hestenes)
//! Jacobi iteration, which is accurate to working precision on the small
//! matrices this crate deals with.

use std::fmt;
use std::ops::Index;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("matrix data has {len} entries, expected {rows}x{cols}")]
    DataLength { rows: usize, cols: usize, len: usize },
    #[error("dimensions must be positive, got {rows}x{cols}")]
    ZeroDimension { rows: usize, cols: usize },
    #[error("{0}: empty vector")]
    Empty(&'static str),
    #[error("{0}: non-finite input")]
    NonFinite(&'static str),
    #[error("rank {rank} out of range 1..={max}")]
    RankOutOfRange { rank: usize, max: usize },
}

/// Dense row-major matrix.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MatrixRepr", into = "MatrixRepr")]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct MatrixRepr {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl TryFrom<MatrixRepr> for Matrix {
    type Error = LinalgError;

    fn try_from(r: MatrixRepr) -> Result<Self, Self::Error> {
        Matrix::new(r.rows, r.cols, r.data)
    }
}

impl From<Matrix> for MatrixRepr {
    fn from(m: Matrix) -> Self {
        MatrixRepr {
            rows: m.rows,
            cols: m.cols,
            data: m.data,
        }
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        write!(f, "]")
    }
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, LinalgError> {
        if rows == 0 || cols == 0 {
            return Err(LinalgError::ZeroDimension { rows, cols });
        }
        if data.len() != rows * cols {
            return Err(LinalgError::DataLength {
                rows,
                cols,
                len: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// # Panics
    /// If either dimension is zero.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m.data[i * cols + j] = f(i, j);
            }
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, LinalgError> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(LinalgError::DataLength {
                    rows: rows.len(),
                    cols,
                    len: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    /// Column vector `n x 1`.
    pub fn column_vector(v: &Vector) -> Self {
        Self {
            rows: v.len(),
            cols: 1,
            data: v.as_slice().to_vec(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix, LinalgError> {
        matmul(self, other)
    }

    pub fn matvec(&self, x: &Vector) -> Result<Vector, LinalgError> {
        if x.len() != self.cols {
            return Err(LinalgError::ShapeMismatch {
                op: "matvec",
                left: self.shape(),
                right: (x.len(), 1),
            });
        }
        let out = (0..self.rows)
            .map(|i| dot(self.row(i), x.as_slice()))
            .collect();
        Ok(Vector(out))
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| x * s).collect(),
        }
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix, LinalgError> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix, LinalgError> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    fn zip_with(
        &self,
        other: &Matrix,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Matrix, LinalgError> {
        if self.shape() != other.shape() {
            return Err(LinalgError::ShapeMismatch {
                op,
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn frobenius_norm(&self) -> f64 {
        frobenius_norm(self)
    }

    /// Concatenates matrices side by side.
    pub fn hstack(parts: &[&Matrix]) -> Result<Matrix, LinalgError> {
        let first = parts.first().ok_or(LinalgError::Empty("hstack"))?;
        let rows = first.rows;
        let cols: usize = parts.iter().map(|p| p.cols).sum();
        let mut out = Matrix::zeros(rows, cols);
        let mut offset = 0;
        for p in parts {
            if p.rows != rows {
                return Err(LinalgError::ShapeMismatch {
                    op: "hstack",
                    left: first.shape(),
                    right: p.shape(),
                });
            }
            for i in 0..rows {
                out.data[i * cols + offset..i * cols + offset + p.cols].copy_from_slice(p.row(i));
            }
            offset += p.cols;
        }
        Ok(out)
    }

    /// Keeps the first `n` columns.
    pub fn leading_columns(&self, n: usize) -> Result<Matrix, LinalgError> {
        if n == 0 || n > self.cols {
            return Err(LinalgError::RankOutOfRange {
                rank: n,
                max: self.cols,
            });
        }
        Ok(Matrix::from_fn(self.rows, n, |i, j| self.get(i, j)))
    }

    /// Largest absolute entry of `self^T self - I`.
    pub fn gram_deviation(&self) -> f64 {
        let g = self.transpose().matmul(self).expect("conformable by construction");
        let mut worst: f64 = 0.0;
        for i in 0..g.rows {
            for j in 0..g.cols {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g.get(i, j) - target).abs());
            }
        }
        worst
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Dense vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn new(data: Vec<f64>) -> Self {
        Self(data)
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn dot(&self, other: &Vector) -> Result<f64, LinalgError> {
        if self.len() != other.len() {
            return Err(LinalgError::ShapeMismatch {
                op: "dot",
                left: (self.len(), 1),
                right: (other.len(), 1),
            });
        }
        Ok(dot(&self.0, &other.0))
    }

    pub fn add(&self, other: &Vector) -> Result<Vector, LinalgError> {
        if self.len() != other.len() {
            return Err(LinalgError::ShapeMismatch {
                op: "add",
                left: (self.len(), 1),
                right: (other.len(), 1),
            });
        }
        Ok(Vector(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect()))
    }

    pub fn scale(&self, s: f64) -> Vector {
        Vector(self.0.iter().map(|x| x * s).collect())
    }

    /// Index of the largest entry; the lowest index wins ties.
    pub fn argmax(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, &x) in self.0.iter().enumerate() {
            match best {
                Some(b) if x <= self.0[b] => {}
                _ => best = Some(i),
            }
        }
        best
    }
}

impl From<Vec<f64>> for Vector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

impl Index<usize> for Vector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix, LinalgError> {
    if a.cols != b.rows {
        return Err(LinalgError::ShapeMismatch {
            op: "matmul",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let out_row = &mut out.data[i * b.cols..(i + 1) * b.cols];
        for k in 0..a.cols {
            let aik = a.data[i * a.cols + k];
            if aik == 0.0 {
                continue;
            }
            for (o, &bkj) in out_row.iter_mut().zip(b.row(k)) {
                *o += aik * bkj;
            }
        }
    }
    Ok(out)
}

/// Max-shifted softmax.
pub fn softmax(v: &Vector) -> Result<Vector, LinalgError> {
    if v.is_empty() {
        return Err(LinalgError::Empty("softmax"));
    }
    if !v.iter().all(|x| x.is_finite()) {
        return Err(LinalgError::NonFinite("softmax"));
    }
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(Vector(exps.into_iter().map(|e| e / total).collect()))
}

pub fn frobenius_norm(a: &Matrix) -> f64 {
    // Scaled accumulation so huge entries do not overflow the sum of squares.
    let scale = a.data.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if scale == 0.0 || !scale.is_finite() {
        return scale;
    }
    let s: f64 = a.data.iter().map(|x| (x / scale) * (x / scale)).sum();
    scale * s.sqrt()
}

/// Leading singular triplets of a matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Svd {
    /// `rows x r`, orthonormal columns.
    pub u: Matrix,
    /// Non-negative, non-increasing.
    pub singular_values: Vector,
    /// `cols x r`, orthonormal columns.
    pub v: Matrix,
}

impl Svd {
    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }

    /// `U diag(S) V^T`.
    pub fn reconstruct(&self) -> Matrix {
        let mut us = self.u.clone();
        for i in 0..us.rows {
            for j in 0..us.cols {
                let s = self.singular_values[j];
                us.set(i, j, us.get(i, j) * s);
            }
        }
        us.matmul(&self.v.transpose())
            .expect("factor shapes agree by construction")
    }
}

const MAX_SWEEPS: usize = 80;

/// Rank-`r` truncated SVD via one-sided Jacobi.
pub fn truncated_svd(a: &Matrix, r: usize) -> Result<Svd, LinalgError> {
    let max = a.rows.min(a.cols);
    if r == 0 || r > max {
        return Err(LinalgError::RankOutOfRange { rank: r, max });
    }
    if !a.is_finite() {
        return Err(LinalgError::NonFinite("truncated_svd"));
    }
    if a.rows >= a.cols {
        let (u, s, v) = jacobi_tall(a, r);
        Ok(Svd {
            u,
            singular_values: s,
            v,
        })
    } else {
        // A^T = U' S V'^T  =>  A = V' S U'^T
        let (u_t, s, v_t) = jacobi_tall(&a.transpose(), r);
        Ok(Svd {
            u: v_t,
            singular_values: s,
            v: u_t,
        })
    }
}

/// One-sided Jacobi on a matrix with `rows >= cols`.
fn jacobi_tall(a: &Matrix, r: usize) -> (Matrix, Vector, Matrix) {
    let m = a.rows;
    let n = a.cols;
    // Column-major working copies so rotations touch contiguous memory.
    let mut w: Vec<Vec<f64>> = (0..n).map(|j| a.column(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();
    let tol = f64::EPSILON * m as f64;

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let alpha = dot(&w[p], &w[p]);
                let beta = dot(&w[q], &w[q]);
                let gamma = dot(&w[p], &w[q]);
                if gamma == 0.0 || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut w, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let norms: Vec<f64> = w.iter().map(|col| dot(col, col).sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| norms[y].total_cmp(&norms[x]).then(x.cmp(&y)));
    let sigma_max = norms[order[0]];
    let negligible = sigma_max * (m.max(n) as f64) * f64::EPSILON;

    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(r);
    let mut sigmas = Vec::with_capacity(r);
    let mut v_cols = Vec::with_capacity(r);
    for &j in order.iter().take(r) {
        let sigma = norms[j];
        if sigma > negligible && sigma > 0.0 {
            u_cols.push(w[j].iter().map(|x| x / sigma).collect());
            sigmas.push(sigma);
        } else {
            u_cols.push(vec![0.0; m]);
            sigmas.push(0.0);
        }
        v_cols.push(v[j].clone());
    }
    orthonormalize(&mut u_cols, &sigmas, m);

    let u = Matrix::from_fn(m, r, |i, j| u_cols[j][i]);
    let vm = Matrix::from_fn(n, r, |i, j| v_cols[j][i]);
    (u, Vector(sigmas), vm)
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(q);
    let cp = &mut lo[p];
    let cq = &mut hi[0];
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let xp = *x;
        let xq = *y;
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

/// Modified Gram-Schmidt in column order. Columns belonging to zero singular
/// values are replaced by unit vectors orthogonal to everything before them.
fn orthonormalize(cols: &mut [Vec<f64>], sigmas: &[f64], m: usize) {
    let mut next_basis = 0;
    for j in 0..cols.len() {
        if sigmas[j] > 0.0 {
            for _ in 0..2 {
                for k in 0..j {
                    let proj = dot(&cols[k], &cols[j]);
                    let (head, tail) = cols.split_at_mut(j);
                    for (x, b) in tail[0].iter_mut().zip(&head[k]) {
                        *x -= proj * b;
                    }
                }
            }
            let norm = dot(&cols[j], &cols[j]).sqrt();
            if norm > 0.5 {
                cols[j].iter_mut().for_each(|x| *x /= norm);
                continue;
            }
        }
        // Complete the basis from the standard unit vectors.
        while next_basis < m {
            let mut cand = vec![0.0; m];
            cand[next_basis] = 1.0;
            next_basis += 1;
            for _ in 0..2 {
                for k in 0..j {
                    let proj = dot(&cols[k], &cand);
                    for (x, b) in cand.iter_mut().zip(&cols[k]) {
                        *x -= proj * b;
                    }
                }
            }
            let norm = dot(&cand, &cand).sqrt();
            if norm > 1e-6 {
                cols[j] = cand.into_iter().map(|x| x / norm).collect();
                break;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use endcloud_oracle as oracle;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn matmul_identity() {
        let b = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(matmul(&Matrix::identity(2), &b).unwrap(), b);
    }

    #[test]
    fn matmul_projector() {
        let p = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
        let x = Matrix::from_rows(&[vec![5.0], vec![7.0]]).unwrap();
        assert_eq!(matmul(&p, &x).unwrap().data(), &[5.0, 0.0]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_matrix(&mut rng, 3, 4);
        let b = random_matrix(&mut rng, 4, 2);
        let got = matmul(&a, &b).unwrap();
        let want = oracle::naive_matmul(a.data(), 3, 4, b.data(), 2);
        assert!(max_abs_diff(got.data(), &want) < 1e-12);
    }

    #[test]
    fn matmul_mismatch_names_shapes() {
        let err = matmul(&Matrix::zeros(2, 3), &Matrix::zeros(2, 3)).unwrap_err();
        assert_eq!(
            err,
            LinalgError::ShapeMismatch {
                op: "matmul",
                left: (2, 3),
                right: (2, 3)
            }
        );
        assert!(err.to_string().contains("(2, 3)"));
    }

    #[test]
    fn matrix_rejects_bad_data() {
        assert!(Matrix::new(2, 2, vec![1.0; 3]).is_err());
        assert!(Matrix::new(0, 2, vec![]).is_err());
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&Vector::new(vec![0.0, 0.0])).unwrap().as_slice(), &[0.5, 0.5]);
        let p = softmax(&Vector::new(vec![2f64.ln(), 0.0])).unwrap();
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((p[1] - 1.0 / 3.0).abs() < 1e-15);
        let p = softmax(&Vector::new(vec![1000.0, 0.0])).unwrap();
        assert_eq!(p[0], 1.0);
        assert!(p[1] < 1e-300);
    }

    #[test]
    fn softmax_rejects_empty_and_nan() {
        assert_eq!(
            softmax(&Vector::new(vec![])).unwrap_err(),
            LinalgError::Empty("softmax")
        );
        assert!(softmax(&Vector::new(vec![f64::NAN])).is_err());
    }

    #[test]
    fn frobenius_examples() {
        let a = Matrix::from_rows(&[vec![3.0, 4.0]]).unwrap();
        assert_eq!(frobenius_norm(&a), 5.0);
        assert_eq!(frobenius_norm(&Matrix::zeros(3, 3)), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let r = random_matrix(&mut rng, 5, 5);
        assert!((frobenius_norm(&r) - oracle::frobenius_direct(r.data())).abs() < 1e-12);
    }

    #[test]
    fn svd_rank_one_exact() {
        let u = [1.0, -2.0, 0.5, 3.0];
        let v = [0.3, 1.0, -1.0];
        let a = Matrix::from_fn(4, 3, |i, j| u[i] * v[j]);
        let svd = truncated_svd(&a, 1).unwrap();
        assert!(svd.reconstruct().sub(&a).unwrap().frobenius_norm() < 1e-10);
    }

    #[test]
    fn svd_identity() {
        let svd = truncated_svd(&Matrix::identity(3), 3).unwrap();
        assert!(svd.reconstruct().sub(&Matrix::identity(3)).unwrap().frobenius_norm() < 1e-14);
        assert_eq!(svd.singular_values.as_slice(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn svd_matches_eckart_young_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random_matrix(&mut rng, 8, 6);
        let svd = truncated_svd(&a, 2).unwrap();
        let err = svd.reconstruct().sub(&a).unwrap().frobenius_norm();
        let want = oracle::eckart_young_residual(a.data(), 8, 6, 2).sqrt();
        assert!((err - want).abs() <= 1e-8 * want, "{err} vs {want}");
        assert!(svd.u.gram_deviation() < 1e-8);
        assert!(svd.v.gram_deviation() < 1e-8);
    }

    #[test]
    fn svd_wide_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let a = random_matrix(&mut rng, 3, 7);
        let svd = truncated_svd(&a, 3).unwrap();
        assert_eq!(svd.u.shape(), (3, 3));
        assert_eq!(svd.v.shape(), (7, 3));
        assert!(svd.reconstruct().sub(&a).unwrap().frobenius_norm() < 1e-12);
    }

    #[test]
    fn svd_completes_basis_for_rank_deficient_input() {
        let a = Matrix::from_fn(5, 4, |i, j| (i + 1) as f64 * (j as f64 - 1.5));
        let svd = truncated_svd(&a, 4).unwrap();
        assert!(svd.u.gram_deviation() < 1e-8);
        assert!(svd.singular_values.as_slice()[1..].iter().all(|&s| s == 0.0));
        assert!(svd.reconstruct().sub(&a).unwrap().frobenius_norm() < 1e-12);
    }

    #[test]
    fn svd_rank_out_of_range() {
        let a = Matrix::zeros(3, 2);
        assert_eq!(
            truncated_svd(&a, 3).unwrap_err(),
            LinalgError::RankOutOfRange { rank: 3, max: 2 }
        );
        assert!(truncated_svd(&a, 0).is_err());
    }

    #[test]
    fn svd_zero_matrix() {
        let svd = truncated_svd(&Matrix::zeros(3, 3), 2).unwrap();
        assert_eq!(svd.singular_values.as_slice(), &[0.0, 0.0]);
        assert!(svd.u.gram_deviation() < 1e-12);
    }

    #[test]
    fn matrix_serde_roundtrip_validates() {
        let m = Matrix::from_rows(&[vec![0.1, 0.2], vec![1e-300, -3.5]]).unwrap();
        let s = serde_json::to_string(&m).unwrap();
        assert_eq!(serde_json::from_str::<Matrix>(&s).unwrap(), m);
        assert!(serde_json::from_str::<Matrix>(r#"{"rows":2,"cols":2,"data":[1.0]}"#).is_err());
    }

    fn small_matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
        prop::collection::vec(-10.0f64..10.0, rows * cols)
            .prop_map(move |d| Matrix::new(rows, cols, d).unwrap())
    }

    proptest! {
        #[test]
        fn softmax_normalized_and_permutation_equivariant(
            v in prop::collection::vec(-50.0f64..50.0, 1..20),
            rot in 0usize..20,
        ) {
            let p = softmax(&Vector::new(v.clone())).unwrap();
            prop_assert!((p.sum() - 1.0).abs() < 1e-12);
            let k = rot % v.len();
            let mut rotated = v.clone();
            rotated.rotate_left(k);
            let q = softmax(&Vector::new(rotated)).unwrap();
            let mut expect = p.as_slice().to_vec();
            expect.rotate_left(k);
            for (a, b) in q.iter().zip(&expect) {
                prop_assert!((a - b).abs() < 1e-15);
            }
        }

        #[test]
        fn matmul_is_associative(
            a in small_matrix(3, 4),
            b in small_matrix(4, 2),
            c in small_matrix(2, 5),
        ) {
            let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
            let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
            let scale = left.frobenius_norm().max(1.0);
            prop_assert!(left.sub(&right).unwrap().frobenius_norm() <= 1e-9 * scale);
        }

        #[test]
        fn full_rank_svd_reconstructs(rows in 1usize..9, cols in 1usize..9, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_matrix(&mut rng, rows, cols);
            let r = rows.min(cols);
            let svd = truncated_svd(&a, r).unwrap();
            let rel = svd.reconstruct().sub(&a).unwrap().frobenius_norm() / a.frobenius_norm();
            prop_assert!(rel < 1e-8);
            prop_assert!(svd.u.gram_deviation() < 1e-8);
            let s = svd.singular_values.as_slice();
            prop_assert!(s.windows(2).all(|w| w[0] >= w[1]) && s.iter().all(|&x| x >= 0.0));
        }
    }
}
