//! Small dense matrix algebra for d = 2 and d = 3.
//!
//! Every constitutive formula in the crate is written against [`Mat`], a
//! `Copy` value holding a d×d block inside fixed 3×3 storage. Entries outside
//! the active block are always zero.

use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Default lower bound on det(A) accepted by [`Mat::inverse_glplus`].
pub const DET_FLOOR: f64 = 1e-12;

/// Dense d×d real matrix, d ∈ {2, 3}.
#[derive(Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    dim: usize,
    a: [[f64; 3]; 3],
}

impl fmt::Debug for Mat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rows: Vec<&[f64]> = (0..self.dim).map(|i| &self.a[i][..self.dim]).collect();
        write!(f, "Mat{:?}", rows)
    }
}

fn check_dim(dim: usize) {
    assert!(dim == 2 || dim == 3, "matrix dimension must be 2 or 3, got {dim}");
}

impl Mat {
    pub fn zeros(dim: usize) -> Self {
        check_dim(dim);
        Self { dim, a: [[0.0; 3]; 3] }
    }

    pub fn identity(dim: usize) -> Self {
        Self::scalar(dim, 1.0)
    }

    /// `s·I`.
    pub fn scalar(dim: usize, s: f64) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.a[i][i] = s;
        }
        m
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len());
        for (i, v) in values.iter().enumerate() {
            m.a[i][i] = *v;
        }
        m
    }

    /// Builds a matrix from row-major entries; `entries.len()` must be 4 or 9.
    pub fn from_row_slice(entries: &[f64]) -> Self {
        let dim = match entries.len() {
            4 => 2,
            9 => 3,
            n => panic!("expected 4 or 9 entries, got {n}"),
        };
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            for j in 0..dim {
                m.a[i][j] = entries[i * dim + j];
            }
        }
        m
    }

    pub fn from_rows<const D: usize>(rows: [[f64; D]; D]) -> Self {
        let mut m = Self::zeros(D);
        for i in 0..D {
            for j in 0..D {
                m.a[i][j] = rows[i][j];
            }
        }
        m
    }

    /// Row-major entries of the active block.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim * self.dim);
        for i in 0..self.dim {
            out.extend_from_slice(&self.a[i][..self.dim]);
        }
        out
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.dim && j < self.dim);
        self.a[i][j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.dim && j < self.dim);
        self.a[i][j] = v;
    }

    #[inline]
    pub fn add_to(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.dim && j < self.dim);
        self.a[i][j] += v;
    }

    pub fn is_finite(&self) -> bool {
        self.a.iter().flatten().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Self {
        let mut m = Self::zeros(self.dim);
        for i in 0..self.dim {
            for j in 0..self.dim {
                m.a[i][j] = self.a[j][i];
            }
        }
        m
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.a[i][i]).sum()
    }

    /// Frobenius inner product `A : B = tr(A Bᵀ)`.
    pub fn frobenius_inner(&self, other: &Mat) -> f64 {
        assert_eq!(self.dim, other.dim, "dimension mismatch");
        let mut s = 0.0;
        for i in 0..self.dim {
            for j in 0..self.dim {
                s += self.a[i][j] * other.a[i][j];
            }
        }
        s
    }

    pub fn norm(&self) -> f64 {
        self.frobenius_inner(self).sqrt()
    }

    pub fn norm_sq(&self) -> f64 {
        self.frobenius_inner(self)
    }

    pub fn det(&self) -> f64 {
        let a = &self.a;
        match self.dim {
            2 => a[0][0] * a[1][1] - a[0][1] * a[1][0],
            _ => {
                a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
                    - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
                    + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
            }
        }
    }

    /// Cofactor matrix, the derivative of `det` at `self`; `cof(A)ᵀ = det(A) A⁻¹`.
    pub fn cofactor(&self) -> Self {
        let a = &self.a;
        let mut c = Self::zeros(self.dim);
        match self.dim {
            2 => {
                c.a[0][0] = a[1][1];
                c.a[0][1] = -a[1][0];
                c.a[1][0] = -a[0][1];
                c.a[1][1] = a[0][0];
            }
            _ => {
                for i in 0..3 {
                    for j in 0..3 {
                        let (i1, i2) = ((i + 1) % 3, (i + 2) % 3);
                        let (j1, j2) = ((j + 1) % 3, (j + 2) % 3);
                        c.a[i][j] = a[i1][j1] * a[i2][j2] - a[i1][j2] * a[i2][j1];
                    }
                }
            }
        }
        c
    }

    /// Inverse of a matrix in GL⁺(d) via the cofactor formula.
    ///
    /// Fails with [`Error::NonPositiveDeterminant`] when `det(A) ≤ det_floor`,
    /// which signals that the state has left GL⁺(d).
    pub fn inverse_glplus(&self, det_floor: f64) -> Result<Self, Error> {
        let det = self.det();
        if !(det > det_floor) {
            return Err(Error::NonPositiveDeterminant { det });
        }
        Ok(self.cofactor().transpose() * (1.0 / det))
    }

    /// Inverse with the default floor [`DET_FLOOR`].
    pub fn inv(&self) -> Result<Self, Error> {
        self.inverse_glplus(DET_FLOOR)
    }

    /// `A⁻ᵀ`.
    pub fn inv_transpose(&self) -> Result<Self, Error> {
        Ok(self.inv()?.transpose())
    }

    /// Frobenius distance to the identity, used for the neighbourhoods 𝒩_r.
    pub fn distance_to_identity(&self) -> f64 {
        (*self - Mat::identity(self.dim)).norm()
    }

    pub fn minors_all(&self) -> MinorVector {
        let mut values = Vec::with_capacity(minor_count(self.dim));
        for s in 1..=self.dim {
            let subsets = subsets(self.dim, s);
            for rows in &subsets {
                for cols in &subsets {
                    values.push(self.minor(rows, cols));
                }
            }
        }
        MinorVector { dim: self.dim, values }
    }

    /// Determinant of the submatrix selected by `rows` × `cols`.
    pub fn minor(&self, rows: &[usize], cols: &[usize]) -> f64 {
        assert_eq!(rows.len(), cols.len());
        match rows.len() {
            1 => self.a[rows[0]][cols[0]],
            2 => {
                self.a[rows[0]][cols[0]] * self.a[rows[1]][cols[1]]
                    - self.a[rows[0]][cols[1]] * self.a[rows[1]][cols[0]]
            }
            3 => self.det(),
            n => panic!("minor of order {n} not supported"),
        }
    }
}

/// μ_d = Σ_{s=1..d} C(d,s)²: 5 for d = 2 and 19 for d = 3.
pub fn minor_count(dim: usize) -> usize {
    (1..=dim).map(|s| binomial(dim, s).pow(2)).sum()
}

fn binomial(n: usize, k: usize) -> usize {
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

/// Index subsets of `{0..n}` of size `k` in lexicographic order.
pub fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::with_capacity(k), &mut out);
    out
}

/// All minors of a matrix, orders s = 1..d concatenated.
///
/// Within order s the enumeration is row-subset-major, column-subset-minor,
/// both lexicographic, so the block for order s reshapes row-major into the
/// s-th compound matrix. The last entry is the determinant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinorVector {
    dim: usize,
    values: Vec<f64>,
}

impl MinorVector {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Minors of order `s` as the C(d,s)×C(d,s) compound matrix.
    pub fn compound(&self, s: usize) -> Vec<Vec<f64>> {
        assert!(s >= 1 && s <= self.dim);
        let offset: usize = (1..s).map(|r| binomial(self.dim, r).pow(2)).sum();
        let m = binomial(self.dim, s);
        (0..m)
            .map(|i| self.values[offset + i * m..offset + (i + 1) * m].to_vec())
            .collect()
    }

    pub fn det(&self) -> f64 {
        *self.values.last().expect("non-empty minor vector")
    }
}

impl Add for Mat {
    type Output = Mat;
    fn add(mut self, rhs: Mat) -> Mat {
        self += rhs;
        self
    }
}

impl AddAssign for Mat {
    fn add_assign(&mut self, rhs: Mat) {
        assert_eq!(self.dim, rhs.dim, "dimension mismatch");
        for i in 0..self.dim {
            for j in 0..self.dim {
                self.a[i][j] += rhs.a[i][j];
            }
        }
    }
}

impl Sub for Mat {
    type Output = Mat;
    fn sub(mut self, rhs: Mat) -> Mat {
        self -= rhs;
        self
    }
}

impl SubAssign for Mat {
    fn sub_assign(&mut self, rhs: Mat) {
        assert_eq!(self.dim, rhs.dim, "dimension mismatch");
        for i in 0..self.dim {
            for j in 0..self.dim {
                self.a[i][j] -= rhs.a[i][j];
            }
        }
    }
}

impl Neg for Mat {
    type Output = Mat;
    fn neg(self) -> Mat {
        self * -1.0
    }
}

impl Mul<f64> for Mat {
    type Output = Mat;
    fn mul(mut self, s: f64) -> Mat {
        for row in self.a.iter_mut() {
            for v in row.iter_mut() {
                *v *= s;
            }
        }
        self
    }
}

impl Mul<Mat> for f64 {
    type Output = Mat;
    fn mul(self, m: Mat) -> Mat {
        m * self
    }
}

impl Mul for Mat {
    type Output = Mat;
    fn mul(self, rhs: Mat) -> Mat {
        assert_eq!(self.dim, rhs.dim, "dimension mismatch");
        let d = self.dim;
        let mut m = Mat::zeros(d);
        for i in 0..d {
            for k in 0..d {
                let aik = self.a[i][k];
                for j in 0..d {
                    m.a[i][j] += aik * rhs.a[k][j];
                }
            }
        }
        m
    }
}

/// Third-order array `A[i][j][k]`, d×d×d; holds the spatial gradient ∂ₖP_ij.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tensor3 {
    dim: usize,
    a: [[[f64; 3]; 3]; 3],
}

impl Tensor3 {
    pub fn zeros(dim: usize) -> Self {
        check_dim(dim);
        Self { dim, a: [[[0.0; 3]; 3]; 3] }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.a[i][j][k]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, v: f64) {
        self.a[i][j][k] = v;
    }

    #[inline]
    pub fn add_to(&mut self, i: usize, j: usize, k: usize, v: f64) {
        self.a[i][j][k] += v;
    }

    pub fn norm_sq(&self) -> f64 {
        let d = self.dim;
        let mut s = 0.0;
        for i in 0..d {
            for j in 0..d {
                for k in 0..d {
                    s += self.a[i][j][k] * self.a[i][j][k];
                }
            }
        }
        s
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn scaled(mut self, s: f64) -> Self {
        for v in self.a.iter_mut().flatten().flatten() {
            *v *= s;
        }
        self
    }

    /// Slice `k` of the last index as a matrix.
    pub fn slice(&self, k: usize) -> Mat {
        let mut m = Mat::zeros(self.dim);
        for i in 0..self.dim {
            for j in 0..self.dim {
                m.set(i, j, self.a[i][j][k]);
            }
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
    }

    #[test]
    fn frobenius_examples() {
        let i2 = Mat::identity(2);
        assert_eq!(i2.frobenius_inner(&i2), 2.0);
        let a = Mat::from_rows([[1.0, 2.0], [3.0, 4.0]]);
        let b = Mat::from_rows([[5.0, 6.0], [7.0, 8.0]]);
        assert_eq!(a.frobenius_inner(&b), 70.0);
        assert_eq!(Mat::zeros(2).frobenius_inner(&b), 0.0);
        assert_eq!(a.norm(), 30f64.sqrt());
    }

    #[test]
    fn cofactor_examples() {
        assert_eq!(Mat::diag(&[2.0, 3.0]).cofactor(), Mat::diag(&[3.0, 2.0]));
        assert_eq!(Mat::identity(3).cofactor(), Mat::identity(3));
        let a = Mat::from_rows([[1.0, 2.0], [3.0, 4.0]]);
        assert_eq!(a.cofactor(), Mat::from_rows([[4.0, -3.0], [-2.0, 1.0]]));
    }

    #[test]
    fn cofactor_3x3_matches_inverse() {
        let a = Mat::from_rows([[2.0, 0.5, 0.1], [0.3, 1.5, -0.2], [0.0, 0.4, 1.2]]);
        let lhs = a.cofactor().transpose();
        let rhs = a.inv().unwrap() * a.det();
        for i in 0..3 {
            for j in 0..3 {
                assert!(close(lhs.get(i, j), rhs.get(i, j), 1e-13));
            }
        }
    }

    #[test]
    fn inverse_examples() {
        assert_eq!(Mat::identity(2).inv().unwrap(), Mat::identity(2));
        assert_eq!(Mat::diag(&[2.0, 4.0]).inv().unwrap(), Mat::diag(&[0.5, 0.25]));
        let flip = Mat::diag(&[1.0, -1.0]);
        assert!(matches!(
            flip.inverse_glplus(DET_FLOOR),
            Err(Error::NonPositiveDeterminant { .. })
        ));
        let tiny = Mat::diag(&[1e-7, 1e-7]);
        assert!(tiny.inverse_glplus(DET_FLOOR).is_err());
        assert!(Mat::identity(3).inverse_glplus(0.5).is_ok());
    }

    #[test]
    fn minors_examples() {
        let a = Mat::from_rows([[1.0, 2.0], [3.0, 4.0]]);
        let m = a.minors_all();
        assert_eq!(m.values(), &[1.0, 2.0, 3.0, 4.0, -2.0]);
        assert_eq!(minor_count(2), 5);
        assert_eq!(minor_count(3), 19);

        let mi = Mat::identity(3).minors_all();
        assert_eq!(mi.len(), 19);
        let c1 = mi.compound(1);
        let c2 = mi.compound(2);
        for (block, n) in [(c1, 3), (c2, 3)] {
            for i in 0..n {
                for j in 0..n {
                    assert_eq!(block[i][j], if i == j { 1.0 } else { 0.0 });
                }
            }
        }
        assert_eq!(mi.det(), 1.0);
    }

    #[test]
    fn distance_examples() {
        assert_eq!(Mat::identity(2).distance_to_identity(), 0.0);
        let eps = 0.125;
        assert_eq!(Mat::diag(&[1.0 + eps, 1.0]).distance_to_identity(), eps);
        let n = Mat::from_rows([[1.0, 0.3], [0.0, 1.0]]);
        assert!((n.distance_to_identity() - 0.3).abs() < 1e-16);
    }

    #[test]
    fn subsets_are_lexicographic() {
        assert_eq!(subsets(3, 2), vec![vec![0, 1], vec![0, 2], vec![1, 2]]);
    }
}
