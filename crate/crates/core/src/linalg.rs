//! Dense complex matrices of size at most 4×4.
//!
//! Every symbol in the crate is a 2×2 or 4×4 complex matrix, so the storage is
//! a fixed 16-entry array and all kernels are written out by hand. Spectral
//! norms use the closed-form singular value for 2×2 and a cyclic Jacobi
//! eigensolver on `M*M` for larger sizes.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use num_complex::Complex64;

use crate::error::{DiracError, Result};

pub(crate) const ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub(crate) const ONE: Complex64 = Complex64::new(1.0, 0.0);
pub(crate) const I: Complex64 = Complex64::new(0.0, 1.0);

/// Largest supported matrix side.
pub const MAX_NU: usize = 4;

/// A ν×ν complex matrix with ν ≤ 4, stored row-major.
#[derive(Clone, Copy, PartialEq)]
pub struct SymbolMatrix {
    nu: usize,
    data: [Complex64; MAX_NU * MAX_NU],
}

impl fmt::Debug for SymbolMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rows: Vec<Vec<Complex64>> = (0..self.nu)
            .map(|i| (0..self.nu).map(|j| self.get(i, j)).collect())
            .collect();
        f.debug_struct("SymbolMatrix")
            .field("nu", &self.nu)
            .field("rows", &rows)
            .finish()
    }
}

impl SymbolMatrix {
    pub fn zeros(nu: usize) -> Self {
        assert!((1..=MAX_NU).contains(&nu), "matrix side must be in 1..=4");
        SymbolMatrix {
            nu,
            data: [ZERO; MAX_NU * MAX_NU],
        }
    }

    pub fn identity(nu: usize) -> Self {
        Self::scalar(nu, ONE)
    }

    pub fn scalar(nu: usize, c: Complex64) -> Self {
        let mut m = Self::zeros(nu);
        for i in 0..nu {
            m.set(i, i, c);
        }
        m
    }

    /// Builds a matrix from rows; every row must have the same length as the
    /// number of rows.
    pub fn from_rows(rows: &[&[Complex64]]) -> Result<Self> {
        let nu = rows.len();
        if !(1..=MAX_NU).contains(&nu) {
            return Err(DiracError::InvalidArgument(format!(
                "matrix side {nu} outside 1..=4"
            )));
        }
        let mut m = Self::zeros(nu);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != nu {
                return Err(DiracError::DimensionMismatch {
                    expected: nu,
                    got: row.len(),
                });
            }
            for (j, &v) in row.iter().enumerate() {
                m.set(i, j, v);
            }
        }
        Ok(m)
    }

    /// Builds a matrix from a row-major slice of length ν².
    pub fn from_row_major(nu: usize, entries: &[Complex64]) -> Result<Self> {
        if !(1..=MAX_NU).contains(&nu) {
            return Err(DiracError::InvalidArgument(format!(
                "matrix side {nu} outside 1..=4"
            )));
        }
        if entries.len() != nu * nu {
            return Err(DiracError::DimensionMismatch {
                expected: nu * nu,
                got: entries.len(),
            });
        }
        let mut m = Self::zeros(nu);
        for i in 0..nu {
            for j in 0..nu {
                m.set(i, j, entries[i * nu + j]);
            }
        }
        Ok(m)
    }

    /// Places `a`, `b`, `c`, `d` as the blocks `[[a, b], [c, d]]`.
    pub fn from_blocks(
        a: &SymbolMatrix,
        b: &SymbolMatrix,
        c: &SymbolMatrix,
        d: &SymbolMatrix,
    ) -> Self {
        let k = a.nu;
        debug_assert!(b.nu == k && c.nu == k && d.nu == k && 2 * k <= MAX_NU);
        let mut m = Self::zeros(2 * k);
        for i in 0..k {
            for j in 0..k {
                m.set(i, j, a.get(i, j));
                m.set(i, j + k, b.get(i, j));
                m.set(i + k, j, c.get(i, j));
                m.set(i + k, j + k, d.get(i, j));
            }
        }
        m
    }

    #[inline]
    pub fn nu(&self) -> usize {
        self.nu
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.data[i * MAX_NU + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: Complex64) {
        self.data[i * MAX_NU + j] = v;
    }

    /// Row-major entries, ν² of them.
    pub fn to_row_major(&self) -> Vec<Complex64> {
        let mut out = Vec::with_capacity(self.nu * self.nu);
        for i in 0..self.nu {
            for j in 0..self.nu {
                out.push(self.get(i, j));
            }
        }
        out
    }

    pub fn adjoint(&self) -> Self {
        let mut m = Self::zeros(self.nu);
        for i in 0..self.nu {
            for j in 0..self.nu {
                m.set(i, j, self.get(j, i).conj());
            }
        }
        m
    }

    pub fn scale(&self, c: Complex64) -> Self {
        let mut m = *self;
        for i in 0..self.nu {
            for j in 0..self.nu {
                m.set(i, j, self.get(i, j) * c);
            }
        }
        m
    }

    pub fn scale_re(&self, c: f64) -> Self {
        self.scale(Complex64::new(c, 0.0))
    }

    /// `self + c·1`.
    pub fn shift(&self, c: Complex64) -> Self {
        let mut m = *self;
        for i in 0..self.nu {
            m.set(i, i, m.get(i, i) + c);
        }
        m
    }

    pub fn trace(&self) -> Complex64 {
        (0..self.nu).map(|i| self.get(i, i)).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        let mut s = 0.0;
        for i in 0..self.nu {
            for j in 0..self.nu {
                s += self.get(i, j).norm_sqr();
            }
        }
        s.sqrt()
    }

    /// Largest entrywise modulus of `self − other`.
    pub fn max_abs_diff(&self, other: &SymbolMatrix) -> f64 {
        assert_eq!(self.nu, other.nu);
        let mut worst = 0.0f64;
        for i in 0..self.nu {
            for j in 0..self.nu {
                worst = worst.max((self.get(i, j) - other.get(i, j)).norm());
            }
        }
        worst
    }

    /// Largest entrywise modulus of `self − self*`.
    pub fn hermiticity_defect(&self) -> f64 {
        self.max_abs_diff(&self.adjoint())
    }

    /// Matrix-vector product; `v` must have length ν.
    pub fn apply(&self, v: &[Complex64]) -> [Complex64; MAX_NU] {
        debug_assert_eq!(v.len(), self.nu);
        let mut out = [ZERO; MAX_NU];
        for (i, o) in out.iter_mut().enumerate().take(self.nu) {
            let mut acc = ZERO;
            for (j, &vj) in v.iter().enumerate() {
                acc += self.get(i, j) * vj;
            }
            *o = acc;
        }
        out
    }

    pub fn determinant(&self) -> Complex64 {
        match self.nu {
            1 => self.get(0, 0),
            2 => self.get(0, 0) * self.get(1, 1) - self.get(0, 1) * self.get(1, 0),
            _ => {
                let (lu, _, sign, singular) = self.lu();
                if singular {
                    return ZERO;
                }
                let mut det = Complex64::new(sign, 0.0);
                for i in 0..self.nu {
                    det *= lu[i * MAX_NU + i];
                }
                det
            }
        }
    }

    /// Spectral norm (largest singular value).
    pub fn spectral_norm(&self) -> f64 {
        match self.nu {
            1 => self.get(0, 0).norm(),
            2 => {
                // Largest eigenvalue of M*M = [[a, b], [conj b, c]] is
                // (a + c)/2 + sqrt(((a − c)/2)² + |b|²); no cancellation under the root.
                let (p, q) = (self.get(0, 0), self.get(0, 1));
                let (r, s) = (self.get(1, 0), self.get(1, 1));
                let a = p.norm_sqr() + r.norm_sqr();
                let c = q.norm_sqr() + s.norm_sqr();
                let b = p.conj() * q + r.conj() * s;
                let half_gap = 0.5 * (a - c);
                (0.5 * (a + c) + half_gap.hypot(b.norm())).sqrt()
            }
            _ => {
                let gram = self.adjoint() * *self;
                let eig = gram.hermitian_eigenvalues();
                eig[self.nu - 1].max(0.0).sqrt()
            }
        }
    }

    /// Eigenvalues of a Hermitian matrix in ascending order, computed by
    /// cyclic complex Jacobi rotations. Only the Hermitian part of `self`
    /// is used.
    pub fn hermitian_eigenvalues(&self) -> Vec<f64> {
        let n = self.nu;
        let mut a = [[ZERO; MAX_NU]; MAX_NU];
        for (i, row) in a.iter_mut().enumerate().take(n) {
            for (j, e) in row.iter_mut().enumerate().take(n) {
                *e = 0.5 * (self.get(i, j) + self.get(j, i).conj());
            }
        }
        let scale: f64 = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j].norm_sqr())
            .sum::<f64>()
            .sqrt();
        if scale == 0.0 {
            return vec![0.0; n];
        }
        for _sweep in 0..64 {
            let mut off = 0.0;
            for p in 0..n {
                for q in (p + 1)..n {
                    off += a[p][q].norm_sqr();
                }
            }
            if off.sqrt() <= 1e-17 * scale {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let apq = a[p][q];
                    let r = apq.norm();
                    if r <= 1e-300 {
                        continue;
                    }
                    // Unitary phase on index q makes a[p][q] real and positive.
                    let phase = apq / r;
                    for row in a.iter_mut().take(n) {
                        row[q] *= phase.conj();
                    }
                    for k in 0..n {
                        a[q][k] *= phase;
                    }
                    let app = a[p][p].re;
                    let aqq = a[q][q].re;
                    let theta = (aqq - app) / (2.0 * r);
                    let t = if theta == 0.0 {
                        1.0
                    } else {
                        theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                    };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for row in a.iter_mut().take(n) {
                        let kp = row[p];
                        let kq = row[q];
                        row[p] = kp * c - kq * s;
                        row[q] = kp * s + kq * c;
                    }
                    for k in 0..n {
                        let pk = a[p][k];
                        let qk = a[q][k];
                        a[p][k] = pk * c - qk * s;
                        a[q][k] = pk * s + qk * c;
                    }
                    a[p][q] = ZERO;
                    a[q][p] = ZERO;
                }
            }
        }
        let mut eig: Vec<f64> = (0..n).map(|i| a[i][i].re).collect();
        eig.sort_by(|x, y| x.partial_cmp(y).unwrap());
        eig
    }

    // LU factorization with partial pivoting. Returns (lu, perm, sign, singular).
    fn lu(&self) -> ([Complex64; MAX_NU * MAX_NU], [usize; MAX_NU], f64, bool) {
        let n = self.nu;
        let mut lu = self.data;
        let mut perm = [0usize, 1, 2, 3];
        let mut sign = 1.0;
        let scale = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .map(|(i, j)| self.get(i, j).norm())
            .fold(0.0f64, f64::max);
        let tiny = 1e-14 * scale.max(f64::MIN_POSITIVE);
        for k in 0..n {
            let mut piv = k;
            let mut best = lu[k * MAX_NU + k].norm();
            for i in (k + 1)..n {
                let v = lu[i * MAX_NU + k].norm();
                if v > best {
                    best = v;
                    piv = i;
                }
            }
            if best <= tiny {
                return (lu, perm, sign, true);
            }
            if piv != k {
                for j in 0..n {
                    lu.swap(k * MAX_NU + j, piv * MAX_NU + j);
                }
                perm.swap(k, piv);
                sign = -sign;
            }
            let pivot = lu[k * MAX_NU + k];
            for i in (k + 1)..n {
                let factor = lu[i * MAX_NU + k] / pivot;
                lu[i * MAX_NU + k] = factor;
                for j in (k + 1)..n {
                    let upd = factor * lu[k * MAX_NU + j];
                    lu[i * MAX_NU + j] -= upd;
                }
            }
        }
        (lu, perm, sign, false)
    }

    /// Inverse by Gaussian elimination with partial pivoting.
    pub fn inverse(&self) -> Result<Self> {
        let n = self.nu;
        let (lu, perm, _, singular) = self.lu();
        if singular {
            return Err(DiracError::Singular { momentum: None });
        }
        let mut inv = Self::zeros(n);
        for col in 0..n {
            // Solve L U x = P e_col.
            let mut x = [ZERO; MAX_NU];
            for i in 0..n {
                x[i] = if perm[i] == col { ONE } else { ZERO };
                for j in 0..i {
                    let upd = lu[i * MAX_NU + j] * x[j];
                    x[i] -= upd;
                }
            }
            for i in (0..n).rev() {
                for j in (i + 1)..n {
                    let upd = lu[i * MAX_NU + j] * x[j];
                    x[i] -= upd;
                }
                x[i] /= lu[i * MAX_NU + i];
            }
            for i in 0..n {
                inv.set(i, col, x[i]);
            }
        }
        Ok(inv)
    }

    /// `(self − z·1)^{-1}` for a general matrix. A traceless 2×2 matrix squares
    /// to a scalar, so its resolvent is `(G + z)/(g − z²)` with `g = −det G`.
    pub fn resolvent(&self, z: Complex64) -> Result<Self> {
        if self.nu == 2 {
            let tr = self.trace();
            let scale = self.frobenius_norm() + z.norm();
            if tr.norm() <= 1e-15 * scale.max(1.0) {
                let g = -self.determinant();
                let denom = g - z * z;
                if denom.norm() <= 1e-14 * (g.norm() + z.norm_sqr()).max(f64::MIN_POSITIVE) {
                    return Err(DiracError::Singular { momentum: None });
                }
                return Ok(self.shift(z).scale(denom.inv()));
            }
        }
        self.shift(-z).inverse()
    }
}

impl Add for SymbolMatrix {
    type Output = SymbolMatrix;
    fn add(self, rhs: SymbolMatrix) -> SymbolMatrix {
        assert_eq!(self.nu, rhs.nu);
        let mut m = self;
        for i in 0..self.nu {
            for j in 0..self.nu {
                m.set(i, j, self.get(i, j) + rhs.get(i, j));
            }
        }
        m
    }
}

impl Sub for SymbolMatrix {
    type Output = SymbolMatrix;
    fn sub(self, rhs: SymbolMatrix) -> SymbolMatrix {
        assert_eq!(self.nu, rhs.nu);
        let mut m = self;
        for i in 0..self.nu {
            for j in 0..self.nu {
                m.set(i, j, self.get(i, j) - rhs.get(i, j));
            }
        }
        m
    }
}

impl Neg for SymbolMatrix {
    type Output = SymbolMatrix;
    fn neg(self) -> SymbolMatrix {
        self.scale_re(-1.0)
    }
}

impl Mul for SymbolMatrix {
    type Output = SymbolMatrix;
    fn mul(self, rhs: SymbolMatrix) -> SymbolMatrix {
        assert_eq!(self.nu, rhs.nu);
        let n = self.nu;
        let mut m = SymbolMatrix::zeros(n);
        for i in 0..n {
            for j in 0..n {
                let mut acc = ZERO;
                for k in 0..n {
                    acc += self.get(i, k) * rhs.get(k, j);
                }
                m.set(i, j, acc);
            }
        }
        m
    }
}
