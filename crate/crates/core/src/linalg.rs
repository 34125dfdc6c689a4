//! Small dense complex matrices for per-frequency spatial statistics.
//!
//! Array sizes here are at most a few dozen channels, so everything is a
//! row-major `Vec` and inversions go through Gaussian elimination with
//! partial pivoting.

use std::ops::{Index, IndexMut};

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Relative diagonal loading applied before every noise-covariance inversion.
pub const DIAGONAL_LOADING: f64 = 1e-6;

/// Square complex matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CMatrix<T> {
    n: usize,
    data: Vec<Complex<T>>,
}

impl<T: Real> CMatrix<T> {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![Complex::new(T::zero(), T::zero()); n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::scaled_identity(n, T::one())
    }

    pub fn scaled_identity(n: usize, s: T) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m[(i, i)] = Complex::new(s, T::zero());
        }
        m
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> Complex<T>) -> Self {
        let mut data = Vec::with_capacity(n * n);
        for r in 0..n {
            for c in 0..n {
                data.push(f(r, c));
            }
        }
        Self { n, data }
    }

    /// `v vᴴ`
    pub fn outer(v: &[Complex<T>]) -> Self {
        Self::from_fn(v.len(), |r, c| v[r] * v[c].conj())
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn as_slice(&self) -> &[Complex<T>] {
        &self.data
    }

    /// `self += scale · v vᴴ`
    pub fn add_outer(&mut self, v: &[Complex<T>], scale: T) {
        debug_assert_eq!(v.len(), self.n);
        for r in 0..self.n {
            let vr = v[r] * scale;
            let row = &mut self.data[r * self.n..(r + 1) * self.n];
            for (dst, vc) in row.iter_mut().zip(v) {
                *dst = *dst + vr * vc.conj();
            }
        }
    }

    pub fn scale_mut(&mut self, s: T) {
        for x in &mut self.data {
            *x = *x * s;
        }
    }

    pub fn scaled(&self, s: T) -> Self {
        let mut m = self.clone();
        m.scale_mut(s);
        m
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.n, other.n);
        Self {
            n: self.n,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!(self.n, other.n);
        Self {
            n: self.n,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn mul(&self, other: &Self) -> Self {
        assert_eq!(self.n, other.n);
        let n = self.n;
        let mut out = Self::zeros(n);
        for r in 0..n {
            for k in 0..n {
                let a = self.data[r * n + k];
                if a.re == T::zero() && a.im == T::zero() {
                    continue;
                }
                for c in 0..n {
                    out.data[r * n + c] = out.data[r * n + c] + a * other.data[k * n + c];
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &[Complex<T>]) -> Vec<Complex<T>> {
        assert_eq!(v.len(), self.n);
        (0..self.n)
            .map(|r| {
                self.data[r * self.n..(r + 1) * self.n]
                    .iter()
                    .zip(v)
                    .fold(Complex::new(T::zero(), T::zero()), |acc, (a, b)| acc + a * b)
            })
            .collect()
    }

    pub fn column(&self, c: usize) -> Vec<Complex<T>> {
        (0..self.n).map(|r| self[(r, c)]).collect()
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.n, |r, c| self[(c, r)].conj())
    }

    pub fn trace(&self) -> Complex<T> {
        (0..self.n).fold(Complex::new(T::zero(), T::zero()), |acc, i| acc + self[(i, i)])
    }

    /// Largest entry of `|A - Aᴴ|`.
    pub fn hermitian_defect(&self) -> T {
        let mut worst = T::zero();
        for r in 0..self.n {
            for c in r..self.n {
                worst = worst.max((self[(r, c)] - self[(c, r)].conj()).norm());
            }
        }
        worst
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, x| m.max(x.norm()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.re.is_finite() && x.im.is_finite())
    }

    /// Adds `(rel · Re tr / n) · I`; fails when that term is not a usable positive number.
    pub fn diagonally_loaded(&self, rel: T) -> Result<Self> {
        let n = T::from_usize_lossy(self.n);
        let tr = self.trace().re;
        let load = rel * tr / n;
        if !(load > T::min_positive_value()) || !load.is_finite() {
            return Err(Error::Singular);
        }
        let mut m = self.clone();
        for i in 0..self.n {
            m[(i, i)].re = m[(i, i)].re + load;
        }
        Ok(m)
    }

    /// Solves `self · X = rhs` by Gaussian elimination with partial pivoting.
    pub fn solve(&self, rhs: &Self) -> Result<Self> {
        assert_eq!(self.n, rhs.n);
        let n = self.n;
        let mut a = self.data.clone();
        let mut b = rhs.data.clone();
        let scale = self.max_abs();
        let tiny = scale * T::epsilon() * T::from_usize_lossy(n.max(1));
        for col in 0..n {
            let (pivot_row, pivot_mag) = (col..n)
                .map(|r| (r, a[r * n + col].norm()))
                .fold((col, T::neg_infinity()), |best, cur| if cur.1 > best.1 { cur } else { best });
            if !(pivot_mag > tiny) || pivot_mag == T::zero() {
                return Err(Error::Singular);
            }
            if pivot_row != col {
                for c in 0..n {
                    a.swap(col * n + c, pivot_row * n + c);
                    b.swap(col * n + c, pivot_row * n + c);
                }
            }
            let inv = a[col * n + col].inv();
            for r in (col + 1)..n {
                let factor = a[r * n + col] * inv;
                if factor.re == T::zero() && factor.im == T::zero() {
                    continue;
                }
                for c in col..n {
                    a[r * n + c] = a[r * n + c] - factor * a[col * n + c];
                }
                for c in 0..n {
                    b[r * n + c] = b[r * n + c] - factor * b[col * n + c];
                }
            }
        }
        for col in (0..n).rev() {
            let inv = a[col * n + col].inv();
            for c in 0..n {
                let mut acc = b[col * n + c];
                for k in (col + 1)..n {
                    acc = acc - a[col * n + k] * b[k * n + c];
                }
                b[col * n + c] = acc * inv;
            }
        }
        Ok(Self { n, data: b })
    }
}

impl<T> Index<(usize, usize)> for CMatrix<T> {
    type Output = Complex<T>;
    fn index(&self, (r, c): (usize, usize)) -> &Complex<T> {
        &self.data[r * self.n + c]
    }
}

impl<T> IndexMut<(usize, usize)> for CMatrix<T> {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut Complex<T> {
        &mut self.data[r * self.n + c]
    }
}

/// `loaded(noise)⁻¹ · speech`, the inversion shared by localization whitening
/// and the MVDR weights.
pub fn loaded_inverse_product<T: Real>(noise: &CMatrix<T>, speech: &CMatrix<T>) -> Result<CMatrix<T>> {
    if noise.dim() != speech.dim() {
        return Err(Error::DimensionMismatch(format!(
            "noise covariance is {0}x{0}, speech covariance is {1}x{1}",
            noise.dim(),
            speech.dim()
        )));
    }
    noise
        .diagonally_loaded(T::lit(DIAGONAL_LOADING))?
        .solve(speech)
}

/// Solves the real system `a · x = b` (`a` row-major `n × n`).
pub(crate) fn solve_real<T: Real>(a: &[T], b: &[T]) -> Option<Vec<T>> {
    let n = b.len();
    debug_assert_eq!(a.len(), n * n);
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    for col in 0..n {
        let pivot_row = (col..n).max_by(|&i, &j| {
            a[i * n + col]
                .abs()
                .partial_cmp(&a[j * n + col].abs())
                .unwrap_or(std::cmp::Ordering::Equal)
        })?;
        if a[pivot_row * n + col] == T::zero() || !a[pivot_row * n + col].is_finite() {
            return None;
        }
        if pivot_row != col {
            for c in 0..n {
                a.swap(col * n + c, pivot_row * n + c);
            }
            b.swap(col, pivot_row);
        }
        for r in (col + 1)..n {
            let factor = a[r * n + col] / a[col * n + col];
            for c in col..n {
                a[r * n + c] = a[r * n + c] - factor * a[col * n + c];
            }
            b[r] = b[r] - factor * b[col];
        }
    }
    for col in (0..n).rev() {
        let mut acc = b[col];
        for k in (col + 1)..n {
            acc = acc - a[col * n + k] * b[k];
        }
        b[col] = acc / a[col * n + col];
    }
    Some(b)
}
