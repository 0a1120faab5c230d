//! Dense complex matrices.
//!
//! Every element of an algebra model is a [`ComplexMatrix`]. Values are
//! immutable once built; arithmetic always returns a fresh matrix.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const POWER_ITER_MAX: usize = 10_000;
const POWER_ITER_RTOL: f64 = 1e-14;
const POWER_ITER_SEED: u64 = 0x6a73_7461_625f_6e72;

/// Dense row-major matrix of complex scalars.
#[derive(Clone, PartialEq)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl ComplexMatrix {
    /// Builds a matrix from row-major entries, rejecting bad shapes and
    /// non-finite values.
    pub fn new(rows: usize, cols: usize, data: Vec<Complex64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidShape(format!(
                "matrix dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::InvalidShape(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a real matrix from row-major entries.
    pub fn from_real(rows: usize, cols: usize, values: &[f64]) -> Result<Self> {
        Self::new(
            rows,
            cols,
            values.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
        )
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::from_fn(rows, cols, |_, _| Complex64::new(0.0, 0.0))
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| {
            if i == j {
                Complex64::new(1.0, 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
    }

    /// The matrix unit `E_ij` (one in position `(i, j)`, zero elsewhere).
    pub fn unit(rows: usize, cols: usize, i: usize, j: usize) -> Self {
        assert!(i < rows && j < cols, "matrix unit index out of range");
        Self::from_fn(rows, cols, |a, b| {
            if a == i && b == j {
                Complex64::new(1.0, 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
    }

    /// Entries drawn complex standard normal (`E|z|^2 = 1`).
    pub fn random_normal<R: rand::Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Self {
        Self::from_fn(rows, cols, |_, _| complex_normal(rng))
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
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.data[i * self.cols + j]
    }

    pub fn entries(&self) -> &[Complex64] {
        &self.data
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|z| z.re == 0.0 && z.im == 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i).conj())
    }

    /// Plain (non-conjugating) transpose.
    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn scale(&self, s: Complex64) -> Self {
        self.map_entries(|z| z * s)
    }

    pub fn scale_real(&self, s: f64) -> Self {
        self.map_entries(|z| z * s)
    }

    fn map_entries(&self, f: impl Fn(Complex64) -> Complex64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&z| f(z)).collect(),
        }
    }

    fn zip_entries(&self, other: &Self, f: impl Fn(Complex64, Complex64) -> Complex64) -> Self {
        assert_eq!(self.shape(), other.shape(), "shape mismatch in elementwise op");
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&x, &y)| f(x, y))
                .collect(),
        }
    }

    /// Matrix product. Panics if the inner dimensions disagree.
    pub fn matmul(&self, rhs: &Self) -> Self {
        assert_eq!(
            self.cols, rhs.rows,
            "inner dimensions disagree: {:?} * {:?}",
            self.shape(),
            rhs.shape()
        );
        let mut data = vec![Complex64::new(0.0, 0.0); self.rows * rhs.cols];
        for i in 0..self.rows {
            for k in 0..self.cols {
                let x = self.data[i * self.cols + k];
                if x.re == 0.0 && x.im == 0.0 {
                    continue;
                }
                let row = &rhs.data[k * rhs.cols..(k + 1) * rhs.cols];
                let out = &mut data[i * rhs.cols..(i + 1) * rhs.cols];
                for (o, &y) in out.iter_mut().zip(row) {
                    *o += x * y;
                }
            }
        }
        Self {
            rows: self.rows,
            cols: rhs.cols,
            data,
        }
    }

    /// The J*-triple `x x* x`.
    pub fn triple(&self) -> Self {
        let gram = self.adjoint().matmul(self);
        self.matmul(&gram)
    }

    /// Frobenius inner product `<self, other> = sum conj(self_ij) other_ij`.
    pub fn frobenius_inner(&self, other: &Self) -> Complex64 {
        assert_eq!(self.shape(), other.shape(), "shape mismatch in inner product");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(x, y)| x.conj() * y)
            .sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Largest entrywise modulus of `self - other`.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.shape(), other.shape(), "shape mismatch in comparison");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(x, y)| (x - y).norm())
            .fold(0.0, f64::max)
    }

    /// Operator norm (largest singular value).
    ///
    /// Power iteration on the smaller Gram matrix (`x* x` or `x x*`) from a
    /// fixed pseudo-random start vector. Stops once successive Rayleigh
    /// quotients agree to 1e-14 relative, or after 10,000 steps.
    pub fn op_norm(&self) -> f64 {
        let scale = self.max_abs();
        if scale == 0.0 {
            return 0.0;
        }
        let y = self.scale_real(1.0 / scale);
        let gram = if self.rows >= self.cols {
            y.adjoint().matmul(&y)
        } else {
            y.matmul(&y.adjoint())
        };
        scale * power_iteration_top(&gram).max(0.0).sqrt()
    }

    fn split_parts(&self) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut re = Vec::with_capacity(self.rows);
        let mut im = Vec::with_capacity(self.rows);
        for i in 0..self.rows {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            re.push(row.iter().map(|z| z.re).collect());
            im.push(row.iter().map(|z| z.im).collect());
        }
        (re, im)
    }
}

/// Largest eigenvalue of a Hermitian positive semidefinite matrix.
fn power_iteration_top(gram: &ComplexMatrix) -> f64 {
    let n = gram.rows;
    if n == 1 {
        return gram.get(0, 0).re;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(POWER_ITER_SEED);
    let mut v: Vec<Complex64> = (0..n).map(|_| complex_normal(&mut rng)).collect();
    normalize(&mut v);

    let mut w = vec![Complex64::new(0.0, 0.0); n];
    let mut previous = f64::NAN;
    let mut rayleigh = 0.0;
    for _ in 0..POWER_ITER_MAX {
        for (i, wi) in w.iter_mut().enumerate() {
            let row = &gram.data[i * n..(i + 1) * n];
            *wi = row.iter().zip(&v).map(|(g, x)| g * x).sum();
        }
        rayleigh = v.iter().zip(&w).map(|(x, y)| (x.conj() * y).re).sum::<f64>();
        let len = w.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if len == 0.0 {
            return 0.0;
        }
        for (vi, wi) in v.iter_mut().zip(&w) {
            *vi = wi / len;
        }
        if (rayleigh - previous).abs() < POWER_ITER_RTOL * rayleigh.abs() {
            break;
        }
        previous = rayleigh;
    }
    rayleigh
}

fn normalize(v: &mut [Complex64]) {
    let len = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    for z in v {
        *z /= len;
    }
}

/// One complex standard normal draw: real and imaginary parts `N(0, 1/2)`.
pub fn complex_normal<R: rand::Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

impl fmt::Debug for ComplexMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "ComplexMatrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            write!(f, "  ")?;
            for j in 0..self.cols {
                let z = self.get(i, j);
                write!(f, "{:+.6e}{:+.6e}i  ", z.re, z.im)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

impl Add for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn add(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        self.zip_entries(rhs, |x, y| x + y)
    }
}

impl Sub for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn sub(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        self.zip_entries(rhs, |x, y| x - y)
    }
}

impl Mul for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn mul(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        self.matmul(rhs)
    }
}

impl Neg for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn neg(self) -> ComplexMatrix {
        self.map_entries(|z| -z)
    }
}

/// Wire form: `{"rows": m, "cols": n, "re": [[...]], "im": [[...]]}`.
#[derive(Serialize, Deserialize)]
struct MatrixRepr {
    rows: usize,
    cols: usize,
    re: Vec<Vec<f64>>,
    im: Vec<Vec<f64>>,
}

impl TryFrom<MatrixRepr> for ComplexMatrix {
    type Error = Error;

    fn try_from(repr: MatrixRepr) -> Result<Self> {
        let bad_rows = repr.re.len() != repr.rows || repr.im.len() != repr.rows;
        let bad_cols = repr
            .re
            .iter()
            .chain(&repr.im)
            .any(|row| row.len() != repr.cols);
        if bad_rows || bad_cols {
            return Err(Error::InvalidShape(format!(
                "nested arrays do not match declared shape {}x{}",
                repr.rows, repr.cols
            )));
        }
        let data = repr
            .re
            .iter()
            .flatten()
            .zip(repr.im.iter().flatten())
            .map(|(&re, &im)| Complex64::new(re, im))
            .collect();
        Self::new(repr.rows, repr.cols, data)
    }
}

impl Serialize for ComplexMatrix {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let (re, im) = self.split_parts();
        MatrixRepr {
            rows: self.rows,
            cols: self.cols,
            re,
            im,
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ComplexMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let repr = MatrixRepr::deserialize(deserializer)?;
        ComplexMatrix::try_from(repr).map_err(serde::de::Error::custom)
    }
}

/// A complex scalar on the unit circle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitScalar(Complex64);

impl UnitScalar {
    pub const ONE: UnitScalar = UnitScalar(Complex64 { re: 1.0, im: 0.0 });

    pub fn new(value: Complex64) -> Result<Self> {
        if (value.norm() - 1.0).abs() > 1e-14 {
            return Err(Error::InvalidInput(format!(
                "unit scalar must have modulus 1, got {}",
                value.norm()
            )));
        }
        Ok(Self(value))
    }

    pub fn from_angle(theta: f64) -> Self {
        Self(Complex64::from_polar(1.0, theta))
    }

    #[inline]
    pub fn value(self) -> Complex64 {
        self.0
    }
}
