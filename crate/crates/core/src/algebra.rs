//! Finite-dimensional J*-algebra models.
//!
//! A model is a subspace of `m x n` complex matrices given by a
//! Frobenius-orthonormal basis. The named kinds are the classical examples
//! (full rectangular matrices, antisymmetric and symmetric square matrices,
//! full square matrices, row vectors); each is closed under `x -> x x* x`.
//! Closure is checked statistically with [`check_triple_closure`].

use std::f64::consts::FRAC_1_SQRT_2;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{complex_normal, ComplexMatrix};
use crate::sampling::{log_uniform, stream_rng, SampleSpec};

/// `spec.count` members with log-uniform norms on `spec.norm_range`; member
/// `i` is drawn from stream `(spec.seed, i)`.
pub fn sample_members(model: &JStarAlgebraModel, spec: &SampleSpec) -> Vec<ComplexMatrix> {
    use rayon::prelude::*;
    (0..spec.count)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(spec.seed, i as u64);
            let t = spec.draw_norm(&mut rng);
            model.random_member_with(t, &mut rng)
        })
        .collect()
}

/// Residual threshold for the closure check, relative to `1 + |x|^3`.
pub const CLOSURE_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ModelKind {
    FullRectangular,
    CartanIiAntisymmetric,
    CartanIiiSymmetric,
    CstarFullSquare,
    HilbertRow,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::FullRectangular,
        ModelKind::CartanIiAntisymmetric,
        ModelKind::CartanIiiSymmetric,
        ModelKind::CstarFullSquare,
        ModelKind::HilbertRow,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::FullRectangular => "FULL_RECTANGULAR",
            ModelKind::CartanIiAntisymmetric => "CARTAN_II_ANTISYMMETRIC",
            ModelKind::CartanIiiSymmetric => "CARTAN_III_SYMMETRIC",
            ModelKind::CstarFullSquare => "CSTAR_FULL_SQUARE",
            ModelKind::HilbertRow => "HILBERT_ROW",
        }
    }

    /// True for the kinds whose derivations must use `B = A^T`.
    pub fn is_cartan_symmetric_type(self) -> bool {
        matches!(
            self,
            ModelKind::CartanIiAntisymmetric | ModelKind::CartanIiiSymmetric
        )
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidInput(format!("unknown model kind {s:?}")))
    }
}

/// Wire form of a model: `{"kind": string, "m": int, "n": int}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDescriptor {
    pub kind: ModelKind,
    pub m: usize,
    pub n: usize,
}

impl ModelDescriptor {
    pub fn build(&self) -> Result<JStarAlgebraModel> {
        make_model(self.kind, self.m, self.n)
    }
}

/// A subspace of `ambient_rows x ambient_cols` matrices with an orthonormal basis.
#[derive(Debug, Clone, PartialEq)]
pub struct JStarAlgebraModel {
    rows: usize,
    cols: usize,
    basis: Vec<ComplexMatrix>,
    kind: Option<ModelKind>,
}

impl JStarAlgebraModel {
    pub fn ambient_shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn basis(&self) -> &[ComplexMatrix] {
        &self.basis
    }

    pub fn dimension(&self) -> usize {
        self.basis.len()
    }

    /// `None` for subspaces built from a user basis.
    pub fn kind(&self) -> Option<ModelKind> {
        self.kind
    }

    pub fn descriptor(&self) -> Option<ModelDescriptor> {
        self.kind.map(|kind| ModelDescriptor {
            kind,
            m: self.rows,
            n: self.cols,
        })
    }

    /// Candidate subspace spanned by arbitrary matrices. The span is
    /// orthonormalized (modified Gram-Schmidt); it need not be closed under
    /// the triple map, which is what [`check_triple_closure`] is for.
    pub fn from_span(rows: usize, cols: usize, spanning: &[ComplexMatrix]) -> Result<Self> {
        let mut basis: Vec<ComplexMatrix> = Vec::new();
        for v in spanning {
            if v.shape() != (rows, cols) {
                return Err(Error::ShapeMismatch {
                    expected: (rows, cols),
                    found: v.shape(),
                });
            }
            let mut w = v.clone();
            for b in &basis {
                let coef = b.frobenius_inner(&w);
                w = &w - &b.scale(coef);
            }
            let len = w.frobenius_norm();
            if len > 1e-12 * (1.0 + v.frobenius_norm()) {
                basis.push(w.scale_real(1.0 / len));
            }
        }
        if basis.is_empty() {
            return Err(Error::InvalidInput("spanning set is degenerate".into()));
        }
        Ok(Self {
            rows,
            cols,
            basis,
            kind: None,
        })
    }

    pub fn check_shape(&self, x: &ComplexMatrix) -> Result<()> {
        if x.shape() != (self.rows, self.cols) {
            return Err(Error::ShapeMismatch {
                expected: (self.rows, self.cols),
                found: x.shape(),
            });
        }
        Ok(())
    }

    /// Basis coefficients `<b_i, x>`.
    pub fn coefficients(&self, x: &ComplexMatrix) -> Result<Vec<Complex64>> {
        self.check_shape(x)?;
        Ok(self.basis.iter().map(|b| b.frobenius_inner(x)).collect())
    }

    pub fn combine(&self, coefficients: &[Complex64]) -> ComplexMatrix {
        assert_eq!(coefficients.len(), self.basis.len());
        let mut acc = ComplexMatrix::zeros(self.rows, self.cols);
        for (b, &c) in self.basis.iter().zip(coefficients) {
            acc = &acc + &b.scale(c);
        }
        acc
    }

    /// Frobenius-orthogonal projection onto the span of the basis.
    pub fn project(&self, x: &ComplexMatrix) -> Result<ComplexMatrix> {
        let coefs = self.coefficients(x)?;
        Ok(self.combine(&coefs))
    }

    pub fn gram_matrix(&self) -> ComplexMatrix {
        let k = self.basis.len();
        ComplexMatrix::from_fn(k, k, |i, j| self.basis[i].frobenius_inner(&self.basis[j]))
    }

    /// Random member with complex standard normal coefficients, rescaled to
    /// the given operator norm.
    pub fn random_member_with<R: Rng + ?Sized>(&self, target_norm: f64, rng: &mut R) -> ComplexMatrix {
        loop {
            let coefs: Vec<Complex64> = (0..self.basis.len()).map(|_| complex_normal(rng)).collect();
            let x = self.combine(&coefs);
            let norm = x.op_norm();
            if norm > 0.0 {
                return x.scale_real(target_norm / norm);
            }
        }
    }
}

impl Serialize for JStarAlgebraModel {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self.descriptor() {
            Some(d) => d.serialize(serializer),
            None => Err(serde::ser::Error::custom(
                "subspaces built from a user basis have no wire form",
            )),
        }
    }
}

impl<'de> Deserialize<'de> for JStarAlgebraModel {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        ModelDescriptor::deserialize(deserializer)?
            .build()
            .map_err(serde::de::Error::custom)
    }
}

/// Builds a named model with its standard orthonormal basis.
pub fn make_model(kind: ModelKind, m: usize, n: usize) -> Result<JStarAlgebraModel> {
    if m == 0 || n == 0 {
        return Err(Error::InvalidShape(format!("{kind} needs positive dimensions, got {m}x{n}")));
    }
    let square = |what: &str| -> Result<()> {
        if m != n {
            return Err(Error::InvalidShape(format!("{what} requires m = n, got {m}x{n}")));
        }
        Ok(())
    };
    let mut basis = Vec::new();
    match kind {
        ModelKind::FullRectangular | ModelKind::CstarFullSquare | ModelKind::HilbertRow => {
            if kind == ModelKind::CstarFullSquare {
                square("CSTAR_FULL_SQUARE")?;
            }
            if kind == ModelKind::HilbertRow && m != 1 {
                return Err(Error::InvalidShape(format!("HILBERT_ROW requires m = 1, got m = {m}")));
            }
            for i in 0..m {
                for j in 0..n {
                    basis.push(ComplexMatrix::unit(m, n, i, j));
                }
            }
        }
        ModelKind::CartanIiAntisymmetric => {
            square("CARTAN_II_ANTISYMMETRIC")?;
            if n < 2 {
                return Err(Error::InvalidShape("CARTAN_II_ANTISYMMETRIC requires n >= 2".into()));
            }
            for i in 0..n {
                for j in (i + 1)..n {
                    let e = &ComplexMatrix::unit(n, n, i, j) - &ComplexMatrix::unit(n, n, j, i);
                    basis.push(e.scale_real(FRAC_1_SQRT_2));
                }
            }
        }
        ModelKind::CartanIiiSymmetric => {
            square("CARTAN_III_SYMMETRIC")?;
            for i in 0..n {
                basis.push(ComplexMatrix::unit(n, n, i, i));
                for j in (i + 1)..n {
                    let e = &ComplexMatrix::unit(n, n, i, j) + &ComplexMatrix::unit(n, n, j, i);
                    basis.push(e.scale_real(FRAC_1_SQRT_2));
                }
            }
        }
    }
    Ok(JStarAlgebraModel {
        rows: m,
        cols: n,
        basis,
        kind: Some(kind),
    })
}

/// Random member of `model` with operator norm `target_norm`; deterministic in `seed`.
pub fn random_member(model: &JStarAlgebraModel, target_norm: f64, seed: u64) -> Result<ComplexMatrix> {
    if !(target_norm > 0.0 && target_norm.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "target_norm must be positive, got {target_norm}"
        )));
    }
    let mut rng = stream_rng(seed, 0);
    Ok(model.random_member_with(target_norm, &mut rng))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClosureCheck {
    pub closed: bool,
    pub worst_residual: f64,
    pub trials: usize,
}

/// Draws `trials` members (norms log-uniform on `[0.25, 4]`) and measures
/// `|project(x x* x) - x x* x| / (1 + |x|^3)`.
pub fn check_triple_closure(model: &JStarAlgebraModel, trials: usize, seed: u64) -> Result<ClosureCheck> {
    if trials == 0 {
        return Err(Error::InvalidParameter("trials must be at least 1".into()));
    }
    let mut worst = 0.0_f64;
    for t in 0..trials {
        let mut rng = stream_rng(seed, t as u64);
        let norm = log_uniform(&mut rng, 0.25, 4.0);
        let x = model.random_member_with(norm, &mut rng);
        let t3 = x.triple();
        let residual = (&model.project(&t3)? - &t3).op_norm() / (1.0 + norm.powi(3));
        worst = worst.max(residual);
    }
    Ok(ClosureCheck {
        closed: worst <= CLOSURE_TOLERANCE,
        worst_residual: worst,
        trials,
    })
}
