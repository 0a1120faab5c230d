//! Black-box mappings on a model.

use std::fmt;
use std::sync::Arc;

use crate::algebra::JStarAlgebraModel;
use crate::error::{Error, Result};
use crate::matrix::ComplexMatrix;

type EvalFn = dyn Fn(&ComplexMatrix) -> ComplexMatrix + Send + Sync;

/// A mapping `A -> A` with declared metadata.
///
/// `zero_at_zero` declares `f(0) = 0`; `homogeneity_degree = Some(s)` declares
/// `f(s a) = s f(a)`. Both are declarations that the engines verify on
/// samples before relying on them.
#[derive(Clone)]
pub struct MapHandle {
    eval: Arc<EvalFn>,
    domain: Arc<JStarAlgebraModel>,
    zero_at_zero: bool,
    homogeneity_degree: Option<f64>,
    label: String,
}

impl MapHandle {
    pub fn new<F>(domain: Arc<JStarAlgebraModel>, label: impl Into<String>, zero_at_zero: bool, f: F) -> Self
    where
        F: Fn(&ComplexMatrix) -> ComplexMatrix + Send + Sync + 'static,
    {
        Self {
            eval: Arc::new(f),
            domain,
            zero_at_zero,
            homogeneity_degree: None,
            label: label.into(),
        }
    }

    pub fn with_homogeneity_degree(mut self, s: f64) -> Result<Self> {
        if !(s > 1.0 && s.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "homogeneity degree must exceed 1, got {s}"
            )));
        }
        self.homogeneity_degree = Some(s);
        Ok(self)
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    #[inline]
    pub fn evaluate(&self, x: &ComplexMatrix) -> ComplexMatrix {
        (self.eval)(x)
    }

    pub fn domain(&self) -> &Arc<JStarAlgebraModel> {
        &self.domain
    }

    pub fn zero_at_zero(&self) -> bool {
        self.zero_at_zero
    }

    pub fn homogeneity_degree(&self) -> Option<f64> {
        self.homogeneity_degree
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn same_domain(&self, other: &MapHandle) -> bool {
        Arc::ptr_eq(&self.domain, &other.domain) || *self.domain == *other.domain
    }

    /// Evaluates at zero and confirms the declared `f(0) = 0` holds exactly.
    pub fn verify_zero_at_zero(&self) -> Result<()> {
        let (m, n) = self.domain.ambient_shape();
        let value = self.evaluate(&ComplexMatrix::zeros(m, n));
        if !value.is_zero() {
            return Err(Error::HypothesisNotMet(format!(
                "{}: f(0) != 0 (|f(0)| = {:e})",
                self.label,
                value.op_norm()
            )));
        }
        Ok(())
    }

    /// Worst `|f(s a) - s f(a)| / (1 + |f(a)|)` over `samples`.
    pub fn homogeneity_residual(&self, s: f64, samples: &[ComplexMatrix]) -> f64 {
        samples
            .iter()
            .map(|a| {
                let fa = self.evaluate(a);
                let fsa = self.evaluate(&a.scale_real(s));
                (&fsa - &fa.scale_real(s)).op_norm() / (1.0 + fa.op_norm())
            })
            .fold(0.0, f64::max)
    }

    /// Checks the declared homogeneity degree on samples within `tolerance`.
    pub fn verify_homogeneity(&self, samples: &[ComplexMatrix], tolerance: f64) -> Result<f64> {
        let s = self.homogeneity_degree.ok_or_else(|| {
            Error::HypothesisNotMet(format!("{}: no homogeneity degree declared", self.label))
        })?;
        let residual = self.homogeneity_residual(s, samples);
        if residual > tolerance {
            return Err(Error::HypothesisNotMet(format!(
                "{}: f({s} a) != {s} f(a) (residual {residual:e} > {tolerance:e})",
                self.label
            )));
        }
        Ok(s)
    }
}

impl fmt::Debug for MapHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MapHandle")
            .field("label", &self.label)
            .field("shape", &self.domain.ambient_shape())
            .field("zero_at_zero", &self.zero_at_zero)
            .field("homogeneity_degree", &self.homogeneity_degree)
            .finish()
    }
}
