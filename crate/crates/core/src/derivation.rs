//! Exact J*-derivations of inner form `d(x) = A x + x B`.
//!
//! With `A` and `B` anti-Hermitian the derivation identity
//! `d(x x* x) = d(x) x* x + x d(x)* x + x x* d(x)` holds identically: the
//! cross terms `x B x* x` and `x x* A* x` cancel against their adjoints.
//! On the symmetric and antisymmetric Cartan models `B = A^T` keeps `d`
//! inside the model.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::algebra::{JStarAlgebraModel, ModelKind};
use crate::error::{Error, Result};
use crate::map::MapHandle;
use crate::matrix::ComplexMatrix;
use crate::sampling::stream_rng;

const SKEW_TOLERANCE: f64 = 1e-13;

/// Generators of an inner derivation; wire form `{"A": matrix, "B": matrix}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InnerDerivationSpec {
    #[serde(rename = "A")]
    pub a: ComplexMatrix,
    #[serde(rename = "B")]
    pub b: ComplexMatrix,
}

impl InnerDerivationSpec {
    pub fn zero(model: &JStarAlgebraModel) -> Self {
        let (m, n) = model.ambient_shape();
        Self {
            a: ComplexMatrix::zeros(m, m),
            b: ComplexMatrix::zeros(n, n),
        }
    }
}

fn skew_residual(x: &ComplexMatrix) -> f64 {
    (x + &x.adjoint()).max_abs()
}

/// `(M - M*) / 2`.
pub fn anti_hermitian_part(m: &ComplexMatrix) -> ComplexMatrix {
    (m - &m.adjoint()).scale_real(0.5)
}

/// Handle for `d(x) = A x + x B` after validating the generators.
pub fn make_inner_derivation(model: &Arc<JStarAlgebraModel>, spec: &InnerDerivationSpec) -> Result<MapHandle> {
    let kind = model
        .kind()
        .ok_or_else(|| Error::InvalidSpec("inner derivations need a named model kind".into()))?;
    let (m, n) = model.ambient_shape();
    if spec.a.shape() != (m, m) {
        return Err(Error::ShapeMismatch {
            expected: (m, m),
            found: spec.a.shape(),
        });
    }
    if spec.b.shape() != (n, n) {
        return Err(Error::ShapeMismatch {
            expected: (n, n),
            found: spec.b.shape(),
        });
    }
    for (name, g) in [("A", &spec.a), ("B", &spec.b)] {
        let residual = skew_residual(g);
        if residual > SKEW_TOLERANCE * (1.0 + g.max_abs()) {
            return Err(Error::InvalidSpec(format!(
                "{name} is not anti-Hermitian (|{name} + {name}*| = {residual:e})"
            )));
        }
    }
    if kind.is_cartan_symmetric_type() {
        let gap = spec.b.max_abs_diff(&spec.a.transpose());
        if gap > SKEW_TOLERANCE * (1.0 + spec.a.max_abs()) {
            return Err(Error::ClosureViolation(format!(
                "{kind} needs B = A^T (entrywise gap {gap:e})"
            )));
        }
    }
    let a = spec.a.clone();
    let b = spec.b.clone();
    Ok(MapHandle::new(model.clone(), "inner derivation", true, move |x| {
        &a.matmul(x) + &x.matmul(&b)
    }))
}

/// Random generators with `|A| = |B| = scale` respecting the model's constraints.
///
/// Row models use `A = 0`, so `d(x) = x B`.
pub fn random_inner_derivation_spec(
    model: &JStarAlgebraModel,
    scale: f64,
    seed: u64,
) -> Result<InnerDerivationSpec> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::InvalidParameter(format!("scale must be positive, got {scale}")));
    }
    let kind = model
        .kind()
        .ok_or_else(|| Error::InvalidSpec("inner derivations need a named model kind".into()))?;
    let (m, n) = model.ambient_shape();
    let mut rng = stream_rng(seed, 0);
    let mut draw = |k: usize| loop {
        let g = anti_hermitian_part(&ComplexMatrix::random_normal(k, k, &mut rng));
        let norm = g.op_norm();
        if norm > 0.0 {
            return g.scale_real(scale / norm);
        }
    };
    let spec = match kind {
        ModelKind::HilbertRow => InnerDerivationSpec {
            a: ComplexMatrix::zeros(1, 1),
            b: draw(n),
        },
        k if k.is_cartan_symmetric_type() => {
            let a = draw(m);
            let b = a.transpose();
            InnerDerivationSpec { a, b }
        }
        _ => {
            let a = draw(m);
            let b = draw(n);
            InnerDerivationSpec { a, b }
        }
    };
    Ok(spec)
}

pub fn random_inner_derivation(model: &Arc<JStarAlgebraModel>, scale: f64, seed: u64) -> Result<MapHandle> {
    let spec = random_inner_derivation_spec(model, scale, seed)?;
    make_inner_derivation(model, &spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::{make_model, random_member};
    use crate::defect::{derivation_defect, jensen_defect};
    use crate::matrix::UnitScalar;
    use num_complex::Complex64;

    fn all_models() -> Vec<Arc<JStarAlgebraModel>> {
        vec![
            make_model(ModelKind::FullRectangular, 3, 2),
            make_model(ModelKind::FullRectangular, 1, 4),
            make_model(ModelKind::CartanIiAntisymmetric, 3, 3),
            make_model(ModelKind::CartanIiiSymmetric, 3, 3),
            make_model(ModelKind::CstarFullSquare, 3, 3),
            make_model(ModelKind::HilbertRow, 1, 4),
        ]
        .into_iter()
        .map(|m| Arc::new(m.unwrap()))
        .collect()
    }

    /// Triple-loop product, independent of `matmul`.
    fn naive_mul(x: &ComplexMatrix, y: &ComplexMatrix) -> ComplexMatrix {
        ComplexMatrix::from_fn(x.rows(), y.cols(), |i, j| {
            (0..x.cols()).map(|k| x.get(i, k) * y.get(k, j)).sum()
        })
    }

    #[test]
    fn zero_generators_give_zero_map() {
        let model = Arc::new(make_model(ModelKind::FullRectangular, 2, 3).unwrap());
        let d = make_inner_derivation(&model, &InnerDerivationSpec::zero(&model)).unwrap();
        let x = random_member(&model, 2.0, 0).unwrap();
        assert!(d.evaluate(&x).is_zero());
        assert_eq!(derivation_defect(&d, &x).unwrap(), 0.0);
    }

    #[test]
    fn scalar_generators_cancel() {
        let model = Arc::new(make_model(ModelKind::FullRectangular, 1, 1).unwrap());
        let t = 0.8;
        let spec = InnerDerivationSpec {
            a: ComplexMatrix::new(1, 1, vec![Complex64::new(0.0, t)]).unwrap(),
            b: ComplexMatrix::new(1, 1, vec![Complex64::new(0.0, -t)]).unwrap(),
        };
        let d = make_inner_derivation(&model, &spec).unwrap();
        let x = ComplexMatrix::new(1, 1, vec![Complex64::new(1.5, -0.3)]).unwrap();
        assert!(d.evaluate(&x).max_abs() == 0.0);
    }

    #[test]
    fn rotation_generator_on_matrix_unit() {
        let model = Arc::new(make_model(ModelKind::FullRectangular, 2, 2).unwrap());
        let a = ComplexMatrix::from_real(2, 2, &[0.0, 1.0, -1.0, 0.0]).unwrap();
        let spec = InnerDerivationSpec {
            a: a.clone(),
            b: ComplexMatrix::zeros(2, 2),
        };
        let d = make_inner_derivation(&model, &spec).unwrap();
        let e11 = ComplexMatrix::unit(2, 2, 0, 0);

        // Expand both sides term by term with the naive product.
        let dx = |x: &ComplexMatrix| naive_mul(&a, x);
        let cs = e11.adjoint();
        let lhs = dx(&naive_mul(&naive_mul(&e11, &cs), &e11));
        let t1 = naive_mul(&naive_mul(&dx(&e11), &cs), &e11);
        let t2 = naive_mul(&naive_mul(&e11, &dx(&e11).adjoint()), &e11);
        let t3 = naive_mul(&naive_mul(&e11, &cs), &dx(&e11));
        let oracle = &(&(&lhs - &t1) - &t2) - &t3;
        assert!(oracle.max_abs() <= 1e-13);
        assert!(derivation_defect(&d, &e11).unwrap() <= 1e-13);
    }

    #[test]
    fn rejects_invalid_generators() {
        let model = Arc::new(make_model(ModelKind::FullRectangular, 2, 2).unwrap());
        let spec = InnerDerivationSpec {
            a: ComplexMatrix::identity(2),
            b: ComplexMatrix::zeros(2, 2),
        };
        assert!(matches!(make_inner_derivation(&model, &spec), Err(Error::InvalidSpec(_))));

        let sym = Arc::new(make_model(ModelKind::CartanIiiSymmetric, 2, 2).unwrap());
        let a = ComplexMatrix::from_real(2, 2, &[0.0, 1.0, -1.0, 0.0]).unwrap();
        let spec = InnerDerivationSpec {
            a: a.clone(),
            b: a,
        };
        assert!(matches!(make_inner_derivation(&sym, &spec), Err(Error::ClosureViolation(_))));

        let spec = InnerDerivationSpec {
            a: ComplexMatrix::zeros(3, 3),
            b: ComplexMatrix::zeros(2, 2),
        };
        assert!(matches!(make_inner_derivation(&model, &spec), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn random_derivations_are_exact_and_preserve_the_model() {
        for model in all_models() {
            for seed in 0..20 {
                let d = random_inner_derivation(&model, 1.0, seed).unwrap();
                for k in 0..100 {
                    let norm = 0.25 * (1.0 + (k % 16) as f64);
                    let c = random_member(&model, norm, 1000 + k).unwrap();
                    let defect = derivation_defect(&d, &c).unwrap();
                    assert!(defect <= 1e-11 * (1.0 + norm.powi(3)), "{:?} seed {seed}: {defect:e}", model.kind());
                    if k < 5 {
                        let dc = d.evaluate(&c);
                        let leak = (&model.project(&dc).unwrap() - &dc).op_norm();
                        assert!(leak <= 1e-12 * (1.0 + dc.op_norm()));
                    }
                }
            }
        }
    }

    #[test]
    fn random_generators_have_requested_norm() {
        let model = make_model(ModelKind::CartanIiAntisymmetric, 4, 4).unwrap();
        let spec = random_inner_derivation_spec(&model, 2.5, 7).unwrap();
        assert!((spec.a.op_norm() - 2.5).abs() <= 1e-12);
        assert_eq!(spec.b, spec.a.transpose());
        assert_eq!(spec, random_inner_derivation_spec(&model, 2.5, 7).unwrap());

        let row = make_model(ModelKind::HilbertRow, 1, 3).unwrap();
        let spec = random_inner_derivation_spec(&row, 1.0, 1).unwrap();
        assert!(spec.a.is_zero());
        assert!(skew_residual(&spec.b) <= 1e-15);
    }

    #[test]
    fn derivations_are_linear_and_jensen_exact() {
        for model in all_models() {
            let d = random_inner_derivation(&model, 1.0, 3).unwrap();
            for k in 0..10u64 {
                let x = random_member(&model, 1.0 + k as f64, 2 * k).unwrap();
                let y = random_member(&model, 0.5, 2 * k + 1).unwrap();
                let alpha = Complex64::new(0.3, -1.2);
                let beta = Complex64::new(-0.7, 0.4);
                let lhs = d.evaluate(&(&x.scale(alpha) + &y.scale(beta)));
                let rhs = &d.evaluate(&x).scale(alpha) + &d.evaluate(&y).scale(beta);
                let scale = x.op_norm() + y.op_norm();
                assert!((&lhs - &rhs).op_norm() <= 1e-12 * scale);
                for r in [1.5, 2.0, 3.0] {
                    let mu = UnitScalar::from_angle(0.37 * k as f64);
                    assert!(jensen_defect(&d, &x, &y, mu, r).unwrap() <= 1e-11 * scale);
                }
            }
        }
    }

    #[test]
    fn spec_wire_format() {
        let model = make_model(ModelKind::FullRectangular, 2, 1).unwrap();
        let spec = random_inner_derivation_spec(&model, 1.0, 0).unwrap();
        let value = serde_json::to_value(&spec).unwrap();
        assert!(value.get("A").is_some() && value.get("B").is_some());
        assert_eq!(value["A"]["rows"], 2);
        let back: InnerDerivationSpec = serde_json::from_value(value).unwrap();
        assert_eq!(back, spec);
    }
}
