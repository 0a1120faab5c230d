//! Defect functionals measuring how far a map is from the derivation
//! identity and from the Jensen-type equation.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::map::MapHandle;
use crate::matrix::{ComplexMatrix, UnitScalar};

/// `f(c c* c) - f(c) c* c - c f(c)* c - c c* f(c)`.
pub fn derivation_residual(f: &MapHandle, c: &ComplexMatrix) -> Result<ComplexMatrix> {
    f.domain().check_shape(c)?;
    let fc = f.evaluate(c);
    if fc.shape() != c.shape() {
        return Err(Error::ShapeMismatch {
            expected: c.shape(),
            found: fc.shape(),
        });
    }
    let c_star = c.adjoint();
    let c_star_c = c_star.matmul(c);
    let lhs = f.evaluate(&c.matmul(&c_star_c));
    let t1 = fc.matmul(&c_star_c);
    let t2 = c.matmul(&fc.adjoint()).matmul(c);
    let t3 = c.matmul(&c_star).matmul(&fc);
    Ok(&(&(&lhs - &t1) - &t2) - &t3)
}

/// Operator norm of [`derivation_residual`].
pub fn derivation_defect(f: &MapHandle, c: &ComplexMatrix) -> Result<f64> {
    Ok(derivation_residual(f, c)?.op_norm())
}

/// `r mu f((a+b)/r) + r mu f((a-b)/r) - 2 f(mu a)`.
pub fn jensen_residual(
    f: &MapHandle,
    a: &ComplexMatrix,
    b: &ComplexMatrix,
    mu: UnitScalar,
    r: f64,
) -> Result<ComplexMatrix> {
    f.domain().check_shape(a)?;
    f.domain().check_shape(b)?;
    if !(r > 1.0) {
        return Err(Error::InvalidParameter(format!("r must exceed 1, got {r}")));
    }
    let inv_r = 1.0 / r;
    let plus = f.evaluate(&(a + b).scale_real(inv_r));
    let minus = f.evaluate(&(a - b).scale_real(inv_r));
    let rmu = mu.value() * r;
    let at_mu_a = f.evaluate(&a.scale(mu.value()));
    Ok(&(&plus + &minus).scale(rmu) - &at_mu_a.scale(Complex64::new(2.0, 0.0)))
}

/// Operator norm of [`jensen_residual`].
pub fn jensen_defect(
    f: &MapHandle,
    a: &ComplexMatrix,
    b: &ComplexMatrix,
    mu: UnitScalar,
    r: f64,
) -> Result<f64> {
    Ok(jensen_residual(f, a, b, mu, r)?.op_norm())
}

/// Norm of the combined left-hand side: Jensen residual at `(a, b, mu)` plus
/// derivation residual at `c`, inside a single norm.
pub fn hypothesis_lhs(
    f: &MapHandle,
    a: &ComplexMatrix,
    b: &ComplexMatrix,
    c: &ComplexMatrix,
    mu: UnitScalar,
    r: f64,
) -> Result<f64> {
    let j = jensen_residual(f, a, b, mu, r)?;
    let d = derivation_residual(f, c)?;
    Ok((&j + &d).op_norm())
}
