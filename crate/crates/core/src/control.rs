//! Control functions `phi(a, b, c)` majorizing the combined defect.
//!
//! The power family `theta (|a|^p + |b|^p + |c|^p)` with `0 < p < 1` has
//! closed forms for its summed majorant and its contraction constant; any
//! other control is accepted as an opaque callable through [`Control`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::ComplexMatrix;

/// A nonnegative control `phi: A^3 -> [0, inf)`.
pub trait Control: Send + Sync {
    fn phi(&self, a: &ComplexMatrix, b: &ComplexMatrix, c: &ComplexMatrix) -> f64;
}

impl<F> Control for F
where
    F: Fn(&ComplexMatrix, &ComplexMatrix, &ComplexMatrix) -> f64 + Send + Sync,
{
    fn phi(&self, a: &ComplexMatrix, b: &ComplexMatrix, c: &ComplexMatrix) -> f64 {
        self(a, b, c)
    }
}

/// `theta (|a|^p + |b|^p + |c|^p)` with scaling base `r`.
///
/// Wire form: `{"type": "power", "theta": number, "p": number, "r": number}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PowerControlRepr", into = "PowerControlRepr")]
pub struct PowerControl {
    theta: f64,
    p: f64,
    r: f64,
}

impl PowerControl {
    pub fn new(theta: f64, p: f64, r: f64) -> Result<Self> {
        if !(theta >= 0.0 && theta.is_finite()) {
            return Err(Error::InvalidParameter(format!("theta must be >= 0, got {theta}")));
        }
        if !(r > 1.0 && r.is_finite()) {
            return Err(Error::InvalidParameter(format!("r must exceed 1, got {r}")));
        }
        if !(p > 0.0) {
            return Err(Error::InvalidParameter(format!("p must be positive, got {p}")));
        }
        if p >= 1.0 {
            return Err(Error::DivergentSeries { p });
        }
        Ok(Self { theta, p, r })
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn with_theta(&self, theta: f64) -> Result<Self> {
        Self::new(theta, self.p, self.r)
    }

    /// `phi` from precomputed operator norms.
    pub fn phi_from_norms(&self, a: f64, b: f64, c: f64) -> f64 {
        self.theta * (a.powf(self.p) + b.powf(self.p) + c.powf(self.p))
    }

    /// `1 / (1 - r^(p-1))`, the geometric factor of the summed majorant.
    pub fn series_factor(&self) -> f64 {
        1.0 / (1.0 - self.r.powf(self.p - 1.0))
    }
}

impl Control for PowerControl {
    fn phi(&self, a: &ComplexMatrix, b: &ComplexMatrix, c: &ComplexMatrix) -> f64 {
        self.phi_from_norms(a.op_norm(), b.op_norm(), c.op_norm())
    }
}

#[derive(Serialize, Deserialize)]
struct PowerControlRepr {
    #[serde(rename = "type")]
    kind: String,
    theta: f64,
    p: f64,
    r: f64,
}

impl TryFrom<PowerControlRepr> for PowerControl {
    type Error = Error;

    fn try_from(repr: PowerControlRepr) -> Result<Self> {
        if repr.kind != "power" {
            return Err(Error::InvalidInput(format!(
                "unsupported control type {:?}",
                repr.kind
            )));
        }
        PowerControl::new(repr.theta, repr.p, repr.r)
    }
}

impl From<PowerControl> for PowerControlRepr {
    fn from(c: PowerControl) -> Self {
        Self {
            kind: "power".into(),
            theta: c.theta,
            p: c.p,
            r: c.r,
        }
    }
}

/// Evaluation of `phi` at `(a, b, c)`.
pub fn phi(ctrl: &PowerControl, a: &ComplexMatrix, b: &ComplexMatrix, c: &ComplexMatrix) -> f64 {
    ctrl.phi(a, b, c)
}

/// Closed form of `sum_{n>=0} r^-n phi(r^n a, r^n b, r^n c)`.
pub fn capital_phi(ctrl: &PowerControl, a: &ComplexMatrix, b: &ComplexMatrix, c: &ComplexMatrix) -> f64 {
    capital_phi_from_norms(ctrl, a.op_norm(), b.op_norm(), c.op_norm())
}

pub fn capital_phi_from_norms(ctrl: &PowerControl, a: f64, b: f64, c: f64) -> f64 {
    ctrl.phi_from_norms(a, b, c) * ctrl.series_factor()
}

/// Partial sum `sum_{n<terms} r^-n phi(r^n a, r^n b, r^n c)` for any control.
pub fn capital_phi_partial(
    ctrl: &dyn Control,
    r: f64,
    a: &ComplexMatrix,
    b: &ComplexMatrix,
    c: &ComplexMatrix,
    terms: usize,
) -> f64 {
    (0..terms)
        .map(|n| {
            let s = r.powi(n as i32);
            ctrl.phi(&a.scale_real(s), &b.scale_real(s), &c.scale_real(s)) / s
        })
        .sum()
}

/// Lipschitz constant `L` of the rescaling operator, strictly inside `(0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct ContractionConstant(f64);

impl ContractionConstant {
    pub fn new(l: f64) -> Result<Self> {
        if !(l > 0.0 && l < 1.0) {
            return Err(Error::InvalidParameter(format!("L must lie in (0, 1), got {l}")));
        }
        Ok(Self(l))
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for ContractionConstant {
    type Error = Error;
    fn try_from(l: f64) -> Result<Self> {
        Self::new(l)
    }
}

impl From<ContractionConstant> for f64 {
    fn from(l: ContractionConstant) -> f64 {
        l.0
    }
}

/// `L = r^(p-1)`: the smallest `L` with `phi(a, b, c) <= r L phi(a/r, b/r, c/r)`
/// for the power family (equality everywhere).
pub fn min_contraction_l(ctrl: &PowerControl) -> ContractionConstant {
    ContractionConstant(ctrl.r.powf(ctrl.p - 1.0))
}

/// One argument triple `(a, b, c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ArgTriple {
    pub a: ComplexMatrix,
    pub b: ComplexMatrix,
    pub c: ComplexMatrix,
}

impl ArgTriple {
    pub fn new(a: ComplexMatrix, b: ComplexMatrix, c: ComplexMatrix) -> Self {
        Self { a, b, c }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            a: self.a.scale_real(s),
            b: self.b.scale_real(s),
            c: self.c.scale_real(s),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ContractionCheck {
    pub holds: bool,
    /// Max of `phi(a,b,c) / (r L phi(a/r,b/r,c/r))` over nonzero denominators.
    pub worst_ratio: f64,
}

/// Relative slack on the `ratio <= 1` test, absorbing rounding in the
/// equality case.
const CONTRACTION_SLACK: f64 = 1e-12;

/// Checks `phi(a,b,c) <= r L phi(a/r,b/r,c/r)` on every sample. Zero
/// denominators are skipped and require a numerator below 1e-12.
pub fn check_contraction(ctrl: &dyn Control, r: f64, l: f64, samples: &[ArgTriple]) -> Result<ContractionCheck> {
    if !(r > 1.0) {
        return Err(Error::InvalidParameter(format!("r must exceed 1, got {r}")));
    }
    ContractionConstant::new(l)?;
    let mut holds = true;
    let mut worst = 0.0_f64;
    for t in samples {
        let num = ctrl.phi(&t.a, &t.b, &t.c);
        let shrunk = t.scaled(1.0 / r);
        let den = r * l * ctrl.phi(&shrunk.a, &shrunk.b, &shrunk.c);
        if den == 0.0 {
            if num > 1e-12 {
                holds = false;
                worst = f64::INFINITY;
            }
            continue;
        }
        let ratio = num / den;
        worst = worst.max(ratio);
        if ratio > 1.0 + CONTRACTION_SLACK {
            holds = false;
        }
    }
    Ok(ContractionCheck {
        holds,
        worst_ratio: worst,
    })
}

/// Checks that `s^-n phi(s^n a, s^n b, s^n c)` is nonincreasing for
/// `n = N/2 ..= N` and that its value at `n = N` is at most 1e-8 of its value
/// at `n = 0`, on every sample.
pub fn limit_condition_check(ctrl: &dyn Control, s: f64, samples: &[ArgTriple], n: usize) -> Result<bool> {
    if !(s > 1.0) {
        return Err(Error::InvalidParameter(format!("s must exceed 1, got {s}")));
    }
    if n == 0 {
        return Err(Error::InvalidParameter("N must be at least 1".into()));
    }
    let value = |t: &ArgTriple, k: usize| {
        let scale = s.powi(k as i32);
        let w = t.scaled(scale);
        ctrl.phi(&w.a, &w.b, &w.c) / scale
    };
    for t in samples {
        let initial = value(t, 0);
        let mut previous = value(t, n / 2);
        for k in (n / 2 + 1)..=n {
            let v = value(t, k);
            if !v.is_finite() || v > previous * (1.0 + 1e-12) {
                return Ok(false);
            }
            previous = v;
        }
        if previous > 1e-8 * initial {
            return Ok(false);
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::{make_model, random_member, ModelKind};

    fn scalar(v: f64) -> ComplexMatrix {
        ComplexMatrix::from_real(1, 1, &[v]).unwrap()
    }

    fn zero() -> ComplexMatrix {
        scalar(0.0)
    }

    #[test]
    fn phi_examples() {
        let ctrl = PowerControl::new(1.0, 0.5, 2.0).unwrap();
        assert_eq!(phi(&ctrl, &zero(), &zero(), &zero()), 0.0);
        assert!((phi(&ctrl, &scalar(4.0), &zero(), &zero()) - 2.0).abs() < 1e-15);
        let ctrl = PowerControl::new(2.0, 0.5, 2.0).unwrap();
        assert!((phi(&ctrl, &scalar(1.0), &scalar(-1.0), &scalar(1.0)) - 6.0).abs() < 1e-15);
    }

    #[test]
    fn capital_phi_examples() {
        let ctrl = PowerControl::new(1.0, 0.5, 2.0).unwrap();
        assert_eq!(capital_phi(&ctrl, &zero(), &zero(), &zero()), 0.0);
        let got = capital_phi(&ctrl, &scalar(1.0), &zero(), &zero());
        assert!((got - 3.414213562373095).abs() < 1e-12);
        let partial = capital_phi_partial(&ctrl, 2.0, &scalar(1.0), &zero(), &zero(), 200);
        assert!(((got - partial) / got).abs() < 1e-9);

        let ctrl = PowerControl::new(1.0, 0.5, 4.0).unwrap();
        assert!((capital_phi(&ctrl, &scalar(1.0), &zero(), &zero()) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn divergent_exponent_is_rejected() {
        assert!(matches!(PowerControl::new(1.0, 1.0, 2.0), Err(Error::DivergentSeries { .. })));
        assert!(matches!(PowerControl::new(1.0, 1.5, 2.0), Err(Error::DivergentSeries { .. })));
        assert!(PowerControl::new(-1.0, 0.5, 2.0).is_err());
        assert!(PowerControl::new(1.0, 0.5, 1.0).is_err());
        assert!(PowerControl::new(1.0, 0.0, 2.0).is_err());
    }

    #[test]
    fn min_contraction_examples() {
        let l = min_contraction_l(&PowerControl::new(1.0, 0.5, 2.0).unwrap()).value();
        assert!((l - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        let l = min_contraction_l(&PowerControl::new(1.0, 0.5, 3.0).unwrap()).value();
        assert!((l - 0.5773502691896258).abs() < 1e-15);
        let l = min_contraction_l(&PowerControl::new(1.0, 1.0 - 1e-9, 2.0).unwrap()).value();
        assert!(l < 1.0 && l > 1.0 - 1e-8);
    }

    fn random_triples(n: usize, seed: u64) -> Vec<ArgTriple> {
        let model = make_model(ModelKind::FullRectangular, 3, 2).unwrap();
        (0..n as u64)
            .map(|k| {
                let base = seed * 10_000 + 3 * k;
                ArgTriple::new(
                    random_member(&model, 0.1 + k as f64 * 0.05, base).unwrap(),
                    random_member(&model, 1.0 + k as f64 * 0.01, base + 1).unwrap(),
                    random_member(&model, 3.0, base + 2).unwrap(),
                )
            })
            .collect()
    }

    #[test]
    fn contraction_examples() {
        let ctrl = PowerControl::new(1.0, 0.5, 2.0).unwrap();
        let l = min_contraction_l(&ctrl).value();
        let samples = random_triples(100, 0);
        let check = check_contraction(&ctrl, 2.0, l, &samples).unwrap();
        assert!(check.holds);
        assert!((check.worst_ratio - 1.0).abs() < 1e-12);

        let check = check_contraction(&ctrl, 2.0, l / 2.0, &samples).unwrap();
        assert!(!check.holds);
        assert!((check.worst_ratio - 2.0).abs() < 1e-12);

        let zeros = vec![ArgTriple::new(zero(), zero(), zero()); 3];
        let check = check_contraction(&ctrl, 2.0, l, &zeros).unwrap();
        assert!(check.holds);
        assert_eq!(check.worst_ratio, 0.0);

        assert!(check_contraction(&ctrl, 2.0, 1.0, &zeros).is_err());
    }

    #[test]
    fn contraction_holds_across_grid() {
        let samples = random_triples(1000, 1);
        for p in [0.1, 0.5, 0.9] {
            for r in [1.5, 2.0, 4.0] {
                let ctrl = PowerControl::new(1.0, p, r).unwrap();
                let l = min_contraction_l(&ctrl).value();
                assert!(check_contraction(&ctrl, r, l, &samples).unwrap().holds, "p={p} r={r}");
            }
        }
    }

    #[test]
    fn capital_phi_partial_sums_agree_on_grid() {
        let a = scalar(1.7);
        let b = scalar(0.3);
        let c = scalar(2.2);
        for theta in [0.5, 1.0, 2.0] {
            for p in [0.1, 0.5, 0.9] {
                for r in [1.5, 2.0, 4.0] {
                    let ctrl = PowerControl::new(theta, p, r).unwrap();
                    let closed = capital_phi(&ctrl, &a, &b, &c);
                    let partial = capital_phi_partial(&ctrl, r, &a, &b, &c, 200);
                    let gap = (closed - partial) / closed;
                    // The 200-term truncation leaves exactly the geometric tail q^200.
                    let tail = r.powf(p - 1.0).powi(200);
                    assert!((gap - tail).abs() < 1e-12, "{theta} {p} {r}: {gap:e} vs {tail:e}");
                    if tail < 1e-10 {
                        assert!(gap.abs() < 1e-9);
                    }
                    // Stop before r^n overflows.
                    let terms = ((290.0 / r.log10()) as usize).min(2000);
                    let long = capital_phi_partial(&ctrl, r, &a, &b, &c, terms);
                    assert!(((closed - long) / closed).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn phi_is_p_homogeneous() {
        let ctrl = PowerControl::new(1.3, 0.4, 2.0).unwrap();
        let model = make_model(ModelKind::FullRectangular, 2, 2).unwrap();
        let a = random_member(&model, 1.0, 5).unwrap();
        let z = ComplexMatrix::zeros(2, 2);
        for lambda in [0.01, 0.5, 3.0, 100.0] {
            let lhs = phi(&ctrl, &a.scale_real(-lambda), &z, &z);
            let rhs = lambda.powf(0.4) * phi(&ctrl, &a, &z, &z);
            assert!(((lhs - rhs) / rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn limit_condition_examples() {
        let samples = random_triples(10, 2);
        let power = PowerControl::new(1.0, 0.5, 2.0).unwrap();
        assert!(limit_condition_check(&power, 2.0, &samples, 60).unwrap());

        let constant = |_: &ComplexMatrix, _: &ComplexMatrix, _: &ComplexMatrix| 1.0;
        assert!(limit_condition_check(&constant, 2.0, &samples, 60).unwrap());

        let quadratic = |a: &ComplexMatrix, _: &ComplexMatrix, _: &ComplexMatrix| a.op_norm().powi(2);
        assert!(!limit_condition_check(&quadratic, 2.0, &samples, 60).unwrap());
        assert!(limit_condition_check(&power, 1.0, &samples, 60).is_err());
    }

    #[test]
    fn control_wire_format() {
        let ctrl = PowerControl::new(0.25, 0.5, 2.0).unwrap();
        let text = serde_json::to_string(&ctrl).unwrap();
        assert_eq!(text, r#"{"type":"power","theta":0.25,"p":0.5,"r":2.0}"#);
        assert_eq!(serde_json::from_str::<PowerControl>(&text).unwrap(), ctrl);
        assert!(serde_json::from_str::<PowerControl>(r#"{"type":"power","theta":1,"p":1.2,"r":2}"#).is_err());
        assert!(serde_json::from_str::<PowerControl>(r#"{"type":"log","theta":1,"p":0.5,"r":2}"#).is_err());
    }
}
