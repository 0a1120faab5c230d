//! Approximate J*-derivations `f = d + g` and empirical certification of the
//! combined defect inequality.
//!
//! The perturbation family is an annular bump: `g` vanishes for `|a|` below
//! `rho_inner` and above `rho_outer`, so the defect of `d + g` is zero near
//! the origin and at infinity and a finite `theta` exists for any `p`.

use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algebra::JStarAlgebraModel;
use crate::control::{ArgTriple, PowerControl};
use crate::defect::derivation_residual;
use crate::error::{Error, Result};
use crate::map::MapHandle;
use crate::matrix::{ComplexMatrix, UnitScalar};
use crate::sampling::{stream_rng, SampleSpec};

/// Multiplier applied to `theta_required` to get the theta of record.
pub const SAFETY_FACTOR: f64 = 1.25;

/// Denominators below this are treated as zero.
const ZERO_DENOMINATOR: f64 = 1e-12;
/// Largest defect tolerated where the control vanishes.
const ZERO_DENOMINATOR_LHS: f64 = 1e-10;
const REFINE_STEPS: usize = 400;

/// Annular bump parameters. When `direction` is absent a random unit member
/// of the model is drawn from the construction seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnulusBumpSpec {
    pub epsilon: f64,
    pub rho_inner: f64,
    pub rho_outer: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<ComplexMatrix>,
}

impl AnnulusBumpSpec {
    pub fn new(epsilon: f64, rho_inner: f64, rho_outer: f64) -> Self {
        Self {
            epsilon,
            rho_inner,
            rho_outer,
            direction: None,
        }
    }

    pub fn with_direction(mut self, direction: ComplexMatrix) -> Self {
        self.direction = Some(direction);
        self
    }

    pub fn validate(&self, model: &JStarAlgebraModel) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidParameter(format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        if !(self.rho_inner > 0.0 && self.rho_outer > self.rho_inner && self.rho_outer.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "need 0 < rho_inner < rho_outer, got [{}, {}]",
                self.rho_inner, self.rho_outer
            )));
        }
        if let Some(dir) = &self.direction {
            model.check_shape(dir)?;
            if (dir.op_norm() - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidParameter(format!(
                    "direction must have unit norm, got {}",
                    dir.op_norm()
                )));
            }
            let leak = (&model.project(dir)? - dir).op_norm();
            if leak > 1e-12 {
                return Err(Error::InvalidParameter(format!(
                    "direction lies outside the model (residual {leak:e})"
                )));
            }
        }
        Ok(())
    }
}

/// `sin^2(pi (t - lo) / (hi - lo))` on `[lo, hi]`, zero elsewhere; equals 1
/// at the midpoint.
pub fn annulus_bump(t: f64, lo: f64, hi: f64) -> f64 {
    if t <= lo || t >= hi {
        return 0.0;
    }
    let s = (std::f64::consts::PI * (t - lo) / (hi - lo)).sin();
    s * s
}

/// `g(a) = epsilon * bump(|a|) * sin(Re <b_0, a>) * direction`.
pub fn make_annulus_perturbation(
    model: &Arc<JStarAlgebraModel>,
    spec: &AnnulusBumpSpec,
    seed: u64,
) -> Result<MapHandle> {
    spec.validate(model)?;
    let direction = match &spec.direction {
        Some(d) => d.clone(),
        None => model.random_member_with(1.0, &mut stream_rng(seed, 0)),
    };
    let first = model.basis()[0].clone();
    let (eps, lo, hi) = (spec.epsilon, spec.rho_inner, spec.rho_outer);
    Ok(MapHandle::new(model.clone(), "annulus bump", true, move |a| {
        let weight = annulus_bump(a.op_norm(), lo, hi);
        if weight == 0.0 || eps == 0.0 {
            return ComplexMatrix::zeros(a.rows(), a.cols());
        }
        let w = first.frobenius_inner(a).re.sin();
        direction.scale_real(eps * weight * w)
    }))
}

/// `f = d + g`.
pub fn perturb(d: &MapHandle, g: &MapHandle) -> Result<MapHandle> {
    if !d.same_domain(g) {
        return Err(Error::DomainMismatch);
    }
    if !d.zero_at_zero() || !g.zero_at_zero() {
        return Err(Error::HypothesisNotMet(
            "perturb needs both maps to vanish at zero".into(),
        ));
    }
    let (d2, g2) = (d.clone(), g.clone());
    let label = format!("{} + {}", d.label(), g.label());
    Ok(MapHandle::new(d.domain().clone(), label, true, move |a| {
        &d2.evaluate(a) + &g2.evaluate(a)
    }))
}

/// Where the certification ratio peaked.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorstPoint {
    pub a_norm: f64,
    pub b_norm: f64,
    pub c_norm: f64,
    pub mu: [f64; 2],
    pub lhs: f64,
    /// `lhs / (|a|^p + |b|^p + |c|^p)`; infinite at a zero-denominator violation.
    #[serde(with = "crate::extreal")]
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Certification {
    /// Smallest theta dominating every sampled left-hand side.
    #[serde(with = "crate::extreal")]
    pub theta_required: f64,
    pub declared_theta: f64,
    pub satisfied: bool,
    pub zero_denominator_violation: bool,
    pub worst_point: Option<WorstPoint>,
    pub samples_evaluated: usize,
    pub refinement_steps: usize,
}

impl Certification {
    /// `SAFETY_FACTOR * theta_required`.
    pub fn theta_of_record(&self) -> f64 {
        SAFETY_FACTOR * self.theta_required
    }
}

/// Sample triples for certification. Index `i` uses stream `(seed, i)`; one
/// in four samples is general, the others zero out `(b, c)`, `c`, or
/// `(a, b)` respectively so the specialized sub-inequalities are covered.
pub fn hypothesis_samples(model: &JStarAlgebraModel, spec: &SampleSpec) -> Vec<ArgTriple> {
    (0..spec.count)
        .into_par_iter()
        .map(|i| hypothesis_sample(model, spec, i))
        .collect()
}

fn hypothesis_sample(model: &JStarAlgebraModel, spec: &SampleSpec, index: usize) -> ArgTriple {
    let mut rng = stream_rng(spec.seed, index as u64);
    let (m, n) = model.ambient_shape();
    let draw = |rng: &mut rand_chacha::ChaCha8Rng| {
        let t = spec.draw_norm(rng);
        model.random_member_with(t, rng)
    };
    let a = draw(&mut rng);
    let b = draw(&mut rng);
    let c = draw(&mut rng);
    let zero = ComplexMatrix::zeros(m, n);
    match index % 4 {
        0 => ArgTriple::new(a, b, c),
        1 => ArgTriple::new(a, zero.clone(), zero),
        2 => ArgTriple::new(a, b, zero),
        _ => ArgTriple::new(zero.clone(), zero, c),
    }
}

struct Evaluation {
    lhs: f64,
    ratio: f64,
    mu: UnitScalar,
}

/// Max over the mu grid of the combined left-hand side at one triple.
fn evaluate_triple(f: &MapHandle, t: &ArgTriple, grid: &[UnitScalar], p: f64, r: f64) -> Result<Evaluation> {
    let inv_r = 1.0 / r;
    let sum_pm = &f.evaluate(&(&t.a + &t.b).scale_real(inv_r)) + &f.evaluate(&(&t.a - &t.b).scale_real(inv_r));
    let deriv = derivation_residual(f, &t.c)?;
    let mut lhs = 0.0_f64;
    let mut mu_at = UnitScalar::ONE;
    for &mu in grid {
        let fma = f.evaluate(&t.a.scale(mu.value()));
        let total = &(&sum_pm.scale(mu.value() * r) - &fma.scale(Complex64::new(2.0, 0.0))) + &deriv;
        let v = total.op_norm();
        if v > lhs {
            lhs = v;
            mu_at = mu;
        }
    }
    let den = t.a.op_norm().powf(p) + t.b.op_norm().powf(p) + t.c.op_norm().powf(p);
    let ratio = if den < ZERO_DENOMINATOR {
        if lhs > ZERO_DENOMINATOR_LHS {
            f64::INFINITY
        } else {
            0.0
        }
    } else {
        lhs / den
    };
    Ok(Evaluation {
        lhs,
        ratio,
        mu: mu_at,
    })
}

fn worst_point(t: &ArgTriple, e: &Evaluation) -> WorstPoint {
    WorstPoint {
        a_norm: t.a.op_norm(),
        b_norm: t.b.op_norm(),
        c_norm: t.c.op_norm(),
        mu: [e.mu.value().re, e.mu.value().im],
        lhs: e.lhs,
        ratio: e.ratio,
    }
}

/// Estimates the smallest `theta` for which
/// `|r mu f((a+b)/r) + r mu f((a-b)/r) - 2 f(mu a) + f(cc*c) - f(c)c*c - c f(c)* c - cc* f(c)|
///  <= theta (|a|^p + |b|^p + |c|^p)`
/// holds on the sample set, then refines the worst sample by local search.
///
/// Sampling can only under-estimate the true supremum; downstream checks
/// use [`Certification::theta_of_record`].
pub fn certify_hypothesis(f: &MapHandle, ctrl: &PowerControl, spec: &SampleSpec) -> Result<Certification> {
    spec.validate()?;
    if spec.count == 0 {
        return Err(Error::InvalidParameter("sample count must be at least 1".into()));
    }
    let model = f.domain().as_ref();
    let grid = spec.mu_grid();
    let (p, r) = (ctrl.p(), ctrl.r());

    let (m, n) = model.ambient_shape();
    let zero = ComplexMatrix::zeros(m, n);
    let origin = ArgTriple::new(zero.clone(), zero.clone(), zero);
    let at_origin = evaluate_triple(f, &origin, &grid, p, r)?;

    let evaluated: Vec<(ArgTriple, Evaluation)> = (0..spec.count)
        .into_par_iter()
        .map(|i| {
            let t = hypothesis_sample(model, spec, i);
            let e = evaluate_triple(f, &t, &grid, p, r)?;
            Ok((t, e))
        })
        .collect::<Result<_>>()?;

    let mut best_index = 0;
    for (i, (_, e)) in evaluated.iter().enumerate() {
        if e.ratio > evaluated[best_index].1.ratio {
            best_index = i;
        }
    }
    let (mut best_t, mut best_e) = {
        let (t, e) = &evaluated[best_index];
        (
            t.clone(),
            Evaluation {
                lhs: e.lhs,
                ratio: e.ratio,
                mu: e.mu,
            },
        )
    };

    let mut steps = 0;
    if best_e.ratio.is_finite() && best_e.ratio > 0.0 {
        let mut rng = stream_rng(spec.seed, spec.count as u64 + 1);
        let mut radius = 0.1;
        for _ in 0..REFINE_STEPS {
            steps += 1;
            let candidate = jitter(model, &best_t, radius, &mut rng);
            let e = evaluate_triple(f, &candidate, &grid, p, r)?;
            if e.ratio > best_e.ratio && e.ratio.is_finite() {
                best_t = candidate;
                best_e = e;
            } else {
                radius *= 0.95;
                if radius < 1e-4 {
                    radius = 0.1;
                }
            }
        }
    }

    let zero_violation = at_origin.ratio.is_infinite() || evaluated.iter().any(|(_, e)| e.ratio.is_infinite());
    let (theta_required, worst) = if at_origin.ratio.is_infinite() {
        (f64::INFINITY, worst_point(&origin, &at_origin))
    } else {
        (best_e.ratio, worst_point(&best_t, &best_e))
    };
    Ok(Certification {
        theta_required,
        declared_theta: ctrl.theta(),
        satisfied: !zero_violation && theta_required <= ctrl.theta(),
        zero_denominator_violation: zero_violation,
        worst_point: Some(worst),
        samples_evaluated: spec.count + 1,
        refinement_steps: steps,
    })
}

/// Moves each nonzero component by a random in-model step of relative size `radius`.
fn jitter<R: Rng + ?Sized>(model: &JStarAlgebraModel, t: &ArgTriple, radius: f64, rng: &mut R) -> ArgTriple {
    let mut step = |x: &ComplexMatrix| {
        if x.is_zero() {
            return x.clone();
        }
        let size = radius * x.op_norm() * rng.random::<f64>();
        if size == 0.0 {
            return x.clone();
        }
        x + &model.random_member_with(size, rng)
    };
    let a = step(&t.a);
    let b = step(&t.b);
    let c = step(&t.c);
    ArgTriple::new(a, b, c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::{make_model, random_member, ModelKind};
    use crate::defect::hypothesis_lhs;
    use crate::derivation::random_inner_derivation;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn model_3x2() -> Arc<JStarAlgebraModel> {
        Arc::new(make_model(ModelKind::FullRectangular, 3, 2).unwrap())
    }

    #[test]
    fn bump_shape() {
        assert_eq!(annulus_bump(0.4, 0.5, 2.0), 0.0);
        assert_eq!(annulus_bump(2.5, 0.5, 2.0), 0.0);
        assert!((annulus_bump(1.25, 0.5, 2.0) - 1.0).abs() < 1e-15);
        assert!(annulus_bump(0.6, 0.5, 2.0) > 0.0);
    }

    #[test]
    fn perturbation_support_and_amplitude() {
        let model = model_3x2();
        let eps = 1e-3;
        let g = make_annulus_perturbation(&model, &AnnulusBumpSpec::new(eps, 1.0, PI - 1.0), 4).unwrap();
        let inside = random_member(&model, 0.9, 1).unwrap();
        let outside = random_member(&model, 2.5, 2).unwrap();
        assert!(g.evaluate(&inside).is_zero());
        assert!(g.evaluate(&outside).is_zero());
        assert!(g.verify_zero_at_zero().is_ok());

        // Midpoint norm pi/2 with first basis coefficient pi/2: bump = sin = 1.
        let a = ComplexMatrix::unit(3, 2, 0, 0).scale_real(FRAC_PI_2);
        assert!((g.evaluate(&a).op_norm() - eps).abs() < 1e-15);

        for seed in 0..200 {
            let x = random_member(&model, 0.5 + seed as f64 * 0.01, seed).unwrap();
            assert!(g.evaluate(&x).op_norm() <= eps * (1.0 + 1e-12));
        }
    }

    #[test]
    fn spec_validation() {
        let model = model_3x2();
        assert!(AnnulusBumpSpec::new(1e-3, 2.0, 1.0).validate(&model).is_err());
        assert!(AnnulusBumpSpec::new(-1.0, 0.5, 1.0).validate(&model).is_err());
        let not_unit = AnnulusBumpSpec::new(1e-3, 0.5, 2.0).with_direction(ComplexMatrix::unit(3, 2, 0, 0).scale_real(2.0));
        assert!(not_unit.validate(&model).is_err());
        let anti = make_model(ModelKind::CartanIiAntisymmetric, 2, 2).unwrap();
        let outside = AnnulusBumpSpec::new(1e-3, 0.5, 2.0).with_direction(ComplexMatrix::identity(2));
        assert!(outside.validate(&anti).is_err());
    }

    #[test]
    fn perturb_adds_pointwise() {
        let model = model_3x2();
        let d = random_inner_derivation(&model, 1.0, 0).unwrap();
        let g = make_annulus_perturbation(&model, &AnnulusBumpSpec::new(1e-2, 0.5, 2.0), 1).unwrap();
        let zero = make_annulus_perturbation(&model, &AnnulusBumpSpec::new(0.0, 0.5, 2.0), 1).unwrap();
        let zero_d = crate::derivation::make_inner_derivation(&model, &crate::derivation::InnerDerivationSpec::zero(&model)).unwrap();
        let f = perturb(&d, &g).unwrap();
        let f0 = perturb(&d, &zero).unwrap();
        let only_g = perturb(&zero_d, &g).unwrap();
        assert!(f.zero_at_zero());
        for seed in 0..20 {
            let a = random_member(&model, 0.3 + 0.1 * seed as f64, seed).unwrap();
            assert_eq!(f0.evaluate(&a), d.evaluate(&a));
            assert_eq!(only_g.evaluate(&a), g.evaluate(&a));
            assert!((&f.evaluate(&a) - &d.evaluate(&a)).max_abs_diff(&g.evaluate(&a)) <= 1e-15);
        }

        let other = Arc::new(make_model(ModelKind::FullRectangular, 2, 2).unwrap());
        let d_other = random_inner_derivation(&other, 1.0, 0).unwrap();
        assert!(matches!(perturb(&d_other, &g), Err(Error::DomainMismatch)));
    }

    #[test]
    fn defect_of_perturbed_map_depends_only_on_g() {
        let model = model_3x2();
        let d = random_inner_derivation(&model, 1.0, 2).unwrap();
        let g = make_annulus_perturbation(&model, &AnnulusBumpSpec::new(1e-3, 0.5, 2.0), 5).unwrap();
        let f = perturb(&d, &g).unwrap();
        let spec = SampleSpec::new(200, 9, [0.05, 20.0], 16);
        let grid = spec.mu_grid();
        for (i, t) in hypothesis_samples(&model, &spec).iter().enumerate() {
            let mu = grid[i % grid.len()];
            let lf = hypothesis_lhs(&f, &t.a, &t.b, &t.c, mu, 2.0).unwrap();
            let lg = hypothesis_lhs(&g, &t.a, &t.b, &t.c, mu, 2.0).unwrap();
            let scale = 1.0 + t.a.op_norm() + t.b.op_norm() + t.c.op_norm().powi(3);
            assert!((lf - lg).abs() <= 1e-11 * scale, "{lf} vs {lg}");
        }
    }

    #[test]
    fn exact_derivation_certifies_with_rounding_theta() {
        let model = model_3x2();
        let d = random_inner_derivation(&model, 1.0, 1).unwrap();
        let ctrl = PowerControl::new(1e-6, 0.5, 2.0).unwrap();
        let cert = certify_hypothesis(&d, &ctrl, &SampleSpec::new(500, 3, [0.05, 20.0], 16)).unwrap();
        assert!(cert.theta_required <= 1e-9, "{}", cert.theta_required);
        assert!(cert.satisfied);
    }

    /// Brute-force maximization over a dense sample set, independent of the
    /// certifier's sampling scheme and refinement.
    fn brute_force_theta(f: &MapHandle, p: f64, r: f64, count: u64) -> f64 {
        let model = f.domain().clone();
        let grid = crate::sampling::mu_grid(16);
        let (m, n) = model.ambient_shape();
        (0..count)
            .map(|k| {
                let mut rng = stream_rng(0xb0b, k);
                let na = 0.05 * (400.0_f64).powf(rng.random::<f64>());
                let nb = 0.05 * (400.0_f64).powf(rng.random::<f64>());
                let nc = 0.05 * (400.0_f64).powf(rng.random::<f64>());
                let z = ComplexMatrix::zeros(m, n);
                let pick = rng.random_range(0..3);
                let a = model.random_member_with(na, &mut rng);
                let b = if pick == 1 { z.clone() } else { model.random_member_with(nb, &mut rng) };
                let c = if pick != 0 { z.clone() } else { model.random_member_with(nc, &mut rng) };
                let den = a.op_norm().powf(p) + b.op_norm().powf(p) + c.op_norm().powf(p);
                grid.iter()
                    .map(|&mu| hypothesis_lhs(f, &a, &b, &c, mu, r).unwrap() / den)
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn annulus_perturbation_certifies_with_finite_theta() {
        let model = model_3x2();
        let d = random_inner_derivation(&model, 1.0, 0).unwrap();
        let g = make_annulus_perturbation(&model, &AnnulusBumpSpec::new(1e-3, 0.5, 2.0), 1).unwrap();
        let f = perturb(&d, &g).unwrap();
        let ctrl = PowerControl::new(1.0, 0.5, 2.0).unwrap();
        let cert = certify_hypothesis(&f, &ctrl, &SampleSpec::new(10_000, 11, [0.05, 20.0], 16)).unwrap();
        assert!(cert.theta_required.is_finite() && cert.theta_required > 0.0);
        assert!(cert.satisfied);
        assert!(!cert.zero_denominator_violation);

        let oracle = brute_force_theta(&f, 0.5, 2.0, 4000);
        assert!(oracle <= cert.theta_of_record(), "oracle {oracle} vs record {}", cert.theta_of_record());

        let tight = ctrl.with_theta(0.5 * cert.theta_required).unwrap();
        let cert = certify_hypothesis(&f, &tight, &SampleSpec::new(10_000, 11, [0.05, 20.0], 16)).unwrap();
        assert!(!cert.satisfied);
    }

    #[test]
    fn bump_without_hole_fails_near_zero() {
        let model = model_3x2();
        let dir = random_member(&model, 1.0, 3).unwrap();
        let plateau = MapHandle::new(model.clone(), "plateau", false, move |a| {
            let t = a.op_norm();
            let w = if t <= 1.25 { 1.0 } else { annulus_bump(t, 0.5, 2.0) };
            dir.scale_real(1e-3 * w)
        });
        let ctrl = PowerControl::new(1.0, 0.5, 2.0).unwrap();
        let cert = certify_hypothesis(&plateau, &ctrl, &SampleSpec::new(400, 1, [1e-6, 10.0], 16)).unwrap();
        assert!(!cert.satisfied);
        assert!(cert.zero_denominator_violation);
        let worst = cert.worst_point.unwrap();
        assert_eq!(worst.a_norm, 0.0);
        assert!(worst.lhs > 1e-4);
    }

    #[test]
    fn theta_required_grows_with_epsilon() {
        let model = model_3x2();
        let d = random_inner_derivation(&model, 1.0, 0).unwrap();
        let ctrl = PowerControl::new(1.0, 0.5, 2.0).unwrap();
        let spec = SampleSpec::new(2000, 5, [0.05, 20.0], 8);
        let mut previous = 0.0;
        for eps in [0.0, 1e-5, 1e-4, 1e-3, 1e-2] {
            let g = make_annulus_perturbation(&model, &AnnulusBumpSpec::new(eps, 0.5, 2.0), 1).unwrap();
            let f = perturb(&d, &g).unwrap();
            let theta = certify_hypothesis(&f, &ctrl, &spec).unwrap().theta_required;
            assert!(theta >= previous, "eps {eps}: {theta} < {previous}");
            previous = theta;
        }
    }

    #[test]
    fn sample_set_is_deterministic() {
        let model = model_3x2();
        let spec = SampleSpec::new(16, 2, [0.1, 10.0], 4);
        assert_eq!(hypothesis_samples(&model, &spec), hypothesis_samples(&model, &spec));
        let t = &hypothesis_samples(&model, &spec)[1];
        assert!(t.b.is_zero() && t.c.is_zero());
    }
}
