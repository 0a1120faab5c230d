//! Fixed-point route: the operator `J(h)(a) = h(r a) / r` on maps with the
//! generalized distance `d(g, h) = sup |g(a) - h(a)| / phi(a, 0, 0)`.
//!
//! Distances are estimated on a geometric ladder of sample points. Each base
//! point has norm in `[1, r)` and is repeated at scales `lo r^i`, so that `J`
//! shifts the ladder onto itself and the empirical contraction of the power
//! family is exactly `L = r^(p-1)` away from the ladder's ends.

use rayon::prelude::*;
use serde::Serialize;

use crate::algebra::JStarAlgebraModel;
use crate::control::{check_contraction, ArgTriple, Control, ContractionConstant, PowerControl};
use crate::defect::{derivation_defect, jensen_defect};
use crate::error::{Error, Result};
use crate::hyers::{
    check_declared_homogeneity, relative_derivation_defect, rescaled_map, verify_linearity_and_jensen,
    LinearityResiduals, SuperstabilityReport, Verdict, DEFECT_TOLERANCE,
};
use crate::map::MapHandle;
use crate::matrix::{ComplexMatrix, UnitScalar};
use crate::perturbation::hypothesis_samples;
use crate::sampling::{log_uniform, stream_rng, SampleSpec};

/// Ratios above this are reported as `+inf`.
pub const INFINITE_RATIO: f64 = 1e12;
/// Allowed excess of an empirical contraction estimate over the declared `L`.
pub const CONTRACTION_ALLOWANCE: f64 = 1.05;
/// Slack on the `d(f, D) <= L / (1 - L)` check.
pub const FINAL_BOUND_SLACK: f64 = 1e-6;

const ZERO_DENOMINATOR: f64 = 1e-12;
const ZERO_DENOMINATOR_GAP: f64 = 1e-10;
const SHRINK_STEPS: usize = 13;
const SHRINK_DIRECTIONS: usize = 4;
const GROWTH_FACTOR: f64 = 1e3;
const CONTRACTION_SAMPLES: usize = 1000;
const DEFECT_SAMPLES: usize = 100;

/// Points at which distances are evaluated.
#[derive(Debug, Clone)]
pub struct DistanceSamples {
    /// The geometric ladder; the reported finite value is a sup over these.
    pub ladder: Vec<ComplexMatrix>,
    /// `shrink[j][k]` has norm `lo 10^-k` along direction `j`; used only to
    /// detect blow-up near 0.
    pub shrink: Vec<Vec<ComplexMatrix>>,
}

impl DistanceSamples {
    /// Ladder of `ceil(count / rungs) * rungs` points covering `norm_range`,
    /// where `rungs = ceil(log_r(hi / lo))`.
    pub fn new(model: &JStarAlgebraModel, r: f64, spec: &SampleSpec) -> Result<Self> {
        spec.validate()?;
        let [lo, hi] = spec.norm_range;
        let rungs = ((hi / lo).ln() / r.ln()).ceil().max(1.0) as usize;
        let bases = spec.count.div_ceil(rungs).max(1);
        let units: Vec<(ComplexMatrix, f64)> = (0..bases)
            .map(|j| {
                let mut rng = stream_rng(spec.seed, j as u64);
                let t = log_uniform(&mut rng, 1.0, r);
                (model.random_member_with(1.0, &mut rng), t)
            })
            .collect();
        let ladder = (0..rungs)
            .flat_map(|i| units.iter().map(move |(u, t)| u.scale_real(lo * r.powi(i as i32) * t)))
            .collect();
        let shrink = units
            .iter()
            .take(SHRINK_DIRECTIONS)
            .map(|(u, _)| (0..SHRINK_STEPS).map(|k| u.scale_real(lo * 10f64.powi(-(k as i32)))).collect())
            .collect();
        Ok(Self { ladder, shrink })
    }

    fn all_points(&self) -> impl Iterator<Item = &ComplexMatrix> {
        self.ladder.iter().chain(self.shrink.iter().flatten())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeneralizedDistance {
    #[serde(with = "crate::extreal")]
    pub value: f64,
    /// Norm of the sample achieving the sup (0 for the origin).
    pub witness_norm: f64,
    #[serde(skip)]
    pub witness: Option<ComplexMatrix>,
}

impl GeneralizedDistance {
    pub fn is_finite(&self) -> bool {
        self.value.is_finite()
    }
}

/// `|x - y| / phi(a, 0, 0)` with the zero-denominator convention.
fn pointwise_ratio(gap: f64, phi: f64) -> f64 {
    if phi < ZERO_DENOMINATOR {
        if gap > ZERO_DENOMINATOR_GAP {
            f64::INFINITY
        } else {
            0.0
        }
    } else {
        gap / phi
    }
}

/// Reduces per-point gaps to a distance. `gaps` follows the layout
/// `[origin, ladder..., shrink...]` of [`DistanceSamples::all_points`]
/// with the origin prepended.
fn reduce_distance(samples: &DistanceSamples, phis: &[f64], gaps: &[f64]) -> GeneralizedDistance {
    let ratio = |i: usize| pointwise_ratio(gaps[i], phis[i]);
    let n_ladder = samples.ladder.len();
    let origin = ComplexMatrix::zeros(samples.ladder[0].rows(), samples.ladder[0].cols());

    let infinite = |witness: Option<ComplexMatrix>| {
        let witness_norm = witness.as_ref().map_or(0.0, ComplexMatrix::op_norm);
        GeneralizedDistance {
            value: f64::INFINITY,
            witness_norm,
            witness,
        }
    };
    if ratio(0) > INFINITE_RATIO {
        return infinite(Some(origin));
    }
    let mut offset = 1 + n_ladder;
    for line in &samples.shrink {
        let ratios: Vec<f64> = (0..line.len()).map(|k| ratio(offset + k)).collect();
        if let Some(k) = ratios.iter().position(|&v| v > INFINITE_RATIO) {
            return infinite(Some(line[k].clone()));
        }
        let growing = ratios.windows(2).all(|w| w[1] > w[0]);
        if growing && ratios[0] > 0.0 && ratios[ratios.len() - 1] >= GROWTH_FACTOR * ratios[0] {
            return infinite(line.last().cloned());
        }
        offset += line.len();
    }
    let (mut best, mut at) = (0.0_f64, None);
    for i in 0..n_ladder {
        let v = ratio(1 + i);
        if v > INFINITE_RATIO {
            return infinite(Some(samples.ladder[i].clone()));
        }
        if v > best {
            best = v;
            at = Some(i);
        }
    }
    let witness = at.map(|i| samples.ladder[i].clone());
    GeneralizedDistance {
        value: best,
        witness_norm: witness.as_ref().map_or(0.0, ComplexMatrix::op_norm),
        witness,
    }
}

fn phis(ctrl: &PowerControl, samples: &DistanceSamples) -> Vec<f64> {
    std::iter::once(0.0)
        .chain(samples.all_points().map(|a| ctrl.phi_from_norms(a.op_norm(), 0.0, 0.0)))
        .collect()
}

fn points_with_origin(samples: &DistanceSamples) -> Vec<ComplexMatrix> {
    let (m, n) = samples.ladder[0].shape();
    std::iter::once(ComplexMatrix::zeros(m, n)).chain(samples.all_points().cloned()).collect()
}

/// Estimates `sup_a |g(a) - h(a)| / phi(a, 0, 0)`. Declared `+inf` when a
/// ratio exceeds 1e12, when a point with `phi < 1e-12` has gap above 1e-10,
/// or when the ratio grows strictly along a shrinking probe line by at least
/// a factor 1e3.
pub fn generalized_distance(
    g: &MapHandle,
    h: &MapHandle,
    ctrl: &PowerControl,
    spec: &SampleSpec,
) -> Result<GeneralizedDistance> {
    if !g.same_domain(h) {
        return Err(Error::DomainMismatch);
    }
    let samples = DistanceSamples::new(g.domain(), ctrl.r(), spec)?;
    let points = points_with_origin(&samples);
    let gaps: Vec<f64> = points.par_iter().map(|a| (&g.evaluate(a) - &h.evaluate(a)).op_norm()).collect();
    Ok(reduce_distance(&samples, &phis(ctrl, &samples), &gaps))
}

/// `a -> h(r a) / r`.
pub fn apply_j(h: &MapHandle, r: f64) -> MapHandle {
    let inner = h.clone();
    MapHandle::new(h.domain().clone(), format!("J[{}]", h.label()), h.zero_at_zero(), move |a| {
        inner.evaluate(&a.scale_real(r)).scale_real(1.0 / r)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Branch {
    AlwaysInfinite,
    EventuallyFinite,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FixedPointReport {
    pub branch: Branch,
    pub m0: Option<usize>,
    #[serde(rename = "L")]
    pub l: f64,
    pub max_iter: usize,
    /// `d(J^k f, J^{k+1} f)` for `k = 0 .. max_iter-1`.
    #[serde(with = "crate::extreal::seq")]
    pub successive_distances: Vec<f64>,
    /// `d_{k+1} / d_k` for `k >= m0` while `d_k` is above the noise floor.
    pub contraction_estimates: Vec<f64>,
    pub contraction_max: f64,
    /// `d(f, J f) / L`; the stated bound requires this to be at most 1.
    #[serde(with = "crate::extreal")]
    pub first_step_ratio: f64,
    /// `d(f, J f) / (L / 2)`, the sharp form of the same bound.
    #[serde(with = "crate::extreal")]
    pub first_step_ratio_sharp: f64,
    #[serde(with = "crate::extreal")]
    pub distance_to_fixed_point: f64,
    /// `d(f, D) (1 - L) / L`.
    #[serde(with = "crate::extreal")]
    pub final_bound_ratio: f64,
    /// `d(f, D) (1 - L) / d(f, J f)`.
    #[serde(with = "crate::extreal")]
    pub alternative_bound_ratio: f64,
    pub derivation_defect_max: Option<f64>,
    pub linearity_residual: Option<LinearityResiduals>,
    pub assumed_hypotheses: Vec<String>,
    pub verdict: Verdict,
    pub failures: Vec<String>,
}

pub struct FixedPointRecovery {
    pub d: Option<MapHandle>,
    pub report: FixedPointReport,
}

/// Iterates `J` from `f`, classifies which alternative holds on the sample
/// set, and on the finite branch returns `D = J^max_iter f` together with the
/// contraction, distance and derivation checks.
///
/// `f(0) = 0` is not a precondition here: a map with `f(0) != 0` is at
/// infinite distance from `J f` and lands on the first alternative.
pub fn run_alternative(
    f: &MapHandle,
    ctrl: &PowerControl,
    l: ContractionConstant,
    max_iter: usize,
    spec: &SampleSpec,
) -> Result<FixedPointRecovery> {
    if max_iter < 2 {
        return Err(Error::InvalidParameter(format!("max_iter must be at least 2, got {max_iter}")));
    }
    let r = ctrl.r();
    let l = l.value();
    let model = f.domain();
    let triples = hypothesis_samples(model, &spec.with_count(spec.count.min(CONTRACTION_SAMPLES)));
    let contraction = check_contraction(ctrl, r, l, &triples)?;
    if !contraction.holds {
        return Err(Error::HypothesisNotMet(format!(
            "phi(a,b,c) <= r L phi(a/r,b/r,c/r) fails with L = {l} (worst ratio {:e})",
            contraction.worst_ratio
        )));
    }

    let samples = DistanceSamples::new(model, r, spec)?;
    let points = points_with_origin(&samples);
    let largest = points.iter().map(ComplexMatrix::op_norm).fold(0.0, f64::max);
    let value = r.powi(max_iter as i32) * largest;
    if !value.is_finite() || value > crate::hyers::SCALE_LIMIT {
        return Err(Error::ScaleOverflow { value });
    }
    let phi = phis(ctrl, &samples);

    // iterates[k][i] = (J^k f)(point i)
    let per_point: Vec<Vec<ComplexMatrix>> = points
        .par_iter()
        .map(|a| {
            (0..=max_iter)
                .map(|k| {
                    let s = r.powi(k as i32);
                    f.evaluate(&a.scale_real(s)).scale_real(1.0 / s)
                })
                .collect()
        })
        .collect();
    let distance_between = |j: usize, k: usize| {
        let gaps: Vec<f64> = per_point.iter().map(|v| (&v[j] - &v[k]).op_norm()).collect();
        reduce_distance(&samples, &phi, &gaps)
    };
    let successive: Vec<GeneralizedDistance> = (0..max_iter).map(|k| distance_between(k, k + 1)).collect();
    let values: Vec<f64> = successive.iter().map(|d| d.value).collect();
    let m0 = values.iter().position(|v| v.is_finite());
    let assumed = vec!["completeness of the generalized metric space".to_string()];

    let Some(m0) = m0 else {
        return Ok(FixedPointRecovery {
            d: None,
            report: FixedPointReport {
                branch: Branch::AlwaysInfinite,
                m0: None,
                l,
                max_iter,
                successive_distances: values,
                contraction_estimates: Vec::new(),
                contraction_max: 0.0,
                first_step_ratio: f64::INFINITY,
                first_step_ratio_sharp: f64::INFINITY,
                distance_to_fixed_point: f64::INFINITY,
                final_bound_ratio: f64::INFINITY,
                alternative_bound_ratio: f64::INFINITY,
                derivation_defect_max: None,
                linearity_residual: None,
                assumed_hypotheses: assumed,
                verdict: Verdict::NoFixedPoint,
                failures: vec!["d(J^k f, J^(k+1) f) is infinite at every step".into()],
            },
        });
    };

    let floor = 1e-9 * values[m0];
    let mut estimates = Vec::new();
    for k in m0..max_iter - 1 {
        if values[k] > floor && values[k] > 0.0 {
            estimates.push(values[k + 1] / values[k]);
        } else {
            break;
        }
    }
    let contraction_max = estimates.iter().copied().fold(0.0, f64::max);
    let to_limit = distance_between(0, max_iter).value;
    let d_first = values[0];
    let final_bound_ratio = to_limit * (1.0 - l) / l;
    let alternative_bound_ratio = if d_first > 0.0 {
        to_limit * (1.0 - l) / d_first
    } else if to_limit == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };

    let d = rescaled_map(f, r, max_iter).with_label(format!("J^{max_iter}[{}]", f.label()));
    let defect_points: Vec<ComplexMatrix> = samples.ladder.iter().step_by((samples.ladder.len() / DEFECT_SAMPLES).max(1)).cloned().collect();
    let defect = relative_derivation_defect(&d, &defect_points)?;
    let linearity = verify_linearity_and_jensen(&d, r, &defect_points, &spec.mu_grid())?;

    let mut failures = Vec::new();
    let mut violated = false;
    if contraction_max > l * CONTRACTION_ALLOWANCE {
        violated = true;
        failures.push(format!("empirical contraction {contraction_max:e} exceeds L = {l}"));
    }
    if m0 != 0 {
        failures.push(format!("d(f, J f) is infinite; first finite step m0 = {m0}"));
    }
    if !(final_bound_ratio <= 1.0 + FINAL_BOUND_SLACK) {
        failures.push(format!("d(f, D) (1 - L) / L = {final_bound_ratio:e} > 1"));
    }
    if defect > DEFECT_TOLERANCE {
        failures.push(format!("derivation defect of D: {defect:e}"));
    }
    if linearity.max_relative() > DEFECT_TOLERANCE {
        failures.push(format!("linearity of D: {:e}", linearity.max_relative()));
    }
    let verdict = if violated {
        Verdict::HypothesisViolation
    } else if failures.is_empty() {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    Ok(FixedPointRecovery {
        d: Some(d),
        report: FixedPointReport {
            branch: Branch::EventuallyFinite,
            m0: Some(m0),
            l,
            max_iter,
            successive_distances: values,
            contraction_estimates: estimates,
            contraction_max,
            first_step_ratio: d_first / l,
            first_step_ratio_sharp: 2.0 * d_first / l,
            distance_to_fixed_point: to_limit,
            final_bound_ratio,
            alternative_bound_ratio,
            derivation_defect_max: Some(defect),
            linearity_residual: Some(linearity),
            assumed_hypotheses: assumed,
            verdict,
            failures,
        },
    })
}

/// `2^p theta / (2 - 2^p) |a|^p`; requires `r = 2`.
pub fn corollary_bound(ctrl: &PowerControl, a_norm: f64) -> Result<f64> {
    if ctrl.r() != 2.0 {
        return Err(Error::InvalidParameter(format!("corollary bound needs r = 2, got {}", ctrl.r())));
    }
    if !(a_norm >= 0.0 && a_norm.is_finite()) {
        return Err(Error::InvalidParameter(format!("a_norm must be nonnegative, got {a_norm}")));
    }
    let two_p = 2f64.powf(ctrl.p());
    Ok(two_p * ctrl.theta() / (2.0 - two_p) * a_norm.powf(ctrl.p()))
}

/// `L / (1 - L) theta` with `L = r^(p-1)`.
pub fn fixed_point_power_constant(ctrl: &PowerControl) -> f64 {
    let l = ctrl.r().powf(ctrl.p() - 1.0);
    l / (1.0 - l) * ctrl.theta()
}

/// Homogeneous-map route: under the contraction condition, a map with
/// `f(s a) = s f(a)` must itself have derivation, Jensen and linearity
/// residuals at most 1e-9 scale-relative.
pub fn superstability_via_fixed_point(
    f: &MapHandle,
    ctrl: &dyn Control,
    r: f64,
    l: ContractionConstant,
    samples: &[ArgTriple],
    mu_grid: &[UnitScalar],
) -> Result<SuperstabilityReport> {
    let s = f.homogeneity_degree().ok_or_else(|| {
        Error::HypothesisNotMet(format!("{}: no homogeneity degree declared", f.label()))
    })?;
    let homogeneity_residual = check_declared_homogeneity(f, s, samples)?;
    let contraction = check_contraction(ctrl, r, l.value(), samples)?;
    if !contraction.holds {
        return Err(Error::HypothesisNotMet(format!(
            "contraction condition fails with L = {} (worst ratio {:e})",
            l.value(),
            contraction.worst_ratio
        )));
    }
    let per: Vec<[f64; 2]> = samples
        .par_iter()
        .map(|t| {
            let dd = derivation_defect(f, &t.c)? / (1.0 + t.c.op_norm().powi(3));
            let mut jd = 0.0_f64;
            for &mu in mu_grid {
                jd = jd.max(jensen_defect(f, &t.a, &t.b, mu, r)?);
            }
            Ok([dd, jd / (1.0 + t.a.op_norm() + t.b.op_norm())])
        })
        .collect::<Result<_>>()?;
    let derivation_max = per.iter().map(|v| v[0]).fold(0.0, f64::max);
    let jensen_max = per.iter().map(|v| v[1]).fold(0.0, f64::max);
    let members: Vec<ComplexMatrix> = samples.iter().map(|t| t.a.clone()).filter(|a| !a.is_zero()).collect();
    let linearity = if members.is_empty() {
        None
    } else {
        Some(verify_linearity_and_jensen(f, r, &members, mu_grid)?)
    };
    let mut failures = Vec::new();
    if derivation_max > DEFECT_TOLERANCE {
        failures.push(format!("derivation defect {derivation_max:e}"));
    }
    if jensen_max > DEFECT_TOLERANCE {
        failures.push(format!("Jensen defect {jensen_max:e}"));
    }
    if let Some(lin) = &linearity {
        if lin.max_relative() > DEFECT_TOLERANCE {
            failures.push(format!("linearity residual {:e}", lin.max_relative()));
        }
    }
    let worst = (derivation_max.max(jensen_max)) / DEFECT_TOLERANCE;
    Ok(SuperstabilityReport {
        homogeneity_degree: s,
        homogeneity_residual,
        derivation_defect_max: derivation_max,
        jensen_defect_max: jensen_max,
        worst_allowance_ratio: worst,
        linearity_residual: linearity,
        verdict: if failures.is_empty() { Verdict::Pass } else { Verdict::Fail },
        failures,
    })
}
