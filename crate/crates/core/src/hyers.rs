//! Direct method: recover `D(a) = lim r^-n f(r^n a)` from an approximate
//! derivation and check the resulting stability and superstability bounds.

use rayon::prelude::*;
use serde::Serialize;

use crate::algebra::{sample_members, JStarAlgebraModel};
use crate::control::{capital_phi_from_norms, limit_condition_check, ArgTriple, Control, PowerControl};
use crate::defect::{derivation_defect, jensen_defect};
use crate::error::{Error, Result};
use crate::map::MapHandle;
use crate::matrix::{ComplexMatrix, UnitScalar};
use crate::sampling::{stream_rng, SampleSpec};

/// Largest admissible `r^N |a|`.
pub const SCALE_LIMIT: f64 = 1e300;
/// Slack on every `ratio <= 1` bound check.
pub const BOUND_SLACK: f64 = 1e-6;
/// Scale-relative tolerance for derivation and Jensen defects of recovered maps.
pub const DEFECT_TOLERANCE: f64 = 1e-9;
/// Scale-relative tolerance for linearity residuals of recovered maps.
pub const LINEARITY_TOLERANCE: f64 = 1e-8;
/// Tolerance on `|f(s a) - s f(a)| / (1 + |f(a)|)` when homogeneity is a hypothesis.
pub const HOMOGENEITY_TOLERANCE: f64 = 1e-10;

const PROBE_NORMS: [f64; 3] = [0.25, 1.0, 4.0];
const PROBE_COUNT: usize = 8;
const DEFECT_SAMPLES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Pass,
    Fail,
    Diverged,
    HypothesisViolation,
    NoFixedPoint,
}

impl Verdict {
    pub fn is_pass(self) -> bool {
        self == Verdict::Pass
    }
}

/// The fixed probe set: 8 members with norms cycling through 0.25, 1, 4.
pub fn default_probes(model: &JStarAlgebraModel, seed: u64) -> Vec<ComplexMatrix> {
    (0..PROBE_COUNT)
        .map(|i| model.random_member_with(PROBE_NORMS[i % PROBE_NORMS.len()], &mut stream_rng(seed, i as u64)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CauchyTrace {
    /// `max_probe |D_{k+1}(a) - D_k(a)|` for `k = 0 .. N-1`.
    pub deltas: Vec<f64>,
    /// The same deltas per probe, `per_probe[probe][k]`.
    #[serde(skip)]
    pub per_probe: Vec<Vec<f64>>,
    pub diverged: bool,
}

/// `r^-k f(r^k a)`.
fn rescaled(f: &MapHandle, r: f64, k: usize, a: &ComplexMatrix) -> ComplexMatrix {
    let s = r.powi(k as i32);
    f.evaluate(&a.scale_real(s)).scale_real(1.0 / s)
}

fn check_scale(r: f64, n: usize, probes: &[ComplexMatrix]) -> Result<()> {
    let largest = probes.iter().map(ComplexMatrix::op_norm).fold(0.0, f64::max);
    let value = r.powi(n as i32) * largest;
    if !value.is_finite() || value > SCALE_LIMIT {
        return Err(Error::ScaleOverflow { value });
    }
    Ok(())
}

/// Builds `D(a) = r^-N f(r^N a)` and the Cauchy trace of the iterates at
/// `probes`. The trace is declared divergent when it fails to be
/// nonincreasing over the final `ceil(N/4)` steps.
pub fn direct_recover(f: &MapHandle, r: f64, n: usize, probes: &[ComplexMatrix]) -> Result<(MapHandle, CauchyTrace)> {
    if !(r > 1.0 && r.is_finite()) {
        return Err(Error::InvalidParameter(format!("r must exceed 1, got {r}")));
    }
    if n < 2 {
        return Err(Error::InvalidParameter(format!("N must be at least 2, got {n}")));
    }
    if !f.zero_at_zero() {
        return Err(Error::HypothesisNotMet(format!("{}: direct method needs f(0) = 0", f.label())));
    }
    for p in probes {
        f.domain().check_shape(p)?;
    }
    check_scale(r, n, probes)?;

    let per_probe: Vec<Vec<f64>> = probes
        .par_iter()
        .map(|a| {
            let iterates: Vec<ComplexMatrix> = (0..=n).map(|k| rescaled(f, r, k, a)).collect();
            iterates.windows(2).map(|w| (&w[1] - &w[0]).op_norm()).collect()
        })
        .collect();
    let deltas: Vec<f64> = (0..n)
        .map(|k| per_probe.iter().map(|d| d[k]).fold(0.0, f64::max))
        .collect();

    let scale = probes.iter().map(|a| f.evaluate(a).op_norm()).fold(0.0, f64::max);
    let floor = 1e-12 * (1.0 + scale);
    let tail = n.div_ceil(4);
    let diverged = deltas.iter().any(|d| !d.is_finite())
        || deltas[n - tail - 1..]
            .windows(2)
            .any(|w| w[1] > w[0] * (1.0 + 1e-9) + floor);

    let g = f.clone();
    let d = MapHandle::new(f.domain().clone(), format!("D[{}]", f.label()), true, move |a| {
        rescaled(&g, r, n, a)
    });
    Ok((
        d,
        CauchyTrace {
            deltas,
            per_probe,
            diverged,
        },
    ))
}

/// Worst per-step ratios `|D_{k+1}(a) - D_k(a)| / (r^-k c phi(r^{k+1} a, 0, 0))`
/// over probes and steps, with `c = 1/(2r)` (sharp) and `c = 1/2` (stated).
pub fn step_ratios(trace: &CauchyTrace, ctrl: &PowerControl, probes: &[ComplexMatrix]) -> (f64, f64) {
    let r = ctrl.r();
    let mut sharp = 0.0_f64;
    for (a, deltas) in probes.iter().zip(&trace.per_probe) {
        let norm = a.op_norm();
        for (k, &delta) in deltas.iter().enumerate() {
            let base = r.powi(-(k as i32)) * 0.5 * ctrl.phi_from_norms(r.powi(k as i32 + 1) * norm, 0.0, 0.0) / r;
            sharp = sharp.max(safe_ratio(delta, base, 1e-12 * (1.0 + norm)));
        }
    }
    (sharp, sharp / r)
}

/// `num / den`, with `0/0`-like cases (numerator below `floor`) mapped to 0.
fn safe_ratio(num: f64, den: f64, floor: f64) -> f64 {
    if num <= floor {
        0.0
    } else if den > 0.0 {
        num / den
    } else {
        f64::INFINITY
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundRow {
    pub a_norm: f64,
    pub gap: f64,
    pub capital_phi: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityCheck {
    /// `max |f(a) - D(a)| / Phi(a, a, 0)`.
    pub ratio_max: f64,
    /// Same gap against `sum_{k>=1} phi(r^k a, 0, 0) / (2 r^k)`.
    pub sharp_ratio_max: f64,
    #[serde(skip)]
    pub rows: Vec<BoundRow>,
}

/// Compares `|f(a) - D(a)|` against `Phi(a, a, 0)` and against the
/// telescoped sum of the sharp per-step bounds, skipping `a = 0`.
pub fn verify_stability_bound(f: &MapHandle, d: &MapHandle, ctrl: &PowerControl, samples: &[ComplexMatrix]) -> StabilityCheck {
    let q = ctrl.r().powf(ctrl.p() - 1.0);
    let rows: Vec<(BoundRow, f64)> = samples
        .par_iter()
        .filter(|a| !a.is_zero())
        .map(|a| {
            let norm = a.op_norm();
            let gap = (&f.evaluate(a) - &d.evaluate(a)).op_norm();
            let big_phi = capital_phi_from_norms(ctrl, norm, norm, 0.0);
            let sharp = ctrl.phi_from_norms(norm, 0.0, 0.0) * q / (2.0 * (1.0 - q));
            let floor = 1e-15 * (1.0 + norm);
            (
                BoundRow {
                    a_norm: norm,
                    gap,
                    capital_phi: big_phi,
                    ratio: safe_ratio(gap, big_phi, floor),
                },
                safe_ratio(gap, sharp, floor),
            )
        })
        .collect();
    StabilityCheck {
        ratio_max: rows.iter().map(|(row, _)| row.ratio).fold(0.0, f64::max),
        sharp_ratio_max: rows.iter().map(|(_, s)| *s).fold(0.0, f64::max),
        rows: rows.into_iter().map(|(row, _)| row).collect(),
    }
}

/// Linearity diagnostics. Absolute values are maxima of the raw residual
/// norms; relative values divide each by `1 + ` the norms of its arguments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearityResiduals {
    pub additive: f64,
    pub scalar: f64,
    pub jensen: f64,
    pub additive_relative: f64,
    pub scalar_relative: f64,
    pub jensen_relative: f64,
}

impl LinearityResiduals {
    pub fn max_absolute(&self) -> f64 {
        self.additive.max(self.scalar).max(self.jensen)
    }

    pub fn max_relative(&self) -> f64 {
        self.additive_relative.max(self.scalar_relative).max(self.jensen_relative)
    }
}

/// Additive residual on consecutive sample pairs, scalar residual over the
/// whole `mu_grid`, and the Jensen defect with `mu` cycling through the grid.
pub fn verify_linearity_and_jensen(
    d: &MapHandle,
    r: f64,
    samples: &[ComplexMatrix],
    mu_grid: &[UnitScalar],
) -> Result<LinearityResiduals> {
    if mu_grid.is_empty() {
        return Err(Error::InvalidParameter("mu_grid must be nonempty".into()));
    }
    let n = samples.len();
    let per: Vec<[f64; 6]> = (0..n)
        .into_par_iter()
        .map(|i| {
            let x = &samples[i];
            let y = &samples[(i + 1) % n];
            let (nx, ny) = (x.op_norm(), y.op_norm());
            let dx = d.evaluate(x);
            let add = (&(&d.evaluate(&(x + y)) - &dx) - &d.evaluate(y)).op_norm();
            let scalar = mu_grid
                .iter()
                .map(|mu| (&d.evaluate(&x.scale(mu.value())) - &dx.scale(mu.value())).op_norm())
                .fold(0.0, f64::max);
            let jensen = jensen_defect(d, x, y, mu_grid[i % mu_grid.len()], r)?;
            Ok([
                add,
                scalar,
                jensen,
                add / (1.0 + nx + ny),
                scalar / (1.0 + nx),
                jensen / (1.0 + nx + ny),
            ])
        })
        .collect::<Result<_>>()?;
    let col = |j: usize| per.iter().map(|v| v[j]).fold(0.0, f64::max);
    Ok(LinearityResiduals {
        additive: col(0),
        scalar: col(1),
        jensen: col(2),
        additive_relative: col(3),
        scalar_relative: col(4),
        jensen_relative: col(5),
    })
}

/// `max |derivation residual of d at c| / (1 + |c|^3)`.
pub fn relative_derivation_defect(d: &MapHandle, samples: &[ComplexMatrix]) -> Result<f64> {
    samples
        .par_iter()
        .map(|c| Ok(derivation_defect(d, c)? / (1.0 + c.op_norm().powi(3))))
        .collect::<Result<Vec<f64>>>()
        .map(|v| v.into_iter().fold(0.0, f64::max))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DirectRecoveryReport {
    #[serde(rename = "N")]
    pub iterations: usize,
    pub r: f64,
    pub cauchy_trace: Vec<f64>,
    pub step_ratio_stated_max: f64,
    pub step_ratio_sharp_max: f64,
    pub bound_ratio_max: f64,
    pub sharp_bound_ratio_max: f64,
    pub linearity_residual: LinearityResiduals,
    pub jensen_residual: f64,
    pub derivation_defect_max: f64,
    pub verdict: Verdict,
    pub failures: Vec<String>,
}

/// Output of [`run_direct`]: recovered map, report, and the per-sample rows
/// of the stability-bound table.
pub struct DirectRecovery {
    pub d: MapHandle,
    pub report: DirectRecoveryReport,
    pub rows: Vec<BoundRow>,
}

/// Full direct-method pipeline for `f` under a certified control.
pub fn run_direct(
    f: &MapHandle,
    ctrl: &PowerControl,
    n: usize,
    spec: &SampleSpec,
    probes: &[ComplexMatrix],
) -> Result<DirectRecovery> {
    spec.validate()?;
    let r = ctrl.r();
    let samples = sample_members(f.domain(), spec);
    check_scale(r, n, &samples)?;
    let (d, trace) = direct_recover(f, r, n, probes)?;
    let (sharp, stated) = step_ratios(&trace, ctrl, probes);
    let stability = verify_stability_bound(f, &d, ctrl, &samples);
    let linearity = verify_linearity_and_jensen(&d, r, &samples, &spec.mu_grid())?;
    let defect = relative_derivation_defect(&d, &samples[..samples.len().min(DEFECT_SAMPLES)])?;

    let mut failures = Vec::new();
    if stability.ratio_max > 1.0 + BOUND_SLACK {
        failures.push(format!("stability bound: ratio {:e} > 1", stability.ratio_max));
    }
    if stated > 1.0 + BOUND_SLACK {
        failures.push(format!("per-step bound: ratio {stated:e} > 1"));
    }
    if defect > DEFECT_TOLERANCE {
        failures.push(format!("derivation defect of D: {defect:e}"));
    }
    if linearity.max_relative() > LINEARITY_TOLERANCE {
        failures.push(format!("linearity of D: {:e}", linearity.max_relative()));
    }
    let verdict = if trace.diverged {
        failures.insert(0, "Cauchy trace does not decrease".into());
        Verdict::Diverged
    } else if failures.is_empty() {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    Ok(DirectRecovery {
        d,
        report: DirectRecoveryReport {
            iterations: n,
            r,
            cauchy_trace: trace.deltas,
            step_ratio_stated_max: stated,
            step_ratio_sharp_max: sharp,
            bound_ratio_max: stability.ratio_max,
            sharp_bound_ratio_max: stability.sharp_ratio_max,
            jensen_residual: linearity.jensen,
            linearity_residual: linearity,
            derivation_defect_max: defect,
            verdict,
            failures,
        },
        rows: stability.rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuperstabilityReport {
    pub homogeneity_degree: f64,
    pub homogeneity_residual: f64,
    /// `max derivation defect / (1 + |c|^3)`.
    pub derivation_defect_max: f64,
    /// `max Jensen defect / (1 + |a| + |b|)`.
    pub jensen_defect_max: f64,
    /// Largest defect divided by the bound it was checked against.
    pub worst_allowance_ratio: f64,
    pub linearity_residual: Option<LinearityResiduals>,
    pub verdict: Verdict,
    pub failures: Vec<String>,
}

fn triple_members(samples: &[ArgTriple]) -> Vec<ComplexMatrix> {
    samples
        .iter()
        .flat_map(|t| [&t.a, &t.b, &t.c])
        .filter(|x| !x.is_zero())
        .cloned()
        .collect()
}

/// Declared degree must equal `s` and hold on the sample members.
pub(crate) fn check_declared_homogeneity(f: &MapHandle, s: f64, samples: &[ArgTriple]) -> Result<f64> {
    match f.homogeneity_degree() {
        Some(declared) if declared == s => {}
        Some(declared) => {
            return Err(Error::HypothesisNotMet(format!(
                "{}: declared homogeneity degree {declared} differs from s = {s}",
                f.label()
            )))
        }
        None => {
            return Err(Error::HypothesisNotMet(format!(
                "{}: no homogeneity degree declared",
                f.label()
            )))
        }
    }
    let members = triple_members(samples);
    f.verify_homogeneity(&members, HOMOGENEITY_TOLERANCE)?;
    Ok(f.homogeneity_residual(s, &members))
}

/// Checks that a map homogeneous under `s` whose defect is controlled by
/// `ctrl` (with `s^-n ctrl(s^n .) -> 0`) is itself a derivation: at every
/// sample, the derivation defect must not exceed
/// `max(1e-9 (1 + |c|^3), s^-N phi(0, 0, s^N c))` and the Jensen defect must
/// not exceed `max(1e-9 (1 + |a| + |b|), s^-N phi(s^N a, s^N b, 0))` for
/// every `mu` in the grid.
pub fn superstability_check(
    f: &MapHandle,
    ctrl: &dyn Control,
    s: f64,
    samples: &[ArgTriple],
    n: usize,
    r: f64,
    mu_grid: &[UnitScalar],
) -> Result<SuperstabilityReport> {
    let homogeneity_residual = check_declared_homogeneity(f, s, samples)?;
    if !limit_condition_check(ctrl, s, samples, n)? {
        return Err(Error::HypothesisNotMet(format!(
            "s^-n phi(s^n a, s^n b, s^n c) does not decay to 1e-8 of its initial value by n = {n}"
        )));
    }
    let sn = s.powi(n as i32);
    let decayed = |a: &ComplexMatrix, b: &ComplexMatrix, c: &ComplexMatrix| {
        ctrl.phi(&a.scale_real(sn), &b.scale_real(sn), &c.scale_real(sn)) / sn
    };
    let per: Vec<[f64; 3]> = samples
        .par_iter()
        .map(|t| {
            let zero = ComplexMatrix::zeros(t.c.rows(), t.c.cols());
            let (na, nb, nc) = (t.a.op_norm(), t.b.op_norm(), t.c.op_norm());
            let dd = derivation_defect(f, &t.c)?;
            let d_scale = 1.0 + nc.powi(3);
            let d_allow = (DEFECT_TOLERANCE * d_scale).max(decayed(&zero, &zero, &t.c));
            let j_scale = 1.0 + na + nb;
            let j_allow = (DEFECT_TOLERANCE * j_scale).max(decayed(&t.a, &t.b, &zero));
            let mut jd = 0.0_f64;
            for &mu in mu_grid {
                jd = jd.max(jensen_defect(f, &t.a, &t.b, mu, r)?);
            }
            Ok([dd / d_scale, jd / j_scale, (dd / d_allow).max(jd / j_allow)])
        })
        .collect::<Result<_>>()?;
    let col = |j: usize| per.iter().map(|v| v[j]).fold(0.0, f64::max);
    let worst = col(2);
    let mut failures = Vec::new();
    if worst > 1.0 {
        failures.push(format!("defect exceeds its decayed bound by a factor {worst:e}"));
    }
    Ok(SuperstabilityReport {
        homogeneity_degree: s,
        homogeneity_residual,
        derivation_defect_max: col(0),
        jensen_defect_max: col(1),
        worst_allowance_ratio: worst,
        linearity_residual: None,
        verdict: if failures.is_empty() { Verdict::Pass } else { Verdict::Fail },
        failures,
    })
}

/// Leading constant of the direct-method power corollary,
/// `2^p theta / (2^(p-1) - 1)`. Negative for every `p < 1`.
pub fn direct_power_constant(theta: f64, p: f64) -> f64 {
    2f64.powf(p) * theta / (2f64.powf(p - 1.0) - 1.0)
}

/// `r^-N f(r^N a)` as a map, without the trace; used for cross-checks.
pub fn rescaled_map(f: &MapHandle, r: f64, n: usize) -> MapHandle {
    let g = f.clone();
    MapHandle::new(f.domain().clone(), format!("r^-{n} f(r^{n} .)"), f.zero_at_zero(), move |a| {
        rescaled(&g, r, n, a)
    })
}
