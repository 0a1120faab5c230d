//! End-to-end experiment driver: spec parsing, the full pipeline, and the
//! report/table writers.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::algebra::{check_triple_closure, sample_members, ClosureCheck, JStarAlgebraModel, ModelDescriptor};
use crate::control::{min_contraction_l, PowerControl};
use crate::derivation::{make_inner_derivation, random_inner_derivation_spec, InnerDerivationSpec};
use crate::error::{Error, Result};
use crate::fixed_point::{corollary_bound, fixed_point_power_constant, run_alternative, FixedPointReport};
use crate::hyers::{default_probes, direct_power_constant, run_direct, BoundRow, DirectRecoveryReport, Verdict, BOUND_SLACK};
use crate::map::MapHandle;
use crate::matrix::ComplexMatrix;
use crate::perturbation::{certify_hypothesis, make_annulus_perturbation, perturb, AnnulusBumpSpec, Certification};
use crate::sampling::{derive_seed, SampleSpec};

pub const REPORT_FILE: &str = "report.json";
pub const TABLE_FILE: &str = "bound_ratios.csv";

/// Two recoveries agree when their values at the probes differ by at most this.
pub const AGREEMENT_TOLERANCE: f64 = 1e-12;
/// Recovered maps must match the underlying derivation to this at the probes.
pub const RECOVERY_TOLERANCE: f64 = 1e-10;

const SEED_CLOSURE: u64 = 0;
const SEED_DERIVATION: u64 = 1;
const SEED_PERTURBATION: u64 = 2;
const SEED_SAMPLES: u64 = 3;
const SEED_PROBES: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Engine {
    Direct,
    FixedPoint,
    Both,
}

impl Engine {
    fn direct(self) -> bool {
        matches!(self, Engine::Direct | Engine::Both)
    }

    fn fixed_point(self) -> bool {
        matches!(self, Engine::FixedPoint | Engine::Both)
    }
}

/// Control section of a spec. `theta` may be omitted, in which case the
/// certified `theta_required` times the safety factor is used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSpec {
    #[serde(rename = "type", default = "power")]
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    pub p: f64,
    pub r: f64,
}

fn power() -> String {
    "power".into()
}

/// Samples section: a [`SampleSpec`] whose seed defaults to one derived
/// from the top-level seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplesSection {
    pub count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub norm_range: [f64; 2],
    #[serde(default = "default_mu_count")]
    pub mu_count: usize,
}

fn default_mu_count() -> usize {
    16
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(default)]
    pub seed: u64,
    pub model: ModelDescriptor,
    #[serde(default = "one")]
    pub derivation_scale: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub derivation_seed: Option<u64>,
    pub perturbation: AnnulusBumpSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbation_seed: Option<u64>,
    pub control: ControlSpec,
    pub engine: Engine,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    pub samples: SamplesSection,
    #[serde(default = "default_closure_trials")]
    pub closure_trials: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_path: Option<PathBuf>,
}

fn one() -> f64 {
    1.0
}

fn default_iterations() -> usize {
    40
}

fn default_closure_trials() -> usize {
    200
}

impl ExperimentSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// The canonical 3x2 experiment.
    pub fn canonical() -> Self {
        Self {
            seed: 2024,
            model: ModelDescriptor {
                kind: crate::algebra::ModelKind::FullRectangular,
                m: 3,
                n: 2,
            },
            derivation_scale: 1.0,
            derivation_seed: None,
            perturbation: AnnulusBumpSpec::new(1e-3, 0.5, 2.0),
            perturbation_seed: None,
            control: ControlSpec {
                kind: power(),
                theta: None,
                p: 0.5,
                r: 2.0,
            },
            engine: Engine::Both,
            iterations: 40,
            samples: SamplesSection {
                count: 10_000,
                seed: None,
                norm_range: [0.05, 20.0],
                mu_count: 16,
            },
            closure_trials: 200,
            output_path: None,
        }
    }

    pub fn derivation_seed(&self) -> u64 {
        self.derivation_seed.unwrap_or_else(|| derive_seed(self.seed, SEED_DERIVATION))
    }

    pub fn perturbation_seed(&self) -> u64 {
        self.perturbation_seed.unwrap_or_else(|| derive_seed(self.seed, SEED_PERTURBATION))
    }

    pub fn closure_seed(&self) -> u64 {
        derive_seed(self.seed, SEED_CLOSURE)
    }

    pub fn probe_seed(&self) -> u64 {
        derive_seed(self.seed, SEED_PROBES)
    }

    pub fn sample_spec(&self) -> SampleSpec {
        SampleSpec::new(
            self.samples.count,
            self.samples.seed.unwrap_or_else(|| derive_seed(self.seed, SEED_SAMPLES)),
            self.samples.norm_range,
            self.samples.mu_count,
        )
    }

    /// Control with the given `theta`, validated.
    pub fn control_with(&self, theta: f64) -> Result<PowerControl> {
        if self.control.kind != "power" {
            return Err(Error::InvalidInput(format!("unsupported control type {:?}", self.control.kind)));
        }
        PowerControl::new(theta, self.control.p, self.control.r)
    }

    /// Checks every field against its consumer's preconditions.
    pub fn validate(&self) -> Result<()> {
        let model = self.model.build()?;
        if !(self.derivation_scale > 0.0 && self.derivation_scale.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "derivation_scale must be positive, got {}",
                self.derivation_scale
            )));
        }
        self.perturbation.validate(&model)?;
        self.control_with(self.control.theta.unwrap_or(1.0))?;
        if self.iterations < 2 {
            return Err(Error::InvalidParameter(format!("iterations must be at least 2, got {}", self.iterations)));
        }
        if self.closure_trials == 0 {
            return Err(Error::InvalidParameter("closure_trials must be at least 1".into()));
        }
        let samples = self.sample_spec();
        samples.validate()?;
        let reach = self.control.r.powi(self.iterations as i32 + 1) * samples.norm_range[1].max(4.0);
        if !reach.is_finite() || reach > crate::hyers::SCALE_LIMIT {
            return Err(Error::ScaleOverflow { value: reach });
        }
        Ok(())
    }
}

/// The maps of one experiment.
pub struct Components {
    pub model: Arc<JStarAlgebraModel>,
    pub derivation_spec: InnerDerivationSpec,
    pub d: MapHandle,
    pub g: MapHandle,
    pub f: MapHandle,
}

pub fn build_components(spec: &ExperimentSpec) -> Result<Components> {
    let model = Arc::new(spec.model.build()?);
    let derivation_spec = random_inner_derivation_spec(&model, spec.derivation_scale, spec.derivation_seed())?;
    let d = make_inner_derivation(&model, &derivation_spec)?;
    let g = make_annulus_perturbation(&model, &spec.perturbation, spec.perturbation_seed())?;
    let f = perturb(&d, &g)?;
    Ok(Components {
        model,
        derivation_spec,
        d,
        g,
        f,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckVerdict {
    pub check: String,
    pub verdict: Verdict,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstantEntry {
    pub form: String,
    pub value: f64,
    pub checked: bool,
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub suspected_erratum: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundsSection {
    /// Max over samples of `|f(a) - D(a)| / Phi(a, a, 0)`.
    pub direct_stability_ratio_max: Option<f64>,
    /// Max over samples of `|f(a) - D(a)| / (L / (1 - L) phi(a, 0, 0))`.
    pub fixed_point_bound_ratio_max: Option<f64>,
    /// Max over samples of `|f(a) - D(a)| / (2^p theta / (2 - 2^p) |a|^p)`; needs `r = 2`.
    pub corollary_ratio_max: Option<f64>,
    /// Relative gap between `2^p / (2 - 2^p)` and `L / (1 - L)` at `L = 2^(p-1)`.
    pub corollary_consistency: Option<f64>,
    pub fixed_point_constant: ConstantEntry,
    pub direct_constant: ConstantEntry,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertificationSection {
    #[serde(flatten)]
    pub result: Certification,
    pub theta_of_record: f64,
    pub construction: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub spec: ExperimentSpec,
    pub model: ModelDescriptor,
    pub closure: ClosureCheck,
    pub derivation: InnerDerivationSpec,
    pub certification: CertificationSection,
    pub control: PowerControl,
    pub direct: Option<DirectRecoveryReport>,
    pub fixed_point: Option<FixedPointReport>,
    /// Max entry difference between the two recovered maps at the probes.
    pub cross_engine_agreement: Option<f64>,
    /// Max operator-norm gap between each recovered map and `d` at the probes.
    pub recovery_vs_derivation: Option<f64>,
    pub bounds: Option<BoundsSection>,
    pub verdicts: Vec<CheckVerdict>,
    pub first_failure: Option<String>,
    pub status: Verdict,
}

impl ExperimentReport {
    pub fn passed(&self) -> bool {
        self.status.is_pass()
    }
}

pub struct ExperimentOutcome {
    pub report: ExperimentReport,
    /// Per-sample rows of the stability-bound table (empty without the direct engine).
    pub rows: Vec<BoundRow>,
}

fn verdict_of(ok: bool) -> Verdict {
    if ok {
        Verdict::Pass
    } else {
        Verdict::Fail
    }
}

/// Runs closure, certification and the selected engines.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutcome> {
    spec.validate()?;
    let comps = build_components(spec)?;
    let samples = spec.sample_spec();
    let mut verdicts = Vec::new();

    let closure = check_triple_closure(&comps.model, spec.closure_trials, spec.closure_seed())?;
    verdicts.push(CheckVerdict {
        check: "closure".into(),
        verdict: verdict_of(closure.closed),
        detail: Some(format!("worst residual {:e}", closure.worst_residual)),
    });

    let provisional = spec.control_with(spec.control.theta.unwrap_or(1.0))?;
    let mut cert = certify_hypothesis(&comps.f, &provisional, &samples)?;
    let theta = match spec.control.theta {
        Some(t) => t,
        None => {
            let t = cert.theta_of_record();
            if !t.is_finite() {
                return Err(Error::HypothesisNotMet(format!(
                    "certification found no finite theta (zero-denominator violation: {})",
                    cert.zero_denominator_violation
                )));
            }
            t
        }
    };
    cert.declared_theta = theta;
    cert.satisfied = !cert.zero_denominator_violation && cert.theta_required <= theta;
    let ctrl = spec.control_with(theta)?;
    verdicts.push(CheckVerdict {
        check: "certification".into(),
        verdict: verdict_of(cert.satisfied),
        detail: Some(format!("theta_required {:e}, declared theta {:e}", cert.theta_required, theta)),
    });
    let certification = CertificationSection {
        theta_of_record: cert.theta_of_record(),
        result: cert.clone(),
        construction: "compactly supported annular bump added to an inner derivation".into(),
    };

    let mut report = ExperimentReport {
        spec: spec.clone(),
        model: spec.model,
        closure,
        derivation: comps.derivation_spec.clone(),
        certification,
        control: ctrl,
        direct: None,
        fixed_point: None,
        cross_engine_agreement: None,
        recovery_vs_derivation: None,
        bounds: None,
        verdicts,
        first_failure: None,
        status: Verdict::Fail,
    };
    if !cert.satisfied {
        finish(&mut report);
        return Ok(ExperimentOutcome {
            report,
            rows: Vec::new(),
        });
    }

    let probes = default_probes(&comps.model, spec.probe_seed());
    let mut rows = Vec::new();
    let mut recovered: Vec<MapHandle> = Vec::new();
    let mut direct_d = None;
    if spec.engine.direct() {
        let run = run_direct(&comps.f, &ctrl, spec.iterations, &samples, &probes)?;
        report.verdicts.push(CheckVerdict {
            check: "direct".into(),
            verdict: run.report.verdict,
            detail: run.report.failures.first().cloned(),
        });
        report.direct = Some(run.report);
        rows = run.rows;
        recovered.push(run.d.clone());
        direct_d = Some(run.d);
    }
    let mut fixed_d = None;
    if spec.engine.fixed_point() {
        let run = run_alternative(&comps.f, &ctrl, min_contraction_l(&ctrl), spec.iterations, &samples)?;
        report.verdicts.push(CheckVerdict {
            check: "fixed_point".into(),
            verdict: run.report.verdict,
            detail: run.report.failures.first().cloned(),
        });
        report.fixed_point = Some(run.report);
        if let Some(d) = run.d {
            recovered.push(d.clone());
            fixed_d = Some(d);
        }
    }

    if let (Some(a), Some(b)) = (&direct_d, &fixed_d) {
        let gap = probes
            .iter()
            .map(|p| a.evaluate(p).max_abs_diff(&b.evaluate(p)))
            .fold(0.0, f64::max);
        report.cross_engine_agreement = Some(gap);
        report.verdicts.push(CheckVerdict {
            check: "cross_engine_agreement".into(),
            verdict: verdict_of(gap <= AGREEMENT_TOLERANCE),
            detail: Some(format!("{gap:e}")),
        });
    }
    if !recovered.is_empty() {
        let exact = &comps.d;
        let gap = recovered
            .iter()
            .flat_map(|d| probes.iter().map(move |p| (&d.evaluate(p) - &exact.evaluate(p)).op_norm()))
            .fold(0.0, f64::max);
        report.recovery_vs_derivation = Some(gap);
        report.verdicts.push(CheckVerdict {
            check: "recovery_vs_derivation".into(),
            verdict: verdict_of(gap <= RECOVERY_TOLERANCE),
            detail: Some(format!("{gap:e}")),
        });
        let limit = fixed_d.as_ref().or(direct_d.as_ref()).expect("nonempty");
        let bounds = bounds_section(&comps.f, limit, &ctrl, &samples, &report);
        if let Some(ratio) = bounds.fixed_point_bound_ratio_max {
            report.verdicts.push(CheckVerdict {
                check: "fixed_point_pointwise_bound".into(),
                verdict: verdict_of(ratio <= 1.0 + BOUND_SLACK),
                detail: Some(format!("{ratio:e}")),
            });
        }
        if let Some(ratio) = bounds.corollary_ratio_max {
            let consistent = bounds.corollary_consistency.is_some_and(|c| c <= 1e-12);
            report.verdicts.push(CheckVerdict {
                check: "corollary_bound".into(),
                verdict: verdict_of(ratio <= 1.0 + BOUND_SLACK && consistent),
                detail: Some(format!("{ratio:e}")),
            });
        }
        report.bounds = Some(bounds);
    }
    finish(&mut report);
    Ok(ExperimentOutcome { report, rows })
}

fn bounds_section(
    f: &MapHandle,
    limit: &MapHandle,
    ctrl: &PowerControl,
    samples: &SampleSpec,
    report: &ExperimentReport,
) -> BoundsSection {
    let (theta, p, r) = (ctrl.theta(), ctrl.p(), ctrl.r());
    let l = min_contraction_l(ctrl).value();
    let points = sample_members(f.domain(), samples);
    let gaps: Vec<(f64, f64)> = points
        .iter()
        .map(|a| (a.op_norm(), (&f.evaluate(a) - &limit.evaluate(a)).op_norm()))
        .collect();
    let ratio_max = |bound: &dyn Fn(f64) -> f64| {
        gaps.iter()
            .map(|&(t, gap)| {
                let b = bound(t);
                if gap <= 1e-15 * (1.0 + t) {
                    0.0
                } else if b > 0.0 {
                    gap / b
                } else {
                    f64::INFINITY
                }
            })
            .fold(0.0, f64::max)
    };
    let fixed_point_ratio = ratio_max(&|t| l / (1.0 - l) * ctrl.phi_from_norms(t, 0.0, 0.0));
    let (corollary_ratio, consistency) = if r == 2.0 {
        let c = corollary_bound(ctrl, 1.0).expect("r = 2");
        let reference = fixed_point_power_constant(ctrl);
        let consistency = if reference == 0.0 { (c - reference).abs() } else { ((c - reference) / reference).abs() };
        (
            Some(ratio_max(&|t| corollary_bound(ctrl, t).expect("r = 2"))),
            Some(consistency),
        )
    } else {
        (None, None)
    };
    let two_p = 2f64.powf(p);
    BoundsSection {
        direct_stability_ratio_max: report.direct.as_ref().map(|d| d.bound_ratio_max),
        fixed_point_bound_ratio_max: Some(fixed_point_ratio),
        corollary_ratio_max: corollary_ratio,
        corollary_consistency: consistency,
        fixed_point_constant: ConstantEntry {
            form: "2^p theta / (2 - 2^p)".into(),
            value: two_p * theta / (2.0 - two_p),
            checked: r == 2.0,
            suspected_erratum: false,
            note: None,
        },
        direct_constant: ConstantEntry {
            form: "2^p theta / (2^(p-1) - 1)".into(),
            value: direct_power_constant(theta, p),
            checked: false,
            suspected_erratum: true,
            note: Some(format!(
                "negative for every p < 1 (here p = {p}); cannot bound a norm, reported but not checked"
            )),
        },
    }
}

fn finish(report: &mut ExperimentReport) {
    report.first_failure = report.verdicts.iter().find(|v| !v.verdict.is_pass()).map(|v| match &v.detail {
        Some(d) => format!("{}: {d}", v.check),
        None => v.check.clone(),
    });
    report.status = verdict_of(report.first_failure.is_none());
}

/// Serializes to pretty JSON with every float rounded to 15 significant digits.
pub fn report_json<T: Serialize>(value: &T) -> Result<String> {
    let mut v = serde_json::to_value(value)?;
    round_floats(&mut v);
    let mut text = serde_json::to_string_pretty(&v)?;
    text.push('\n');
    Ok(text)
}

fn round_floats(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = n.as_f64().expect("f64");
            let rounded: f64 = format!("{x:.14e}").parse().expect("formatted float");
            if let Some(num) = serde_json::Number::from_f64(rounded) {
                *n = num;
            }
        }
        Value::Array(items) => items.iter_mut().for_each(round_floats),
        Value::Object(map) => map.values_mut().for_each(round_floats),
        _ => {}
    }
}

/// Writes `header` then one row per sample, floats as `{:.14e}`.
pub fn write_bound_table(path: &Path, rows: &[BoundRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["a_norm", "gap", "capital_phi", "ratio"])?;
    for row in rows {
        w.write_record([row.a_norm, row.gap, row.capital_phi, row.ratio].map(|x| format!("{x:.14e}")))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `report.json` and `bound_ratios.csv` into `dir`.
pub fn emit_report(outcome: &ExperimentOutcome, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir)?;
    let report_path = dir.join(REPORT_FILE);
    let table_path = dir.join(TABLE_FILE);
    fs::write(&report_path, report_json(&outcome.report)?)?;
    write_bound_table(&table_path, &outcome.rows)?;
    Ok((report_path, table_path))
}

/// Max entry difference between two maps at `points`.
pub fn max_difference(a: &MapHandle, b: &MapHandle, points: &[ComplexMatrix]) -> f64 {
    points.iter().map(|p| a.evaluate(p).max_abs_diff(&b.evaluate(p))).fold(0.0, f64::max)
}
