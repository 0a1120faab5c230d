use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use jstab_core::algebra::{check_triple_closure, ModelDescriptor};
use jstab_core::derivation::random_inner_derivation_spec;
use jstab_core::experiment::{emit_report, report_json, run_experiment, Engine, ExperimentSpec};
use jstab_core::perturbation::certify_hypothesis;

#[derive(Parser)]
#[command(name = "jstab", version, about = "Stability experiments for approximate J*-derivations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Model-level checks.
    Algebra {
        #[command(subcommand)]
        action: AlgebraAction,
    },
    /// Inner derivation construction.
    Derivation {
        #[command(subcommand)]
        action: DerivationAction,
    },
    /// Perturbation certification.
    Perturb {
        #[command(subcommand)]
        action: PerturbAction,
    },
    /// Recovery of the exact derivation.
    Recover {
        #[command(subcommand)]
        action: RecoverAction,
    },
    /// Full pipeline.
    Experiment {
        #[command(subcommand)]
        action: ExperimentAction,
    },
}

#[derive(Subcommand)]
enum AlgebraAction {
    /// Triple-product closure of a model: spec `{"model": {...}, "trials": n, "seed": n}`.
    Check(Common),
}

#[derive(Subcommand)]
enum DerivationAction {
    /// Random inner derivation: spec `{"model": {...}, "scale": x, "seed": n}`.
    Make(Common),
}

#[derive(Subcommand)]
enum PerturbAction {
    /// Certify the combined defect inequality for an experiment spec.
    Certify(Common),
}

#[derive(Subcommand)]
enum RecoverAction {
    /// Direct method on an experiment spec.
    Direct(Common),
    /// Fixed-point method on an experiment spec.
    Fixedpoint(Common),
}

#[derive(Subcommand)]
enum ExperimentAction {
    /// Run an experiment spec end to end and write its report and table.
    Run(Common),
}

#[derive(Args)]
struct Common {
    /// Spec file (JSON).
    #[arg(long)]
    spec: PathBuf,
    /// Override the spec's top-level seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AlgebraSpec {
    model: ModelDescriptor,
    #[serde(default = "default_trials")]
    trials: usize,
    #[serde(default)]
    seed: u64,
}

fn default_trials() -> usize {
    200
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DerivationSpec {
    model: ModelDescriptor,
    #[serde(default = "default_scale")]
    scale: f64,
    #[serde(default)]
    seed: u64,
}

fn default_scale() -> f64 {
    1.0
}

fn read_spec<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn load_experiment(common: &Common) -> Result<ExperimentSpec> {
    let mut spec: ExperimentSpec = read_spec(&common.spec)?;
    if let Some(seed) = common.seed {
        spec.seed = seed;
    }
    if let Some(out) = &common.out {
        spec.output_path = Some(out.clone());
    }
    spec.validate().context("invalid experiment spec")?;
    Ok(spec)
}

/// Prints `text` and, with `--out`, also writes it to `dir/name`.
fn publish(text: &str, out: Option<&Path>, name: &str) -> Result<()> {
    print!("{text}");
    if let Some(dir) = out {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(name);
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn status(ok: bool, failure: Option<&str>) -> ExitCode {
    if ok {
        ExitCode::SUCCESS
    } else {
        eprintln!("FAIL: {}", failure.unwrap_or("unknown check"));
        ExitCode::FAILURE
    }
}

fn recover(common: &Common, engine: Engine) -> Result<ExitCode> {
    let mut spec = load_experiment(common)?;
    spec.engine = engine;
    let outcome = run_experiment(&spec)?;
    let report = &outcome.report;
    let (section, name) = match engine {
        Engine::Direct => (serde_json::to_value(&report.direct)?, "direct.json"),
        _ => (serde_json::to_value(&report.fixed_point)?, "fixed_point.json"),
    };
    publish(&report_json(&section)?, common.out.as_deref(), name)?;
    Ok(status(report.passed(), report.first_failure.as_deref()))
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Algebra {
            action: AlgebraAction::Check(common),
        } => {
            let mut spec: AlgebraSpec = read_spec(&common.spec)?;
            if let Some(seed) = common.seed {
                spec.seed = seed;
            }
            let model = spec.model.build()?;
            let check = check_triple_closure(&model, spec.trials, spec.seed)?;
            publish(&report_json(&check)?, common.out.as_deref(), "closure.json")?;
            let detail = format!("closure residual {:e}", check.worst_residual);
            Ok(status(check.closed, Some(&detail)))
        }
        Command::Derivation {
            action: DerivationAction::Make(common),
        } => {
            let mut spec: DerivationSpec = read_spec(&common.spec)?;
            if let Some(seed) = common.seed {
                spec.seed = seed;
            }
            let model = spec.model.build()?;
            let d = random_inner_derivation_spec(&model, spec.scale, spec.seed)?;
            publish(&report_json(&d)?, common.out.as_deref(), "derivation.json")?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Perturb {
            action: PerturbAction::Certify(common),
        } => {
            let spec = load_experiment(&common)?;
            let comps = jstab_core::experiment::build_components(&spec)?;
            let ctrl = spec.control_with(spec.control.theta.unwrap_or(1.0))?;
            let cert = certify_hypothesis(&comps.f, &ctrl, &spec.sample_spec())?;
            let satisfied = match spec.control.theta {
                Some(_) => cert.satisfied,
                None => !cert.zero_denominator_violation && cert.theta_required.is_finite(),
            };
            publish(&report_json(&cert)?, common.out.as_deref(), "certification.json")?;
            let detail = format!("theta_required {:e}", cert.theta_required);
            Ok(status(satisfied, Some(&detail)))
        }
        Command::Recover {
            action: RecoverAction::Direct(common),
        } => recover(&common, Engine::Direct),
        Command::Recover {
            action: RecoverAction::Fixedpoint(common),
        } => recover(&common, Engine::FixedPoint),
        Command::Experiment {
            action: ExperimentAction::Run(common),
        } => {
            let spec = load_experiment(&common)?;
            let outcome = run_experiment(&spec)?;
            let dir = spec.output_path.clone().unwrap_or_else(|| PathBuf::from("jstab-out"));
            let (report, table) = emit_report(&outcome, &dir)?;
            let r = &outcome.report;
            for v in &r.verdicts {
                println!("{:<28} {}", v.check, serde_json::to_value(v.verdict)?.as_str().unwrap_or("?"));
            }
            println!("report: {}", report.display());
            println!("table:  {}", table.display());
            Ok(status(r.passed(), r.first_failure.as_deref()))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}
