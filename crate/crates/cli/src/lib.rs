//! Config-driven runner for the tracking, density-sweep, episodic and
//! validation experiments. Every run writes CSV series and a `summary.json`
//! holding the resolved config and every constant behind the certificates.

pub mod config;
pub mod error;
pub mod experiments;
pub mod output;

pub use config::{ExperimentConfig, ExperimentKind, Overrides};
pub use error::{CliError, CliResult};

use serde_json::{json, Value};

/// Outcome of a run: the summary that was written and how many certificate
/// checks failed.
#[derive(Debug)]
pub struct RunOutcome {
    pub summary: Value,
    pub violations: usize,
}

/// Validates `config`, runs the experiment and writes its artifacts.
/// Certificate violations are reported through `RunOutcome::violations`;
/// see [`run_checked`] for the error form.
pub fn run(config: &ExperimentConfig) -> CliResult<RunOutcome> {
    config.validate()?;
    let dir = &config.output;
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let report = match config.experiment {
        ExperimentKind::Tracking => experiments::tracking::run(config)?,
        ExperimentKind::DensitySweep => experiments::sweep::run(config)?,
        ExperimentKind::Episodic => experiments::episodic::run(config)?,
        ExperimentKind::ValidateBounds => experiments::validation::run_bounds(config)?,
        ExperimentKind::ValidateLipschitz => experiments::validation::run_lipschitz(config)?,
    };
    let summary = json!({
        "experiment": config.experiment.name(),
        "status": if report.violations == 0 { "ok" } else { "certificate_violation" },
        "violations": report.violations,
        "config": config,
        "results": report.results,
    });
    output::write_json(&dir.join("summary.json"), &summary)?;
    Ok(RunOutcome {
        summary,
        violations: report.violations,
    })
}

/// Like [`run`] but turns certificate violations into an error.
pub fn run_checked(config: &ExperimentConfig) -> CliResult<RunOutcome> {
    let outcome = run(config)?;
    if outcome.violations > 0 {
        return Err(CliError::Violation(format!(
            "{} check(s) failed in experiment '{}'; see {}",
            outcome.violations,
            config.experiment.name(),
            config.output.join("summary.json").display()
        )));
    }
    Ok(outcome)
}
