use gptrack::episodic::{learn_control, EpisodeConfig, GainFamily};
use gptrack::simulation::benchmark_system;
use serde_json::json;

use super::{per_seed, ExperimentReport};
use crate::config::{ExperimentConfig, LipschitzSetting};
use crate::error::{CliError, CliResult, Context};
use crate::output::{create, JsonLines};

pub fn run(config: &ExperimentConfig) -> CliResult<ExperimentReport> {
    let results = per_seed(&config.seeds, |seed| run_seed(config, seed))?;
    let violations = results.iter().map(|r| r.1).sum();
    Ok(ExperimentReport {
        results: json!({ "runs": results.into_iter().map(|r| r.0).collect::<Vec<_>>() }),
        violations,
    })
}

fn run_seed(config: &ExperimentConfig, seed: u64) -> CliResult<(serde_json::Value, usize)> {
    let plant = config.plant()?;
    let bound = config.bound()?;
    let block = config.episodic()?;
    let f_lipschitz = match bound.f_lipschitz {
        LipschitzSetting::Value(v) => v,
        LipschitzSetting::Probabilistic(_) => {
            return Err(CliError::Config("bound.f_lipschitz: episodic learning needs a given constant".into()))
        }
    };
    let episode_config = EpisodeConfig {
        target_error: block.target_error,
        xi: block.xi,
        horizon: block.horizon,
        fine_dt: block.fine_dt,
        delta: bound.delta,
        kernel: config.kernel()?.clone(),
        noise_variance: plant.noise_variance,
        reference: plant.reference,
        domain: bound.domain()?,
        f_lipschitz,
        gain_family: GainFamily::EqualBenchmark,
        episode_cap: block.episode_cap,
        probe_points: block.probe_points,
        max_new_samples: block.max_new_samples,
        seed,
    };
    let path = config.output.join(format!("episodes_seed{seed}.jsonl"));
    let mut lines = JsonLines::new(create(&path)?);
    let mut write_error = None;
    let outcome = learn_control(&episode_config, &benchmark_system(), |report| {
        if let Err(e) = lines.push(report) {
            write_error.get_or_insert(e);
        }
        eprintln!(
            "seed {seed} episode {}: bound {:.6e}, T_s {:.4e}, N {}, {:.2}s",
            report.episode, report.certificate.upsilon_bar, report.sampling_time, report.data_size, report.wall_time_s
        );
    })
    .context(|| format!("episodic seed {seed}"))?;
    if let Some(e) = write_error {
        return Err(CliError::io(&path, e));
    }

    let unsound = outcome
        .reports
        .iter()
        .filter(|r| r.observed_max_error > r.run_bound)
        .count();
    let below_min_ts = outcome
        .reports
        .iter()
        .filter(|r| r.sampling_time < r.min_sampling_time)
        .count();
    let ratios: Vec<f64> = outcome.reports.iter().map(|r| r.ratio).collect();
    let result = json!({
        "seed": seed,
        "summary": outcome.summary,
        "initial": outcome.initial,
        "final": outcome.reports.last().map(|r| &r.certificate),
        "ratios": ratios,
        "max_ratio": ratios.iter().copied().fold(f64::NAN, f64::max),
        "episodes_exceeding_bound": unsound,
        "episodes_below_min_sampling_time": below_min_ts,
        "within_episode_count_bound": outcome.reports.len() <= outcome.summary.episode_count_bound,
    });
    Ok((result, unsound))
}
