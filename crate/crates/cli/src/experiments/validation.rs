//! Monte-Carlo checks of the uniform error bound and the probabilistic
//! Lipschitz constant on functions drawn from the prior.

use gptrack::error_bounds::{probabilistic_lipschitz, BoundParams, LipschitzSource};
use gptrack::simulation::{regular_grid, PriorSampler};
use gptrack::{GpModel, TrainingSet, UniformBound};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use super::{per_seed, ExperimentReport};
use crate::config::{ExperimentConfig, LipschitzSetting, TauSetting};
use crate::error::{CliError, CliResult, Context};
use crate::output::write_table;

/// Largest finite-difference slope of grid values, per axis combined in the
/// Euclidean norm. `values` follow [`regular_grid`] order.
pub fn grid_slope(values: &[f64], counts: &[usize], spacing: &[f64]) -> f64 {
    let d = counts.len();
    let mut strides = vec![1usize; d];
    for k in (0..d.saturating_sub(1)).rev() {
        strides[k] = strides[k + 1] * counts[k + 1];
    }
    let mut total = 0.0;
    for k in 0..d {
        let mut axis_max = 0.0f64;
        for (idx, &v) in values.iter().enumerate() {
            if (idx / strides[k]) % counts[k] + 1 < counts[k] {
                axis_max = axis_max.max((values[idx + strides[k]] - v).abs() / spacing[k]);
            }
        }
        total += axis_max * axis_max;
    }
    total.sqrt()
}

#[derive(Debug, Serialize)]
struct BoundTrial {
    trial: usize,
    covered: bool,
    violating_points: usize,
    #[serde(rename = "L_f")]
    l_f: f64,
    max_ratio: f64,
}

pub fn run_bounds(config: &ExperimentConfig) -> CliResult<ExperimentReport> {
    let kernel = config.kernel()?.clone();
    let bound = config.bound()?;
    let block = config.validation.clone().unwrap_or_default();
    let domain = bound.domain()?;
    let tau = match bound.tau {
        TauSetting::Value(t) => Some(t),
        TauSetting::Auto(_) => None,
    };
    let g = block.grid_points;
    let counts = [g, g];
    let grid = regular_grid(&bound.domain_lo, &bound.domain_hi, &counts);
    let spacing: Vec<f64> = (0..2).map(|k| (bound.domain_hi[k] - bound.domain_lo[k]) / (g - 1) as f64).collect();
    let sampler = PriorSampler::new(&kernel, &grid).context(|| "prior sampler".into())?;
    let l_k = kernel.lipschitz(&domain);
    let l_sigma = kernel.stddev_lipschitz().ok();
    let fixed_lf = match bound.f_lipschitz {
        LipschitzSetting::Probabilistic(_) => Some((
            probabilistic_lipschitz(&kernel, &domain, bound.delta_lipschitz.unwrap_or(0.01))
                .context(|| "probabilistic Lipschitz constant".into())?,
            LipschitzSource::Probabilistic,
        )),
        LipschitzSetting::Value(v) if !block.empirical_lipschitz => Some((v, LipschitzSource::Given)),
        LipschitzSetting::Value(_) => None,
    };
    let noise = Normal::new(0.0, block.noise_variance.sqrt()).map_err(|e| CliError::Config(format!("validation.noise_variance: {e}")))?;

    let per = per_seed(&config.seeds, |seed| {
        let trials: Vec<BoundTrial> = (0..block.trials)
            .into_par_iter()
            .map(|trial| {
                let ctx = || format!("bound validation seed {seed}, trial {trial}");
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(trial as u64);
                let f = sampler.draw(&mut rng);
                let picks = sample(&mut rng, grid.len(), block.n_train).into_vec();
                let inputs: Vec<Vec<f64>> = picks.iter().map(|&i| grid[i].clone()).collect();
                let targets: Vec<f64> = picks.iter().map(|&i| f[i] + noise.sample(&mut rng)).collect();
                let data = TrainingSet::new(2, inputs, targets, block.noise_variance).context(ctx)?;
                let model = GpModel::fit(kernel.clone(), data).context(ctx)?;
                let (l_f, source) = fixed_lf.unwrap_or_else(|| (grid_slope(&f, &counts, &spacing), LipschitzSource::Given));
                let tau = match tau {
                    Some(t) => t,
                    None => gptrack::error_bounds::auto_tau(&model, &domain, bound.delta, l_f).context(ctx)?,
                };
                let mut params = BoundParams::given(tau, bound.delta, l_f).context(ctx)?;
                params.source = source;
                let ub = UniformBound::with_constants(&model, &params, &domain, l_k, l_sigma);
                let preds = model.predict_many(&grid).context(ctx)?;
                let mut violating = 0;
                let mut max_ratio = 0.0f64;
                for ((mean, var), truth) in preds.iter().zip(&f) {
                    let eta = ub.eta_from_stddev(var.sqrt());
                    let err = (truth - mean).abs();
                    max_ratio = max_ratio.max(err / eta);
                    if err > eta {
                        violating += 1;
                    }
                }
                Ok(BoundTrial {
                    trial,
                    covered: violating == 0,
                    violating_points: violating,
                    l_f,
                    max_ratio,
                })
            })
            .collect::<Vec<_>>()
            .into_iter()
            .collect::<CliResult<_>>()?;
        write_table(
            &config.output.join(format!("bound_trials_seed{seed}.csv")),
            &["trial", "covered", "violating_points", "L_f", "max_ratio"],
            trials
                .iter()
                .map(|t| vec![t.trial as f64, f64::from(u8::from(t.covered)), t.violating_points as f64, t.l_f, t.max_ratio]),
        )?;
        Ok((seed, trials))
    })?;

    let total: usize = per.iter().map(|(_, t)| t.len()).sum();
    let covered: usize = per.iter().flat_map(|(_, t)| t).filter(|t| t.covered).count();
    let coverage = covered as f64 / total as f64;
    let required = 1.0 - bound.delta;
    let runs: Vec<_> = per
        .iter()
        .map(|(seed, t)| {
            json!({
                "seed": seed,
                "trials": t.len(),
                "covered": t.iter().filter(|x| x.covered).count(),
                "max_ratio": t.iter().map(|x| x.max_ratio).fold(0.0, f64::max),
            })
        })
        .collect();
    Ok(ExperimentReport {
        results: json!({
            "trials": total,
            "coverage": coverage,
            "required_coverage": required,
            "delta": bound.delta,
            "L_k": l_k,
            "L_sigma": l_sigma,
            "runs": runs,
        }),
        violations: usize::from(coverage < required),
    })
}

pub fn run_lipschitz(config: &ExperimentConfig) -> CliResult<ExperimentReport> {
    let kernel = config.kernel()?.clone();
    let bound = config.bound()?;
    let block = config.validation.clone().unwrap_or_default();
    let domain = bound.domain()?;
    let delta_l = bound
        .delta_lipschitz
        .ok_or_else(|| CliError::Config("bound.delta_lipschitz: missing".into()))?;
    let l_hat = probabilistic_lipschitz(&kernel, &domain, delta_l).context(|| "probabilistic Lipschitz constant".into())?;
    let g = block.grid_points;
    let grid = regular_grid(&bound.domain_lo, &bound.domain_hi, &[g]);
    let spacing = (bound.domain_hi[0] - bound.domain_lo[0]) / (g - 1) as f64;
    let sampler = PriorSampler::new(&kernel, &grid).context(|| "prior sampler".into())?;

    let per = per_seed(&config.seeds, |seed| {
        let slopes: Vec<f64> = (0..block.trials)
            .into_par_iter()
            .map(|trial| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(trial as u64);
                grid_slope(&sampler.draw(&mut rng), &[g], &[spacing])
            })
            .collect();
        write_table(
            &config.output.join(format!("lipschitz_trials_seed{seed}.csv")),
            &["trial", "slope", "L_hat"],
            slopes.iter().enumerate().map(|(i, &s)| vec![i as f64, s, l_hat]),
        )?;
        Ok((seed, slopes))
    })?;
    let total: usize = per.iter().map(|(_, s)| s.len()).sum();
    let within = per.iter().flat_map(|(_, s)| s).filter(|&&s| s <= l_hat).count();
    let fraction = within as f64 / total as f64;
    let max_slope = per.iter().flat_map(|(_, s)| s).copied().fold(0.0, f64::max);
    Ok(ExperimentReport {
        results: json!({
            "trials": total,
            "L_hat": l_hat,
            "delta_L": delta_l,
            "fraction_within": fraction,
            "required_fraction": 1.0 - delta_l,
            "max_slope": max_slope,
        }),
        violations: usize::from(fraction < 1.0 - delta_l),
    })
}
