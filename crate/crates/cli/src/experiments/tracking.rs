//! Fixed-gain tracking with a grid-trained model: the time-varying error
//! bound is integrated alongside the simulated loop and compared sample by
//! sample.

use gptrack::simulation::{benchmark_gains, benchmark_system, reference, regular_grid, run_closed_loop};
use gptrack::tracking::{closed_loop, gain_condition, kappa, max_tracking_bound, tracking_bound_ode, SUP_SAFETY_FACTOR};
use gptrack::GpModel;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use super::{half_period_index, measure, per_seed, uniform_bound, ExperimentReport};
use crate::config::{ExperimentConfig, TrackingBlock};
use crate::error::{CliError, CliResult, Context};
use crate::output::write_table;

#[derive(Debug, Serialize)]
pub struct SeedResult {
    pub seed: u64,
    pub bound: gptrack::error_bounds::BoundReport,
    pub theta: [f64; 2],
    pub lambda_max: f64,
    pub zeta: f64,
    pub kappa: f64,
    pub comparison_rate: f64,
    pub sup_eta: f64,
    pub sup_safety_factor: f64,
    pub upsilon_bar: f64,
    pub max_upsilon: f64,
    pub max_error: f64,
    pub samples: usize,
    pub violations: usize,
    pub peak_error_time: f64,
    pub peak_sigma_time: f64,
    pub peak_error_half: usize,
    pub peak_sigma_half: usize,
}

pub fn run(config: &ExperimentConfig) -> CliResult<ExperimentReport> {
    let results = per_seed(&config.seeds, |seed| run_seed(config, seed))?;
    let violations = results.iter().map(|r| r.violations).sum();
    let halves_match = results.iter().filter(|r| r.peak_error_half == r.peak_sigma_half).count();
    Ok(ExperimentReport {
        results: json!({
            "runs": results,
            "runs_without_violation": results.iter().filter(|r| r.violations == 0).count(),
            "peak_half_period_matches": halves_match,
        }),
        violations,
    })
}

fn run_seed(config: &ExperimentConfig, seed: u64) -> CliResult<SeedResult> {
    let kernel = config.kernel()?.clone();
    let plant = config.plant()?;
    let bound_cfg = config.bound()?;
    let block = config.tracking.clone().unwrap_or_default();
    let domain = bound_cfg.domain()?;
    let system = benchmark_system();
    let ctx = |what: &str| format!("tracking seed {seed}: {what}");

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = measure(&system, training_grid(&block), plant.noise_variance, &mut rng)?;
    let model = GpModel::fit(kernel.clone(), data).context(|| ctx("fitting model"))?;
    let ub = uniform_bound(bound_cfg, &model, &domain, None)?;
    let l_sigma = kernel.stddev_lipschitz().context(|| ctx("stddev Lipschitz constant"))?;

    let theta = plant.gains.ok_or_else(|| CliError::Config("plant.gains: missing".into()))?;
    let lp = closed_loop(&system.plant, benchmark_gains(theta[0], theta[1])).context(|| ctx("closed loop"))?;
    if !gain_condition(&lp, l_sigma, ub.beta) {
        return Err(CliError::Violation(format!(
            "seed {seed}: gains {theta:?} violate λ_max + L_σζ√β < 0 (λ_max = {}, ζ = {}, β = {})",
            lp.lambda_max(),
            lp.zeta(),
            ub.beta
        )));
    }

    let spec = plant.reference;
    let period = spec.period();
    let probes: Vec<(f64, Vec<f64>)> = (0..block.probe_points)
        .map(|i| {
            let t = period * i as f64 / block.probe_points as f64;
            (t, reference(&spec, t).0.to_vec())
        })
        .collect();
    if let Some((t, _)) = probes.iter().find(|(_, x)| !domain.contains(x)) {
        return Err(CliError::Config(format!("plant.reference leaves the bound domain at t = {t}")));
    }
    let sigma_probe: Vec<f64> = probes
        .iter()
        .map(|(_, x)| model.predict_stddev(x))
        .collect::<gptrack::Result<_>>()
        .context(|| ctx("reference variance"))?;
    let (peak_sigma_idx, _) = sigma_probe
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, &s)| if s > acc.1 { (i, s) } else { acc });
    let peak_sigma_time = probes[peak_sigma_idx].0;
    let sup_sigma = sigma_probe[peak_sigma_idx];
    let sup_eta = SUP_SAFETY_FACTOR * ub.eta_from_stddev(sup_sigma);
    let upsilon_bar = max_tracking_bound(&lp, sup_eta, l_sigma, ub.beta).context(|| ctx("maximum bound"))?;

    let run_seed: u64 = rng.random();
    let run = run_closed_loop(&system, &lp, &model, &spec, plant.horizon, plant.dt, run_seed).context(|| ctx("simulation"))?;
    let sigma_ref = |t: f64| model.predict_stddev(&reference(&spec, t).0).unwrap_or(f64::NAN);
    let e0: Vec<f64> = run.states[0].iter().zip(&run.references[0]).map(|(a, b)| a - b).collect();
    let upsilon0 = lp.initial_bound(&e0).context(|| ctx("initial bound"))?;
    let upsilon = tracking_bound_ode(&lp, |t| ub.eta_from_stddev(sigma_ref(t)), l_sigma, ub.beta, upsilon0, plant.horizon, plant.dt)
        .context(|| ctx("bound ODE"))?;

    let violations = run.error_norms.iter().zip(&upsilon).filter(|(e, u)| e > u).count();
    let (peak_idx, max_error) = run
        .error_norms
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, &e)| if e > acc.1 { (i, e) } else { acc });
    let peak_error_time = run.times[peak_idx];

    let dir = &config.output;
    write_table(
        &dir.join(format!("tracking_seed{seed}.csv")),
        &["t", "e_norm", "upsilon", "eta_ref", "sigma_ref"],
        run.times.iter().enumerate().map(|(k, &t)| {
            let s = sigma_ref(t);
            vec![t, run.error_norms[k], upsilon[k], ub.eta_from_stddev(s), s]
        }),
    )?;
    let run_path = dir.join(format!("run_seed{seed}.csv"));
    run.write_csv(crate::output::create(&run_path)?).context(|| ctx("writing run CSV"))?;

    Ok(SeedResult {
        seed,
        bound: ub.report(),
        theta,
        lambda_max: lp.lambda_max(),
        zeta: lp.zeta(),
        kappa: kappa(&lp, l_sigma, ub.beta).context(|| ctx("kappa"))?,
        comparison_rate: lp.comparison_rate(l_sigma, ub.beta),
        sup_eta,
        sup_safety_factor: SUP_SAFETY_FACTOR,
        upsilon_bar,
        max_upsilon: upsilon.iter().copied().fold(0.0, f64::max),
        max_error,
        samples: run.times.len(),
        violations,
        peak_error_time,
        peak_sigma_time,
        peak_error_half: half_period_index(peak_error_time, period),
        peak_sigma_half: half_period_index(peak_sigma_time, period),
    })
}

fn training_grid(block: &TrackingBlock) -> Vec<Vec<f64>> {
    regular_grid(&block.train_lo, &block.train_hi, &block.train_counts)
}
