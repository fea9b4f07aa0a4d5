//! Bound and observed error against training-data density, with gains
//! recomputed per grid so that `κ` stays fixed.

use gptrack::density::density_variance_bound;
use gptrack::episodic::reference_probes;
use gptrack::error_bounds::BoundParams;
use gptrack::simulation::{benchmark_gains, benchmark_system, regular_grid, run_closed_loop, ControlAffineSystem};
use gptrack::tracking::{closed_loop, kappa, max_tracking_bound, tau_for_density, ClosedLoop, SUP_SAFETY_FACTOR};
use gptrack::{GpModel, UniformBound};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use super::{measure, per_seed, ExperimentReport};
use crate::config::{ExperimentConfig, LipschitzSetting};
use crate::error::{CliError, CliResult, Context};
use crate::output::{log_log_slope, write_table};

#[derive(Debug, Serialize)]
pub struct GridResult {
    pub points_per_axis: usize,
    pub n_train: usize,
    pub rho_min: f64,
    pub tau: f64,
    pub beta: f64,
    pub gamma: f64,
    #[serde(rename = "L_mu")]
    pub l_mu: f64,
    pub theta: f64,
    pub lambda_max: f64,
    pub zeta: f64,
    pub kappa: f64,
    pub sup_sigma: f64,
    pub sup_eta: f64,
    pub upsilon_bar: f64,
    pub e_max: Option<f64>,
    pub bound_violated: bool,
}

#[derive(Debug, Serialize)]
pub struct SeedResult {
    pub seed: u64,
    #[serde(rename = "L_sigma")]
    pub l_sigma: f64,
    #[serde(rename = "L_k")]
    pub l_k: f64,
    #[serde(rename = "L_f")]
    pub l_f: f64,
    pub grids: Vec<GridResult>,
    pub upsilon_slope: Option<f64>,
    pub error_slope: Option<f64>,
}

pub fn run(config: &ExperimentConfig) -> CliResult<ExperimentReport> {
    let results = per_seed(&config.seeds, |seed| run_seed(config, seed))?;
    let violations = results
        .iter()
        .flat_map(|r| &r.grids)
        .filter(|g| g.bound_violated)
        .count();
    Ok(ExperimentReport {
        results: json!({ "runs": results }),
        violations,
    })
}

fn run_seed(config: &ExperimentConfig, seed: u64) -> CliResult<SeedResult> {
    let kernel = config.kernel()?.clone();
    let plant = config.plant()?;
    let bound_cfg = config.bound()?;
    let block = config.density_sweep.clone().unwrap_or_default();
    let domain = bound_cfg.domain()?;
    let l_f = match bound_cfg.f_lipschitz {
        LipschitzSetting::Value(v) => v,
        LipschitzSetting::Probabilistic(_) => {
            let dl = bound_cfg.delta_lipschitz.unwrap_or(0.01);
            gptrack::error_bounds::probabilistic_lipschitz(&kernel, &domain, dl).context(|| "probabilistic Lipschitz constant".into())?
        }
    };
    let l_k = kernel.lipschitz(&domain);
    let l_sigma = kernel.stddev_lipschitz().context(|| "stddev Lipschitz constant".into())?;
    let system = benchmark_system();
    let probes = reference_probes(&plant.reference, block.probe_points);
    if probes.iter().any(|x| !domain.contains(x)) {
        return Err(CliError::Config("plant.reference leaves the bound domain".into()));
    }

    let grids: Vec<GridResult> = block
        .counts
        .par_iter()
        .map(|&n| {
            let ctx = |what: &str| format!("density sweep seed {seed}, {n}×{n} grid: {what}");
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(n as u64);
            let data = measure(&system, regular_grid(&block.lo, &block.hi, &[n, n]), plant.noise_variance, &mut rng)?;
            let model = GpModel::fit(kernel.clone(), data).context(|| ctx("fitting model"))?;

            let mut rows = Vec::with_capacity(probes.len());
            let mut rho_min = f64::INFINITY;
            let mut sup_sigma = 0.0f64;
            for x in &probes {
                let b = density_variance_bound(&model, x).context(|| ctx("density bound"))?;
                let s = model.predict_stddev(x).context(|| ctx("posterior"))?;
                rho_min = rho_min.min(b.rho);
                sup_sigma = sup_sigma.max(s);
                rows.push(vec![x[0], x[1], b.rho, s, b.stddev_bound]);
            }
            write_table(
                &config.output.join(format!("density_seed{seed}_n{n}.csv")),
                &["x_1", "x_2", "rho", "sigma_exact", "sigma_bound"],
                rows,
            )?;

            let tau = tau_for_density(&model, rho_min, &domain, bound_cfg.delta, l_f, l_k).context(|| ctx("tau"))?;
            let params = BoundParams::given(tau, bound_cfg.delta, l_f).context(|| ctx("bound parameters"))?;
            let ub = UniformBound::with_constants(&model, &params, &domain, l_k, Some(l_sigma));
            let (theta, lp) = theta_for_kappa(&system, block.kappa, l_sigma, ub.beta).map_err(|e| match e {
                CliError::Numerical { source, .. } => CliError::Numerical { context: ctx("gain search"), source },
                other => other,
            })?;
            let sup_eta = SUP_SAFETY_FACTOR * ub.eta_from_stddev(sup_sigma);
            let upsilon_bar = max_tracking_bound(&lp, sup_eta, l_sigma, ub.beta).context(|| ctx("maximum bound"))?;
            let e_max = if block.simulate {
                let run = run_closed_loop(&system, &lp, &model, &plant.reference, plant.horizon, plant.dt, rng.random())
                    .context(|| ctx("simulation"))?;
                Some(run.max_error())
            } else {
                None
            };
            Ok(GridResult {
                points_per_axis: n,
                n_train: n * n,
                rho_min,
                tau,
                beta: ub.beta,
                gamma: ub.gamma,
                l_mu: ub.mean_lipschitz,
                theta,
                lambda_max: lp.lambda_max(),
                zeta: lp.zeta(),
                kappa: kappa(&lp, l_sigma, ub.beta).context(|| ctx("kappa"))?,
                sup_sigma,
                sup_eta,
                upsilon_bar,
                e_max,
                bound_violated: e_max.is_some_and(|e| e > upsilon_bar),
            })
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect::<CliResult<_>>()?;

    let rho: Vec<f64> = grids.iter().map(|g| g.rho_min).collect();
    let ups: Vec<f64> = grids.iter().map(|g| g.upsilon_bar).collect();
    let errs: Vec<f64> = grids.iter().filter_map(|g| g.e_max).collect();
    write_table(
        &config.output.join(format!("sweep_seed{seed}.csv")),
        &["points_per_axis", "rho_min", "tau", "beta", "theta", "lambda_max", "zeta", "kappa", "upsilon_bar", "e_max"],
        grids.iter().map(|g| {
            vec![
                g.points_per_axis as f64,
                g.rho_min,
                g.tau,
                g.beta,
                g.theta,
                g.lambda_max,
                g.zeta,
                g.kappa,
                g.upsilon_bar,
                g.e_max.unwrap_or(f64::NAN),
            ]
        }),
    )?;
    Ok(SeedResult {
        seed,
        l_sigma,
        l_k,
        l_f,
        upsilon_slope: log_log_slope(&rho, &ups),
        error_slope: (errs.len() == rho.len()).then(|| log_log_slope(&rho, &errs)).flatten(),
        grids,
    })
}

/// `θ` of the equal-gain benchmark loop with `κ(θ) = target`, by bisection
/// in `ln θ`; `κ` decreases once the comparison system is stable.
pub fn theta_for_kappa(system: &ControlAffineSystem, target: f64, l_sigma: f64, beta: f64) -> CliResult<(f64, ClosedLoop)> {
    let loop_at = |theta: f64| closed_loop(&system.plant, benchmark_gains(theta, theta)).context(|| "gain search".into());
    let kappa_at = |theta: f64| -> CliResult<f64> { Ok(kappa(&loop_at(theta)?, l_sigma, beta).unwrap_or(f64::INFINITY)) };
    let mut hi = 1.0;
    while kappa_at(hi)? > target {
        hi *= 2.0;
        if hi > 1e12 {
            return Err(CliError::Config(format!("density_sweep.kappa: {target} not reachable")));
        }
    }
    let mut lo = hi;
    while kappa_at(lo)? <= target && lo > 1e-9 {
        lo /= 2.0;
    }
    let (mut a, mut b) = (lo.ln(), hi.ln());
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if kappa_at(mid.exp())? > target {
            a = mid;
        } else {
            b = mid;
        }
        if b - a < 1e-14 {
            break;
        }
    }
    let theta = b.exp();
    Ok((theta, loop_at(theta)?))
}
